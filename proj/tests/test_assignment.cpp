// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "ttdbf/assignment/hungarian.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ttdbf;

namespace
{
    CostMatrix random_matrix(std::size_t n, std::mt19937_64 &rng)
    {
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        CostMatrix C(n, n);
        for (auto &v : C.data())
            v = u(rng);
        return C;
    }

    CostMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows)
    {
        CostMatrix C(rows.size(), rows.begin()->size());
        std::size_t i = 0;
        for (const auto &r : rows)
        {
            std::size_t j = 0;
            for (double v : r)
                C(i, j++) = v;
            ++i;
        }
        return C;
    }

    bool is_permutation(const std::vector<std::size_t> &perm)
    {
        std::vector<char> seen(perm.size(), 0);
        for (auto c : perm)
        {
            if (c >= perm.size() || seen[c])
                return false;
            seen[c] = 1;
        }
        return true;
    }
}

TEST(HungarianMax, DiagonalDominant)
{
    for (std::size_t n = 1; n <= 6; ++n)
    {
        CostMatrix C(n, n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            C(i, i) = 10.0;
        const auto a = hungarian_max(C);
        for (std::size_t i = 0; i < n; ++i)
            EXPECT_EQ(a.permutation[i], i);
        EXPECT_EQ(a.total_cost, 10.0 * double(n));
    }
}

TEST(HungarianMax, TwoByTwo)
{
    const auto a = hungarian_max(from_rows({{1, 2}, {3, 1}}));
    EXPECT_EQ(a.permutation, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(a.total_cost, 5.0);
}

TEST(HungarianMax, MatchesBruteForceOnRandomSevenBySeven)
{
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 200; ++trial)
    {
        const auto C = random_matrix(7, rng);
        const auto h = hungarian_max(C), b = brute_force_assignment(C);
        EXPECT_EQ(h.total_cost, assignment_cost(C, h.permutation));
        EXPECT_NEAR(h.total_cost, b.total_cost, 1e-12);
        EXPECT_EQ(h.permutation, b.permutation);
    }
}

TEST(HungarianMax, ExactForAllSmallSizes)
{
    std::mt19937_64 rng(78);
    for (std::size_t n = 2; n <= 7; ++n)
        for (int trial = 0; trial < 200; ++trial)
        {
            const auto C = random_matrix(n, rng);
            EXPECT_EQ(hungarian_max(C).permutation, brute_force_assignment(C).permutation) << "n=" << n;
        }
}

TEST(HungarianMax, IntegerTiesResolveLikeBruteForce)
{
    std::mt19937_64 rng(79);
    std::uniform_int_distribution<int> u(0, 2);
    for (std::size_t n = 2; n <= 6; ++n)
        for (int trial = 0; trial < 100; ++trial)
        {
            CostMatrix C(n, n);
            for (auto &v : C.data())
                v = u(rng);
            const auto h = hungarian_max(C), b = brute_force_assignment(C);
            EXPECT_EQ(h.total_cost, b.total_cost);
            EXPECT_EQ(h.permutation, b.permutation);
        }
}

TEST(HungarianMax, BeatsRandomPermutations)
{
    std::mt19937_64 rng(80);
    for (std::size_t n : {3u, 8u, 16u})
    {
        const auto C = random_matrix(n, rng);
        const auto h = hungarian_max(C);
        ASSERT_TRUE(is_permutation(h.permutation));
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = 0; i < 1000; ++i)
        {
            std::shuffle(perm.begin(), perm.end(), rng);
            EXPECT_GE(h.total_cost, assignment_cost(C, perm) - 1e-12);
        }
    }
}

TEST(HungarianMax, RowShiftKeepsOptimality)
{
    std::mt19937_64 rng(81);
    for (int trial = 0; trial < 50; ++trial)
    {
        auto C = random_matrix(6, rng);
        const auto before = hungarian_max(C);
        for (std::size_t j = 0; j < 6; ++j)
            C(2, j) += 37.5;
        const auto b = brute_force_assignment(C);
        EXPECT_NEAR(assignment_cost(C, before.permutation), b.total_cost, 1e-9);
    }
}

TEST(HungarianMax, DualityWithMinimization)
{
    std::mt19937_64 rng(82);
    for (int trial = 0; trial < 50; ++trial)
    {
        const auto C = random_matrix(6, rng);
        CostMatrix neg = C;
        for (auto &v : neg.data())
            v = -v;
        EXPECT_NEAR(hungarian_max(C).total_cost, -hungarian_min(neg).total_cost, 1e-12);
    }
}

TEST(HungarianMax, RejectsNonSquare)
{
    try
    {
        (void)hungarian_max(CostMatrix(2, 3, 0.0));
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::invalid_argument);
    }
}

TEST(HungarianMax, RejectsNonFinite)
{
    auto C = CostMatrix(2, 2, 1.0);
    C(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW((void)hungarian_max(C), Error);
}

TEST(BruteForce, SingleEntry)
{
    const auto a = brute_force_assignment(from_rows({{4.5}}));
    EXPECT_EQ(a.permutation, (std::vector<std::size_t>{0}));
    EXPECT_EQ(a.total_cost, 4.5);
}

TEST(BruteForce, AllEqualMatrix)
{
    const CostMatrix C(5, 5, 2.5);
    EXPECT_EQ(brute_force_assignment(C).total_cost, 12.5);
    EXPECT_EQ(hungarian_max(C).total_cost, 12.5);
}

TEST(BruteForce, RandomFiveByFiveMatchesHungarian)
{
    std::mt19937_64 rng(83);
    for (int trial = 0; trial < 50; ++trial)
    {
        const auto C = random_matrix(5, rng);
        EXPECT_NEAR(brute_force_assignment(C).total_cost, hungarian_max(C).total_cost, 1e-12);
    }
}

TEST(BruteForce, RefusesLargeInputs)
{
    EXPECT_THROW((void)brute_force_assignment(CostMatrix(10, 10, 0.0)), Error);
}
