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

#pragma once

#include "ttdbf/core/error.hpp"
#include "ttdbf/core/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace ttdbf
{
    using CostMatrix = Array2<double>;

    // perm[p] = column assigned to row p
    struct Assignment
    {
        std::vector<std::size_t> permutation;
        double total_cost = 0.0;
    };

    inline double assignment_cost(const CostMatrix &C, const std::vector<std::size_t> &perm)
    {
        double s = 0.0;
        for (std::size_t p = 0; p < perm.size(); ++p)
            s += C(p, perm[p]);
        return s;
    }

    namespace detail
    {
        inline void check_square(const CostMatrix &C)
        {
            require(C.rows() == C.cols(), ErrorCategory::invalid_argument,
                    "assignment needs a square matrix, got " + std::to_string(C.rows()) + "x" + std::to_string(C.cols()));
            for (double v : C.data())
                require(std::isfinite(v), ErrorCategory::invalid_argument, "assignment cost matrix has non-finite entries");
        }

        // Shortest augmenting path with row/column potentials, O(n^3). Row and column reductions
        // are carried implicitly by the potentials u and v; delta is the minimum uncovered slack.
        inline std::vector<std::size_t> solve_min(const CostMatrix &C)
        {
            const std::size_t n = C.rows();
            constexpr double inf = std::numeric_limits<double>::infinity();
            std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
            std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
            for (std::size_t i = 1; i <= n; ++i)
            {
                p[0] = i;
                std::size_t j0 = 0;
                std::vector<double> minv(n + 1, inf);
                std::vector<char> used(n + 1, 0);
                do
                {
                    used[j0] = 1;
                    const std::size_t i0 = p[j0];
                    double delta = inf;
                    std::size_t j1 = 0;
                    for (std::size_t j = 1; j <= n; ++j)
                    {
                        if (used[j])
                            continue;
                        const double cur = C(i0 - 1, j - 1) - u[i0] - v[j];
                        if (cur < minv[j])
                        {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if (minv[j] < delta)
                        {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                    for (std::size_t j = 0; j <= n; ++j)
                    {
                        if (used[j])
                        {
                            u[p[j]] += delta;
                            v[j] -= delta;
                        }
                        else
                            minv[j] -= delta;
                    }
                    j0 = j1;
                } while (p[j0] != 0);
                do
                {
                    const std::size_t j1 = way[j0];
                    p[j0] = p[j1];
                    j0 = j1;
                } while (j0 != 0);
            }
            std::vector<std::size_t> perm(n, 0);
            for (std::size_t j = 1; j <= n; ++j)
                if (p[j] != 0)
                    perm[p[j] - 1] = j - 1;
            return perm;
        }

        // Maximum over the sub-matrix given by row/column index lists
        inline double best_value_max(const CostMatrix &C, const std::vector<std::size_t> &rows,
                                     const std::vector<std::size_t> &cols)
        {
            const std::size_t n = rows.size();
            if (n == 0)
                return 0.0;
            double hi = -std::numeric_limits<double>::infinity();
            for (auto r : rows)
                for (auto c : cols)
                    hi = std::max(hi, C(r, c));
            CostMatrix sub(n, n);
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < n; ++b)
                    sub(a, b) = hi - C(rows[a], cols[b]);
            const auto perm = solve_min(sub);
            double s = 0.0;
            for (std::size_t a = 0; a < n; ++a)
                s += C(rows[a], cols[perm[a]]);
            return s;
        }
    }

    // Minimum-cost perfect assignment
    inline Assignment hungarian_min(const CostMatrix &C)
    {
        detail::check_square(C);
        Assignment a;
        a.permutation = detail::solve_min(C);
        a.total_cost = assignment_cost(C, a.permutation);
        return a;
    }

    // Maximum-cost perfect assignment. Costs are negated and offset by max(C) before the minimizing
    // routine; among optimal permutations the lexicographically smallest one is returned.
    inline Assignment hungarian_max(const CostMatrix &C)
    {
        detail::check_square(C);
        const std::size_t n = C.rows();
        if (n == 0)
            return {};
        const double hi = *std::max_element(C.data().begin(), C.data().end());
        CostMatrix flipped(n, n);
        for (std::size_t i = 0; i < C.size(); ++i)
            flipped.data()[i] = hi - C.data()[i];

        Assignment a;
        a.permutation = detail::solve_min(flipped);
        const double best = assignment_cost(C, a.permutation);

        // Exact ties are broken row by row toward smaller column indices. The tolerance only absorbs
        // the rounding difference between two summation orders of the same optimal value.
        double scale = 0.0;
        for (double v : C.data())
            scale = std::max(scale, std::abs(v));
        const double tol = 8.0 * std::numeric_limits<double>::epsilon() * double(n) * std::max(scale, 1e-300);

        std::vector<std::size_t> &perm = a.permutation;
        double prefix = 0.0;
        for (std::size_t r = 0; r + 1 < n; ++r)
        {
            std::vector<char> taken(n, 0);
            for (std::size_t q = 0; q < r; ++q)
                taken[perm[q]] = 1;
            for (std::size_t j = 0; j < perm[r]; ++j)
            {
                if (taken[j])
                    continue;
                std::vector<std::size_t> rows, cols;
                for (std::size_t q = r + 1; q < n; ++q)
                    rows.push_back(q);
                for (std::size_t c = 0; c < n; ++c)
                    if (!taken[c] && c != j)
                        cols.push_back(c);
                const double value = prefix + C(r, j) + detail::best_value_max(C, rows, cols);
                if (value >= best - tol)
                {
                    // adopt j and re-solve the remainder
                    CostMatrix sub(rows.size(), rows.size());
                    double hi_sub = -std::numeric_limits<double>::infinity();
                    for (auto rr : rows)
                        for (auto cc : cols)
                            hi_sub = std::max(hi_sub, C(rr, cc));
                    for (std::size_t x = 0; x < rows.size(); ++x)
                        for (std::size_t y = 0; y < cols.size(); ++y)
                            sub(x, y) = hi_sub - C(rows[x], cols[y]);
                    const auto rest = detail::solve_min(sub);
                    perm[r] = j;
                    for (std::size_t x = 0; x < rows.size(); ++x)
                        perm[rows[x]] = cols[rest[x]];
                    break;
                }
            }
            prefix += C(r, perm[r]);
        }
        a.total_cost = assignment_cost(C, perm);
        return a;
    }

    // Exhaustive maximum over all n! permutations in lexicographic order; first maximum wins
    inline Assignment brute_force_assignment(const CostMatrix &C)
    {
        detail::check_square(C);
        require(C.rows() <= 9, ErrorCategory::invalid_argument, "brute force assignment is limited to n <= 9");
        const std::size_t n = C.rows();
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        Assignment best{perm, assignment_cost(C, perm)};
        while (std::next_permutation(perm.begin(), perm.end()))
        {
            const double c = assignment_cost(C, perm);
            if (c > best.total_cost)
                best = {perm, c};
        }
        return best;
    }
}
