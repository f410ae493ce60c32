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

#include "ttdbf/channel/channel.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <random>

using namespace ttdbf;

namespace
{
    SystemParams small_params()
    {
        SystemParams p = SystemParams::desk();
        p.num_antennas = 16;
        p.num_ttds_per_chain = 4;
        return p;
    }

    double wrap(double x)
    {
        return std::remainder(x, 2.0 * std::numbers::pi);
    }
}

TEST(SubcarrierFrequency, CenteredGridHitsCarrierForOddM)
{
    SystemParams p;
    p.num_subcarriers = 9;
    EXPECT_EQ(subcarrier_frequency(5, p), p.carrier_frequency_hz);
}

TEST(SubcarrierFrequency, FirstSubcarrierOfTableGrid)
{
    SystemParams p; // f_c = 100 GHz, B = 10 GHz, M = 10
    const double expected = 100e9 + 10e9 * (-9.0) / 20.0;
    EXPECT_DOUBLE_EQ(subcarrier_frequency(1, p), expected);
    EXPECT_DOUBLE_EQ(expected, 95.5e9);
}

TEST(SubcarrierFrequency, LastSubcarrierBelowBandEdge)
{
    SystemParams p;
    const double fM = subcarrier_frequency(p.num_subcarriers, p);
    EXPECT_DOUBLE_EQ(fM, p.carrier_frequency_hz + p.bandwidth_hz * double(p.num_subcarriers - 1) / (2.0 * double(p.num_subcarriers)));
    EXPECT_LT(fM, p.carrier_frequency_hz + p.bandwidth_hz / 2.0);
}

TEST(SubcarrierFrequency, RejectsOutOfRange)
{
    SystemParams p;
    EXPECT_THROW(subcarrier_frequency(0, p), Error);
    EXPECT_THROW(subcarrier_frequency(p.num_subcarriers + 1, p), Error);
}

TEST(Geometry, UlaBroadsideSymmetry)
{
    const auto g = ArrayGeometry::ula(8, 100e9);
    const Placement p{7.0, std::numbers::pi / 2.0};
    for (std::size_t n = 0; n < 8; ++n)
    {
        const double delta = double(n) - 3.5;
        const double x = delta * g.element_spacing_m;
        EXPECT_NEAR(element_distance(g, p, n), std::sqrt(49.0 + x * x), 1e-12);
        EXPECT_NEAR(element_distance(g, p, n), element_distance(g, p, 7 - n), 1e-12);
    }
}

TEST(Geometry, SingleElementUlaSitsAtOrigin)
{
    const auto g = ArrayGeometry::ula(1, 100e9);
    EXPECT_DOUBLE_EQ(element_distance(g, {4.2, 0.3}, 0), 4.2);
}

TEST(Geometry, UcaCoincidentPointIsAtZeroDistance)
{
    const auto g = ArrayGeometry::uca(16, 100e9);
    const std::size_t n = 3; // psi = 2 pi (n+1) / N for the 0-based index
    const double psi = 2.0 * std::numbers::pi * double(n + 1) / 16.0;
    EXPECT_NEAR(element_distance(g, {g.radius_m, psi}, n), 0.0, 1e-7);
}

TEST(Geometry, UcaRadiusFromTableDefaults)
{
    const auto g = ArrayGeometry::from_params(SystemParams::table1(), ArrayKind::uca);
    EXPECT_NEAR(g.radius_m, 0.768, 0.768 * 3e-3);
    EXPECT_NEAR(2.0 * g.radius_m, 512.0 * speed_of_light / 100e9, 1e-12);
}

TEST(Geometry, UlaMirrorReversesElementOrder)
{
    const auto g = ArrayGeometry::ula(12, 100e9);
    const Placement p{6.3, 0.7};
    const Placement q{6.3, std::numbers::pi - 0.7};
    for (std::size_t n = 0; n < 12; ++n)
        EXPECT_NEAR(element_distance(g, p, n), element_distance(g, q, 11 - n), 1e-12);
}

TEST(ArrayResponse, UnitModulusEverywhere)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> r(1.0, 20.0), th(0.0, std::numbers::pi), f(90e9, 110e9);
    for (auto kind : {ArrayKind::ula, ArrayKind::uca})
    {
        const auto g = kind == ArrayKind::ula ? ArrayGeometry::ula(32, 100e9) : ArrayGeometry::uca(32, 100e9);
        for (int trial = 0; trial < 50; ++trial)
            for (const auto &b : array_response(g, f(rng), {r(rng), th(rng)}))
                EXPECT_NEAR(std::abs(b), 1.0, 1e-12);
    }
}

TEST(ArrayResponse, SingleElement)
{
    const auto g = ArrayGeometry::ula(1, 100e9);
    const double f = 101e9, r = 3.3;
    const auto b = array_response(g, f, {r, 1.1});
    ASSERT_EQ(b.size(), 1u);
    const cdouble expected = std::exp(cdouble(0.0, -2.0 * std::numbers::pi * f * r / speed_of_light));
    EXPECT_NEAR(std::abs(b[0] - expected), 0.0, 1e-12);
}

TEST(ArrayResponse, FarFieldApproachesPlaneWave)
{
    // Far away, adjacent-element phase steps follow 2 pi f d cos(theta) / c.
    // N is small so the residual curvature term stays well below the tolerance.
    const std::size_t N = 16;
    const double fc = 100e9, f = 100e9, theta = 1.0;
    const auto g = ArrayGeometry::ula(N, fc);
    const auto b = array_response(g, f, {1e6, theta});
    const double step = 2.0 * std::numbers::pi * f * g.element_spacing_m * std::cos(theta) / speed_of_light;
    for (std::size_t n = 0; n + 1 < N; ++n)
    {
        const double measured = std::arg(b[n + 1] * std::conj(b[n]));
        EXPECT_NEAR(wrap(measured - step), 0.0, 1e-6) << "n=" << n;
    }
}

TEST(PathLoss, UnitArgument)
{
    const double f = 100e9;
    EXPECT_NEAR(path_loss(f, speed_of_light / (4.0 * std::numbers::pi * f), 0.0), 1.0, 1e-12);
}

TEST(PathLoss, SquareLaw)
{
    const double a = path_loss(95e9, 4.0, 0.0), b = path_loss(95e9, 8.0, 0.0);
    EXPECT_NEAR(b / a, 4.0, 1e-12);
}

TEST(PathLoss, TableValue)
{
    const double x = 4.0 * std::numbers::pi * 1e11 * 10.0 / speed_of_light;
    EXPECT_DOUBLE_EQ(path_loss(100e9, 10.0, 0.0), x * x);
    EXPECT_NEAR(path_loss(100e9, 10.0, 0.0), 1.757e9, 0.001e9);
}

TEST(PathLoss, MonotoneInDistanceAndFrequency)
{
    for (double k_abs : {0.0, 0.01, 0.3})
    {
        double prev = 0.0;
        for (double r = 1.0; r < 20.0; r += 0.37)
        {
            const double v = path_loss(100e9, r, k_abs);
            EXPECT_GT(v, prev);
            prev = v;
        }
        EXPECT_GT(path_loss(101e9, 5.0, k_abs), path_loss(100e9, 5.0, k_abs));
    }
}

TEST(PathLoss, RejectsBadArguments)
{
    EXPECT_THROW(path_loss(0.0, 1.0, 0.0), Error);
    EXPECT_THROW(path_loss(1e9, -1.0, 0.0), Error);
    EXPECT_THROW(path_loss(1e9, 1.0, -0.1), Error);
}

TEST(SampleScenario, SameSeedSameScenario)
{
    const auto p = SystemParams::desk();
    EXPECT_EQ(sample_scenario(p, 99), sample_scenario(p, 99));
    EXPECT_NE(sample_scenario(p, 99), sample_scenario(p, 100));
}

TEST(SampleScenario, StaysOnGrid)
{
    SystemParams p = SystemParams::desk();
    p.num_users = 1;
    p.num_scatterers_per_user = 0;
    std::mt19937_64 rng(5);
    for (int i = 0; i < 10000; ++i)
    {
        const auto s = sample_scenario(p, rng);
        const auto &u = s.users[0];
        EXPECT_GE(u.distance_m, 5.0);
        EXPECT_LE(u.distance_m, 15.0);
        EXPECT_GE(u.angle_rad, 0.0);
        EXPECT_LE(u.angle_rad, std::numbers::pi);
        EXPECT_NEAR(u.distance_m * 10.0, std::round(u.distance_m * 10.0), 1e-9);
    }
}

TEST(SampleScenario, MeanDistanceIsCentered)
{
    SystemParams p = SystemParams::desk();
    p.num_users = 1;
    p.num_scatterers_per_user = 0;
    std::mt19937_64 rng(11);
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        sum += sample_scenario(p, rng).users[0].distance_m;
    EXPECT_NEAR(sum / n, 10.0, 0.05);
}

TEST(GenerateChannel, LosOnlyEnergy)
{
    SystemParams p = small_params();
    p.num_users = 1;
    p.num_rf_chains = 1;
    p.num_scatterers_per_user = 0;
    const auto g = ArrayGeometry::from_params(p, ArrayKind::ula);
    const auto s = sample_scenario(p, 3);
    const auto H = generate_channel(p, g, s);
    const double G = std::pow(10.0, (p.tx_gain_db + p.rx_gain_db) / 10.0);
    for (std::size_t m = 0; m < p.num_subcarriers; ++m)
    {
        double e = 0.0;
        for (auto v : H.h(m, 0))
            e += std::norm(v);
        const double eta = path_loss(subcarrier_frequency(m + 1, p), s.users[0].distance_m, 0.0);
        EXPECT_NEAR(e / (double(p.num_antennas) * G / eta), 1.0, 1e-12);
    }
}

TEST(GenerateChannel, ScatteringAtMinusInfinityEqualsLosOnly)
{
    SystemParams p = small_params();
    p.scattering_loss_db = -std::numeric_limits<double>::infinity();
    const auto g = ArrayGeometry::from_params(p, ArrayKind::ula);
    const auto s = sample_scenario(p, 21);

    // LOS-only oracle with the same phase draws
    std::mt19937_64 rng(derive_seed(s.rng_seed, 1));
    std::uniform_real_distribution<double> ph(0.0, 2.0 * std::numbers::pi);
    const auto H = generate_channel(p, g, s);
    const double G = std::pow(10.0, (p.tx_gain_db + p.rx_gain_db) / 10.0);
    for (std::size_t m = 0; m < p.num_subcarriers; ++m)
    {
        const double f = subcarrier_frequency(m + 1, p);
        for (std::size_t k = 0; k < p.num_users; ++k)
        {
            const double mag = std::sqrt(G / path_loss(f, s.users[k].distance_m, 0.0));
            const double phase = ph(rng);
            for (std::size_t l = 0; l < p.num_scatterers_per_user; ++l)
                (void)ph(rng);
            for (std::size_t n = 0; n < p.num_antennas; ++n)
            {
                const double rn = element_distance(g, s.users[k], n);
                const cdouble expected = std::polar(mag, phase) * std::polar(1.0, 2.0 * std::numbers::pi * f * rn / speed_of_light);
                EXPECT_NEAR(std::abs(H.h(m, k)[n] - expected), 0.0, 1e-10 * mag); // phases reach ~1e4 rad
            }
        }
    }
}

TEST(GenerateChannel, TableParametersLosMagnitude)
{
    SystemParams p = SystemParams::table1();
    p.num_antennas = 32;
    p.num_ttds_per_chain = 8;
    p.num_users = 1;
    p.num_rf_chains = 1;
    p.num_scatterers_per_user = 0;
    const auto g = ArrayGeometry::from_params(p, ArrayKind::ula);
    Scenario s;
    s.users = {{10.0, 1.2}};
    s.scatterers = {{}};
    s.rng_seed = 4;
    const auto H = generate_channel(p, g, s);
    for (std::size_t m = 0; m < p.num_subcarriers; ++m)
    {
        const double f = 100e9 + 10e9 * (2.0 * double(m + 1) - 1.0 - 10.0) / 20.0;
        const double spread = 4.0 * 3.14159265358979323846 * f * 10.0 / 299792458.0;
        const double beta = std::sqrt(std::pow(10.0, 1.5) * std::pow(10.0, 0.5)) / spread;
        for (auto v : H.h(m, 0))
            EXPECT_NEAR(std::abs(v) / beta, 1.0, 1e-12);
    }
}

TEST(GenerateChannel, BitIdenticalOnRegeneration)
{
    const auto p = small_params();
    const auto g = ArrayGeometry::from_params(p, ArrayKind::uca);
    const auto s = sample_scenario(p, 1234);
    const auto a = generate_channel(p, g, s);
    const auto b = generate_channel(p, g, s);
    EXPECT_EQ(a, b);
}

TEST(GenerateChannel, GainScalesEnergyLinearly)
{
    SystemParams p = small_params();
    const auto g = ArrayGeometry::from_params(p, ArrayKind::ula);
    const auto s = sample_scenario(p, 8);
    const auto a = generate_channel(p, g, s);
    p.tx_gain_db += 10.0 * std::log10(3.0);
    const auto b = generate_channel(p, g, s);
    for (std::size_t m = 0; m < p.num_subcarriers; ++m)
        for (std::size_t k = 0; k < p.num_users; ++k)
        {
            double ea = 0.0, eb = 0.0;
            for (auto v : a.h(m, k))
                ea += std::norm(v);
            for (auto v : b.h(m, k))
                eb += std::norm(v);
            EXPECT_NEAR(eb / ea, 3.0, 1e-9);
        }
}

TEST(GenerateChannel, RejectsPlacementInsideArray)
{
    SystemParams p = small_params();
    p.num_scatterers_per_user = 0;
    const auto g = ArrayGeometry::from_params(p, ArrayKind::uca);
    Scenario s;
    s.users = {{g.radius_m, 2.0 * std::numbers::pi / 16.0}, {10.0, 1.0}};
    s.scatterers = {{}, {}};
    try
    {
        (void)generate_channel(p, g, s);
        FAIL() << "expected a degenerate-placement error";
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::degenerate);
    }
}

TEST(GenerateChannel, RejectsMismatchedScenario)
{
    const auto p = small_params();
    const auto g = ArrayGeometry::from_params(p, ArrayKind::ula);
    Scenario s = sample_scenario(p, 1);
    s.users.pop_back();
    EXPECT_THROW(generate_channel(p, g, s), Error);
}

TEST(SystemParams, NoisePowerPerSubcarrier)
{
    SystemParams p;
    EXPECT_NEAR(p.noise_power_per_subcarrier(), std::pow(10.0, (-174.0 - 30.0) / 10.0) * 1e9, 1e-30);
}

TEST(SystemParams, RejectsInvalid)
{
    SystemParams p;
    p.num_ttds_per_chain = 5; // 512 % 5 != 0
    EXPECT_THROW(p.validate(), Error);
    p = SystemParams{};
    p.num_rf_chains = 2; // fewer chains than users
    EXPECT_THROW(p.validate(), Error);
    p = SystemParams{};
    p.bandwidth_hz = 300e9;
    EXPECT_THROW(p.validate(), Error);
}
