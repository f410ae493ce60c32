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

#include "ttdbf/channel/geometry.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ttdbf
{
    // Free-space spreading with medium absorption, eta = (4 pi f r / c)^2 exp(k_abs r)
    inline double path_loss(double frequency_hz, double distance_m, double k_abs_per_m)
    {
        require(frequency_hz > 0.0 && distance_m > 0.0 && k_abs_per_m >= 0.0, ErrorCategory::invalid_argument,
                "path_loss requires f > 0, r > 0 and k_abs >= 0");
        const double a = 4.0 * std::numbers::pi * frequency_hz * distance_m / speed_of_light;
        return a * a * std::exp(k_abs_per_m * distance_m);
    }

    struct Scenario
    {
        std::vector<Placement> users;                   // K
        std::vector<std::vector<Placement>> scatterers; // K x L_k
        std::uint64_t rng_seed = 0;

        bool operator==(const Scenario &) const = default;
    };

    // Discrete sampling grid for user and scatterer positions
    struct SamplingGrid
    {
        double min_distance_m = 5.0;
        double max_distance_m = 15.0;
        double distance_step_m = 0.1;
        double angle_step_deg = 0.5; // angles span [0, 180] degrees
        std::optional<double> fixed_user_distance_m; // pins r_k, scatterers stay random
    };

    inline Scenario sample_scenario(const SystemParams &params, std::mt19937_64 &rng, const SamplingGrid &grid = {})
    {
        const auto n_dist = static_cast<long>(std::llround((grid.max_distance_m - grid.min_distance_m) / grid.distance_step_m));
        const auto n_ang = static_cast<long>(std::llround(180.0 / grid.angle_step_deg));
        std::uniform_int_distribution<long> pick_dist(0, n_dist);
        std::uniform_int_distribution<long> pick_ang(0, n_ang);

        // r = (r_min/step + i) * step keeps every sample on the grid up to one rounding
        const double base_steps = std::round(grid.min_distance_m / grid.distance_step_m);
        auto draw = [&](bool user) -> Placement
        {
            Placement p;
            const long i = pick_dist(rng);
            p.distance_m = (base_steps + double(i)) / (1.0 / grid.distance_step_m);
            if (user && grid.fixed_user_distance_m)
                p.distance_m = *grid.fixed_user_distance_m;
            p.angle_rad = double(pick_ang(rng)) * grid.angle_step_deg * std::numbers::pi / 180.0;
            return p;
        };

        Scenario s;
        s.users.reserve(params.num_users);
        s.scatterers.resize(params.num_users);
        for (std::size_t k = 0; k < params.num_users; ++k)
        {
            s.users.push_back(draw(true));
            for (std::size_t l = 0; l < params.num_scatterers_per_user; ++l)
                s.scatterers[k].push_back(draw(false));
        }
        return s;
    }

    inline Scenario sample_scenario(const SystemParams &params, std::uint64_t seed, const SamplingGrid &grid = {})
    {
        std::mt19937_64 rng(seed);
        Scenario s = sample_scenario(params, rng, grid);
        s.rng_seed = seed;
        return s;
    }

    // Complex frequency responses h_{m,k} for every user and subcarrier
    struct ChannelInstance
    {
        Array3<cdouble> responses; // (K, M, N), entry h_{m,k,n}
        Scenario scenario;
        ArrayGeometry geometry;
        std::uint64_t params_fingerprint = 0;
        double noise_power_watts = 0.0; // sigma^2 per subcarrier

        std::size_t num_users() const { return responses.dim(0); }
        std::size_t num_subcarriers() const { return responses.dim(1); }
        std::size_t num_antennas() const { return responses.dim(2); }

        std::span<const cdouble> h(std::size_t m, std::size_t k) const { return responses.slice(k, m); }

        bool operator==(const ChannelInstance &) const = default;
    };

    // Placements closer than ten half-wavelengths to any element are treated as inside the array
    inline void check_placement(const ArrayGeometry &geom, const Placement &p, double reference_spacing_m)
    {
        for (std::size_t n = 0; n < geom.num_antennas; ++n)
        {
            const double d = element_distance(geom, p, n);
            if (!(d >= 10.0 * reference_spacing_m))
                fail(ErrorCategory::degenerate, "placement (r=" + std::to_string(p.distance_m) + ", theta=" +
                                                    std::to_string(p.angle_rad) + ") is within " +
                                                    std::to_string(d) + " m of antenna " + std::to_string(n));
        }
    }

    // Builds h_{m,k} = beta b*(f_m, r_k, theta_k) + sum_l beta_l b*(f_m, r_kl, theta_kl).
    // Gain phases are drawn uniformly from rng in (m, k, [LOS, scatterers...]) order.
    inline ChannelInstance generate_channel(const SystemParams &params, const ArrayGeometry &geom,
                                            const Scenario &scenario, std::mt19937_64 &rng)
    {
        params.validate();
        const std::size_t K = params.num_users, M = params.num_subcarriers, N = params.num_antennas;
        require(geom.num_antennas == N, ErrorCategory::invalid_argument, "geometry size does not match N");
        require(scenario.users.size() == K && scenario.scatterers.size() == K, ErrorCategory::invalid_argument,
                "scenario has " + std::to_string(scenario.users.size()) + " users, expected " + std::to_string(K));
        for (const auto &s : scenario.scatterers)
            require(s.size() == params.num_scatterers_per_user, ErrorCategory::invalid_argument,
                    "scenario scatterer count does not match L_k");

        const double d_ref = speed_of_light / (2.0 * params.carrier_frequency_hz);
        for (std::size_t k = 0; k < K; ++k)
        {
            check_placement(geom, scenario.users[k], d_ref);
            for (const auto &p : scenario.scatterers[k])
                check_placement(geom, p, d_ref);
        }

        const double antenna_gain = db_to_linear(params.tx_gain_db) * db_to_linear(params.rx_gain_db);
        const double scatter_gain = db_to_linear(params.scattering_loss_db);

        std::vector<std::vector<double>> los_dist(K);
        std::vector<std::vector<std::vector<double>>> nlos_dist(K);
        for (std::size_t k = 0; k < K; ++k)
        {
            los_dist[k] = element_distances(geom, scenario.users[k]);
            for (const auto &p : scenario.scatterers[k])
                nlos_dist[k].push_back(element_distances(geom, p));
        }

        std::uniform_real_distribution<double> phase(0.0, two_pi);
        ChannelInstance ch;
        ch.responses = Array3<cdouble>(K, M, N);
        for (std::size_t m = 0; m < M; ++m)
        {
            const double f = subcarrier_frequency(m + 1, params);
            const double wave = two_pi * f / speed_of_light;
            for (std::size_t k = 0; k < K; ++k)
            {
                const double rk = scenario.users[k].distance_m;
                const double los_power = antenna_gain / path_loss(f, rk, params.absorption_coeff_per_meter);
                const cdouble beta = std::polar(std::sqrt(los_power), phase(rng));
                auto h = ch.responses.slice(k, m);
                for (std::size_t n = 0; n < N; ++n)
                    h[n] = beta * std::polar(1.0, wave * los_dist[k][n]); // b* = exp(+j 2 pi f r_n / c)
                for (std::size_t l = 0; l < nlos_dist[k].size(); ++l)
                {
                    const cdouble beta_l = std::polar(std::sqrt(scatter_gain * los_power), phase(rng));
                    if (scatter_gain == 0.0)
                        continue;
                    for (std::size_t n = 0; n < N; ++n)
                        h[n] += beta_l * std::polar(1.0, wave * nlos_dist[k][l][n]);
                }
            }
        }
        ch.scenario = scenario;
        ch.geometry = geom;
        ch.params_fingerprint = params.fingerprint();
        ch.noise_power_watts = params.noise_power_per_subcarrier();
        for (const auto &v : ch.responses.data())
            require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorCategory::numerical,
                    "non-finite channel entry");
        return ch;
    }

    // Gain phases drawn from a stream derived from the scenario seed
    inline ChannelInstance generate_channel(const SystemParams &params, const ArrayGeometry &geom, const Scenario &scenario)
    {
        std::mt19937_64 rng(derive_seed(scenario.rng_seed, 1));
        return generate_channel(params, geom, scenario, rng);
    }
}
