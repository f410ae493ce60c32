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

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace ttdbf
{
    // Physical and structural parameters of one scenario.
    // Field names are also the keys used by the config file.
    struct SystemParams
    {
        double carrier_frequency_hz = 100e9;      // f_c
        double bandwidth_hz = 10e9;               // B
        std::size_t num_subcarriers = 10;         // M
        std::size_t cyclic_prefix_len = 4;        // L_CP
        std::size_t num_antennas = 512;           // N
        std::size_t num_ttds_per_chain = 32;      // L
        std::size_t num_rf_chains = 4;            // N_RF
        std::size_t num_users = 4;                // K
        double transmit_power_watts = 0.1;        // P_t per subcarrier (20 dBm)
        double noise_density_dbm_per_hz = -174.0; //
        double max_delay_seconds = 80e-12;        // t_max, may be +inf
        double tx_gain_db = 15.0;                 // G_t
        double rx_gain_db = 5.0;                  // G_r
        double scattering_loss_db = -15.0;        // Lambda, may be -inf (no NLOS energy)
        double absorption_coeff_per_meter = 0.0;  // k_abs
        std::size_t num_scatterers_per_user = 4;  // L_k

        // Full-size simulation setup
        static SystemParams table1() { return SystemParams{}; }

        // Reduced system with the same N/L ratio family and physics, sized for per-instance optimization
        static SystemParams desk()
        {
            SystemParams p;
            p.num_antennas = 64;
            p.num_ttds_per_chain = 8;
            p.num_rf_chains = 2;
            p.num_users = 2;
            p.num_subcarriers = 4;
            p.cyclic_prefix_len = 2;
            return p;
        }

        std::size_t subarray_size() const { return num_antennas / num_ttds_per_chain; }

        double noise_power_per_subcarrier() const
        {
            return dbm_to_watts(noise_density_dbm_per_hz) * (bandwidth_hz / double(num_subcarriers));
        }

        void validate() const
        {
            using enum ErrorCategory;
            require(num_antennas >= 1 && num_ttds_per_chain >= 1, configuration, "N and L must be positive");
            require(num_antennas % num_ttds_per_chain == 0, configuration,
                    "N = " + std::to_string(num_antennas) + " is not divisible by L = " + std::to_string(num_ttds_per_chain));
            require(num_subcarriers >= 1, configuration, "M must be at least 1");
            require(num_users >= 1, configuration, "K must be at least 1");
            require(num_rf_chains >= num_users, configuration, "N_RF must be at least K");
            require(max_delay_seconds >= 0.0, configuration, "t_max must be non-negative");
            require(transmit_power_watts > 0.0, configuration, "P_t must be positive");
            require(bandwidth_hz > 0.0, configuration, "B must be positive");
            require(carrier_frequency_hz > bandwidth_hz / 2.0, configuration, "f_c must exceed B/2");
            require(absorption_coeff_per_meter >= 0.0, configuration, "k_abs must be non-negative");
        }

        // FNV-1a over the bit patterns of every field
        std::uint64_t fingerprint() const
        {
            std::uint64_t h = 0xcbf29ce484222325ull;
            auto mix = [&h](std::uint64_t v)
            {
                for (int i = 0; i < 8; ++i)
                {
                    h ^= (v >> (8 * i)) & 0xffu;
                    h *= 0x100000001b3ull;
                }
            };
            auto mixd = [&mix](double v) { mix(std::bit_cast<std::uint64_t>(v)); };
            mixd(carrier_frequency_hz);
            mixd(bandwidth_hz);
            mix(num_subcarriers);
            mix(cyclic_prefix_len);
            mix(num_antennas);
            mix(num_ttds_per_chain);
            mix(num_rf_chains);
            mix(num_users);
            mixd(transmit_power_watts);
            mixd(noise_density_dbm_per_hz);
            mixd(max_delay_seconds);
            mixd(tx_gain_db);
            mixd(rx_gain_db);
            mixd(scattering_loss_db);
            mixd(absorption_coeff_per_meter);
            mix(num_scatterers_per_user);
            return h;
        }

        bool operator==(const SystemParams &) const = default;
    };

    // Frequency of the m-th subcarrier, m is 1-based
    inline double subcarrier_frequency(std::size_t m, const SystemParams &params)
    {
        const std::size_t M = params.num_subcarriers;
        require(m >= 1 && m <= M, ErrorCategory::invalid_argument,
                "subcarrier index " + std::to_string(m) + " outside [1, " + std::to_string(M) + "]");
        const double offset = double(2 * m) - 1.0 - double(M);
        return params.carrier_frequency_hz + params.bandwidth_hz * offset / (2.0 * double(M));
    }

    inline std::vector<double> subcarrier_frequencies(const SystemParams &params)
    {
        std::vector<double> f(params.num_subcarriers);
        for (std::size_t m = 0; m < f.size(); ++m)
            f[m] = subcarrier_frequency(m + 1, params);
        return f;
    }
}
