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

#include "ttdbf/objective/optimizer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace ttdbf
{
    struct DigitalBaselineResult
    {
        EvalReport report;
        Array3<cdouble> precoders; // (M, N, K), column w_{m,k}
        bool regularized = false;  // some subcarrier fell back to ridge inversion
    };

    // Fully digital precoding with one RF chain per antenna and the same per-subcarrier budget.
    // K = 1 uses matched filtering; K > 1 zero-forcing directions with water-filled user powers.
    inline DigitalBaselineResult full_digital_baseline(const ChannelInstance &H, const SystemParams &params)
    {
        const std::size_t K = H.num_users(), M = H.num_subcarriers(), N = H.num_antennas();
        const double P_t = params.transmit_power_watts, s2 = H.noise_power_watts;
        require(s2 > 0.0, ErrorCategory::configuration, "noise power must be positive");
        DigitalBaselineResult out;
        out.precoders = Array3<cdouble>(M, N, K);
        out.report.per_user_rates = Array2<double>(K, M, 0.0);
        out.report.power_per_subcarrier.assign(M, 0.0);
        double total = 0.0;
        for (std::size_t m = 0; m < M; ++m)
        {
            Eigen::MatrixXcd Hm(K, N); // rows h_k^H
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t n = 0; n < N; ++n)
                    Hm(k, n) = std::conj(H.responses(k, m, n));

            Eigen::MatrixXcd W(N, K);
            if (K == 1)
            {
                const double nrm = Hm.row(0).norm();
                W.col(0) = nrm > 0.0 ? Eigen::VectorXcd(Hm.row(0).adjoint() * (std::sqrt(P_t) / nrm))
                                     : Eigen::VectorXcd::Zero(N);
            }
            else
            {
                bool reg = false;
                W = detail::zero_forcing(Hm, &reg);
                out.regularized = out.regularized || reg;
                std::vector<double> gains(K);
                for (std::size_t k = 0; k < K; ++k)
                {
                    const double nrm = W.col(k).norm();
                    if (nrm > 0.0)
                        W.col(k) /= nrm;
                    gains[k] = std::norm((Hm.row(k) * W.col(k))(0, 0)) / s2;
                }
                const auto p = water_filling(gains, P_t);
                for (std::size_t k = 0; k < K; ++k)
                    W.col(k) *= std::sqrt(p[k]);
            }

            const Eigen::MatrixXcd G = Hm * W; // (k, i) gain of stream i at user k
            for (std::size_t k = 0; k < K; ++k)
            {
                double intf = 0.0;
                for (std::size_t i = 0; i < K; ++i)
                    if (i != k)
                        intf += std::norm(G(k, i));
                const double rate = std::log2(1.0 + std::norm(G(k, k)) / (intf + s2));
                out.report.per_user_rates(k, m) = rate;
                total += rate;
            }
            out.report.power_per_subcarrier[m] = W.squaredNorm();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k)
                    out.precoders(m, n, k) = W(n, k);
        }
        out.report.spectral_efficiency = total / double(M + params.cyclic_prefix_len);
        return out;
    }

    // Same wiring without the upper delay bound; only negative delays are penalized
    inline OptimizeResult ttd_infinite_baseline(const ChannelInstance &H, const SystemParams &params, ConfigMode mode,
                                                const OptimizerConfig &cfg, const std::vector<BeamformerSet> &warm_starts = {})
    {
        require(mode == ConfigMode::parallel || mode == ConfigMode::serial_fixed || mode == ConfigMode::adaptive ||
                    mode == ConfigMode::ttd_infinite,
                ErrorCategory::invalid_argument, "infinite-range baseline needs a TTD wiring");
        SystemParams p = params;
        p.max_delay_seconds = std::numeric_limits<double>::infinity();
        return optimize_instance(H, p, mode, cfg, warm_starts);
    }

    // Frequency-flat analog beamforming: phase shifters only
    inline OptimizeResult conventional_baseline(const ChannelInstance &H, const SystemParams &params, const OptimizerConfig &cfg)
    {
        return optimize_instance(H, params, ConfigMode::ps_only, cfg);
    }

    // Delays tau_n = (max r - r_n) / c aligned with the LOS path of user 0, per-antenna parallel wiring,
    // unit phases and matched digital weights on the budget
    inline BeamformerSet analytic_matched_delays(const ChannelInstance &H, const SystemParams &params)
    {
        require(H.num_users() == 1 && !H.scenario.users.empty(), ErrorCategory::invalid_argument,
                "matched delays are defined for a single user");
        BeamformerSet set = BeamformerSet::zeros(ConfigMode::ttd_infinite, params);
        const auto r = element_distances(H.geometry, H.scenario.users[0]);
        const double top = *std::max_element(r.begin(), r.end());
        for (std::size_t i = 0; i < set.num_rf_chains(); ++i)
            for (std::size_t n = 0; n < r.size(); ++n)
                set.delays.incremental(n, i) = (top - r[n]) / speed_of_light;
        for (std::size_t m = 0; m < set.num_subcarriers(); ++m)
        {
            const auto A = build_analog(set, subcarrier_frequency(m + 1, params));
            cdouble e{};
            const auto h = H.h(m, 0);
            for (std::size_t n = 0; n < h.size(); ++n)
                e += std::conj(h[n]) * A(n, 0);
            set.digital.weights(m, 0, 0) = std::abs(e) > 0.0 ? std::conj(e) / std::abs(e) : cdouble(1.0, 0.0);
        }
        return scale_to_budget(std::move(set), params);
    }
}
