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

#include "ttdbf/channel/channel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

namespace ttdbf
{
    // TTD wiring of the analog front end.
    //   parallel      one TTD per antenna (L = N), no accumulation
    //   serial_fixed  L cascaded TTDs, TTD l feeds subarray l
    //   adaptive      L cascaded TTDs, per-chain switch permutation
    //   ps_only       phase shifters only, every delay pinned to zero
    //   ttd_infinite  parallel wiring without the t_max bound
    enum class ConfigMode
    {
        parallel,
        serial_fixed,
        adaptive,
        ps_only,
        ttd_infinite
    };

    inline std::string_view to_string(ConfigMode m)
    {
        switch (m)
        {
        case ConfigMode::parallel: return "Parallel";
        case ConfigMode::serial_fixed: return "SerialFixed";
        case ConfigMode::adaptive: return "Adaptive";
        case ConfigMode::ps_only: return "PsOnly";
        case ConfigMode::ttd_infinite: return "TtdInfinite";
        }
        return "?";
    }

    inline ConfigMode parse_config_mode(std::string_view s)
    {
        for (auto m : {ConfigMode::parallel, ConfigMode::serial_fixed, ConfigMode::adaptive, ConfigMode::ps_only,
                       ConfigMode::ttd_infinite})
            if (s == to_string(m))
                return m;
        fail(ErrorCategory::invalid_argument, "unknown configuration mode '" + std::string(s) + "'");
    }

    // True when the delays of TTD l accumulate the increments of TTDs 1..l
    inline bool is_cascaded(ConfigMode m) { return m == ConfigMode::serial_fixed || m == ConfigMode::adaptive; }

    // Number of TTDs per RF chain for a wiring mode
    inline std::size_t ttd_count(ConfigMode m, std::size_t num_antennas, std::size_t num_ttds)
    {
        return (m == ConfigMode::parallel || m == ConfigMode::ttd_infinite) ? num_antennas : num_ttds;
    }

    inline bool has_range_bound(ConfigMode m) { return m != ConfigMode::ttd_infinite; }

    struct PhaseShifterBank
    {
        Array2<cdouble> phases; // (N, N_RF)
        bool operator==(const PhaseShifterBank &) const = default;
    };

    struct DelayBank
    {
        Array2<double> incremental; // (L, N_RF) seconds
        bool operator==(const DelayBank &) const = default;
    };

    // One L x L binary matrix per RF chain, entry (p, l) = 1 connects TTD l to subarray p
    struct SwitchMatrix
    {
        std::vector<Array2<std::uint8_t>> chains;

        static SwitchMatrix identity(std::size_t num_chains, std::size_t L)
        {
            SwitchMatrix s;
            for (std::size_t i = 0; i < num_chains; ++i)
            {
                Array2<std::uint8_t> eye(L, L, 0);
                for (std::size_t p = 0; p < L; ++p)
                    eye(p, p) = 1;
                s.chains.push_back(std::move(eye));
            }
            return s;
        }

        static SwitchMatrix from_permutations(const std::vector<std::vector<std::size_t>> &perms)
        {
            SwitchMatrix s;
            for (const auto &perm : perms)
            {
                Array2<std::uint8_t> m(perm.size(), perm.size(), 0);
                for (std::size_t p = 0; p < perm.size(); ++p)
                {
                    require(perm[p] < perm.size(), ErrorCategory::structural, "switch index out of range");
                    m(p, perm[p]) = 1;
                }
                s.chains.push_back(std::move(m));
            }
            return s;
        }

        // perm[p] = TTD feeding subarray p; throws if the chain is not a permutation matrix
        std::vector<std::size_t> permutation(std::size_t chain) const
        {
            const auto &m = chains.at(chain);
            std::vector<std::size_t> perm(m.rows(), m.cols());
            std::vector<int> col_count(m.cols(), 0);
            for (std::size_t p = 0; p < m.rows(); ++p)
            {
                int row_count = 0;
                for (std::size_t l = 0; l < m.cols(); ++l)
                {
                    if (m(p, l) > 1)
                        fail(ErrorCategory::structural, "switch entry is not binary");
                    if (m(p, l) == 1)
                    {
                        ++row_count;
                        ++col_count[l];
                        perm[p] = l;
                    }
                }
                if (row_count != 1)
                    fail(ErrorCategory::structural, "switch row " + std::to_string(p) + " of chain " +
                                                        std::to_string(chain) + " does not connect exactly one TTD");
            }
            for (std::size_t l = 0; l < m.cols(); ++l)
                if (col_count[l] != 1)
                    fail(ErrorCategory::structural, "switch column " + std::to_string(l) + " of chain " +
                                                        std::to_string(chain) + " is not used exactly once");
            return perm;
        }

        bool operator==(const SwitchMatrix &) const = default;
    };

    struct DigitalBeamformer
    {
        Array3<cdouble> weights; // (M, N_RF, K), column d_{m,k}
        bool operator==(const DigitalBeamformer &) const = default;
    };

    struct BeamformerSet
    {
        PhaseShifterBank ps;
        DelayBank delays;
        SwitchMatrix switches;
        DigitalBeamformer digital;
        ConfigMode mode = ConfigMode::serial_fixed;

        std::size_t num_antennas() const { return ps.phases.rows(); }
        std::size_t num_rf_chains() const { return ps.phases.cols(); }
        std::size_t num_ttds() const { return delays.incremental.rows(); }
        std::size_t num_subcarriers() const { return digital.weights.dim(0); }
        std::size_t num_users() const { return digital.weights.dim(2); }

        // Unit phases, zero delays, identity switches and zero digital weights
        static BeamformerSet zeros(ConfigMode mode, std::size_t N, std::size_t N_RF, std::size_t L, std::size_t M,
                                   std::size_t K)
        {
            const std::size_t L_eff = ttd_count(mode, N, L);
            require(L_eff >= 1 && N % L_eff == 0, ErrorCategory::configuration, "L must divide N");
            BeamformerSet s;
            s.mode = mode;
            s.ps.phases = Array2<cdouble>(N, N_RF, cdouble(1.0, 0.0));
            s.delays.incremental = Array2<double>(L_eff, N_RF, 0.0);
            s.switches = SwitchMatrix::identity(N_RF, L_eff);
            s.digital.weights = Array3<cdouble>(M, N_RF, K, cdouble(0.0, 0.0));
            return s;
        }

        static BeamformerSet zeros(ConfigMode mode, const SystemParams &p)
        {
            return zeros(mode, p.num_antennas, p.num_rf_chains, p.num_ttds_per_chain, p.num_subcarriers, p.num_users);
        }

        bool operator==(const BeamformerSet &) const = default;
    };

    // t_l = sum_{j <= l} t~_j
    inline std::vector<double> cumulative_delays(std::span<const double> incremental)
    {
        std::vector<double> t(incremental.size());
        std::partial_sum(incremental.begin(), incremental.end(), t.begin());
        return t;
    }

    // Output delay of every TTD for chain i, accumulated only for cascaded wiring
    inline std::vector<double> output_delays(const BeamformerSet &set, std::size_t chain)
    {
        const std::size_t L = set.num_ttds();
        std::vector<double> inc(L);
        for (std::size_t l = 0; l < L; ++l)
            inc[l] = set.delays.incremental(l, chain);
        if (is_cascaded(set.mode))
            return cumulative_delays(inc);
        if (set.mode == ConfigMode::ps_only)
            return std::vector<double>(L, 0.0);
        return inc;
    }

    // Frequency-dependent analog beamformer A_m (N x N_RF). Subarray p of chain i is
    // phi_{p,i} * sum_l s_{p,l,i} exp(-j 2 pi f t_{l,i}) over contiguous antenna blocks.
    inline Array2<cdouble> build_analog(const BeamformerSet &set, double frequency_hz)
    {
        const std::size_t N = set.num_antennas(), N_RF = set.num_rf_chains(), L = set.num_ttds();
        require(L >= 1 && N % L == 0, ErrorCategory::structural, "TTD count does not divide the antenna count");
        require(set.switches.chains.size() == N_RF, ErrorCategory::structural, "one switch matrix per RF chain expected");
        const std::size_t Q = N / L;
        Array2<cdouble> A(N, N_RF);
        for (std::size_t i = 0; i < N_RF; ++i)
        {
            const auto perm = set.switches.permutation(i);
            const auto t = output_delays(set, i);
            for (std::size_t p = 0; p < L; ++p)
            {
                const cdouble ttd = std::polar(1.0, -two_pi * frequency_hz * t[perm[p]]);
                for (std::size_t q = 0; q < Q; ++q)
                {
                    const std::size_t n = p * Q + q;
                    A(n, i) = set.ps.phases(n, i) * ttd;
                }
            }
        }
        return A;
    }

    // g_{k,i} = h_{m,k}^H A_m d_{m,i}, returned as (K x K) row-major
    inline std::vector<cdouble> received_gains(const ChannelInstance &H, const Array2<cdouble> &A,
                                               const Array3<cdouble> &D, std::size_t m)
    {
        const std::size_t K = H.num_users(), N = H.num_antennas(), N_RF = A.cols();
        require(A.rows() == N, ErrorCategory::invalid_argument, "analog beamformer has wrong antenna count");
        require(D.dim(1) == N_RF && D.dim(2) == K, ErrorCategory::invalid_argument, "digital beamformer shape mismatch");
        std::vector<cdouble> eff(K * N_RF, cdouble{}); // h_k^H A
        for (std::size_t k = 0; k < K; ++k)
        {
            const auto h = H.h(m, k);
            for (std::size_t n = 0; n < N; ++n)
            {
                const cdouble hc = std::conj(h[n]);
                for (std::size_t r = 0; r < N_RF; ++r)
                    eff[k * N_RF + r] += hc * A(n, r);
            }
        }
        std::vector<cdouble> g(K * K, cdouble{});
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t i = 0; i < K; ++i)
                for (std::size_t r = 0; r < N_RF; ++r)
                    g[k * K + i] += eff[k * N_RF + r] * D(m, r, i);
        return g;
    }

    // Shannon rate of user k on subcarrier m (0-based indices) [bit/s/Hz]
    inline double user_rate(const ChannelInstance &H, const Array2<cdouble> &A, const Array3<cdouble> &D, std::size_t k,
                            std::size_t m)
    {
        require(H.noise_power_watts > 0.0, ErrorCategory::configuration, "noise power must be positive");
        require(k < H.num_users() && m < H.num_subcarriers(), ErrorCategory::invalid_argument, "user/subcarrier index out of range");
        const std::size_t K = H.num_users();
        const auto g = received_gains(H, A, D, m);
        const double signal = std::norm(g[k * K + k]);
        double interference = 0.0;
        for (std::size_t i = 0; i < K; ++i)
            if (i != k)
                interference += std::norm(g[k * K + i]);
        return std::log2(1.0 + signal / (interference + H.noise_power_watts));
    }

    // ||A_m D_m||_F^2
    inline double transmit_power(const Array2<cdouble> &A, const Array3<cdouble> &D, std::size_t m)
    {
        const std::size_t N = A.rows(), N_RF = A.cols(), K = D.dim(2);
        double p = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k)
            {
                cdouble x{};
                for (std::size_t r = 0; r < N_RF; ++r)
                    x += A(n, r) * D(m, r, k);
                p += std::norm(x);
            }
        return p;
    }

    // Largest deviation per constraint family; all zero means feasible.
    // ps_modulus and delay_range are absolute, power is relative to P_t.
    struct ConstraintResiduals
    {
        double ps_modulus = 0.0;
        double delay_range = 0.0;
        double switch_validity = 0.0;
        double power = 0.0;

        double max() const { return std::max({ps_modulus, delay_range, switch_validity, power}); }
    };

    struct EvalReport
    {
        Array2<double> per_user_rates; // (K, M)
        double spectral_efficiency = 0.0;
        std::vector<double> power_per_subcarrier; // (M)
        ConstraintResiduals residuals;
    };

    namespace detail
    {
        // Sum of |row sum - 1| and |col sum - 1| deviations plus non-binary entries, max over chains
        inline double switch_residual(const Array2<std::uint8_t> &m)
        {
            double worst = 0.0;
            for (std::size_t p = 0; p < m.rows(); ++p)
            {
                double s = 0.0;
                for (std::size_t l = 0; l < m.cols(); ++l)
                {
                    s += m(p, l);
                    if (m(p, l) > 1)
                        worst = std::max(worst, double(m(p, l)) - 1.0);
                }
                worst = std::max(worst, std::abs(s - 1.0));
            }
            for (std::size_t l = 0; l < m.cols(); ++l)
            {
                double s = 0.0;
                for (std::size_t p = 0; p < m.rows(); ++p)
                    s += m(p, l);
                worst = std::max(worst, std::abs(s - 1.0));
            }
            return worst;
        }

        inline bool switches_valid(const SwitchMatrix &s)
        {
            return std::all_of(s.chains.begin(), s.chains.end(), [](const auto &m)
                               { return m.rows() == m.cols() && switch_residual(m) == 0.0; });
        }
    }

    // Reports the deviation from every hardware constraint for the given scenario parameters
    inline ConstraintResiduals validate(const BeamformerSet &set, const SystemParams &params)
    {
        ConstraintResiduals r;
        for (const auto &phi : set.ps.phases.data())
            r.ps_modulus = std::max(r.ps_modulus, std::abs(std::abs(phi) - 1.0));

        const double t_max = has_range_bound(set.mode) ? params.max_delay_seconds : std::numeric_limits<double>::infinity();
        for (const double t : set.delays.incremental.data())
        {
            double dev = 0.0;
            if (!std::isfinite(t))
                dev = std::numeric_limits<double>::infinity();
            else if (set.mode == ConfigMode::ps_only)
                dev = std::abs(t);
            else if (t < 0.0)
                dev = -t;
            else if (t > t_max)
                dev = t - t_max;
            r.delay_range = std::max(r.delay_range, dev);
        }

        for (std::size_t i = 0; i < set.switches.chains.size(); ++i)
        {
            const auto &m = set.switches.chains[i];
            double dev = m.rows() == m.cols() ? detail::switch_residual(m) : 1.0;
            if (set.mode != ConfigMode::adaptive)
                for (std::size_t p = 0; p < m.rows(); ++p)
                    for (std::size_t l = 0; l < m.cols(); ++l)
                        dev = std::max(dev, std::abs(double(m(p, l)) - (p == l ? 1.0 : 0.0)));
            r.switch_validity = std::max(r.switch_validity, dev);
        }
        if (set.switches.chains.size() != set.num_rf_chains())
            r.switch_validity = std::max(r.switch_validity, 1.0);

        if (r.switch_validity == 0.0)
        {
            for (std::size_t m = 0; m < set.num_subcarriers(); ++m)
            {
                const auto A = build_analog(set, subcarrier_frequency(m + 1, params));
                const double p = transmit_power(A, set.digital.weights, m);
                r.power = std::max(r.power, (p - params.transmit_power_watts) / params.transmit_power_watts);
            }
        }
        return r;
    }

    // Scales D_m down onto the budget wherever ||A_m D_m||_F^2 > P_t; feasible subcarriers are untouched
    inline BeamformerSet project_power(BeamformerSet set, const SystemParams &params)
    {
        const double P_t = params.transmit_power_watts;
        for (std::size_t m = 0; m < set.num_subcarriers(); ++m)
        {
            const auto A = build_analog(set, subcarrier_frequency(m + 1, params));
            const double p = transmit_power(A, set.digital.weights, m);
            if (p > P_t)
            {
                const double scale = std::sqrt(P_t / p);
                for (std::size_t r = 0; r < set.num_rf_chains(); ++r)
                    for (std::size_t k = 0; k < set.num_users(); ++k)
                        set.digital.weights(m, r, k) *= scale;
                // one more ulp-level pass if rounding left us above the budget
                if (transmit_power(A, set.digital.weights, m) > P_t)
                    for (std::size_t r = 0; r < set.num_rf_chains(); ++r)
                        for (std::size_t k = 0; k < set.num_users(); ++k)
                            set.digital.weights(m, r, k) *= (1.0 - 4.0 * std::numeric_limits<double>::epsilon());
            }
        }
        return set;
    }

    // Rates of every user on every subcarrier, SE = sum / (M + L_CP), plus constraint residuals
    inline EvalReport spectral_efficiency(const ChannelInstance &H, const BeamformerSet &set, const SystemParams &params)
    {
        const std::size_t K = H.num_users(), M = H.num_subcarriers();
        require(set.num_users() == K && set.num_subcarriers() == M && set.num_antennas() == H.num_antennas(),
                ErrorCategory::invalid_argument, "beamformer set does not match the channel dimensions");
        require(H.noise_power_watts > 0.0, ErrorCategory::configuration, "noise power must be positive");
        EvalReport rep;
        rep.per_user_rates = Array2<double>(K, M, 0.0);
        rep.power_per_subcarrier.assign(M, 0.0);
        double total = 0.0;
        for (std::size_t m = 0; m < M; ++m)
        {
            const auto A = build_analog(set, subcarrier_frequency(m + 1, params));
            const auto g = received_gains(H, A, set.digital.weights, m);
            for (std::size_t k = 0; k < K; ++k)
            {
                double interference = 0.0;
                for (std::size_t i = 0; i < K; ++i)
                    if (i != k)
                        interference += std::norm(g[k * K + i]);
                const double rate = std::log2(1.0 + std::norm(g[k * K + k]) / (interference + H.noise_power_watts));
                rep.per_user_rates(k, m) = rate;
                total += rate;
            }
            rep.power_per_subcarrier[m] = transmit_power(A, set.digital.weights, m);
        }
        rep.spectral_efficiency = total / double(M + params.cyclic_prefix_len);
        rep.residuals = validate(set, params);
        return rep;
    }
}
