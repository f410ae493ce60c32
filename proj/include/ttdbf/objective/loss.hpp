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

// Unsupervised hybrid-beamforming loss and its differentiable recording.
//
// The raw parameters are unconstrained reals: PS angles (phi = e^{j alpha}), delay raws mapped
// through softplus onto nonnegative delays, digital weights as real/imaginary pairs and, in adaptive
// mode, switch logits decoded by a maximum-weight assignment. Delays are handled in units of a
// per-mode time scale so every raw coordinate is of order one.

#include "ttdbf/assignment/hungarian.hpp"
#include "ttdbf/autodiff/tape.hpp"
#include "ttdbf/beamforming/beamformer.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace ttdbf
{
    enum class PowerPenalty
    {
        aggregate,     // (sum_m ||A_m D_m||^2 - P_t)^2
        per_subcarrier // sum_m max(||A_m D_m||^2 - P_t, 0)^2
    };

    struct LossWeights
    {
        double ps = 1.0;
        double ttd = 1.0;
        double pc = 1.0;
        PowerPenalty power = PowerPenalty::aggregate;
    };

    struct LossBreakdown
    {
        double l_eff = 0.0;
        double l_ps = 0.0;
        double l_ttd = 0.0;
        double l_pc = 0.0;
        double total = 0.0;
    };

    // Time scale of the delay parameterization: t_max when finite, else 100 ps
    inline double delay_unit(ConfigMode mode, const SystemParams &params)
    {
        const double t_max = params.max_delay_seconds;
        if (has_range_bound(mode) && std::isfinite(t_max) && t_max > 0.0)
            return t_max;
        return 100e-12;
    }

    // Upper range bound in delay units, +inf when the mode or the parameters are unbounded
    inline double delay_bound_units(ConfigMode mode, const SystemParams &params)
    {
        if (!has_range_bound(mode) || !std::isfinite(params.max_delay_seconds))
            return std::numeric_limits<double>::infinity();
        return params.max_delay_seconds / delay_unit(mode, params);
    }

    struct Parameterization
    {
        ConfigMode mode = ConfigMode::serial_fixed;
        std::size_t N = 0, N_RF = 0, L = 0, M = 0, K = 0; // L is the per-chain TTD count of the mode
        double delay_unit_s = 100e-12;
        bool normalize_digital = true; // decode D_m onto the per-subcarrier power budget

        std::vector<double> ps_angles;     // (n, i)
        std::vector<double> delay_raws;    // (l, i), empty in ps_only mode
        std::vector<double> digital_raws;  // (m, r, k, re|im)
        std::vector<double> switch_logits; // (i, p, l), adaptive only

        static Parameterization zeros(ConfigMode mode, const SystemParams &params)
        {
            Parameterization p;
            p.mode = mode;
            p.N = params.num_antennas;
            p.N_RF = params.num_rf_chains;
            p.L = ttd_count(mode, params.num_antennas, params.num_ttds_per_chain);
            p.M = params.num_subcarriers;
            p.K = params.num_users;
            p.delay_unit_s = delay_unit(mode, params);
            p.ps_angles.assign(p.N * p.N_RF, 0.0);
            if (mode != ConfigMode::ps_only)
                p.delay_raws.assign(p.L * p.N_RF, 0.0);
            p.digital_raws.assign(p.M * p.N_RF * p.K * 2, 0.0);
            if (mode == ConfigMode::adaptive)
                p.switch_logits.assign(p.N_RF * p.L * p.L, 0.0);
            return p;
        }

        std::size_t size() const
        {
            return ps_angles.size() + delay_raws.size() + digital_raws.size() + switch_logits.size();
        }

        std::vector<double> flatten() const
        {
            std::vector<double> x;
            x.reserve(size());
            for (const auto *v : {&ps_angles, &delay_raws, &digital_raws, &switch_logits})
                x.insert(x.end(), v->begin(), v->end());
            return x;
        }

        void assign(std::span<const double> x)
        {
            require(x.size() == size(), ErrorCategory::invalid_argument, "parameter vector has the wrong length");
            std::size_t o = 0;
            for (auto *v : {&ps_angles, &delay_raws, &digital_raws, &switch_logits})
                for (auto &e : *v)
                    e = x[o++];
        }

        double digital_re(std::size_t m, std::size_t r, std::size_t k) const { return digital_raws[((m * N_RF + r) * K + k) * 2]; }
        double digital_im(std::size_t m, std::size_t r, std::size_t k) const { return digital_raws[((m * N_RF + r) * K + k) * 2 + 1]; }
    };

    // Per-chain permutations picked by maximum-weight assignment on the switch logits
    inline std::vector<std::vector<std::size_t>> decode_permutations(const Parameterization &p)
    {
        std::vector<std::vector<std::size_t>> perms;
        for (std::size_t i = 0; i < p.N_RF; ++i)
        {
            if (p.mode != ConfigMode::adaptive)
            {
                std::vector<std::size_t> id(p.L);
                std::iota(id.begin(), id.end(), 0);
                perms.push_back(id);
                continue;
            }
            CostMatrix C(p.L, p.L);
            std::copy_n(p.switch_logits.begin() + std::ptrdiff_t(i * p.L * p.L), p.L * p.L, C.data().begin());
            perms.push_back(hungarian_max(C).permutation);
        }
        return perms;
    }

    namespace detail
    {
        inline constexpr double power_floor = 1e-30;

        // ||A_m raw_m||_F^2 for an analog matrix and one subcarrier of raw digital weights
        inline double raw_power(const Array2<cdouble> &A, const Parameterization &p, std::size_t m)
        {
            double total = 0.0;
            for (std::size_t n = 0; n < p.N; ++n)
                for (std::size_t k = 0; k < p.K; ++k)
                {
                    cdouble x{};
                    for (std::size_t r = 0; r < p.N_RF; ++r)
                        x += A(n, r) * cdouble(p.digital_re(m, r, k), p.digital_im(m, r, k));
                    total += std::norm(x);
                }
            return total;
        }
    }

    // Maps raw parameters onto a structurally valid beamformer set
    inline BeamformerSet decode(const Parameterization &p, const SystemParams &params)
    {
        BeamformerSet set = BeamformerSet::zeros(p.mode, p.N, p.N_RF, params.num_ttds_per_chain, p.M, p.K);
        for (std::size_t i = 0; i < p.ps_angles.size(); ++i)
            set.ps.phases.data()[i] = std::polar(1.0, p.ps_angles[i]);
        for (std::size_t i = 0; i < p.delay_raws.size(); ++i)
            set.delays.incremental.data()[i] = p.delay_unit_s * ad::softplus(p.delay_raws[i]);
        set.switches = SwitchMatrix::from_permutations(decode_permutations(p));
        for (std::size_t m = 0; m < p.M; ++m)
        {
            double scale = 1.0;
            if (p.normalize_digital)
            {
                const auto A = build_analog(set, subcarrier_frequency(m + 1, params));
                scale = std::sqrt(params.transmit_power_watts / (detail::raw_power(A, p, m) + detail::power_floor));
            }
            for (std::size_t r = 0; r < p.N_RF; ++r)
                for (std::size_t k = 0; k < p.K; ++k)
                    set.digital.weights(m, r, k) = scale * cdouble(p.digital_re(m, r, k), p.digital_im(m, r, k));
        }
        return set;
    }

    // Inverse of decode up to the power normalization; delays below floor_units are lifted to it
    inline Parameterization encode(const BeamformerSet &set, const SystemParams &params, double switch_margin = 1.0,
                                   double floor_units = 1e-3)
    {
        Parameterization p = Parameterization::zeros(set.mode, params);
        require(set.num_antennas() == p.N && set.num_rf_chains() == p.N_RF && set.num_ttds() == p.L &&
                    set.num_subcarriers() == p.M && set.num_users() == p.K,
                ErrorCategory::invalid_argument, "beamformer set does not match the parameters");
        for (std::size_t i = 0; i < p.ps_angles.size(); ++i)
            p.ps_angles[i] = std::arg(set.ps.phases.data()[i]);
        for (std::size_t i = 0; i < p.delay_raws.size(); ++i)
            p.delay_raws[i] = ad::softplus_inverse(std::max(set.delays.incremental.data()[i] / p.delay_unit_s, floor_units));
        if (set.mode == ConfigMode::adaptive)
            for (std::size_t i = 0; i < p.N_RF; ++i)
            {
                const auto perm = set.switches.permutation(i);
                for (std::size_t q = 0; q < p.L; ++q)
                    p.switch_logits[(i * p.L + q) * p.L + perm[q]] = switch_margin;
            }
        for (std::size_t m = 0; m < p.M; ++m)
            for (std::size_t r = 0; r < p.N_RF; ++r)
                for (std::size_t k = 0; k < p.K; ++k)
                {
                    const cdouble d = set.digital.weights(m, r, k);
                    p.digital_raws[((m * p.N_RF + r) * p.K + k) * 2] = d.real();
                    p.digital_raws[((m * p.N_RF + r) * p.K + k) * 2 + 1] = d.imag();
                }
        return p;
    }

    // ---- standalone loss terms ----

    // -SE; the digital part of the set is used as is
    inline double loss_eff(const ChannelInstance &H, const BeamformerSet &set, const SystemParams &params)
    {
        return -spectral_efficiency(H, set, params).spectral_efficiency;
    }

    inline double loss_ps(const Array2<cdouble> &phases)
    {
        double s = 0.0;
        for (const auto &phi : phases.data())
        {
            const double e = std::norm(phi) - 1.0;
            s += e * e;
        }
        return s;
    }

    // Range penalty psi(t) on each delay, measured in multiples of unit
    inline double ttd_penalty(double t, double t_max)
    {
        if (t > t_max)
            return (t - t_max) * (t - t_max);
        if (t < 0.0)
            return t * t;
        return 0.0;
    }

    inline double loss_ttd(const Array2<double> &delays, double t_max, double unit = 1.0)
    {
        double s = 0.0;
        for (double t : delays.data())
            s += ttd_penalty(t / unit, t_max / unit);
        return s;
    }

    inline double loss_pc(const BeamformerSet &set, const SystemParams &params, PowerPenalty variant = PowerPenalty::aggregate)
    {
        const double P_t = params.transmit_power_watts;
        double sum = 0.0, excess = 0.0;
        for (std::size_t m = 0; m < set.num_subcarriers(); ++m)
        {
            const double p = transmit_power(build_analog(set, subcarrier_frequency(m + 1, params)), set.digital.weights, m);
            sum += p;
            excess += std::max(p - P_t, 0.0) * std::max(p - P_t, 0.0);
        }
        return variant == PowerPenalty::aggregate ? (sum - P_t) * (sum - P_t) : excess;
    }

    // ---- differentiable recording ----

    struct LossGraph
    {
        LossBreakdown values;
        ad::Var total;
        std::vector<ad::Var> leaves; // in Parameterization::flatten order
        std::vector<std::vector<std::size_t>> permutations;
    };

    // Channel data laid out for the recording: conj-free real/imag splits of h_{m,k,n}
    struct LossContext
    {
        const ChannelInstance *H = nullptr;
        SystemParams params;
        std::vector<double> frequencies;
        std::vector<double> h_re, h_im; // (k, m, n)

        LossContext(const ChannelInstance &channel, const SystemParams &p) : H(&channel), params(p)
        {
            require(channel.num_users() == p.num_users && channel.num_subcarriers() == p.num_subcarriers &&
                        channel.num_antennas() == p.num_antennas,
                    ErrorCategory::invalid_argument, "channel does not match the parameters");
            frequencies = subcarrier_frequencies(p);
            h_re.reserve(channel.responses.size());
            h_im.reserve(channel.responses.size());
            for (const auto &v : channel.responses.data())
            {
                h_re.push_back(v.real());
                h_im.push_back(v.imag());
            }
        }
    };

    // Records total_loss on the tape and returns handles to every raw parameter
    inline LossGraph record_total_loss(ad::Tape &tape, const LossContext &ctx, const Parameterization &p,
                                       const LossWeights &w = {})
    {
        using ad::Var;
        const auto &params = ctx.params;
        const std::size_t N = p.N, R = p.N_RF, L = p.L, M = p.M, K = p.K;
        require(N == params.num_antennas && R == params.num_rf_chains && M == params.num_subcarriers && K == params.num_users &&
                    L == ttd_count(p.mode, N, params.num_ttds_per_chain),
                ErrorCategory::invalid_argument, "parameterization does not match the parameters");
        require(L >= 1 && N % L == 0, ErrorCategory::structural, "TTD count does not divide the antenna count");
        const std::size_t Q = N / L;
        const double P_t = params.transmit_power_watts;
        const double sigma2 = ctx.H->noise_power_watts;
        require(sigma2 > 0.0, ErrorCategory::configuration, "noise power must be positive");

        LossGraph g;
        const auto flat = p.flatten();
        g.leaves.reserve(flat.size());
        for (double v : flat)
            g.leaves.push_back(tape.leaf(v));
        std::size_t off = 0;
        const std::span<const Var> alpha(g.leaves.data() + off, p.ps_angles.size());
        off += p.ps_angles.size();
        const std::span<const Var> draw(g.leaves.data() + off, p.delay_raws.size());
        off += p.delay_raws.size();
        const std::span<const Var> dig(g.leaves.data() + off, p.digital_raws.size());
        off += p.digital_raws.size();
        const std::span<const Var> logits(g.leaves.data() + off, p.switch_logits.size());

        // delays in units: incremental x, output tau per (subarray, chain)
        const bool has_delays = p.mode != ConfigMode::ps_only;
        std::vector<Var> x, tau;
        if (has_delays)
        {
            x.reserve(L * R);
            for (std::size_t i = 0; i < L * R; ++i)
                x.push_back(ad::softplus(draw[i]));
            std::vector<Var> out(L * R);
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t l = 0; l < L; ++l)
                    out[l * R + i] = (is_cascaded(p.mode) && l > 0) ? out[(l - 1) * R + i] + x[l * R + i] : x[l * R + i];
            g.permutations = decode_permutations(p);
            tau.resize(L * R);
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t q = 0; q < L; ++q)
                {
                    const Var src = out[g.permutations[i][q] * R + i];
                    if (p.mode != ConfigMode::adaptive)
                    {
                        tau[q * R + i] = src;
                        continue;
                    }
                    // forward: the selected delay; backward: straight-through onto the logits of row q
                    tape.edge(src, 1.0);
                    for (std::size_t l = 0; l < L; ++l)
                        tape.edge(logits[(i * L + q) * L + l], out[l * R + i].value());
                    tau[q * R + i] = tape.finish(ad::Op::sum, src.value());
                }
        }
        else
            g.permutations = decode_permutations(p);

        // penalties on the analog side
        double lps = 0.0;
        for (std::size_t i = 0; i < alpha.size(); ++i)
        {
            const double e = std::norm(std::polar(1.0, alpha[i].value())) - 1.0;
            lps += e * e;
        }
        const Var l_ps = tape.finish(ad::Op::leaf, lps);

        Var l_ttd = tape.finish(ad::Op::leaf, 0.0);
        if (has_delays)
        {
            const double hi = delay_bound_units(p.mode, params);
            double s = 0.0;
            for (const Var xi : x)
            {
                const double v = xi.value();
                double d = 0.0;
                if (v > hi)
                    d = 2.0 * (v - hi);
                else if (v < 0.0)
                    d = 2.0 * v;
                if (d != 0.0)
                    tape.edge(xi, d);
                s += ttd_penalty(v, hi);
            }
            l_ttd = tape.finish(ad::Op::sum, s);
        }

        std::vector<double> th(N * R), cs(N * R), sn(N * R);
        std::vector<double> dre(N), dim(N);
        std::vector<double> sub_re(L), sub_im(L);
        std::vector<Var> power_terms;
        power_terms.reserve(M);
        std::vector<Var> rate_logs;
        std::vector<double> rate_coef;
        rate_logs.reserve(2 * M * K);
        rate_coef.reserve(2 * M * K);
        const double rate_scale = 1.0 / (std::numbers::ln2 * double(M + params.cyclic_prefix_len));

        for (std::size_t m = 0; m < M; ++m)
        {
            const double f = ctx.frequencies[m];
            const double w_t = two_pi * f * p.delay_unit_s; // d theta / d tau
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < R; ++i)
                {
                    double t = alpha[n * R + i].value();
                    if (has_delays)
                        t -= w_t * tau[(n / Q) * R + i].value();
                    th[n * R + i] = t;
                    cs[n * R + i] = std::cos(t);
                    sn[n * R + i] = std::sin(t);
                }

            // effective channel e_{k,i} = h_k^H a_i
            std::vector<Var> e_re(K * R), e_im(K * R);
            for (std::size_t k = 0; k < K; ++k)
            {
                const double *hr = ctx.h_re.data() + (k * M + m) * N;
                const double *hi = ctx.h_im.data() + (k * M + m) * N;
                for (std::size_t i = 0; i < R; ++i)
                {
                    double vr = 0.0, vi = 0.0;
                    for (std::size_t n = 0; n < N; ++n)
                    {
                        const double c = cs[n * R + i], s = sn[n * R + i];
                        dre[n] = hr[n] * c + hi[n] * s; // contribution to Re
                        dim[n] = hr[n] * s - hi[n] * c; // contribution to Im
                        vr += dre[n];
                        vi += dim[n];
                    }
                    // Re: d/dtheta_n = -Im_n ; Im: d/dtheta_n = Re_n
                    for (std::size_t n = 0; n < N; ++n)
                        tape.edge(alpha[n * R + i], -dim[n]);
                    if (has_delays)
                        for (std::size_t q = 0; q < L; ++q)
                        {
                            double s = 0.0;
                            for (std::size_t n = q * Q; n < (q + 1) * Q; ++n)
                                s += -dim[n];
                            tape.edge(tau[q * R + i], -w_t * s);
                        }
                    e_re[k * R + i] = tape.finish(ad::Op::dot, vr);
                    for (std::size_t n = 0; n < N; ++n)
                        tape.edge(alpha[n * R + i], dre[n]);
                    if (has_delays)
                        for (std::size_t q = 0; q < L; ++q)
                        {
                            double s = 0.0;
                            for (std::size_t n = q * Q; n < (q + 1) * Q; ++n)
                                s += dre[n];
                            tape.edge(tau[q * R + i], -w_t * s);
                        }
                    e_im[k * R + i] = tape.finish(ad::Op::dot, vi);
                }
            }

            // Gram entries G_{r,s} = sum_n conj(a_{n,r}) a_{n,s} for r < s
            std::vector<Var> G_re(R * R), G_im(R * R);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t s = r + 1; s < R; ++s)
                {
                    double gr = 0.0, gi = 0.0;
                    std::vector<double> dc(N), ds(N);
                    for (std::size_t n = 0; n < N; ++n)
                    {
                        const double d = th[n * R + s] - th[n * R + r];
                        dc[n] = std::cos(d);
                        ds[n] = std::sin(d);
                        gr += dc[n];
                        gi += ds[n];
                    }
                    // Re: d/dtheta_s = -sin, d/dtheta_r = +sin ; Im: d/dtheta_s = cos, d/dtheta_r = -cos
                    for (int part = 0; part < 2; ++part)
                    {
                        const std::vector<double> &v = part == 0 ? ds : dc;
                        const double sign = part == 0 ? -1.0 : 1.0;
                        for (std::size_t n = 0; n < N; ++n)
                        {
                            tape.edge(alpha[n * R + s], sign * v[n]);
                            tape.edge(alpha[n * R + r], -sign * v[n]);
                        }
                        if (has_delays)
                            for (std::size_t q = 0; q < L; ++q)
                            {
                                double acc = 0.0;
                                for (std::size_t n = q * Q; n < (q + 1) * Q; ++n)
                                    acc += sign * v[n];
                                tape.edge(tau[q * R + s], -w_t * acc);
                                tape.edge(tau[q * R + r], w_t * acc);
                            }
                        (part == 0 ? G_re : G_im)[r * R + s] = tape.finish(ad::Op::dot, part == 0 ? gr : gi);
                    }
                }

            // raw power ||A_m raw_m||^2 = sum_k [N sum_r |d_r|^2 + 2 sum_{r<s} Re(G_rs conj(d_r) d_s)]
            auto dr = [&](std::size_t r, std::size_t k) { return dig[((m * R + r) * K + k) * 2]; };
            auto di = [&](std::size_t r, std::size_t k) { return dig[((m * R + r) * K + k) * 2 + 1]; };
            double praw = 0.0;
            for (std::size_t k = 0; k < K; ++k)
            {
                for (std::size_t r = 0; r < R; ++r)
                {
                    const double a = dr(r, k).value(), b = di(r, k).value();
                    praw += double(N) * (a * a + b * b);
                    tape.edge(dr(r, k), 2.0 * double(N) * a);
                    tape.edge(di(r, k), 2.0 * double(N) * b);
                }
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t s = r + 1; s < R; ++s)
                    {
                        const double ar = dr(r, k).value(), ai = di(r, k).value();
                        const double br = dr(s, k).value(), bi = di(s, k).value();
                        const double Gr = G_re[r * R + s].value(), Gi = G_im[r * R + s].value();
                        const double zr = ar * br + ai * bi, zi = ar * bi - ai * br;
                        praw += 2.0 * (Gr * zr - Gi * zi);
                        tape.edge(G_re[r * R + s], 2.0 * zr);
                        tape.edge(G_im[r * R + s], -2.0 * zi);
                        tape.edge(dr(r, k), 2.0 * (Gr * br - Gi * bi));
                        tape.edge(di(r, k), 2.0 * (Gr * bi + Gi * br));
                        tape.edge(dr(s, k), 2.0 * (Gr * ar + Gi * ai));
                        tape.edge(di(s, k), 2.0 * (Gr * ai - Gi * ar));
                    }
            }
            const Var P_raw = tape.finish(ad::Op::dot, praw);

            // digital weights actually applied
            std::vector<Var> d_re(R * K), d_im(R * K);
            Var P_used = P_raw;
            if (p.normalize_digital)
            {
                const double den = praw + detail::power_floor;
                tape.edge(P_raw, -0.5 * std::sqrt(P_t) * std::pow(den, -1.5));
                const Var c = tape.finish(ad::Op::sqrt, std::sqrt(P_t / den));
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t k = 0; k < K; ++k)
                    {
                        d_re[r * K + k] = c * dr(r, k);
                        d_im[r * K + k] = c * di(r, k);
                    }
                tape.edge(P_raw, P_t * detail::power_floor / (den * den));
                P_used = tape.finish(ad::Op::div, P_t * praw / den);
            }
            else
                for (std::size_t r = 0; r < R; ++r)
                    for (std::size_t k = 0; k < K; ++k)
                    {
                        d_re[r * K + k] = dr(r, k);
                        d_im[r * K + k] = di(r, k);
                    }
            power_terms.push_back(P_used);

            // received gains, interference-plus-noise and rates
            for (std::size_t k = 0; k < K; ++k)
            {
                std::vector<Var> mag(K);
                for (std::size_t j = 0; j < K; ++j)
                {
                    ad::Accumulator gr(tape), gi(tape);
                    for (std::size_t r = 0; r < R; ++r)
                    {
                        gr.product(e_re[k * R + r], d_re[r * K + j]);
                        gr.product(e_im[k * R + r], d_im[r * K + j], -1.0);
                        gi.product(e_re[k * R + r], d_im[r * K + j]);
                        gi.product(e_im[k * R + r], d_re[r * K + j]);
                    }
                    const Var vr = gr.finish(), vi = gi.finish();
                    ad::Accumulator sq(tape);
                    sq.product(vr, vr);
                    sq.product(vi, vi);
                    mag[j] = sq.finish();
                }
                const Var T = ad::sum(mag, sigma2);
                const Var U = T - mag[k];
                rate_logs.push_back(ad::log(T));
                rate_coef.push_back(-rate_scale);
                rate_logs.push_back(ad::log(U));
                rate_coef.push_back(rate_scale);
            }
        }

        const Var l_eff = ad::affine(rate_coef, rate_logs);

        Var l_pc;
        if (w.power == PowerPenalty::aggregate)
            l_pc = ad::square(ad::sum(power_terms, -P_t));
        else
        {
            std::vector<Var> ex;
            for (const Var pm : power_terms)
                ex.push_back(ad::square(ad::relu(pm - P_t)));
            l_pc = ad::sum(ex);
        }

        const double coef[] = {1.0, w.ps, w.ttd, w.pc};
        const Var parts[] = {l_eff, l_ps, l_ttd, l_pc};
        g.total = ad::affine(coef, parts);
        g.values = {l_eff.value(), w.ps * l_ps.value(), w.ttd * l_ttd.value(), w.pc * l_pc.value(), g.total.value()};
        return g;
    }

    struct LossEvaluation
    {
        LossBreakdown values;
        std::vector<double> gradient; // in Parameterization::flatten order
    };

    // Records, checks for non-finite values and differentiates the composite loss
    inline LossEvaluation evaluate_total_loss(ad::Tape &tape, const LossContext &ctx, const Parameterization &p,
                                              const LossWeights &w = {})
    {
        tape.clear();
        const LossGraph g = record_total_loss(tape, ctx, p, w);
        if (const auto bad = tape.first_nonfinite())
            fail(ErrorCategory::numerical, "non-finite value in loss recording at " + tape.describe(*bad));
        LossEvaluation out;
        out.values = g.values;
        const auto adj = tape.backward(g.total);
        out.gradient.reserve(g.leaves.size());
        for (const auto v : g.leaves)
            out.gradient.push_back(adj[v.id]);
        return out;
    }

    inline LossEvaluation total_loss(const ChannelInstance &H, const SystemParams &params, const Parameterization &p,
                                     const LossWeights &w = {})
    {
        ad::Tape tape;
        return evaluate_total_loss(tape, LossContext(H, params), p, w);
    }
}
