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

// Per-instance descent on the composite loss.
//
// Every run starts from a channel-driven initial point (or a supplied warm start), takes Adam
// directions and keeps a step only when the loss does not increase; a rejected step halves the
// learning rate. The best run is chosen on the spectral efficiency of its hardware-feasible
// version: delays clamped to [0, t_max], digital weights scaled onto the power budget.

#include "ttdbf/objective/loss.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

namespace ttdbf
{
    struct OptimizerConfig
    {
        double step_size = 1e-2;
        std::size_t max_iters = 300;
        std::size_t num_restarts = 5;
        std::uint64_t seed = 0;
        LossWeights penalty_weights;
        double convergence_tol = 1e-10; // relative loss decrease counted as stalled
        std::size_t patience = 25;      // consecutive stalled steps before stopping

        void validate() const
        {
            require(step_size > 0.0 && std::isfinite(step_size), ErrorCategory::configuration, "step size must be positive");
            require(max_iters >= 1, ErrorCategory::configuration, "iteration budget must be positive");
            require(num_restarts >= 1, ErrorCategory::configuration, "at least one restart is required");
        }
    };

    struct TraceRow
    {
        std::size_t iteration = 0;
        LossBreakdown loss;
    };

    inline void write_trace_csv(std::ostream &os, const std::vector<TraceRow> &trace)
    {
        os << "iteration,l_eff,l_ps,l_ttd,l_pc,total\n";
        os.precision(17);
        for (const auto &r : trace)
            os << r.iteration << ',' << r.loss.l_eff << ',' << r.loss.l_ps << ',' << r.loss.l_ttd << ',' << r.loss.l_pc << ','
               << r.loss.total << '\n';
    }

    struct OptimizeResult
    {
        BeamformerSet set;
        EvalReport report;
        std::vector<TraceRow> trace; // accepted steps of the winning run
        std::size_t winning_run = 0;
        std::vector<double> run_se; // feasible SE of every run, warm starts last
        bool budget_exhausted = false;
    };

    // ---- set conversions and feasibility ----

    // Clamps delays into [0, t_max] (zero for ps_only); unbounded modes only lose negative parts
    inline BeamformerSet clamp_delays(BeamformerSet set, const SystemParams &params)
    {
        const double hi = has_range_bound(set.mode) ? params.max_delay_seconds : std::numeric_limits<double>::infinity();
        for (auto &t : set.delays.incremental.data())
            t = set.mode == ConfigMode::ps_only ? 0.0 : std::clamp(t, 0.0, hi);
        return set;
    }

    // Scales every D_m onto ||A_m D_m||_F^2 = P_t, then projects away rounding excess
    inline BeamformerSet scale_to_budget(BeamformerSet set, const SystemParams &params)
    {
        for (std::size_t m = 0; m < set.num_subcarriers(); ++m)
        {
            const double p = transmit_power(build_analog(set, subcarrier_frequency(m + 1, params)), set.digital.weights, m);
            if (p <= 0.0 || !std::isfinite(p))
                continue;
            const double s = std::sqrt(params.transmit_power_watts / p);
            for (std::size_t r = 0; r < set.num_rf_chains(); ++r)
                for (std::size_t k = 0; k < set.num_users(); ++k)
                    set.digital.weights(m, r, k) *= s;
        }
        return project_power(std::move(set), params);
    }

    inline BeamformerSet make_feasible(const BeamformerSet &set, const SystemParams &params)
    {
        return scale_to_budget(clamp_delays(set, params), params);
    }

    // Re-expresses a set in another wiring with an identical analog response where that is possible:
    // ps_only -> any (zero delays), serial_fixed -> adaptive (identity switches), any -> ttd_infinite
    // (per-antenna copy of the output delays)
    inline BeamformerSet convert_set(const BeamformerSet &set, ConfigMode target, const SystemParams &params)
    {
        if (set.mode == target)
            return set;
        BeamformerSet out = BeamformerSet::zeros(target, params);
        require(set.num_antennas() == out.num_antennas() && set.num_rf_chains() == out.num_rf_chains() &&
                    set.num_subcarriers() == out.num_subcarriers() && set.num_users() == out.num_users(),
                ErrorCategory::invalid_argument, "warm start does not match the parameters");
        out.ps = set.ps;
        out.digital = set.digital;
        if (set.mode == ConfigMode::ps_only)
            return out;
        if (set.mode == ConfigMode::serial_fixed && target == ConfigMode::adaptive)
        {
            out.delays = set.delays;
            return out;
        }
        if (target == ConfigMode::ttd_infinite)
        {
            const std::size_t Q = set.num_antennas() / set.num_ttds();
            for (std::size_t i = 0; i < set.num_rf_chains(); ++i)
            {
                const auto perm = set.switches.permutation(i);
                const auto t = output_delays(set, i);
                for (std::size_t n = 0; n < set.num_antennas(); ++n)
                    out.delays.incremental(n, i) = t[perm[n / Q]];
            }
            return out;
        }
        fail(ErrorCategory::invalid_argument, "cannot convert a " + std::string(to_string(set.mode)) + " set to " +
                                                  std::string(to_string(target)));
    }

    // ---- channel-driven initial point ----

    namespace detail
    {
        // Matched-filter energy sum_m |sum_n exp(-j 2 pi f_m r_n / c) h_{m,k,n}|^2 of a candidate placement
        inline double placement_energy(const ChannelInstance &H, const std::vector<double> &freqs, std::size_t k,
                                       const Placement &p)
        {
            const auto r = element_distances(H.geometry, p);
            double e = 0.0;
            for (std::size_t m = 0; m < freqs.size(); ++m)
            {
                const double w = two_pi * freqs[m] / speed_of_light;
                const auto h = H.h(m, k);
                cdouble acc{};
                for (std::size_t n = 0; n < h.size(); ++n)
                    acc += std::polar(1.0, -w * r[n]) * h[n];
                e += std::norm(acc);
            }
            return e;
        }

        // Placement of the strongest spherical-wave component of user k: coarse (r, theta) grid, then
        // coordinate refinement with shrinking steps
        inline Placement locate_user(const ChannelInstance &H, const SystemParams &params, std::size_t k)
        {
            const auto freqs = subcarrier_frequencies(params);
            const auto &g = H.geometry;
            const double aperture = g.kind == ArrayKind::ula ? double(g.num_antennas - 1) * g.element_spacing_m : 2.0 * g.radius_m;
            const double lambda = speed_of_light / params.carrier_frequency_hz;
            // a quarter of the main-lobe width, never coarser than one degree
            const double step = aperture > 0.0 ? std::min(std::numbers::pi / 180.0, lambda / (4.0 * aperture)) : std::numbers::pi / 180.0;
            const auto num_angles = static_cast<std::size_t>(std::ceil(std::numbers::pi / step));
            Placement best{10.0, std::numbers::pi / 2.0};
            double best_e = -1.0;
            for (double r = 1.0; r <= 40.0; r *= 1.1)
                for (std::size_t a = 0; a <= num_angles; ++a)
                {
                    const Placement p{r, std::numbers::pi * double(a) / double(num_angles)};
                    const double e = placement_energy(H, freqs, k, p);
                    if (e > best_e)
                    {
                        best_e = e;
                        best = p;
                    }
                }
            double step_a = 0.5 * std::numbers::pi / double(num_angles), step_r = 0.05;
            for (int it = 0; it < 40; ++it)
            {
                bool moved = false;
                for (const auto &[da, dr] : {std::pair{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}})
                {
                    const Placement p{best.distance_m * std::exp(dr * step_r),
                                      std::clamp(best.angle_rad + da * step_a, 0.0, std::numbers::pi)};
                    const double e = placement_energy(H, freqs, k, p);
                    if (e > best_e)
                    {
                        best_e = e;
                        best = p;
                        moved = true;
                    }
                }
                if (!moved)
                {
                    step_a *= 0.5;
                    step_r *= 0.5;
                }
            }
            return best;
        }

        // Relative excess path delay r_n / c - min_n r_n / c towards the located user
        inline std::vector<double> estimate_path_delays(const ChannelInstance &H, const SystemParams &params, std::size_t k)
        {
            const auto r = element_distances(H.geometry, locate_user(H, params, k));
            const double lo = *std::min_element(r.begin(), r.end());
            std::vector<double> tau(r.size());
            for (std::size_t n = 0; n < r.size(); ++n)
                tau[n] = (r[n] - lo) / speed_of_light;
            return tau;
        }

        inline double clip_error(const std::vector<double> &want, const std::vector<double> &got)
        {
            double e = 0.0;
            for (std::size_t i = 0; i < want.size(); ++i)
                e += (want[i] - got[i]) * (want[i] - got[i]);
            return e;
        }

        // Independent delays within [0, t_max]: best common offset, then clip
        inline std::vector<double> fit_parallel(const std::vector<double> &target, double t_max)
        {
            if (!std::isfinite(t_max))
                return target;
            std::vector<double> best(target.size(), 0.0);
            double best_err = std::numeric_limits<double>::infinity();
            for (double anchor : target)
                for (double c : {anchor, anchor - t_max})
                {
                    std::vector<double> want(target.size()), got(target.size());
                    for (std::size_t p = 0; p < target.size(); ++p)
                    {
                        want[p] = target[p] - c;
                        got[p] = std::clamp(want[p], 0.0, t_max);
                    }
                    const double err = clip_error(want, got);
                    if (err < best_err)
                    {
                        best_err = err;
                        best = got;
                    }
                }
            return best;
        }

        // Cascaded increments d_0 = 0, d_l in [0, t_max] whose running sums best match target up to a
        // common offset (least squares, exact coordinate descent). A common delay on a chain only rotates
        // each subcarrier's column, which the digital weights absorb.
        inline std::vector<double> fit_serial(const std::vector<double> &target, double t_max)
        {
            const std::size_t L = target.size();
            std::vector<double> d(L, 0.0), g(L, 0.0);
            const double span = *std::max_element(target.begin(), target.end()) - *std::min_element(target.begin(), target.end());
            if (L < 2 || span <= 0.0)
                return d;
            double c = 0.0;
            for (double t : target)
                c += t / double(L);
            auto residual_sum_from = [&](std::size_t j)
            {
                double s = 0.0;
                for (std::size_t l = j; l < L; ++l)
                    s += target[l] - c - g[l];
                return s;
            };
            for (int sweep = 0; sweep < 20000; ++sweep)
            {
                double moved = 0.0;
                for (std::size_t j = 1; j < L; ++j)
                {
                    // g_l for l >= j shifts by the change in d_j
                    const double step = residual_sum_from(j) / double(L - j);
                    const double next = std::isfinite(t_max) ? std::clamp(d[j] + step, 0.0, t_max) : std::max(d[j] + step, 0.0);
                    const double delta = next - d[j];
                    d[j] = next;
                    for (std::size_t l = j; l < L; ++l)
                        g[l] += delta;
                    moved = std::max(moved, std::abs(delta));
                }
                c += residual_sum_from(0) / double(L);
                if (moved <= 1e-13 * span)
                    break;
            }
            return d;
        }

        // Zero-forcing on the effective channel E (K x N_RF); ridge-regularized when ill-conditioned
        inline Eigen::MatrixXcd zero_forcing(const Eigen::MatrixXcd &E, bool *regularized = nullptr)
        {
            const Eigen::MatrixXcd gram = E * E.adjoint();
            const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
            const double hi = eig.eigenvalues().maxCoeff(), lo = eig.eigenvalues().minCoeff();
            const bool ill = !(hi > 0.0) || lo <= 1e-12 * hi;
            if (regularized)
                *regularized = ill;
            Eigen::MatrixXcd reg = gram;
            if (ill)
                reg += Eigen::MatrixXcd::Identity(gram.rows(), gram.cols()) * (std::max(hi, 1e-300) * 1e-6);
            return E.adjoint() * reg.inverse();
        }
    }

    // Powers p_k >= 0 with sum p_k = budget maximizing sum_k log2(1 + p_k g_k)
    inline std::vector<double> water_filling(const std::vector<double> &gains, double budget)
    {
        std::vector<std::size_t> order(gains.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return gains[a] > gains[b]; });
        std::vector<double> p(gains.size(), 0.0);
        // largest active set whose water level stays above every active floor 1/g
        std::size_t active = 0;
        double level = 0.0;
        for (std::size_t n = 1; n <= order.size(); ++n)
        {
            if (!(gains[order[n - 1]] > 0.0))
                break;
            double inv = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                inv += 1.0 / gains[order[i]];
            const double mu = (budget + inv) / double(n);
            if (mu - 1.0 / gains[order[n - 1]] <= 0.0)
                break;
            active = n;
            level = mu;
        }
        for (std::size_t i = 0; i < active; ++i)
            p[order[i]] = level - 1.0 / gains[order[i]];
        return p;
    }

    // Replaces the digital part by zero-forcing directions on the effective channel H^H A_m with
    // water-filled stream powers, then scales onto the budget
    inline BeamformerSet zero_forcing_digital(const ChannelInstance &H, const SystemParams &params, BeamformerSet set)
    {
        const std::size_t N = set.num_antennas(), R = set.num_rf_chains(), K = set.num_users(), M = set.num_subcarriers();
        for (std::size_t m = 0; m < M; ++m)
        {
            const auto A = build_analog(set, subcarrier_frequency(m + 1, params));
            Eigen::MatrixXcd E(K, R);
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t r = 0; r < R; ++r)
                {
                    cdouble acc{};
                    const auto h = H.h(m, k);
                    for (std::size_t n = 0; n < N; ++n)
                        acc += std::conj(h[n]) * A(n, r);
                    E(k, r) = acc;
                }
            Eigen::MatrixXcd D = detail::zero_forcing(E);
            // unit transmitted power per stream, then water-filling over the interference-free gains
            Eigen::MatrixXcd Am(N, R);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t r = 0; r < R; ++r)
                    Am(n, r) = A(n, r);
            std::vector<double> gains(K, 0.0);
            for (std::size_t k = 0; k < K; ++k)
            {
                const double tx = (Am * D.col(k)).norm();
                if (tx > 0.0)
                    D.col(k) /= tx;
                gains[k] = std::norm((E.row(k) * D.col(k))(0, 0)) / H.noise_power_watts;
            }
            const auto pw = water_filling(gains, params.transmit_power_watts);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t k = 0; k < K; ++k)
                    set.digital.weights(m, r, k) = D(r, k) * std::sqrt(pw[k]);
        }
        return scale_to_budget(std::move(set), params);
    }

    // Channel-driven set in which chain i steers towards user chain_users[i], given each user's excess
    // path-delay profile
    inline BeamformerSet heuristic_set(const ChannelInstance &H, const SystemParams &params, ConfigMode mode,
                                       const std::vector<std::size_t> &chain_users,
                                       const std::vector<std::vector<double>> &profiles)
    {
        const std::size_t N = params.num_antennas, R = params.num_rf_chains, K = params.num_users, M = params.num_subcarriers;
        BeamformerSet set = BeamformerSet::zeros(mode, params);
        const std::size_t L = set.num_ttds(), Q = N / L;
        const double t_max = has_range_bound(mode) ? params.max_delay_seconds : std::numeric_limits<double>::infinity();

        require(chain_users.size() == R, ErrorCategory::invalid_argument, "one user per RF chain is required");
        for (auto u : chain_users)
            require(u < K, ErrorCategory::invalid_argument, "chain user index out of range");
        require(profiles.size() == K, ErrorCategory::invalid_argument, "one delay profile per user is required");

        std::vector<std::vector<std::size_t>> perms;
        for (std::size_t i = 0; i < R; ++i)
        {
            const std::size_t u = chain_users[i];
            // required delay per subarray: (max r - r_n) / c averaged over the block
            const double top = *std::max_element(profiles[u].begin(), profiles[u].end());
            std::vector<double> target(L, 0.0);
            for (std::size_t n = 0; n < N; ++n)
                target[n / Q] += (top - profiles[u][n]) / double(Q);

            std::vector<std::size_t> perm(L);
            std::iota(perm.begin(), perm.end(), 0);
            if (mode == ConfigMode::parallel || mode == ConfigMode::ttd_infinite)
            {
                const auto t = detail::fit_parallel(target, t_max);
                for (std::size_t l = 0; l < L; ++l)
                    set.delays.incremental(l, i) = t[l];
            }
            else if (mode == ConfigMode::serial_fixed)
            {
                const auto inc = detail::fit_serial(target, t_max);
                for (std::size_t l = 0; l < L; ++l)
                    set.delays.incremental(l, i) = inc[l];
            }
            else if (mode == ConfigMode::adaptive)
            {
                std::vector<std::size_t> order(L);
                std::iota(order.begin(), order.end(), 0);
                std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return target[a] < target[b]; });
                std::vector<double> sorted(L);
                for (std::size_t l = 0; l < L; ++l)
                {
                    sorted[l] = target[order[l]];
                    perm[order[l]] = l; // the l-th smallest target is fed by cumulative TTD l
                }
                const auto inc = detail::fit_serial(sorted, t_max);
                for (std::size_t l = 0; l < L; ++l)
                    set.delays.incremental(l, i) = inc[l];
            }
            perms.push_back(perm);
        }
        set.switches = SwitchMatrix::from_permutations(perms);

        // phases aligned with the user's channel after the realized delays
        for (std::size_t i = 0; i < R; ++i)
        {
            const std::size_t u = chain_users[i];
            const auto t = output_delays(set, i);
            for (std::size_t n = 0; n < N; ++n)
            {
                const double tau = t[perms[i][n / Q]];
                cdouble acc{};
                for (std::size_t m = 0; m < M; ++m)
                    acc += H.responses(u, m, n) * std::polar(1.0, two_pi * subcarrier_frequency(m + 1, params) * tau);
                set.ps.phases(n, i) = std::polar(1.0, std::arg(acc));
            }
        }

        return zero_forcing_digital(H, params, std::move(set));
    }

    // Best heuristic over chain-to-user assignments; round robin first, the rest when K^N_RF <= 256
    inline BeamformerSet heuristic_set(const ChannelInstance &H, const SystemParams &params, ConfigMode mode)
    {
        const std::size_t R = params.num_rf_chains, K = params.num_users;
        std::vector<std::size_t> users(R);
        for (std::size_t i = 0; i < R; ++i)
            users[i] = i % K;
        std::vector<std::vector<double>> profiles(K);
        for (std::size_t k = 0; k < K; ++k)
            profiles[k] = detail::estimate_path_delays(H, params, k);
        BeamformerSet best = heuristic_set(H, params, mode, users, profiles);
        double best_se = spectral_efficiency(H, best, params).spectral_efficiency;
        if (std::pow(double(K), double(R)) > 256.0)
            return best;
        const auto round_robin = users;
        std::fill(users.begin(), users.end(), 0);
        while (true)
        {
            if (users != round_robin)
            {
                BeamformerSet cand = heuristic_set(H, params, mode, users, profiles);
                const double se = spectral_efficiency(H, cand, params).spectral_efficiency;
                if (se > best_se)
                {
                    best = std::move(cand);
                    best_se = se;
                }
            }
            std::size_t i = 0;
            while (i < R && ++users[i] == K)
                users[i++] = 0;
            if (i == R)
                break;
        }
        return best;
    }

    // ---- descent ----

    namespace detail
    {
        struct RunOutcome
        {
            Parameterization param;
            std::vector<TraceRow> trace;
            bool exhausted = false;
        };

        inline RunOutcome descend(ad::Tape &tape, const LossContext &ctx, Parameterization param, const OptimizerConfig &cfg)
        {
            RunOutcome out;
            std::vector<double> x = param.flatten();
            auto eval = [&](const std::vector<double> &at) -> std::optional<LossEvaluation>
            {
                param.assign(at);
                try
                {
                    return evaluate_total_loss(tape, ctx, param, cfg.penalty_weights);
                }
                catch (const Error &e)
                {
                    if (e.category() != ErrorCategory::numerical)
                        throw;
                    return std::nullopt;
                }
            };

            auto cur = eval(x);
            if (!cur)
                fail(ErrorCategory::numerical, "loss is not finite at the initial point");
            out.trace.push_back({0, cur->values});

            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            std::vector<double> m1(x.size(), 0.0), m2(x.size(), 0.0), trial(x.size());
            double lr = cfg.step_size;
            std::size_t stalled = 0, t = 0;
            bool converged = false;
            for (std::size_t it = 1; it <= cfg.max_iters; ++it)
            {
                ++t;
                const double c1 = 1.0 - std::pow(b1, double(t)), c2 = 1.0 - std::pow(b2, double(t));
                for (std::size_t i = 0; i < x.size(); ++i)
                {
                    const double g = cur->gradient[i];
                    m1[i] = b1 * m1[i] + (1.0 - b1) * g;
                    m2[i] = b2 * m2[i] + (1.0 - b2) * g * g;
                    trial[i] = x[i] - lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
                }
                auto next = eval(trial);
                if (next && std::isfinite(next->values.total) && next->values.total <= cur->values.total)
                {
                    const double gain = cur->values.total - next->values.total;
                    stalled = gain <= cfg.convergence_tol * std::max(1.0, std::abs(cur->values.total)) ? stalled + 1 : 0;
                    x = trial;
                    cur = std::move(next);
                    out.trace.push_back({it, cur->values});
                    lr = std::min(cfg.step_size, lr * 1.1);
                    if (stalled >= cfg.patience)
                    {
                        converged = true;
                        break;
                    }
                }
                else
                {
                    lr *= 0.5;
                    if (lr < cfg.step_size * 1e-6)
                    {
                        converged = true;
                        break;
                    }
                }
            }
            out.exhausted = !converged;
            param.assign(x);
            out.param = std::move(param);
            return out;
        }

        // Rescales each subcarrier block of digital raws to unit peak magnitude; decode is invariant to it
        inline void rescale_digital(Parameterization &p)
        {
            if (!p.normalize_digital)
                return;
            const std::size_t block = p.N_RF * p.K * 2;
            for (std::size_t m = 0; m < p.M; ++m)
            {
                const auto first = p.digital_raws.begin() + std::ptrdiff_t(m * block);
                double peak = 0.0;
                for (auto it = first; it != first + std::ptrdiff_t(block); ++it)
                    peak = std::max(peak, std::abs(*it));
                if (peak > 0.0)
                    for (auto it = first; it != first + std::ptrdiff_t(block); ++it)
                        *it /= peak;
            }
        }

        inline void perturb(Parameterization &p, std::mt19937_64 &rng, double scale)
        {
            std::normal_distribution<double> g(0.0, 1.0);
            for (auto &a : p.ps_angles)
                a += scale * g(rng);
            for (auto &d : p.delay_raws)
                d += scale * g(rng);
            double norm = 0.0;
            for (double d : p.digital_raws)
                norm = std::max(norm, std::abs(d));
            for (auto &d : p.digital_raws)
                d += scale * norm * g(rng);
            for (auto &s : p.switch_logits)
                s += scale * g(rng);
        }
    }

    // Best-of-restarts descent on one channel realization. Warm starts (any convertible mode) are scored
    // as given and also used as additional starting points.
    inline OptimizeResult optimize_instance(const ChannelInstance &H, const SystemParams &params, ConfigMode mode,
                                            const OptimizerConfig &cfg, const std::vector<BeamformerSet> &warm_starts = {})
    {
        params.validate();
        cfg.validate();
        const LossContext ctx(H, params);
        ad::Tape tape;

        struct Candidate
        {
            BeamformerSet set;
            double se;
            std::vector<TraceRow> trace;
            bool exhausted;
        };
        std::vector<Candidate> runs;
        auto score = [&](const BeamformerSet &s) { return spectral_efficiency(H, s, params).spectral_efficiency; };

        // candidates: the descended point and every feasible start it came from
        auto finish_run = [&](detail::RunOutcome &&o, std::initializer_list<const BeamformerSet *> starts)
        {
            BeamformerSet fin = make_feasible(decode(o.param, params), params);
            double se = score(fin);
            for (const auto *s : starts)
            {
                const double s0 = score(*s);
                if (s0 > se)
                {
                    fin = *s;
                    se = s0;
                }
            }
            runs.push_back({std::move(fin), se, std::move(o.trace), o.exhausted});
        };

        // Encoding lifts zero delays to a small floor; at high SNR that alone breaks the interference
        // nulls, so the digital part is refit whenever zero-forcing does better than the carried weights
        auto prepare = [&](const BeamformerSet &set, BeamformerSet &start) -> Parameterization
        {
            const BeamformerSet carried = make_feasible(decode(encode(set, params), params), params);
            BeamformerSet refit = zero_forcing_digital(H, params, carried);
            start = score(refit) > score(carried) ? std::move(refit) : carried;
            Parameterization p = encode(start, params);
            detail::rescale_digital(p);
            return p;
        };

        const BeamformerSet base = heuristic_set(H, params, mode);
        for (std::size_t r = 0; r < cfg.num_restarts; ++r)
        {
            BeamformerSet start;
            Parameterization p = prepare(base, start);
            if (r > 0)
            {
                std::mt19937_64 rng(derive_seed(cfg.seed, r));
                detail::perturb(p, rng, 0.25 * double(r));
                p = prepare(decode(p, params), start);
            }
            finish_run(detail::descend(tape, ctx, std::move(p), cfg), {&start, r == 0 ? &base : &start});
        }
        for (const auto &w : warm_starts)
        {
            const BeamformerSet given = make_feasible(convert_set(w, mode, params), params);
            BeamformerSet start;
            Parameterization p = prepare(given, start);
            finish_run(detail::descend(tape, ctx, std::move(p), cfg), {&start, &given});
        }

        std::size_t best = 0;
        for (std::size_t i = 1; i < runs.size(); ++i)
            if (runs[i].se > runs[best].se)
                best = i;

        OptimizeResult res;
        res.winning_run = best;
        for (const auto &c : runs)
            res.run_se.push_back(c.se);
        res.budget_exhausted = runs[best].exhausted;
        res.trace = std::move(runs[best].trace);
        res.set = std::move(runs[best].set);
        res.report = spectral_efficiency(H, res.set, params);
        return res;
    }
}
