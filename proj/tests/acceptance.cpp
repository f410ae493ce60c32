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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

#include "ttdbf/assignment/hungarian.hpp"
#include "ttdbf/beamforming/combinatorics.hpp"
#include "ttdbf/experiments/experiments.hpp"
#include "ttdbf/neural/train.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

using namespace ttdbf;

namespace
{
    using Clock = std::chrono::steady_clock;

    struct Outcome
    {
        bool pass = false;
        std::string detail;
    };

    int failures = 0;

    void run(int id, const char *title, double budget_s, const std::function<Outcome()> &body)
    {
        const auto t0 = Clock::now();
        Outcome o;
        try
        {
            o = body();
        }
        catch (const std::exception &e)
        {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
        if (dt > budget_s)
        {
            o.pass = false;
            o.detail += " [over the " + std::to_string(int(budget_s)) + " s budget]";
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str(), dt);
        std::fflush(stdout);
    }

    std::string fmt(const char *f, auto... args)
    {
        char buf[512];
        std::snprintf(buf, sizeof buf, f, args...);
        return buf;
    }

    double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

    SystemParams tiny_params()
    {
        SystemParams p = SystemParams::desk();
        p.num_antennas = 8;
        p.num_ttds_per_chain = 2;
        p.num_subcarriers = 2;
        p.num_scatterers_per_user = 2;
        return p;
    }

    // ---- 1 ----
    Outcome configuration_counts()
    {
        const auto c = count_configurations(64, 4);
        const double u = c.unconstrained.convert_to<double>(), e = c.equal_sized.convert_to<double>();
        const double eu = std::abs(u / 3.4032e38 - 1.0), ee = std::abs(e / 2.67e34 - 1.0);
        return {eu < 5e-4 && ee < 1e-2, fmt("unconstrained %s (off %.3f%%, tol 0.05%%), equal-sized %s (off %.2f%%, tol 1%%)",
                                            to_scientific(c.unconstrained).c_str(), 100 * eu, to_scientific(c.equal_sized).c_str(), 100 * ee)};
    }

    // ---- 2 ----
    Outcome uca_radius()
    {
        const double R = ArrayGeometry::from_params(SystemParams::table1(), ArrayKind::uca).radius_m;
        const double err = std::abs(R / 0.768 - 1.0);
        return {err <= 3e-3, fmt("R = %.6f m (off %.3f%%, tol 0.3%%)", R, 100 * err)};
    }

    // ---- 3 ----
    Outcome hungarian_exactness()
    {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-10.0, 10.0);
        int mismatches = 0, total = 0;
        for (std::size_t n = 2; n <= 7; ++n)
            for (int t = 0; t < 200; ++t, ++total)
            {
                CostMatrix C(n, n);
                for (auto &v : C.data())
                    v = u(rng);
                const auto h = hungarian_max(C), b = brute_force_assignment(C);
                mismatches += h.permutation != b.permutation || assignment_cost(C, h.permutation) != assignment_cost(C, b.permutation);
            }
        return {mismatches == 0, fmt("%d mismatches over %d matrices", mismatches, total)};
    }

    // ---- 4 ----
    Outcome single_user_oracle()
    {
        SystemParams p = SystemParams::desk();
        p.num_users = 1;
        p.num_rf_chains = 1;
        p.num_subcarriers = 8;
        p.scattering_loss_db = -std::numeric_limits<double>::infinity();
        OptimizerConfig cfg;
        double worst_a = 1.0, worst_b = 1.0;
        for (std::size_t i = 0; i < 20; ++i)
        {
            const auto H = make_instance(p, ArrayKind::ula, 4, i);
            const double fd = full_digital_baseline(H, p).report.spectral_efficiency;
            const double a = spectral_efficiency(H, analytic_matched_delays(H, p), p).spectral_efficiency;
            cfg.seed = i;
            const double b = ttd_infinite_baseline(H, p, ConfigMode::parallel, cfg).report.spectral_efficiency;
            worst_a = std::min(worst_a, a / fd);
            worst_b = std::min(worst_b, b / fd);
        }
        return {worst_a >= 0.99 && worst_b >= 0.99,
                fmt("worst ratio to full digital over 20 placements: analytic %.5f, optimized %.5f (need 0.99)", worst_a, worst_b)};
    }

    // ---- 5 ----
    using ScalarOp = std::function<ad::Var(std::span<const ad::Var>)>;

    double op_error(const ScalarOp &f, std::span<const double> x0)
    {
        ad::Tape t;
        const auto xs = t.leaves(x0);
        const auto y = f(xs);
        const auto adj = t.backward(y);
        double worst = 0.0;
        for (std::size_t i = 0; i < x0.size(); ++i)
        {
            const double h = 1e-6 * std::max(1.0, std::abs(x0[i]));
            std::vector<double> xp(x0.begin(), x0.end()), xm = xp;
            xp[i] += h;
            xm[i] -= h;
            ad::Tape tp, tm;
            const double fp = f(tp.leaves(xp)).value(), fm = f(tm.leaves(xm)).value();
            worst = std::max(worst, rel_err(adj[xs[i].id], (fp - fm) / (2.0 * h)));
        }
        return worst;
    }

    Outcome gradient_suite()
    {
        struct Case
        {
            const char *name;
            std::size_t arity;
            double lo, hi;
            ScalarOp f;
        };
        using S = std::span<const ad::Var>;
        const double c4[] = {0.5, -1.0, 2.0, 0.25};
        const std::vector<Case> cases{
            {"add", 2, -3, 3, [](S x) { return x[0] + x[1]; }},
            {"sub", 2, -3, 3, [](S x) { return x[0] - x[1]; }},
            {"mul", 2, -3, 3, [](S x) { return x[0] * x[1]; }},
            {"div", 2, 0.5, 3, [](S x) { return x[0] / x[1]; }},
            {"neg", 1, -3, 3, [](S x) { return -x[0]; }},
            {"add_const", 1, -3, 3, [](S x) { return 1.7 + x[0] + 2.0; }},
            {"sub_const", 1, -3, 3, [](S x) { return 4.0 - x[0] - 2.5; }},
            {"mul_const", 1, -3, 3, [](S x) { return -2.5 * x[0] * 3.0; }},
            {"const_div", 1, 0.5, 3, [](S x) { return 2.0 / x[0]; }},
            {"exp", 1, -3, 3, [](S x) { return ad::exp(x[0]); }},
            {"log", 1, 0.1, 5, [](S x) { return ad::log(x[0]); }},
            {"sqrt", 1, 0.1, 5, [](S x) { return ad::sqrt(x[0]); }},
            {"sin", 1, -4, 4, [](S x) { return ad::sin(x[0]); }},
            {"cos", 1, -4, 4, [](S x) { return ad::cos(x[0]); }},
            {"tanh", 1, -3, 3, [](S x) { return ad::tanh(x[0]); }},
            {"square", 1, -3, 3, [](S x) { return ad::square(x[0]); }},
            {"relu", 1, -3, 3, [](S x) { return ad::relu(x[0]); }},
            {"max", 2, -3, 3, [](S x) { return ad::max(x[0], x[1]); }},
            {"softplus", 1, -20, 20, [](S x) { return ad::softplus(x[0]); }},
            {"gelu", 1, -4, 4, [](S x) { return ad::gelu(x[0]); }},
            {"sum", 6, -3, 3, [](S x) { return ad::sum(x, 0.3); }},
            {"affine", 4, -3, 3, [&c4](S x) { return ad::affine(c4, x, -1.0); }},
            {"dot", 6, -3, 3, [](S x) { return ad::dot(x.subspan(0, 3), x.subspan(3, 3)); }},
        };

        std::mt19937_64 rng(5);
        std::ostringstream worst_list;
        double worst_all = 0.0;
        for (const auto &c : cases)
        {
            std::uniform_real_distribution<double> u(c.lo, c.hi);
            double worst = 0.0;
            for (int pt = 0; pt < 100; ++pt)
            {
                std::vector<double> x(c.arity);
                for (auto &v : x)
                    do
                        v = u(rng);
                    while (std::abs(v) < 1e-3); // away from the relu kink
                if (c.arity == 2 && std::abs(x[0] - x[1]) < 1e-3)
                    x[1] += 0.01; // away from the max tie
                worst = std::max(worst, op_error(c.f, x));
            }
            worst_all = std::max(worst_all, worst);
        }
        worst_list << fmt("%zu tape ops max %.2e", cases.size(), worst_all);

        // composite loss, every coordinate but the switch logits (piecewise constant forward)
        const auto p = tiny_params();
        const auto H = make_instance(p, ArrayKind::ula, 5, 0);
        const LossContext ctx(H, p);
        std::normal_distribution<double> g;
        std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
        ad::Tape tape;
        double worst_loss = 0.0;
        for (auto mode : {ConfigMode::ps_only, ConfigMode::parallel, ConfigMode::serial_fixed, ConfigMode::adaptive, ConfigMode::ttd_infinite})
            for (int pt = 0; pt < 100; ++pt)
            {
                auto x = Parameterization::zeros(mode, p);
                for (auto &a : x.ps_angles)
                    a = angle(rng);
                for (auto *v : {&x.delay_raws, &x.digital_raws, &x.switch_logits})
                    for (auto &e : *v)
                        e = g(rng);
                x.normalize_digital = pt % 2 == 0;
                LossWeights w;
                w.power = pt % 4 < 2 ? PowerPenalty::aggregate : PowerPenalty::per_subcarrier;
                const auto ev = evaluate_total_loss(tape, ctx, x, w);
                const auto x0 = x.flatten();
                for (std::size_t i = 0; i < x0.size() - x.switch_logits.size(); ++i)
                {
                    const double h = 1e-6 * std::max(1.0, std::abs(x0[i]));
                    auto xp = x0, xm = x0;
                    xp[i] += h;
                    xm[i] -= h;
                    Parameterization pp = x, pm = x;
                    pp.assign(xp);
                    pm.assign(xm);
                    const double fd = (evaluate_total_loss(tape, ctx, pp, w).values.total - evaluate_total_loss(tape, ctx, pm, w).values.total) / (2.0 * h);
                    worst_loss = std::max(worst_loss, rel_err(ev.gradient[i], fd));
                }
            }
        worst_list << fmt(", total_loss x5 modes max %.2e", worst_loss);

        // network loss with respect to network parameters, random coordinates
        double worst_net = 0.0;
        nn::ModelConfig mc;
        mc.mode = ConfigMode::serial_fixed;
        for (int pt = 0; pt < 100; ++pt)
        {
            auto net = nn::BeamformingNetwork::create(p, mc, 1000 + pt);
            const auto H0 = make_instance(p, ArrayKind::ula, 6, 2 * pt), H1 = make_instance(p, ArrayKind::uca, 6, 2 * pt + 1);
            const LossContext c0(H0, p), c1(H1, p);
            const std::vector<const ChannelInstance *> batch{&H0, &H1};
            auto eval = [&](nn::Binding &b)
            {
                const auto outs = net.forward(b, batch);
                return nn::record_network_loss(b.tape(), c0, outs[0]).total + nn::record_network_loss(b.tape(), c1, outs[1]).total;
            };
            std::vector<std::vector<double> *> flat;
            net.visit([&flat](const std::string &, std::vector<double> &v) { flat.push_back(&v); });
            ad::Tape t;
            nn::Binding b(t);
            const auto y = eval(b);
            const auto adj = t.backward(y);
            std::uniform_int_distribution<std::size_t> pick_tensor(0, flat.size() - 1);
            for (int k = 0; k < 6; ++k)
            {
                auto &v = *flat[pick_tensor(rng)];
                const std::size_t i = std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng);
                const double gi = b.gradient(v, adj)[i];
                const double x0 = v[i], h = 1e-6 * std::max(1.0, std::abs(x0));
                v[i] = x0 + h;
                ad::Tape tp;
                nn::Binding bp(tp);
                const double fp = eval(bp).value();
                v[i] = x0 - h;
                ad::Tape tm;
                nn::Binding bm(tm);
                const double fm = eval(bm).value();
                v[i] = x0;
                worst_net = std::max(worst_net, rel_err(gi, (fp - fm) / (2.0 * h)));
            }
        }
        worst_list << fmt(", network loss max %.2e", worst_net);
        const double worst = std::max({worst_all, worst_loss, worst_net});
        return {worst < 1e-5, worst_list.str() + " (tol 1e-5, 100 points each)"};
    }

    // ---- 6 ----
    Outcome constraint_suite()
    {
        const SystemParams p = SystemParams::desk();
        OptimizerConfig cfg;
        const auto ds = generate_dataset(p, ArrayKind::ula, 30, 6);
        std::ostringstream os;
        double worst = 0.0;
        for (auto mode : {ConfigMode::ps_only, ConfigMode::parallel, ConfigMode::serial_fixed, ConfigMode::adaptive, ConfigMode::ttd_infinite})
        {
            double w = 0.0;
            for (const auto &r : ds.records)
            {
                cfg.seed = r.id;
                const auto res = mode == ConfigMode::ttd_infinite ? ttd_infinite_baseline(r.channel, p, mode, cfg)
                                                                  : optimize_instance(r.channel, p, mode, cfg);
                w = std::max(w, validate(project_power(res.set, p), p).max());
            }
            os << to_string(mode) << fmt(" %.1e ", w);
            worst = std::max(worst, w);
        }
        return {worst < 1e-3, "max residual per mode over 30 desk instances: " + os.str() + "(tol 1e-3)"};
    }

    // ---- 7, 8, 9 ----
    std::vector<ResultRow> tmax_sweep(ArrayKind kind)
    {
        ExperimentConfig cfg;
        cfg.kind = kind;
        cfg.instances = 30;
        cfg.seed = 1;
        cfg.axis = SweepAxis::t_max_ps;
        cfg.t_max_ps = {20, 40, 80, 160};
        cfg.modes = {"PsOnly", "Parallel", "SerialFixed", "Adaptive", "TtdInfinite"};
        const auto ds = generate_dataset(cfg.params, kind, cfg.instances, cfg.seed);
        return run_experiment(cfg, channels_of(ds));
    }

    std::vector<ResultRow> ula_rows, uca_rows;

    Outcome ula_trend()
    {
        ula_rows = tmax_sweep(ArrayKind::ula);
        const double par = mean_se(ula_rows, "Parallel", 80), ser = mean_se(ula_rows, "SerialFixed", 80), ada = mean_se(ula_rows, "Adaptive", 80);
        const auto s = paired_values(ula_rows, "SerialFixed", 80), a = paired_values(ula_rows, "Adaptive", 80);
        std::size_t wins = 0;
        for (std::size_t i = 0; i < s.size(); ++i)
            wins += a[i] > s[i];
        const double rate = double(wins) / double(s.size());
        return {ser > par && ada >= ser && rate >= 0.6,
                fmt("means at 80 ps over %zu instances: Parallel %.4f, SerialFixed %.4f, Adaptive %.4f; Adaptive wins %zu/%zu (%.0f%%)",
                    s.size(), par, ser, ada, wins, s.size(), 100 * rate)};
    }

    Outcome uca_trend()
    {
        uca_rows = tmax_sweep(ArrayKind::uca);
        const double par = mean_se(uca_rows, "Parallel", 80), ser = mean_se(uca_rows, "SerialFixed", 80);
        return {par > ser, fmt("means at 80 ps over 30 instances: Parallel %.4f, SerialFixed %.4f", par, ser)};
    }

    Outcome relaxation_dominance()
    {
        const std::vector<double> ts{20, 40, 80, 160};
        std::size_t checks = 0, violations = 0;
        double worst = 0.0;
        for (const auto *rows : {&ula_rows, &uca_rows})
        {
            if (rows->empty())
                return {false, "sweeps 7 and 8 did not produce rows"};
            std::vector<double> inf = paired_values(*rows, "TtdInfinite", ts.back());
            for (const char *mode : {"PsOnly", "Parallel", "SerialFixed", "Adaptive"})
                for (std::size_t s = 0; s < ts.size(); ++s)
                {
                    const auto cur = paired_values(*rows, mode, ts[s]);
                    const auto prev = s > 0 ? paired_values(*rows, mode, ts[s - 1]) : cur;
                    for (std::size_t i = 0; i < cur.size(); ++i)
                    {
                        for (const double gap : {prev[i] - cur[i], cur[i] - inf[i]})
                        {
                            ++checks;
                            worst = std::max(worst, gap);
                            violations += gap > 1e-6;
                        }
                    }
                }
            // TtdInfinite is one value per instance, repeated at each point
            for (std::size_t s = 0; s < ts.size(); ++s)
                if (paired_values(*rows, "TtdInfinite", ts[s]) != inf)
                    ++violations;
        }
        return {violations == 0, fmt("%zu violations over %zu paired comparisons, largest violation %.2e (slack 1e-6)", violations, checks, worst)};
    }

    // ---- 10 ----
    Outcome mini_training()
    {
        const auto p = tiny_params();
        const auto ds = generate_dataset(p, ArrayKind::ula, 64, 10);
        std::vector<ChannelInstance> data;
        for (const auto &r : ds.records)
            data.push_back(r.channel);
        nn::TrainConfig tc;
        tc.epochs = 50;
        tc.seed = 10;
        const auto res = nn::mini_train(p, data, nn::ModelConfig{}, tc);
        const double first = res.epochs.front().mean_loss, last = res.epochs.back().mean_loss;
        const double drop = (first - last) / std::abs(first);
        bool perms = true;
        double row = 0.0;
        for (const auto &e : res.epochs)
        {
            perms = perms && e.permutations_valid;
            row = std::max(row, e.max_attention_row_error);
        }
        return {drop >= 0.3 && perms && row < 1e-9,
                fmt("mean loss %.4g -> %.4g (%.1f%% decrease, need 30%%), permutations %s, max attention row error %.1e",
                    first, last, 100 * drop, perms ? "valid" : "INVALID", row)};
    }

    // ---- 11 ----
    Outcome reproducibility()
    {
        const auto p = SystemParams::desk();
        const auto a = generate_dataset(p, ArrayKind::uca, 8, 11), b = generate_dataset(p, ArrayKind::uca, 8, 11);
        bool same = a.records.size() == b.records.size();
        for (std::size_t i = 0; same && i < a.records.size(); ++i)
            same = a.records[i] == b.records[i] && io::to_json(a.records[i].channel).dump() == io::to_json(b.records[i].channel).dump();
        OptimizerConfig cfg;
        cfg.seed = 11;
        const auto r1 = optimize_instance(a.records[0].channel, p, ConfigMode::adaptive, cfg);
        const auto r2 = optimize_instance(b.records[0].channel, p, ConfigMode::adaptive, cfg);
        const bool opt_same = r1.set == r2.set &&
                              std::bit_cast<std::uint64_t>(r1.report.spectral_efficiency) == std::bit_cast<std::uint64_t>(r2.report.spectral_efficiency) &&
                              r1.trace.size() == r2.trace.size();
        return {same && opt_same, fmt("dataset %s, optimize_instance %s", same ? "bitwise identical" : "DIFFERS", opt_same ? "bitwise identical" : "DIFFERS")};
    }
}

int main()
{
    run(1, "configuration counts", 1, configuration_counts);
    run(2, "UCA radius", 1, uca_radius);
    run(3, "Hungarian exactness", 10, hungarian_exactness);
    run(4, "single-user TTD oracle", 300, single_user_oracle);
    run(5, "gradient suite", 120, gradient_suite);
    run(6, "constraint suite", 1200, constraint_suite);
    run(7, "ULA trend", 1800, ula_trend);
    run(8, "UCA trend", 1800, uca_trend);
    run(9, "relaxation dominance", 60, relaxation_dominance);
    run(10, "mini training", 600, mini_training);
    run(11, "bit-exact reproducibility", 60, reproducibility);
    std::printf("%d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
