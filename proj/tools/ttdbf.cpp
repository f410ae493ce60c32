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
#include "ttdbf/beamforming/combinatorics.hpp"
#include "ttdbf/experiments/experiments.hpp"
#include "ttdbf/io/csv.hpp"
#include "ttdbf/neural/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

using namespace ttdbf;

namespace
{
    struct Globals
    {
        std::string config_path;
        std::vector<std::string> overrides; // key=value, value parsed as JSON when possible
        std::optional<std::uint64_t> seed;
        std::optional<std::string> out_dir;
        std::optional<std::size_t> workers;
    };

    // Config file, then --set overrides, as one JSON object
    io::json merged_config(const Globals &g)
    {
        io::json j = g.config_path.empty() ? io::json::object() : io::read_json_file(g.config_path);
        require(j.is_object(), ErrorCategory::invalid_argument, "config must be a JSON object");
        for (const auto &kv : g.overrides)
        {
            const auto eq = kv.find('=');
            require(eq != std::string::npos && eq > 0, ErrorCategory::invalid_argument, "--set expects key=value, got '" + kv + "'");
            const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
            io::json value = io::json::parse(text, nullptr, false);
            if (value.is_discarded())
                value = text;
            j[key] = value;
        }
        return j;
    }

    ExperimentConfig load_config(const Globals &g)
    {
        auto cfg = io::experiment_config_from_json(merged_config(g));
        if (g.seed)
            cfg.seed = *g.seed;
        if (g.out_dir)
            cfg.out_dir = *g.out_dir;
        if (g.workers)
            cfg.workers = *g.workers;
        return cfg;
    }

    std::vector<std::string> split_list(const std::string &s)
    {
        std::vector<std::string> out;
        std::stringstream ss(s);
        for (std::string item; std::getline(ss, item, ',');)
            if (!item.empty())
                out.push_back(item);
        return out;
    }

    void print_summary(const std::vector<ResultRow> &rows, SweepAxis axis)
    {
        std::printf("%-12s %12s %10s %5s\n", "mode", std::string(to_string(axis)).c_str(), "mean_se", "n");
        for (const auto &s : summarize(rows))
            std::printf("%-12s %12g %10.4f %5zu\n", s.mode.c_str(), s.sweep_value, s.mean_se, s.instances);
    }

    // Options shared by the experiment commands
    struct RunOptions
    {
        std::string dataset;
        std::string modes;
        std::string geometry;
        std::optional<std::size_t> instances;
        std::vector<double> values;
        std::optional<std::size_t> max_iters, restarts;
        std::optional<double> step_size;

        void add_to(CLI::App *cmd, const char *values_help)
        {
            cmd->add_option("--dataset", dataset, "Dataset file written by 'generate'; omitted means generate from the config");
            cmd->add_option("--modes", modes, "Comma separated: PsOnly,Parallel,SerialFixed,Adaptive,TtdInfinite,FullDigital");
            cmd->add_option("--geometry", geometry, "ULA or UCA");
            cmd->add_option("--instances", instances, "Number of channel instances");
            if (values_help)
                cmd->add_option("--values", values, values_help)->delimiter(',');
            cmd->add_option("--max-iters", max_iters, "Optimizer iteration budget per run");
            cmd->add_option("--restarts", restarts, "Optimizer restarts");
            cmd->add_option("--step-size", step_size, "Optimizer base step");
        }

        void apply(ExperimentConfig &cfg, std::vector<double> *sweep) const
        {
            if (!modes.empty())
                cfg.modes = split_list(modes);
            if (!geometry.empty())
                cfg.kind = parse_array_kind(geometry);
            if (instances)
                cfg.instances = *instances;
            if (sweep && !values.empty())
                *sweep = values;
            if (max_iters)
                cfg.optimizer.max_iters = *max_iters;
            if (restarts)
                cfg.optimizer.num_restarts = *restarts;
            if (step_size)
                cfg.optimizer.step_size = *step_size;
        }
    };

    int cmd_count(unsigned N, unsigned L)
    {
        const auto counts = count_configurations(N, L);
        std::printf("unconstrained  %s\n               %s\n", counts.unconstrained.str().c_str(), to_scientific(counts.unconstrained).c_str());
        std::printf("equal_sized    %s\n               %s\n", counts.equal_sized.str().c_str(), to_scientific(counts.equal_sized).c_str());
        return 0;
    }

    int cmd_assign(const std::string &path, bool minimize)
    {
        auto is = io::open_in(path);
        const auto C = io::read_matrix_csv(is, path);
        const auto a = minimize ? hungarian_min(C) : hungarian_max(C);
        std::printf("permutation");
        for (const auto p : a.permutation)
            std::printf(" %zu", p);
        std::printf("\n%s %.17g\n", minimize ? "min_cost" : "max_value", assignment_cost(C, a.permutation));
        return 0;
    }

    int cmd_optimize(const ExperimentConfig &cfg, const std::string &dataset, std::size_t index, const std::string &mode_name)
    {
        const auto ds = load_or_generate(cfg, dataset.empty() ? "" : dataset);
        require(dataset.empty() || index < ds.records.size(), ErrorCategory::invalid_argument,
                "instance " + std::to_string(index) + " is not in the dataset");
        const ChannelInstance H = dataset.empty() ? make_instance(cfg.params, cfg.kind, cfg.seed, index, cfg.grid) : ds.records[index].channel;
        OptimizerConfig oc = cfg.optimizer;
        oc.seed = optimizer_seed(cfg.seed, index);

        if (mode_name == full_digital_label)
        {
            const auto fd = full_digital_baseline(H, cfg.params);
            std::printf("mode FullDigital\nspectral_efficiency %.6f\n", fd.report.spectral_efficiency);
            return 0;
        }
        const ConfigMode mode = parse_config_mode(mode_name);
        const auto res = mode == ConfigMode::ttd_infinite ? ttd_infinite_baseline(H, cfg.params, mode, oc) : optimize_instance(H, cfg.params, mode, oc);
        io::write_json_file(output_path(cfg, "beamformer.json"), io::to_json(res.set));
        auto trace = io::open_out(output_path(cfg, "trace.csv"));
        write_trace_csv(trace, res.trace);
        const auto &r = res.report.residuals;
        std::printf("mode %s\nspectral_efficiency %.6f\nresiduals ps_modulus %.3g delay_range %.3g switch %.3g power %.3g\n",
                    mode_name.c_str(), res.report.spectral_efficiency, r.ps_modulus, r.delay_range, r.switch_validity, r.power);
        std::printf("wrote %s and %s\n", output_path(cfg, "beamformer.json").c_str(), output_path(cfg, "trace.csv").c_str());
        return 0;
    }

    // Central differences of the composite loss over random coordinates (switch logits excluded: the forward
    // pass is piecewise constant in them)
    int cmd_gradcheck(const ExperimentConfig &cfg, std::vector<std::string> modes, std::size_t points, std::size_t coords, double tol)
    {
        if (modes.empty())
            modes = {"PsOnly", "Parallel", "SerialFixed", "Adaptive", "TtdInfinite"};
        const auto H = make_instance(cfg.params, cfg.kind, cfg.seed, 0, cfg.grid);
        const LossContext ctx(H, cfg.params);
        std::mt19937_64 rng(derive_seed(cfg.seed, 2));
        std::normal_distribution<double> g;
        std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
        ad::Tape tape;
        bool ok = true;
        for (const auto &name : modes)
        {
            const ConfigMode mode = parse_config_mode(name);
            double worst = 0.0;
            for (std::size_t pt = 0; pt < points; ++pt)
            {
                auto p = Parameterization::zeros(mode, cfg.params);
                for (auto &a : p.ps_angles)
                    a = angle(rng);
                for (auto *v : {&p.delay_raws, &p.digital_raws, &p.switch_logits})
                    for (auto &x : *v)
                        x = g(rng);
                const auto ev = evaluate_total_loss(tape, ctx, p, cfg.optimizer.penalty_weights);
                const auto x0 = p.flatten();
                const std::size_t n = x0.size() - p.switch_logits.size();
                std::uniform_int_distribution<std::size_t> pick(0, n - 1);
                for (std::size_t c = 0; c < std::min(coords, n); ++c)
                {
                    const std::size_t i = coords >= n ? c : pick(rng);
                    const double h = 1e-6 * std::max(1.0, std::abs(x0[i]));
                    auto xp = x0, xm = x0;
                    xp[i] += h;
                    xm[i] -= h;
                    Parameterization pp = p, pm = p;
                    pp.assign(xp);
                    pm.assign(xm);
                    const double fd = (evaluate_total_loss(tape, ctx, pp, cfg.optimizer.penalty_weights).values.total -
                                       evaluate_total_loss(tape, ctx, pm, cfg.optimizer.penalty_weights).values.total) /
                                      (2.0 * h);
                    worst = std::max(worst, std::abs(fd - ev.gradient[i]) / std::max({1.0, std::abs(fd), std::abs(ev.gradient[i])}));
                }
            }
            std::printf("%-12s max_rel_error %.3e %s\n", name.c_str(), worst, worst < tol ? "PASS" : "FAIL");
            ok = ok && worst < tol;
        }
        if (!ok)
            fail(ErrorCategory::numerical, "gradient mismatch above " + std::to_string(tol));
        return 0;
    }

    SystemParams tiny_training_params()
    {
        SystemParams p = SystemParams::desk();
        p.num_antennas = 8;
        p.num_ttds_per_chain = 2;
        p.num_subcarriers = 2;
        p.num_scatterers_per_user = 2;
        return p;
    }

    int cmd_mini_train(const Globals &g, const ExperimentConfig &cfg, std::size_t instances, nn::TrainConfig tc, const std::string &mode)
    {
        const SystemParams params = io::apply_params(tiny_training_params(), merged_config(g));
        nn::check_tiny(params);
        nn::ModelConfig mc;
        mc.mode = parse_config_mode(mode);
        tc.seed = cfg.seed;
        const auto ds = generate_dataset(params, cfg.kind, instances, cfg.seed, cfg.grid, cfg.workers);
        std::vector<ChannelInstance> channels;
        for (const auto &r : ds.records)
            channels.push_back(r.channel);
        const auto res = nn::mini_train(params, channels, mc, tc);
        auto os = io::open_out(output_path(cfg, "loss_curve.csv"));
        nn::write_loss_curve_csv(os, res.epochs);
        io::write_json_file(output_path(cfg, "model.json"), io::to_json(res.model));
        const double first = res.epochs.front().mean_loss, last = res.epochs.back().mean_loss;
        bool perms = true;
        double row_err = 0.0;
        for (const auto &e : res.epochs)
        {
            perms = perms && e.permutations_valid;
            row_err = std::max(row_err, e.max_attention_row_error);
        }
        std::printf("epochs %zu\nfirst_loss %.6g\nlast_loss %.6g\ndecrease %.1f%%\nmodulus_residual %.3g\npermutations_valid %s\n"
                    "max_attention_row_error %.3g\n",
                    res.epochs.size(), first, last, 100.0 * (first - last) / std::abs(first), res.modulus_residual,
                    perms ? "yes" : "no", row_err);
        return 0;
    }
}

int main(int argc, char **argv)
{
    CLI::App app{"Delay-phase hybrid beamforming with adaptive TTD configurations"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON config: SystemParams fields and experiment keys");
    app.add_option("--set", g.overrides, "Override one config key, key=value (repeatable)");
    app.add_option("--seed", g.seed, "Master seed");
    app.add_option("--out-dir", g.out_dir, "Output directory");
    app.add_option("--workers", g.workers, "Worker threads for per-instance runs");

    RunOptions run;

    auto *gen = app.add_subcommand("generate", "Generate a channel dataset with 60/20/20 split tags");
    std::optional<double> fixed_distance;
    std::string gen_file = "dataset.jsonl";
    gen->add_option("--count", run.instances, "Number of instances");
    gen->add_option("--geometry", run.geometry, "ULA or UCA");
    gen->add_option("--fixed-distance", fixed_distance, "Pin every user at this distance [m]");
    gen->add_option("--file", gen_file, "File name inside the output directory");

    auto *opt = app.add_subcommand("optimize", "Optimize one instance in one mode");
    std::size_t opt_index = 0;
    std::string opt_mode = "Adaptive";
    opt->add_option("--instance", opt_index, "Instance index");
    opt->add_option("--mode", opt_mode, "Configuration mode or FullDigital");
    run.add_to(opt, nullptr);

    auto *sp = app.add_subcommand("sweep-power", "Mean SE per mode versus transmit power");
    run.add_to(sp, "Transmit powers [dBm], ascending");
    auto *st = app.add_subcommand("sweep-tmax", "Mean SE per mode versus the maximum delay");
    run.add_to(st, "t_max values [ps], ascending");
    auto *cdf = app.add_subcommand("cdf", "Empirical CDF of per-instance SE with users at a fixed distance");
    run.add_to(cdf, nullptr);

    auto *cnt = app.add_subcommand("count", "Count antenna-to-TTD configurations");
    unsigned count_n = 64, count_l = 4;
    cnt->add_option("N", count_n, "Antennas")->required();
    cnt->add_option("L", count_l, "TTDs")->required();

    auto *asg = app.add_subcommand("assign", "Solve a square assignment problem from a CSV matrix");
    std::string matrix_path;
    bool minimize = false;
    asg->add_option("--matrix", matrix_path, "CSV file, one row per line")->required();
    asg->add_flag("--minimize", minimize, "Minimize cost instead of maximizing value");

    auto *gc = app.add_subcommand("gradcheck", "Compare loss gradients with central differences");
    std::string gc_modes;
    std::size_t gc_points = 100, gc_coords = 16;
    double gc_tol = 1e-5;
    gc->add_option("--modes", gc_modes, "Comma separated configuration modes");
    gc->add_option("--points", gc_points, "Random points per mode");
    gc->add_option("--coords", gc_coords, "Coordinates checked per point");
    gc->add_option("--tol", gc_tol, "Relative error tolerance");

    auto *mt = app.add_subcommand("mini-train", "Train the network end to end on tiny instances");
    std::size_t mt_instances = 64;
    nn::TrainConfig tc;
    std::string mt_mode = "Adaptive";
    mt->add_option("--instances", mt_instances, "Training instances");
    mt->add_option("--epochs", tc.epochs, "Epochs");
    mt->add_option("--batch-size", tc.batch_size, "Batch size");
    mt->add_option("--lr", tc.learning_rate, "Peak learning rate");
    mt->add_option("--clip-norm", tc.clip_norm, "Global gradient norm cap, 0 disables");
    mt->add_option("--mode", mt_mode, "Configuration mode of the network outputs");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        if (e.get_exit_code() == 0)
            return app.exit(e);
        std::fprintf(stderr, "error[%s]: %s\n", std::string(category_name(ErrorCategory::invalid_argument)).c_str(), e.what());
        return int(ErrorCategory::invalid_argument);
    }

    try
    {
        if (cnt->parsed())
            return cmd_count(count_n, count_l);
        if (asg->parsed())
            return cmd_assign(matrix_path, minimize);

        ExperimentConfig cfg = load_config(g);
        if (gen->parsed())
        {
            run.apply(cfg, nullptr);
            if (fixed_distance)
                cfg.grid.fixed_user_distance_m = *fixed_distance;
            const auto ds = cmd_generate(cfg, gen_file);
            std::printf("wrote %zu instances to %s (train %zu, test %zu, validation %zu)\n", ds.records.size(),
                        output_path(cfg, gen_file).c_str(), ds.split(Split::train).size(), ds.split(Split::test).size(),
                        ds.split(Split::validation).size());
            return 0;
        }
        if (opt->parsed())
        {
            run.apply(cfg, nullptr);
            return cmd_optimize(cfg, run.dataset, opt_index, opt_mode);
        }
        if (sp->parsed())
        {
            run.apply(cfg, &cfg.transmit_power_dbm);
            print_summary(cmd_sweep_power(cfg, run.dataset), SweepAxis::transmit_power_dbm);
            return 0;
        }
        if (st->parsed())
        {
            run.apply(cfg, &cfg.t_max_ps);
            print_summary(cmd_sweep_tmax(cfg, run.dataset), SweepAxis::t_max_ps);
            return 0;
        }
        if (cdf->parsed())
        {
            run.apply(cfg, nullptr);
            print_summary(cmd_cdf(cfg, run.dataset), SweepAxis::none);
            return 0;
        }
        if (gc->parsed())
            return cmd_gradcheck(cfg, split_list(gc_modes), gc_points, gc_coords, gc_tol);
        if (mt->parsed())
            return cmd_mini_train(g, cfg, mt_instances, tc, mt_mode);
    }
    catch (const Error &e)
    {
        std::fprintf(stderr, "error[%s]: %s\n", std::string(category_name(e.category())).c_str(), e.what());
        return int(e.category());
    }
    catch (const std::exception &e)
    {
        std::fprintf(stderr, "error[internal]: %s\n", e.what());
        return 1;
    }
    return 0;
}
