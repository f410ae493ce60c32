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

#include "ttdbf/experiments/dataset.hpp"
#include "ttdbf/objective/baselines.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace ttdbf
{
    inline constexpr std::string_view full_digital_label = "FullDigital";

    // Evaluation order; warm starts only flow forward along it
    inline const std::vector<std::string> &canonical_methods()
    {
        static const std::vector<std::string> order{"PsOnly", "Parallel", "SerialFixed", "Adaptive", "TtdInfinite",
                                                    std::string(full_digital_label)};
        return order;
    }

    inline std::size_t method_rank(const std::string &label)
    {
        const auto &o = canonical_methods();
        const auto it = std::find(o.begin(), o.end(), label);
        require(it != o.end(), ErrorCategory::invalid_argument, "unknown mode '" + label + "'");
        return std::size_t(it - o.begin());
    }

    enum class SweepAxis
    {
        none,
        transmit_power_dbm,
        t_max_ps
    };

    inline std::string_view to_string(SweepAxis a)
    {
        switch (a)
        {
        case SweepAxis::none: return "none";
        case SweepAxis::transmit_power_dbm: return "transmit_power_dbm";
        case SweepAxis::t_max_ps: return "t_max_ps";
        }
        return "?";
    }

    struct ExperimentConfig
    {
        SystemParams params = SystemParams::desk();
        ArrayKind kind = ArrayKind::ula;
        std::vector<std::string> modes = canonical_methods();
        SweepAxis axis = SweepAxis::none;
        std::vector<double> transmit_power_dbm{0.0, 5.0, 10.0, 15.0, 20.0};
        std::vector<double> t_max_ps{20.0, 40.0, 80.0, 160.0, 320.0, 500.0};
        std::size_t instances = 30;
        std::uint64_t seed = 0;
        std::string out_dir = ".";
        std::size_t workers = 1;
        OptimizerConfig optimizer;
        SamplingGrid grid;

        const std::vector<double> &sweep_values() const
        {
            static const std::vector<double> none;
            return axis == SweepAxis::transmit_power_dbm ? transmit_power_dbm : axis == SweepAxis::t_max_ps ? t_max_ps : none;
        }

        void validate() const
        {
            params.validate();
            optimizer.validate();
            require(!modes.empty(), ErrorCategory::configuration, "the mode list is empty");
            for (const auto &m : modes)
                method_rank(m);
            for (const auto *list : {&transmit_power_dbm, &t_max_ps})
            {
                require(std::is_sorted(list->begin(), list->end()), ErrorCategory::configuration, "sweep values must be ascending");
                for (const double v : *list)
                    require(std::isfinite(v), ErrorCategory::configuration, "sweep values must be finite");
            }
            for (const double t : t_max_ps)
                require(t >= 0.0, ErrorCategory::configuration, "t_max values must be non-negative");
            require(axis == SweepAxis::none || !sweep_values().empty(), ErrorCategory::configuration, "the sweep list is empty");
            require(instances >= 1, ErrorCategory::configuration, "at least one instance is required");
        }
    };

    struct ResultRow
    {
        std::size_t instance = 0;
        std::string mode;
        double sweep_value = 0.0;
        double spectral_efficiency = 0.0;
        double residual_max = 0.0;
        double wall_time_s = 0.0;
    };

    // Result of one method on one instance at one sweep point
    struct MethodOutcome
    {
        std::optional<BeamformerSet> set; // empty for the full-digital baseline
        double spectral_efficiency = 0.0;
        double residual_max = 0.0;
        double wall_time_s = 0.0;
    };

    using PointOutcome = std::map<std::string, MethodOutcome>;

    namespace detail
    {
        inline bool wanted(const std::vector<std::string> &modes, std::string_view m)
        {
            return std::find(modes.begin(), modes.end(), m) != modes.end();
        }

        inline void add_warm(std::vector<BeamformerSet> &warm, const PointOutcome *point, const char *label)
        {
            if (!point)
                return;
            const auto it = point->find(label);
            if (it != point->end() && it->second.set)
                warm.push_back(*it->second.set);
        }

        inline MethodOutcome timed(auto &&run)
        {
            const auto t0 = std::chrono::steady_clock::now();
            MethodOutcome out = run();
            out.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            return out;
        }

        inline MethodOutcome from_result(OptimizeResult &&r)
        {
            return {std::move(r.set), r.report.spectral_efficiency, r.report.residuals.max(), 0.0};
        }
    }

    // Runs the requested methods in canonical order on one instance. Each method is warm-started from its own
    // result at `previous` (the preceding sweep point) and from the methods it generalizes at this point:
    // PsOnly feeds Parallel and SerialFixed, SerialFixed feeds Adaptive, every TTD wiring feeds TtdInfinite.
    inline PointOutcome run_point(const ChannelInstance &H, const SystemParams &params, const std::vector<std::string> &modes,
                                  const OptimizerConfig &cfg, const PointOutcome *previous = nullptr)
    {
        using detail::add_warm;
        PointOutcome cur;
        auto optimize = [&](const char *label, ConfigMode mode, std::initializer_list<const char *> feeders)
        {
            if (!detail::wanted(modes, label))
                return;
            std::vector<BeamformerSet> warm;
            add_warm(warm, previous, label);
            for (const char *f : feeders)
                add_warm(warm, &cur, f);
            cur[label] = detail::timed([&]
                                       { return detail::from_result(mode == ConfigMode::ttd_infinite
                                                                        ? ttd_infinite_baseline(H, params, mode, cfg, warm)
                                                                        : optimize_instance(H, params, mode, cfg, warm)); });
        };
        optimize("PsOnly", ConfigMode::ps_only, {});
        optimize("Parallel", ConfigMode::parallel, {"PsOnly"});
        optimize("SerialFixed", ConfigMode::serial_fixed, {"PsOnly"});
        optimize("Adaptive", ConfigMode::adaptive, {"SerialFixed"});
        optimize("TtdInfinite", ConfigMode::ttd_infinite, {"Parallel", "SerialFixed", "Adaptive"});
        if (detail::wanted(modes, full_digital_label))
            cur[std::string(full_digital_label)] = detail::timed([&]
                                                                 {
                const auto fd = full_digital_baseline(H, params);
                double worst = 0.0;
                for (const double p : fd.report.power_per_subcarrier)
                    worst = std::max(worst, std::abs(p - params.transmit_power_watts) / params.transmit_power_watts);
                return MethodOutcome{std::nullopt, fd.report.spectral_efficiency, worst, 0.0}; });
        return cur;
    }

    inline SystemParams at_sweep_point(SystemParams p, SweepAxis axis, double value)
    {
        if (axis == SweepAxis::transmit_power_dbm)
            p.transmit_power_watts = dbm_to_watts(value);
        else if (axis == SweepAxis::t_max_ps)
            p.max_delay_seconds = value * 1e-12;
        return p;
    }

    inline std::uint64_t optimizer_seed(std::uint64_t seed, std::size_t instance) { return derive_seed(derive_seed(seed, 1), instance); }

    // All sweep points of one instance, ascending, each warm-started from the previous point. On a t_max sweep
    // TtdInfinite does not depend on the sweep value: it runs once, warm-started from every finite result, and
    // its row is repeated at each point.
    inline std::vector<ResultRow> run_instance(const ExperimentConfig &cfg, const ChannelInstance &H, std::size_t instance)
    {
        OptimizerConfig oc = cfg.optimizer;
        oc.seed = optimizer_seed(cfg.seed, instance);
        std::vector<double> points = cfg.sweep_values();
        if (cfg.axis == SweepAxis::none)
            points = {0.0};

        const bool tmax = cfg.axis == SweepAxis::t_max_ps;
        std::vector<std::string> per_point = cfg.modes;
        if (tmax)
            std::erase(per_point, std::string("TtdInfinite"));

        std::vector<PointOutcome> outcomes;
        for (const double v : points)
            outcomes.push_back(run_point(H, at_sweep_point(cfg.params, cfg.axis, v), per_point, oc,
                                         outcomes.empty() ? nullptr : &outcomes.back()));

        if (tmax && detail::wanted(cfg.modes, "TtdInfinite"))
        {
            std::vector<BeamformerSet> warm;
            for (const auto &o : outcomes)
                for (const char *label : {"Parallel", "SerialFixed", "Adaptive"})
                    detail::add_warm(warm, &o, label);
            const auto inf = detail::timed([&]
                                           { return detail::from_result(ttd_infinite_baseline(
                                                 H, at_sweep_point(cfg.params, cfg.axis, points.back()), ConfigMode::ttd_infinite, oc, warm)); });
            for (auto &o : outcomes)
                o["TtdInfinite"] = inf;
        }

        std::vector<ResultRow> rows;
        for (std::size_t s = 0; s < points.size(); ++s)
            for (const auto &label : canonical_methods())
                if (const auto it = outcomes[s].find(label); it != outcomes[s].end())
                    rows.push_back({instance, label, points[s], it->second.spectral_efficiency, it->second.residual_max,
                                    it->second.wall_time_s});
        return rows;
    }

    // Rows ordered by (instance, sweep point, method) whatever the worker count
    inline std::vector<ResultRow> run_experiment(const ExperimentConfig &cfg, const std::vector<const ChannelInstance *> &channels)
    {
        cfg.validate();
        std::vector<std::vector<ResultRow>> per_instance(channels.size());
        parallel_for(channels.size(), cfg.workers, [&](std::size_t i) { per_instance[i] = run_instance(cfg, *channels[i], i); });
        std::vector<ResultRow> rows;
        for (auto &r : per_instance)
            rows.insert(rows.end(), r.begin(), r.end());
        return rows;
    }

    // ---- aggregation ----

    struct SummaryRow
    {
        std::string mode;
        double sweep_value = 0.0;
        double mean_se = 0.0;
        std::size_t instances = 0;
    };

    inline std::vector<SummaryRow> summarize(const std::vector<ResultRow> &rows)
    {
        std::map<std::pair<std::size_t, double>, SummaryRow> acc;
        for (const auto &r : rows)
        {
            auto &s = acc[{method_rank(r.mode), r.sweep_value}];
            s.mode = r.mode;
            s.sweep_value = r.sweep_value;
            s.mean_se += r.spectral_efficiency;
            ++s.instances;
        }
        std::vector<SummaryRow> out;
        for (auto &[key, s] : acc)
        {
            s.mean_se /= double(s.instances);
            out.push_back(s);
        }
        return out;
    }

    inline double mean_se(const std::vector<ResultRow> &rows, std::string_view mode, double sweep_value)
    {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto &r : rows)
            if (r.mode == mode && r.sweep_value == sweep_value)
            {
                sum += r.spectral_efficiency;
                ++n;
            }
        require(n > 0, ErrorCategory::invalid_argument, "no rows for mode " + std::string(mode));
        return sum / double(n);
    }

    // SE per instance of one method at one sweep value, indexed by instance id
    inline std::vector<double> paired_values(const std::vector<ResultRow> &rows, std::string_view mode, double sweep_value)
    {
        std::vector<double> v;
        for (const auto &r : rows)
            if (r.mode == mode && r.sweep_value == sweep_value)
            {
                if (v.size() <= r.instance)
                    v.resize(r.instance + 1, std::numeric_limits<double>::quiet_NaN());
                v[r.instance] = r.spectral_efficiency;
            }
        return v;
    }

    struct CdfPoint
    {
        double value = 0.0;
        double probability = 0.0;
    };

    // Empirical CDF: sorted samples with P(X <= x_i) = i / n
    inline std::vector<CdfPoint> empirical_cdf(std::vector<double> samples)
    {
        std::sort(samples.begin(), samples.end());
        std::vector<CdfPoint> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            out.push_back({samples[i], double(i + 1) / double(samples.size())});
        return out;
    }

    inline double cdf_at(const std::vector<CdfPoint> &cdf, double x)
    {
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), x, [](double v, const CdfPoint &p) { return v < p.value; });
        return it == cdf.begin() ? 0.0 : std::prev(it)->probability;
    }

    // ---- CSV output ----

    inline void write_results_csv(std::ostream &os, const std::vector<ResultRow> &rows)
    {
        os << "instance,mode,sweep_value,spectral_efficiency,residual_max\n";
        os.precision(17);
        for (const auto &r : rows)
            os << r.instance << ',' << r.mode << ',' << r.sweep_value << ',' << r.spectral_efficiency << ',' << r.residual_max << '\n';
    }

    // Wall times live apart from the results so reruns reproduce results.csv byte for byte
    inline void write_timing_csv(std::ostream &os, const std::vector<ResultRow> &rows)
    {
        os << "instance,mode,sweep_value,wall_time_s\n";
        os.precision(6);
        for (const auto &r : rows)
            os << r.instance << ',' << r.mode << ',' << r.sweep_value << ',' << r.wall_time_s << '\n';
    }

    inline void write_summary_csv(std::ostream &os, const std::vector<SummaryRow> &rows, SweepAxis axis)
    {
        os << "mode," << to_string(axis) << ",mean_se,instances\n";
        os.precision(17);
        for (const auto &r : rows)
            os << r.mode << ',' << r.sweep_value << ',' << r.mean_se << ',' << r.instances << '\n';
    }

    inline void write_cdf_csv(std::ostream &os, const std::vector<ResultRow> &rows)
    {
        os << "mode,rank,spectral_efficiency,cdf\n";
        os.precision(17);
        for (const auto &label : canonical_methods())
        {
            std::vector<double> v;
            for (const auto &r : rows)
                if (r.mode == label)
                    v.push_back(r.spectral_efficiency);
            const auto cdf = empirical_cdf(v);
            for (std::size_t i = 0; i < cdf.size(); ++i)
                os << label << ',' << i + 1 << ',' << cdf[i].value << ',' << cdf[i].probability << '\n';
        }
    }

    // ---- commands ----

    inline std::string output_path(const ExperimentConfig &cfg, const std::string &name)
    {
        std::error_code ec;
        std::filesystem::create_directories(cfg.out_dir, ec);
        require(!ec, ErrorCategory::io, "cannot create output directory '" + cfg.out_dir + "': " + ec.message());
        return (std::filesystem::path(cfg.out_dir) / name).string();
    }

    inline Dataset cmd_generate(const ExperimentConfig &cfg, const std::string &file = "dataset.jsonl")
    {
        cfg.validate();
        auto ds = generate_dataset(cfg.params, cfg.kind, cfg.instances, cfg.seed, cfg.grid, cfg.workers);
        io::write_dataset(output_path(cfg, file), ds);
        return ds;
    }

    // Channels from a dataset file (first cfg.instances records) or freshly generated from cfg
    inline Dataset load_or_generate(const ExperimentConfig &cfg, const std::string &dataset_path)
    {
        if (dataset_path.empty())
            return generate_dataset(cfg.params, cfg.kind, cfg.instances, cfg.seed, cfg.grid, cfg.workers);
        auto ds = io::read_dataset(dataset_path);
        const auto &p = ds.params;
        require(p.num_antennas == cfg.params.num_antennas && p.num_users == cfg.params.num_users &&
                    p.num_subcarriers == cfg.params.num_subcarriers,
                ErrorCategory::configuration, "dataset '" + dataset_path + "' does not match the configured system size");
        if (ds.records.size() > cfg.instances)
            ds.records.resize(cfg.instances);
        return ds;
    }

    inline std::vector<const ChannelInstance *> channels_of(const Dataset &ds)
    {
        std::vector<const ChannelInstance *> out;
        for (const auto &r : ds.records)
            out.push_back(&r.channel);
        return out;
    }

    inline std::vector<ResultRow> run_and_write(ExperimentConfig cfg, SweepAxis axis, const std::string &dataset_path,
                                                const std::string &stem)
    {
        cfg.axis = axis;
        cfg.validate();
        const auto ds = load_or_generate(cfg, dataset_path);
        const auto rows = run_experiment(cfg, channels_of(ds));
        auto os = io::open_out(output_path(cfg, stem + "_results.csv"));
        write_results_csv(os, rows);
        auto ts = io::open_out(output_path(cfg, stem + "_timing.csv"));
        write_timing_csv(ts, rows);
        auto ss = io::open_out(output_path(cfg, stem + "_summary.csv"));
        write_summary_csv(ss, summarize(rows), axis);
        require(bool(os) && bool(ts) && bool(ss), ErrorCategory::io, "writing results to '" + cfg.out_dir + "' failed");
        return rows;
    }

    inline std::vector<ResultRow> cmd_sweep_power(const ExperimentConfig &cfg, const std::string &dataset_path = {})
    {
        return run_and_write(cfg, SweepAxis::transmit_power_dbm, dataset_path, "sweep_power");
    }

    inline std::vector<ResultRow> cmd_sweep_tmax(const ExperimentConfig &cfg, const std::string &dataset_path = {})
    {
        return run_and_write(cfg, SweepAxis::t_max_ps, dataset_path, "sweep_tmax");
    }

    // Users pinned at 10 m unless the config or dataset already fixes the distance
    inline std::vector<ResultRow> cmd_cdf(ExperimentConfig cfg, const std::string &dataset_path = {})
    {
        if (!cfg.grid.fixed_user_distance_m)
            cfg.grid.fixed_user_distance_m = 10.0;
        const auto rows = run_and_write(cfg, SweepAxis::none, dataset_path, "cdf");
        auto os = io::open_out(output_path(cfg, "cdf.csv"));
        write_cdf_csv(os, rows);
        require(bool(os), ErrorCategory::io, "writing cdf.csv failed");
        return rows;
    }

    // ---- config file ----

    namespace io
    {
        inline std::vector<double> number_list(const json &j, const std::string &what)
        {
            require(j.is_array(), ErrorCategory::invalid_argument, "'" + what + "' must be a list");
            std::vector<double> v;
            for (const auto &x : j)
                v.push_back(to_double(x, what));
            return v;
        }

        // Keys: every SystemParams field, "base" ("desk" | "table1"), geometry, modes, transmit_power_dbm,
        // t_max_ps, instances, seed, out_dir, workers, fixed_user_distance_m, optimizer {...}, penalty {...}
        inline ExperimentConfig experiment_config_from_json(const json &j)
        {
            require(j.is_object(), ErrorCategory::invalid_argument, "config must be an object");
            try
            {
                ExperimentConfig c;
                if (const auto it = j.find("base"); it != j.end())
                {
                    const auto b = it->get<std::string>();
                    require(b == "desk" || b == "table1", ErrorCategory::invalid_argument, "base must be desk or table1");
                    c.params = b == "desk" ? SystemParams::desk() : SystemParams::table1();
                }
                c.params = apply_params(c.params, j);
                for (const auto &[key, v] : j.items())
                {
                    if (is_param_key(key) || key == "base")
                        continue;
                    if (key == "geometry")
                        c.kind = parse_array_kind(v.get<std::string>());
                    else if (key == "modes")
                        c.modes = v.get<std::vector<std::string>>();
                    else if (key == "transmit_power_dbm")
                        c.transmit_power_dbm = number_list(v, key);
                    else if (key == "t_max_ps")
                        c.t_max_ps = number_list(v, key);
                    else if (key == "instances")
                        c.instances = to_u64(v, key);
                    else if (key == "seed")
                        c.seed = to_u64(v, key);
                    else if (key == "out_dir")
                        c.out_dir = v.get<std::string>();
                    else if (key == "workers")
                        c.workers = to_u64(v, key);
                    else if (key == "fixed_user_distance_m")
                    {
                        if (!v.is_null())
                            c.grid.fixed_user_distance_m = to_double(v, key);
                    }
                    else if (key == "optimizer")
                    {
                        for (const auto &[k, x] : v.items())
                        {
                            auto &o = c.optimizer;
                            if (k == "step_size")
                                o.step_size = to_double(x, k);
                            else if (k == "max_iters")
                                o.max_iters = to_u64(x, k);
                            else if (k == "num_restarts")
                                o.num_restarts = to_u64(x, k);
                            else if (k == "patience")
                                o.patience = to_u64(x, k);
                            else if (k == "convergence_tol")
                                o.convergence_tol = to_double(x, k);
                            else
                                fail(ErrorCategory::invalid_argument, "unknown optimizer key '" + k + "'");
                        }
                    }
                    else if (key == "penalty")
                    {
                        for (const auto &[k, x] : v.items())
                        {
                            auto &w = c.optimizer.penalty_weights;
                            if (k == "ps")
                                w.ps = to_double(x, k);
                            else if (k == "ttd")
                                w.ttd = to_double(x, k);
                            else if (k == "pc")
                                w.pc = to_double(x, k);
                            else if (k == "power")
                            {
                                const auto s = x.get<std::string>();
                                require(s == "aggregate" || s == "per_subcarrier", ErrorCategory::invalid_argument,
                                        "penalty.power must be aggregate or per_subcarrier");
                                w.power = s == "aggregate" ? PowerPenalty::aggregate : PowerPenalty::per_subcarrier;
                            }
                            else
                                fail(ErrorCategory::invalid_argument, "unknown penalty key '" + k + "'");
                        }
                    }
                    else
                        fail(ErrorCategory::invalid_argument, "unknown config key '" + key + "'");
                }
                return c;
            }
            catch (const json::exception &e)
            {
                fail(ErrorCategory::invalid_argument, std::string("malformed config: ") + e.what());
            }
        }
    }
}
