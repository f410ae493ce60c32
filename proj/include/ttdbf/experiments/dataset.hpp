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

#include "ttdbf/experiments/pool.hpp"
#include "ttdbf/io/json.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace ttdbf
{
    enum class Split
    {
        train,
        test,
        validation
    };

    inline std::string_view to_string(Split s)
    {
        switch (s)
        {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::validation: return "validation";
        }
        return "?";
    }

    inline Split parse_split(std::string_view s)
    {
        for (auto v : {Split::train, Split::test, Split::validation})
            if (s == to_string(v))
                return v;
        fail(ErrorCategory::invalid_argument, "unknown split '" + std::string(s) + "'");
    }

    struct DatasetRecord
    {
        std::size_t id = 0;
        Split split = Split::train;
        ChannelInstance channel;

        bool operator==(const DatasetRecord &) const = default;
    };

    struct Dataset
    {
        SystemParams params;
        ArrayKind kind = ArrayKind::ula;
        std::uint64_t seed = 0;
        SamplingGrid grid;
        std::vector<DatasetRecord> records;

        std::vector<const ChannelInstance *> split(Split s) const
        {
            std::vector<const ChannelInstance *> out;
            for (const auto &r : records)
                if (r.split == s)
                    out.push_back(&r.channel);
            return out;
        }
    };

    // 60/20/20 by exact counts over a seeded shuffle of the ids
    inline std::vector<Split> assign_splits(std::size_t count, std::uint64_t seed)
    {
        std::vector<std::size_t> order(count);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(seed, ~std::uint64_t(0)));
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t n_train = count * 60 / 100, n_test = count * 20 / 100;
        std::vector<Split> tags(count);
        for (std::size_t i = 0; i < count; ++i)
            tags[order[i]] = i < n_train ? Split::train : (i < n_train + n_test ? Split::test : Split::validation);
        return tags;
    }

    // Instance i of a dataset draws its scenario from derive_seed(seed, i)
    inline ChannelInstance make_instance(const SystemParams &params, ArrayKind kind, std::uint64_t seed, std::size_t i,
                                         const SamplingGrid &grid = {})
    {
        return generate_channel(params, ArrayGeometry::from_params(params, kind), sample_scenario(params, derive_seed(seed, i), grid));
    }

    inline Dataset generate_dataset(const SystemParams &params, ArrayKind kind, std::size_t count, std::uint64_t seed,
                                    const SamplingGrid &grid = {}, std::size_t workers = 1)
    {
        params.validate();
        Dataset ds{params, kind, seed, grid, std::vector<DatasetRecord>(count)};
        const auto tags = assign_splits(count, seed);
        parallel_for(count, workers, [&](std::size_t i) { ds.records[i] = {i, tags[i], make_instance(params, kind, seed, i, grid)}; });
        return ds;
    }

    namespace io
    {
        inline json to_json(const SamplingGrid &g)
        {
            json j = {{"min_distance_m", number(g.min_distance_m)},
                      {"max_distance_m", number(g.max_distance_m)},
                      {"distance_step_m", number(g.distance_step_m)},
                      {"angle_step_deg", number(g.angle_step_deg)}};
            j["fixed_user_distance_m"] = g.fixed_user_distance_m ? number(*g.fixed_user_distance_m) : json(nullptr);
            return j;
        }

        inline SamplingGrid grid_from_json(const json &j)
        {
            SamplingGrid g;
            g.min_distance_m = to_double(field(j, "min_distance_m"), "min_distance_m");
            g.max_distance_m = to_double(field(j, "max_distance_m"), "max_distance_m");
            g.distance_step_m = to_double(field(j, "distance_step_m"), "distance_step_m");
            g.angle_step_deg = to_double(field(j, "angle_step_deg"), "angle_step_deg");
            const auto &f = field(j, "fixed_user_distance_m");
            if (!f.is_null())
                g.fixed_user_distance_m = to_double(f, "fixed_user_distance_m");
            return g;
        }

        // Line 1 is the header, then one record per line
        inline void write_dataset(const std::string &path, const Dataset &ds)
        {
            auto os = open_out(path);
            const json header = {{"format", "ttdbf.dataset"},
                                 {"version", 1},
                                 {"params", to_json(ds.params)},
                                 {"geometry", std::string(to_string(ds.kind))},
                                 {"seed", ds.seed},
                                 {"grid", to_json(ds.grid)},
                                 {"count", ds.records.size()}};
            os << header.dump() << '\n';
            for (const auto &r : ds.records)
                os << json{{"id", r.id}, {"split", std::string(to_string(r.split))}, {"channel", to_json(r.channel)}}.dump() << '\n';
            require(bool(os), ErrorCategory::io, "write to '" + path + "' failed");
        }

        inline Dataset read_dataset(const std::string &path)
        {
            const auto lines = read_json_lines(path);
            try
            {
                require(!lines.empty() && lines[0].value("format", "") == "ttdbf.dataset", ErrorCategory::io,
                        "'" + path + "' is not a dataset file");
                const auto &h = lines[0];
                Dataset ds;
                ds.params = params_from_json(field(h, "params"));
                ds.kind = parse_array_kind(field(h, "geometry").get<std::string>());
                ds.seed = to_u64(field(h, "seed"), "seed");
                ds.grid = grid_from_json(field(h, "grid"));
                const std::size_t count = to_u64(field(h, "count"), "count");
                require(lines.size() == count + 1, ErrorCategory::io,
                        "'" + path + "' declares " + std::to_string(count) + " records but holds " + std::to_string(lines.size() - 1));
                for (std::size_t i = 1; i < lines.size(); ++i)
                    ds.records.push_back({std::size_t(to_u64(field(lines[i], "id"), "id")),
                                          parse_split(field(lines[i], "split").get<std::string>()),
                                          channel_from_json(field(lines[i], "channel"))});
                return ds;
            }
            catch (const json::exception &e)
            {
                fail(ErrorCategory::io, "'" + path + "': " + e.what());
            }
            catch (const Error &e)
            {
                if (e.category() == ErrorCategory::io)
                    throw;
                fail(ErrorCategory::io, "'" + path + "': " + e.what());
            }
        }
    }
}
