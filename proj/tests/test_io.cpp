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

#include "ttdbf/experiments/experiments.hpp"
#include "ttdbf/io/json.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <bit>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace ttdbf;
namespace fs = std::filesystem;

namespace
{
    SystemParams tiny_params()
    {
        SystemParams p = SystemParams::desk();
        p.num_antennas = 8;
        p.num_ttds_per_chain = 2;
        p.num_subcarriers = 2;
        p.num_scatterers_per_user = 2;
        return p;
    }

    fs::path scratch(const std::string &name)
    {
        const auto dir = fs::temp_directory_path() / ("ttdbf_io_" + std::to_string(::getpid()));
        fs::create_directories(dir);
        return dir / name;
    }

    std::string slurp(const fs::path &p)
    {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    // Through text, as a file would
    io::json through_text(const io::json &j) { return io::json::parse(j.dump()); }

    bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

    ChannelInstance sample_channel(std::uint64_t seed)
    {
        const auto p = tiny_params();
        return generate_channel(p, ArrayGeometry::from_params(p, ArrayKind::uca), sample_scenario(p, seed));
    }
}

TEST(Numbers, RandomBitPatternsRoundTripExactly)
{
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20000; ++i)
    {
        double v = std::bit_cast<double>(rng());
        if (!std::isfinite(v))
            continue;
        const double back = io::to_double(through_text(io::json::array({io::number(v)}))[0], "v");
        ASSERT_TRUE(same_bits(v, back)) << std::hexfloat << v << " came back as " << back;
    }
}

TEST(Numbers, EdgeValues)
{
    for (const double v : {0.0, -0.0, 5e-324, -5e-324, 2.2250738585072014e-308, 1.7976931348623157e308, 0.1, 1.0 / 3.0})
        EXPECT_TRUE(same_bits(v, io::to_double(through_text(io::json::array({io::number(v)}))[0], "v")));
    const double inf = std::numeric_limits<double>::infinity();
    EXPECT_EQ(io::to_double(through_text(io::json::array({io::number(inf)}))[0], "v"), inf);
    EXPECT_EQ(io::to_double(through_text(io::json::array({io::number(-inf)}))[0], "v"), -inf);
    EXPECT_TRUE(std::isnan(io::to_double(through_text(io::json::array({io::number(std::nan(""))}))[0], "v")));
}

TEST(Numbers, RejectsNonNumbers)
{
    try
    {
        io::to_double(io::json("seven"), "x");
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::invalid_argument);
    }
}

TEST(Params, RoundTripIncludingInfinities)
{
    SystemParams p = SystemParams::table1();
    p.max_delay_seconds = std::numeric_limits<double>::infinity();
    p.scattering_loss_db = -std::numeric_limits<double>::infinity();
    p.absorption_coeff_per_meter = 0.0123;
    EXPECT_EQ(io::params_from_json(through_text(io::to_json(p))), p);
}

TEST(Params, UnknownKeyIsRejected)
{
    auto j = io::to_json(SystemParams::desk());
    j["num_antenas"] = 4;
    EXPECT_THROW(io::params_from_json(j), Error);
}

TEST(Params, PartialObjectOverridesDefaults)
{
    const auto p = io::apply_params(SystemParams::desk(), io::json{{"num_users", 1}, {"max_delay_seconds", 4e-11}});
    EXPECT_EQ(p.num_users, 1u);
    EXPECT_EQ(p.max_delay_seconds, 4e-11);
    EXPECT_EQ(p.num_antennas, 64u);
}

TEST(Channel, RoundTripIsBitIdentical)
{
    for (std::uint64_t seed : {1u, 2u, 3u})
    {
        const auto H = sample_channel(seed);
        EXPECT_EQ(io::channel_from_json(through_text(io::to_json(H))), H);
    }
}

TEST(Channel, InterleavedRowMajorLayout)
{
    const auto H = sample_channel(5);
    const auto j = io::to_json(H);
    const std::size_t M = H.num_subcarriers(), N = H.num_antennas();
    // entry (k=1, m=1, n=3)
    const std::size_t flat = (1 * M + 1) * N + 3;
    EXPECT_EQ(j["h"][2 * flat].get<double>(), H.responses(1, 1, 3).real());
    EXPECT_EQ(j["h"][2 * flat + 1].get<double>(), H.responses(1, 1, 3).imag());
}

TEST(Channel, WrongLengthIsRejected)
{
    auto j = io::to_json(sample_channel(1));
    j["h"].erase(j["h"].size() - 1);
    EXPECT_THROW(io::channel_from_json(j), Error);
}

TEST(Beamformer, RoundTripAdaptiveSet)
{
    const auto p = tiny_params();
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    auto set = BeamformerSet::zeros(ConfigMode::adaptive, p);
    for (auto &v : set.ps.phases.data())
        v = std::polar(1.0, g(rng));
    for (auto &t : set.delays.incremental.data())
        t = std::abs(g(rng)) * 1e-11;
    for (auto &d : set.digital.weights.data())
        d = {g(rng), g(rng)};
    set.switches = SwitchMatrix::from_permutations({{1, 0}, {0, 1}});
    const auto j = through_text(io::to_json(set));
    EXPECT_EQ(j["switches"][0], (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(io::beamformer_from_json(j), set);
}

TEST(Beamformer, ParallelShapes)
{
    const auto set = BeamformerSet::zeros(ConfigMode::parallel, tiny_params());
    EXPECT_EQ(io::beamformer_from_json(through_text(io::to_json(set))), set);
}

TEST(Beamformer, NonPermutationSwitchIsRejected)
{
    auto j = io::to_json(BeamformerSet::zeros(ConfigMode::adaptive, tiny_params()));
    j["switches"][0] = {0, 0};
    try
    {
        io::beamformer_from_json(j);
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::structural);
    }
}

TEST(Model, RoundTripKeepsEveryParameterAndOutput)
{
    SystemParams p = tiny_params();
    nn::ModelConfig cfg;
    const auto net = nn::BeamformingNetwork::create(p, cfg, 11);
    const auto back = io::network_from_json(through_text(io::to_json(net)));
    std::vector<std::vector<double>> a, b;
    net.visit([&a](const std::string &, const std::vector<double> &v) { a.push_back(v); });
    back.visit([&b](const std::string &, const std::vector<double> &v) { b.push_back(v); });
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
            ASSERT_TRUE(same_bits(a[i][j], b[i][j]));

    const auto H = sample_channel(2);
    const std::vector<const ChannelInstance *> batch{&H};
    ad::Tape t1, t2;
    nn::Binding b1(t1), b2(t2);
    const auto o1 = net.forward(b1, batch), o2 = back.forward(b2, batch);
    for (std::size_t i = 0; i < o1[0].phi_re.size(); ++i)
        EXPECT_TRUE(same_bits(o1[0].phi_re[i].value(), o2[0].phi_re[i].value()));
}

TEST(Model, SizeMismatchIsRejected)
{
    auto j = io::to_json(nn::BeamformingNetwork::create(tiny_params(), {}, 1));
    j["tensors"].begin()->erase(0);
    EXPECT_THROW(io::network_from_json(j), Error);
}

TEST(Dataset, SameSeedGivesIdenticalFiles)
{
    const auto p = tiny_params();
    const auto a = scratch("a.jsonl"), b = scratch("b.jsonl");
    io::write_dataset(a.string(), generate_dataset(p, ArrayKind::ula, 10, 7));
    io::write_dataset(b.string(), generate_dataset(p, ArrayKind::ula, 10, 7));
    EXPECT_EQ(slurp(a), slurp(b));
    io::write_dataset(b.string(), generate_dataset(p, ArrayKind::ula, 10, 8));
    EXPECT_NE(slurp(a), slurp(b));
}

TEST(Dataset, ReloadIsBitIdentical)
{
    const auto p = tiny_params();
    SamplingGrid grid;
    grid.fixed_user_distance_m = 10.0;
    const auto ds = generate_dataset(p, ArrayKind::uca, 12, 3, grid);
    const auto path = scratch("reload.jsonl");
    io::write_dataset(path.string(), ds);
    const auto back = io::read_dataset(path.string());
    EXPECT_EQ(back.params, ds.params);
    EXPECT_EQ(back.kind, ds.kind);
    EXPECT_EQ(back.seed, ds.seed);
    EXPECT_EQ(back.grid.fixed_user_distance_m, grid.fixed_user_distance_m);
    ASSERT_EQ(back.records.size(), ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        EXPECT_EQ(back.records[i], ds.records[i]);
}

TEST(Dataset, SplitCountsOverThousandInstances)
{
    SystemParams p = tiny_params();
    p.num_antennas = 4;
    p.num_ttds_per_chain = 1;
    p.num_subcarriers = 1;
    const auto ds = generate_dataset(p, ArrayKind::ula, 1000, 21);
    EXPECT_EQ(ds.split(Split::train).size(), 600u);
    EXPECT_EQ(ds.split(Split::test).size(), 200u);
    EXPECT_EQ(ds.split(Split::validation).size(), 200u);
}

TEST(Dataset, SplitTagsAreShuffled)
{
    const auto tags = assign_splits(100, 4);
    EXPECT_FALSE(std::is_sorted(tags.begin(), tags.end()));
    EXPECT_EQ(std::count(tags.begin(), tags.end(), Split::train), 60);
    EXPECT_EQ(assign_splits(100, 4), tags);
}

TEST(Dataset, WorkerCountDoesNotChangeContent)
{
    const auto p = tiny_params();
    const auto a = generate_dataset(p, ArrayKind::ula, 9, 5, {}, 1);
    const auto b = generate_dataset(p, ArrayKind::ula, 9, 5, {}, 3);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
        EXPECT_EQ(a.records[i], b.records[i]);
}

TEST(Dataset, MissingFileIsIoError)
{
    try
    {
        io::read_dataset((scratch("none") / "missing.jsonl").string());
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::io);
        EXPECT_NE(std::string(e.what()).find("missing.jsonl"), std::string::npos);
    }
}

TEST(Dataset, TruncatedFileIsIoError)
{
    const auto path = scratch("trunc.jsonl");
    io::write_dataset(path.string(), generate_dataset(tiny_params(), ArrayKind::ula, 3, 1));
    auto text = slurp(path);
    text.resize(text.size() / 2);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << text;
    try
    {
        io::read_dataset(path.string());
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::io);
    }
}

TEST(Dataset, UnwritableTargetIsIoError)
{
    const auto dir = scratch("dir_as_file");
    fs::create_directories(dir);
    try
    {
        io::write_dataset(dir.string(), generate_dataset(tiny_params(), ArrayKind::ula, 1, 1));
        FAIL();
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.category(), ErrorCategory::io);
    }
}

TEST(Config, ParsesEveryKey)
{
    const auto j = io::json::parse(R"({
        "base": "desk", "num_users": 1, "max_delay_seconds": 4e-11, "geometry": "UCA",
        "modes": ["Parallel", "FullDigital"], "transmit_power_dbm": [0, 10], "t_max_ps": [20, 80],
        "instances": 3, "seed": 9, "out_dir": "out", "workers": 2, "fixed_user_distance_m": 10,
        "optimizer": {"step_size": 0.02, "max_iters": 40, "num_restarts": 2, "patience": 5, "convergence_tol": 1e-9},
        "penalty": {"ps": 2, "ttd": 3, "pc": 4, "power": "per_subcarrier"}})");
    const auto c = io::experiment_config_from_json(j);
    EXPECT_EQ(c.params.num_users, 1u);
    EXPECT_EQ(c.params.max_delay_seconds, 4e-11);
    EXPECT_EQ(c.kind, ArrayKind::uca);
    EXPECT_EQ(c.modes, (std::vector<std::string>{"Parallel", "FullDigital"}));
    EXPECT_EQ(c.transmit_power_dbm, (std::vector<double>{0, 10}));
    EXPECT_EQ(c.t_max_ps, (std::vector<double>{20, 80}));
    EXPECT_EQ(c.instances, 3u);
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.out_dir, "out");
    EXPECT_EQ(c.workers, 2u);
    EXPECT_EQ(c.grid.fixed_user_distance_m, 10.0);
    EXPECT_EQ(c.optimizer.step_size, 0.02);
    EXPECT_EQ(c.optimizer.max_iters, 40u);
    EXPECT_EQ(c.optimizer.num_restarts, 2u);
    EXPECT_EQ(c.optimizer.patience, 5u);
    EXPECT_EQ(c.optimizer.convergence_tol, 1e-9);
    EXPECT_EQ(c.optimizer.penalty_weights.ps, 2.0);
    EXPECT_EQ(c.optimizer.penalty_weights.ttd, 3.0);
    EXPECT_EQ(c.optimizer.penalty_weights.pc, 4.0);
    EXPECT_EQ(c.optimizer.penalty_weights.power, PowerPenalty::per_subcarrier);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, Table1Base)
{
    const auto c = io::experiment_config_from_json(io::json{{"base", "table1"}});
    EXPECT_EQ(c.params, SystemParams::table1());
}

TEST(Config, RejectsUnknownKeysAndBadTypes)
{
    EXPECT_THROW(io::experiment_config_from_json(io::json{{"instancs", 3}}), Error);
    EXPECT_THROW(io::experiment_config_from_json(io::json{{"optimizer", {{"lr", 1}}}}), Error);
    EXPECT_THROW(io::experiment_config_from_json(io::json{{"modes", 3}}), Error);
    EXPECT_THROW(io::experiment_config_from_json(io::json{{"seed", -1}}), Error);
}

TEST(Config, ValidationRules)
{
    ExperimentConfig c;
    c.modes.clear();
    EXPECT_THROW(c.validate(), Error);
    c = ExperimentConfig{};
    c.t_max_ps = {80, 40};
    EXPECT_THROW(c.validate(), Error);
    c = ExperimentConfig{};
    c.modes = {"Hybrid"};
    EXPECT_THROW(c.validate(), Error);
    c = ExperimentConfig{};
    c.axis = SweepAxis::transmit_power_dbm;
    c.transmit_power_dbm.clear();
    EXPECT_THROW(c.validate(), Error);
    EXPECT_NO_THROW(ExperimentConfig{}.validate());
}
