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

#include "ttdbf/beamforming/beamformer.hpp"
#include "ttdbf/channel/channel.hpp"
#include "ttdbf/neural/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>
#include <vector>

// Structured-text containers. Every record is one JSON object; files holding several records use one
// object per line. Finite doubles are written in shortest round-trip form, so reloading is bit-exact.
// Non-finite values are stored as the strings "inf", "-inf" and "nan".
namespace ttdbf::io
{
    using json = nlohmann::json;

    inline json number(double v)
    {
        if (std::isfinite(v))
            return v;
        if (std::isnan(v))
            return "nan";
        return v > 0 ? "inf" : "-inf";
    }

    inline double to_double(const json &j, const std::string &what)
    {
        if (j.is_number())
            return j.get<double>();
        if (j.is_string())
        {
            const auto s = j.get<std::string>();
            if (s == "inf")
                return std::numeric_limits<double>::infinity();
            if (s == "-inf")
                return -std::numeric_limits<double>::infinity();
            if (s == "nan")
                return std::numeric_limits<double>::quiet_NaN();
        }
        fail(ErrorCategory::invalid_argument, "'" + what + "' is not a number");
    }

    inline std::uint64_t to_u64(const json &j, const std::string &what)
    {
        require(j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0), ErrorCategory::invalid_argument,
                "'" + what + "' is not a non-negative integer");
        return j.get<std::uint64_t>();
    }

    inline const json &field(const json &j, const std::string &key)
    {
        require(j.is_object(), ErrorCategory::invalid_argument, "expected an object holding '" + key + "'");
        const auto it = j.find(key);
        require(it != j.end(), ErrorCategory::invalid_argument, "missing field '" + key + "'");
        return *it;
    }

    // ---- complex arrays, interleaved re/im in row-major order ----

    inline json complex_values(const std::vector<cdouble> &v)
    {
        json out = json::array();
        for (const auto &c : v)
        {
            out.push_back(number(c.real()));
            out.push_back(number(c.imag()));
        }
        return out;
    }

    inline std::vector<cdouble> parse_complex_values(const json &j, std::size_t count, const std::string &what)
    {
        require(j.is_array() && j.size() == 2 * count, ErrorCategory::invalid_argument,
                "'" + what + "' must hold " + std::to_string(2 * count) + " numbers");
        std::vector<cdouble> v(count);
        for (std::size_t i = 0; i < count; ++i)
            v[i] = {to_double(j[2 * i], what), to_double(j[2 * i + 1], what)};
        return v;
    }

    // ---- SystemParams ----

    namespace detail
    {
        // Applies f(name, member) to every SystemParams field
        template <typename P, typename F>
        void visit_params(P &p, F &&f)
        {
            f("carrier_frequency_hz", p.carrier_frequency_hz);
            f("bandwidth_hz", p.bandwidth_hz);
            f("num_subcarriers", p.num_subcarriers);
            f("cyclic_prefix_len", p.cyclic_prefix_len);
            f("num_antennas", p.num_antennas);
            f("num_ttds_per_chain", p.num_ttds_per_chain);
            f("num_rf_chains", p.num_rf_chains);
            f("num_users", p.num_users);
            f("transmit_power_watts", p.transmit_power_watts);
            f("noise_density_dbm_per_hz", p.noise_density_dbm_per_hz);
            f("max_delay_seconds", p.max_delay_seconds);
            f("tx_gain_db", p.tx_gain_db);
            f("rx_gain_db", p.rx_gain_db);
            f("scattering_loss_db", p.scattering_loss_db);
            f("absorption_coeff_per_meter", p.absorption_coeff_per_meter);
            f("num_scatterers_per_user", p.num_scatterers_per_user);
        }
    }

    inline bool is_param_key(const std::string &key)
    {
        bool hit = false;
        SystemParams p;
        detail::visit_params(p, [&](const char *name, auto &) { hit = hit || key == name; });
        return hit;
    }

    inline json to_json(const SystemParams &p)
    {
        json j = json::object();
        detail::visit_params(p, [&j](const char *name, const auto &v)
                             {
                                 if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>)
                                     j[name] = number(v);
                                 else
                                     j[name] = v; });
        return j;
    }

    // Overrides the fields of base that appear in j; other keys are ignored
    inline SystemParams apply_params(SystemParams base, const json &j)
    {
        require(j.is_object(), ErrorCategory::invalid_argument, "system parameters must be an object");
        detail::visit_params(base, [&j](const char *name, auto &v)
                             {
                                 const auto it = j.find(name);
                                 if (it == j.end())
                                     return;
                                 if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>)
                                     v = to_double(*it, name);
                                 else
                                     v = std::size_t(to_u64(*it, name)); });
        return base;
    }

    inline SystemParams params_from_json(const json &j)
    {
        for (const auto &[key, value] : j.items())
            require(is_param_key(key), ErrorCategory::invalid_argument, "unknown system parameter '" + key + "'");
        return apply_params(SystemParams{}, j);
    }

    // ---- geometry and scenario ----

    inline json to_json(const ArrayGeometry &g)
    {
        return {{"kind", std::string(to_string(g.kind))},
                {"num_antennas", g.num_antennas},
                {"element_spacing_m", number(g.element_spacing_m)},
                {"radius_m", number(g.radius_m)}};
    }

    inline ArrayGeometry geometry_from_json(const json &j)
    {
        ArrayGeometry g;
        g.kind = parse_array_kind(field(j, "kind").get<std::string>());
        g.num_antennas = to_u64(field(j, "num_antennas"), "num_antennas");
        g.element_spacing_m = to_double(field(j, "element_spacing_m"), "element_spacing_m");
        g.radius_m = to_double(field(j, "radius_m"), "radius_m");
        return g;
    }

    inline json to_json(const Placement &p) { return json::array({number(p.distance_m), number(p.angle_rad)}); }

    inline Placement placement_from_json(const json &j)
    {
        require(j.is_array() && j.size() == 2, ErrorCategory::invalid_argument, "placement must be [r, theta]");
        return {to_double(j[0], "r"), to_double(j[1], "theta")};
    }

    inline json to_json(const Scenario &s)
    {
        json users = json::array(), scat = json::array();
        for (const auto &u : s.users)
            users.push_back(to_json(u));
        for (const auto &group : s.scatterers)
        {
            json g = json::array();
            for (const auto &p : group)
                g.push_back(to_json(p));
            scat.push_back(std::move(g));
        }
        return {{"users", users}, {"scatterers", scat}, {"rng_seed", s.rng_seed}};
    }

    inline Scenario scenario_from_json(const json &j)
    {
        Scenario s;
        for (const auto &u : field(j, "users"))
            s.users.push_back(placement_from_json(u));
        for (const auto &g : field(j, "scatterers"))
        {
            s.scatterers.emplace_back();
            for (const auto &p : g)
                s.scatterers.back().push_back(placement_from_json(p));
        }
        s.rng_seed = to_u64(field(j, "rng_seed"), "rng_seed");
        return s;
    }

    // ---- channel instances ----

    inline json to_json(const ChannelInstance &H)
    {
        return {{"shape", {H.num_users(), H.num_subcarriers(), H.num_antennas()}},
                {"geometry", to_json(H.geometry)},
                {"scenario", to_json(H.scenario)},
                {"params_fingerprint", H.params_fingerprint},
                {"noise_power_watts", number(H.noise_power_watts)},
                {"h", complex_values(H.responses.data())}};
    }

    inline ChannelInstance channel_from_json(const json &j)
    {
        const auto &shape = field(j, "shape");
        require(shape.is_array() && shape.size() == 3, ErrorCategory::invalid_argument, "channel shape must be [K, M, N]");
        ChannelInstance H;
        H.responses = Array3<cdouble>(to_u64(shape[0], "K"), to_u64(shape[1], "M"), to_u64(shape[2], "N"));
        H.responses.data() = parse_complex_values(field(j, "h"), H.responses.size(), "h");
        H.geometry = geometry_from_json(field(j, "geometry"));
        H.scenario = scenario_from_json(field(j, "scenario"));
        H.params_fingerprint = to_u64(field(j, "params_fingerprint"), "params_fingerprint");
        H.noise_power_watts = to_double(field(j, "noise_power_watts"), "noise_power_watts");
        return H;
    }

    // ---- beamformer sets ----

    inline json to_json(const BeamformerSet &s)
    {
        json delays = json::array();
        for (const double t : s.delays.incremental.data())
            delays.push_back(number(t));
        json switches = json::array();
        for (std::size_t i = 0; i < s.switches.chains.size(); ++i)
            switches.push_back(s.switches.permutation(i));
        return {{"mode", std::string(to_string(s.mode))},
                {"shape", {{"N", s.num_antennas()}, {"N_RF", s.num_rf_chains()}, {"L", s.num_ttds()}, {"M", s.num_subcarriers()}, {"K", s.num_users()}}},
                {"phases", complex_values(s.ps.phases.data())},
                {"delays_s", delays},
                {"switches", switches},
                {"digital", complex_values(s.digital.weights.data())}};
    }

    inline BeamformerSet beamformer_from_json(const json &j)
    {
        const auto &shape = field(j, "shape");
        const std::size_t N = to_u64(field(shape, "N"), "N"), R = to_u64(field(shape, "N_RF"), "N_RF"),
                          L = to_u64(field(shape, "L"), "L"), M = to_u64(field(shape, "M"), "M"), K = to_u64(field(shape, "K"), "K");
        BeamformerSet s;
        s.mode = parse_config_mode(field(j, "mode").get<std::string>());
        s.ps.phases = Array2<cdouble>(N, R);
        s.ps.phases.data() = parse_complex_values(field(j, "phases"), N * R, "phases");
        s.delays.incremental = Array2<double>(L, R);
        const auto &d = field(j, "delays_s");
        require(d.is_array() && d.size() == L * R, ErrorCategory::invalid_argument, "'delays_s' has the wrong length");
        for (std::size_t i = 0; i < L * R; ++i)
            s.delays.incremental.data()[i] = to_double(d[i], "delays_s");
        std::vector<std::vector<std::size_t>> perms;
        for (const auto &p : field(j, "switches"))
            perms.push_back(p.get<std::vector<std::size_t>>());
        require(perms.size() == R, ErrorCategory::invalid_argument, "one switch permutation per RF chain expected");
        for (const auto &p : perms)
            require(p.size() == L, ErrorCategory::invalid_argument, "switch permutation length must equal L");
        s.switches = SwitchMatrix::from_permutations(perms);
        for (std::size_t i = 0; i < R; ++i)
            s.switches.permutation(i);
        s.digital.weights = Array3<cdouble>(M, R, K);
        s.digital.weights.data() = parse_complex_values(field(j, "digital"), M * R * K, "digital");
        return s;
    }

    // ---- neural model ----

    inline json to_json(const nn::ModelConfig &c)
    {
        return {{"mode", std::string(to_string(c.mode))},
                {"encoder_blocks", c.encoder_blocks},
                {"embed_dim", c.embed_dim},
                {"transformer_layers", c.transformer_layers},
                {"decoder_depth", c.decoder_depth},
                {"decoder_hidden", c.decoder_hidden},
                {"positional_base", number(c.positional_base)}};
    }

    inline nn::ModelConfig model_config_from_json(const json &j)
    {
        nn::ModelConfig c;
        c.mode = parse_config_mode(field(j, "mode").get<std::string>());
        c.encoder_blocks = to_u64(field(j, "encoder_blocks"), "encoder_blocks");
        c.embed_dim = to_u64(field(j, "embed_dim"), "embed_dim");
        c.transformer_layers = to_u64(field(j, "transformer_layers"), "transformer_layers");
        c.decoder_depth = to_u64(field(j, "decoder_depth"), "decoder_depth");
        c.decoder_hidden = to_u64(field(j, "decoder_hidden"), "decoder_hidden");
        c.positional_base = to_double(field(j, "positional_base"), "positional_base");
        return c;
    }

    inline json to_json(const nn::BeamformingNetwork &net)
    {
        json tensors = json::object();
        net.visit([&tensors](const std::string &name, const std::vector<double> &v)
                  {
                      json a = json::array();
                      for (const double x : v)
                          a.push_back(number(x));
                      tensors[name] = std::move(a); });
        return {{"format", "ttdbf.model"}, {"version", 1}, {"config", to_json(net.config)}, {"params", to_json(net.params)}, {"tensors", tensors}};
    }

    inline nn::BeamformingNetwork network_from_json(const json &j)
    {
        require(field(j, "format") == "ttdbf.model", ErrorCategory::invalid_argument, "not a model record");
        const auto params = params_from_json(field(j, "params"));
        auto net = nn::BeamformingNetwork::create(params, model_config_from_json(field(j, "config")), 0);
        const auto &tensors = field(j, "tensors");
        std::set<std::string> seen;
        net.visit([&](const std::string &name, std::vector<double> &v)
                  {
                      const auto &a = field(tensors, name);
                      require(a.is_array() && a.size() == v.size(), ErrorCategory::invalid_argument,
                              "tensor '" + name + "' has the wrong size");
                      for (std::size_t i = 0; i < v.size(); ++i)
                          v[i] = to_double(a[i], name);
                      seen.insert(name); });
        require(seen.size() == tensors.size(), ErrorCategory::invalid_argument, "model file holds unknown tensors");
        return net;
    }

    // ---- files ----

    inline std::ofstream open_out(const std::string &path)
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        require(bool(os), ErrorCategory::io, "cannot open '" + path + "' for writing");
        return os;
    }

    inline std::ifstream open_in(const std::string &path)
    {
        std::ifstream is(path, std::ios::binary);
        require(bool(is), ErrorCategory::io, "cannot open '" + path + "' for reading");
        return is;
    }

    inline void write_json_file(const std::string &path, const json &j)
    {
        auto os = open_out(path);
        os << j.dump(2) << '\n';
        require(bool(os), ErrorCategory::io, "write to '" + path + "' failed");
    }

    inline json parse_json(const std::string &text, const std::string &where)
    {
        try
        {
            return json::parse(text);
        }
        catch (const json::parse_error &e)
        {
            fail(ErrorCategory::io, where + ": " + e.what());
        }
    }

    inline json read_json_file(const std::string &path)
    {
        auto is = open_in(path);
        const std::string text{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
        return parse_json(text, path);
    }

    // One JSON value per non-empty line
    inline std::vector<json> read_json_lines(const std::string &path)
    {
        auto is = open_in(path);
        std::vector<json> out;
        std::string line;
        for (std::size_t n = 1; std::getline(is, line); ++n)
            if (!line.empty())
                out.push_back(parse_json(line, path + ":" + std::to_string(n)));
        return out;
    }
}
