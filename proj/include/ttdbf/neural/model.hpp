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

#include "ttdbf/neural/layers.hpp"
#include "ttdbf/objective/loss.hpp"

#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ttdbf::nn
{
    struct ModelConfig
    {
        ConfigMode mode = ConfigMode::adaptive;
        std::size_t encoder_blocks = 1;
        std::size_t embed_dim = 8;
        std::size_t transformer_layers = 1;
        std::size_t decoder_depth = 2;
        std::size_t decoder_hidden = 32;
        double positional_base = 1000.0;

        void validate(const SystemParams &p) const
        {
            using enum ErrorCategory;
            require(encoder_blocks >= 1 && embed_dim >= 1 && decoder_depth >= 1 && decoder_hidden >= 1, configuration,
                    "network sizes must be positive");
            require(p.num_subcarriers >> encoder_blocks >= 1, configuration,
                    "M = " + std::to_string(p.num_subcarriers) + " is too small for " + std::to_string(encoder_blocks) + " encoder blocks");
            require(2 * p.num_antennas >> encoder_blocks >= 1, configuration, "N is too small for the encoder depth");
            require((p.num_rf_chains * p.num_ttds_per_chain) % 2 == 0, configuration,
                    "N_RF * L must be even for the positional code");
            require(positional_base > 1.0, configuration, "positional code base must exceed 1");
        }
    };

    // Raw network outputs for one channel instance, laid out like Parameterization except that the
    // phase shifters are free complex numbers
    struct NetworkOutputs
    {
        ConfigMode mode = ConfigMode::adaptive;
        std::size_t N = 0, R = 0, L = 0, M = 0, K = 0;
        std::vector<Var> phi_re, phi_im;  // (n, i)
        std::vector<Var> delay_raws;      // (l, i), softplus gives delays in units of delay_unit
        std::vector<Var> digital_raws;    // (m, r, k, re|im)
        std::vector<Var> switch_logits;   // (i, q, l), adaptive only
    };

    struct ForwardTrace
    {
        std::vector<VarMatrix> attention; // every softmax weight matrix recorded in the pass
    };

    // Per-instance RMS scaling of the tensorized channel
    inline std::vector<double> normalized_features(const ChannelFeatureTensor &t)
    {
        double s = 0.0;
        for (const double v : t.values)
            s += v * v;
        const double rms = std::sqrt(s / double(std::max<std::size_t>(t.values.size(), 1)));
        std::vector<double> out(t.values);
        if (rms > 0.0)
            for (auto &v : out)
                v /= rms;
        return out;
    }

    class BeamformingNetwork
    {
    public:
        ModelConfig config;
        SystemParams params;

        std::vector<EncoderBlock> encoder;
        DenseLayer token_projection; // encoder channels -> N_RF * L tokens
        std::array<CrossAttention, 4> ca; // phase shifters, delays, digital, switch
        std::vector<TransformerLayer> transformer;
        MultiFeatureAttention feature_attention;
        std::array<std::vector<DenseLayer>, 3> decoders;

        std::size_t tokens() const { return params.num_rf_chains * params.num_ttds_per_chain; }
        std::size_t mode_ttds() const { return ttd_count(config.mode, params.num_antennas, params.num_ttds_per_chain); }

        std::array<std::size_t, 3> decoder_outputs() const
        {
            const std::size_t N = params.num_antennas, R = params.num_rf_chains;
            return {2 * N * R, config.mode == ConfigMode::ps_only ? 0 : mode_ttds() * R,
                    params.num_subcarriers * R * params.num_users * 2};
        }

        // Channel width of block i (1-based): K * 2^(2+i)
        static std::size_t block_channels(std::size_t K, std::size_t i) { return K << (2 + i); }

        static std::vector<std::array<std::size_t, 3>> encoder_shapes(std::size_t K, std::size_t M, std::size_t N, std::size_t blocks)
        {
            std::vector<std::array<std::size_t, 3>> shapes{{K, M, 2 * N}};
            for (std::size_t i = 1; i <= blocks; ++i)
                shapes.push_back(encoder_output_shape(shapes.back(), block_channels(K, i)));
            return shapes;
        }

        static BeamformingNetwork create(const SystemParams &params, const ModelConfig &config, std::uint64_t seed)
        {
            params.validate();
            config.validate(params);
            std::mt19937_64 rng(seed);
            BeamformingNetwork net;
            net.config = config;
            net.params = params;
            const std::size_t K = params.num_users, P = net.tokens(), d = config.embed_dim;

            const auto shapes = encoder_shapes(K, params.num_subcarriers, params.num_antennas, config.encoder_blocks);
            for (std::size_t i = 1; i < shapes.size(); ++i)
                net.encoder.push_back(EncoderBlock::random(shapes[i - 1][0], shapes[i][0], rng));
            const auto &last = shapes.back();
            const std::size_t len = last[1] * last[2];
            net.token_projection = DenseLayer::random(last[0], P, rng);
            for (std::size_t j = 0; j < 3; ++j)
                net.ca[j] = CrossAttention::random(len, d, d, rng);
            net.ca[3] = CrossAttention::random(len, P, P, rng);
            for (std::size_t l = 0; l < config.transformer_layers; ++l)
                net.transformer.push_back(
                    {Normalization::identity(P), MultiUserAttention::random(P, K, K, rng), FeedForward::random(P, 4 * P, rng)});
            const std::array<std::size_t, 4> dims{d, d, d, P};
            net.feature_attention = MultiFeatureAttention::random(dims, d, rng);

            const auto outs = net.decoder_outputs();
            for (std::size_t j = 0; j < 3; ++j)
            {
                if (outs[j] == 0)
                    continue;
                std::size_t width = P * d;
                for (std::size_t l = 0; l + 1 < config.decoder_depth; ++l)
                {
                    net.decoders[j].push_back(DenseLayer::random(width, config.decoder_hidden, rng));
                    width = config.decoder_hidden;
                }
                net.decoders[j].push_back(DenseLayer::random(width, outs[j], rng));
            }
            return net;
        }

        // f(name, std::vector<double>&) for every parameter vector in a fixed order
        template <typename F>
        void visit(F &&f)
        {
            visit_impl(*this, f);
        }
        template <typename F>
        void visit(F &&f) const
        {
            visit_impl(*this, f);
        }

        std::size_t parameter_count() const
        {
            std::size_t n = 0;
            visit([&n](const std::string &, const std::vector<double> &v) { n += v.size(); });
            return n;
        }

        std::vector<NetworkOutputs> forward(Binding &b, std::span<const ChannelInstance *const> batch,
                                            ForwardTrace *trace = nullptr) const
        {
            require(!batch.empty(), ErrorCategory::invalid_argument, "empty batch");
            const std::size_t K = params.num_users, M = params.num_subcarriers, N = params.num_antennas;
            const std::size_t R = params.num_rf_chains, P = tokens();
            std::vector<FeatureMap> maps;
            for (const auto *H : batch)
            {
                require(H->num_users() == K && H->num_subcarriers() == M && H->num_antennas() == N, ErrorCategory::invalid_argument,
                        "channel does not match the network");
                const auto x = normalized_features(tensorize_channel(*H));
                FeatureMap f(K, M, 2 * N);
                for (std::size_t i = 0; i < x.size(); ++i)
                    f.v[i] = b.constant(x[i]);
                maps.push_back(std::move(f));
            }
            for (const auto &block : encoder)
                maps = encoder_block(b, maps, block);

            const PositionalCode pc = positional_code(P, P, config.positional_base);
            std::vector<NetworkOutputs> out;
            for (const auto &f : maps)
            {
                VarMatrix flat(f.channels, f.height * f.width);
                flat.v = f.v;
                const VarMatrix x = transpose(dense(b, transpose(flat), token_projection));

                std::vector<VarMatrix> latents;
                for (const auto &c : ca)
                {
                    auto a = cross_attention(b, x, c);
                    if (trace)
                        trace->attention.push_back(a.weights);
                    latents.push_back(std::move(a.values));
                }
                VarMatrix s = add_positional_code(latents[3], pc);
                for (const auto &layer : transformer)
                    s = transformer_layer(b, s, layer, trace ? &trace->attention : nullptr);
                latents[3] = s;
                latents = mca(b, latents, feature_attention, trace ? &trace->attention : nullptr);

                NetworkOutputs o;
                o.mode = config.mode;
                o.N = N;
                o.R = R;
                o.L = mode_ttds();
                o.M = M;
                o.K = K;
                std::array<std::vector<Var>, 3> heads;
                for (std::size_t j = 0; j < 3; ++j)
                {
                    if (decoders[j].empty())
                        continue;
                    VarMatrix h(1, latents[j].v.size());
                    h.v = latents[j].v;
                    for (const auto &layer : decoders[j])
                        h = dense(b, h, layer);
                    heads[j] = std::move(h.v);
                }
                o.phi_re.assign(heads[0].begin(), heads[0].begin() + std::ptrdiff_t(N * R));
                o.phi_im.assign(heads[0].begin() + std::ptrdiff_t(N * R), heads[0].end());
                o.delay_raws = std::move(heads[1]);
                o.digital_raws = std::move(heads[2]);
                if (config.mode == ConfigMode::adaptive)
                {
                    const std::size_t L = o.L;
                    const VarMatrix &S = latents[3];
                    for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t q = 0; q < L; ++q)
                            for (std::size_t l = 0; l < L; ++l)
                                o.switch_logits.push_back(S(i * L + q, i * L + l));
                }
                out.push_back(std::move(o));
            }
            return out;
        }

    private:
        template <typename Self, typename F>
        static void visit_impl(Self &self, F &f)
        {
            auto dense_layer = [&f](const std::string &name, auto &l)
            {
                f(name + ".weights", l.weights);
                f(name + ".biases", l.biases);
            };
            for (std::size_t i = 0; i < self.encoder.size(); ++i)
            {
                auto &e = self.encoder[i];
                const std::string p = "encoder." + std::to_string(i);
                dense_layer(p + ".entry", e.entry);
                f(p + ".norm.gamma", e.norm.gamma);
                f(p + ".norm.beta", e.norm.beta);
                dense_layer(p + ".inner_first", e.inner_first);
                dense_layer(p + ".inner_second", e.inner_second);
                dense_layer(p + ".exit", e.exit);
            }
            dense_layer("token_projection", self.token_projection);
            for (std::size_t j = 0; j < self.ca.size(); ++j)
            {
                const std::string p = "ca." + std::to_string(j);
                dense_layer(p + ".latent", self.ca[j].latent);
                dense_layer(p + ".query", self.ca[j].query);
                dense_layer(p + ".key", self.ca[j].key);
                dense_layer(p + ".value", self.ca[j].value);
            }
            for (std::size_t l = 0; l < self.transformer.size(); ++l)
            {
                auto &t = self.transformer[l];
                const std::string p = "transformer." + std::to_string(l);
                f(p + ".norm.gamma", t.norm.gamma);
                f(p + ".norm.beta", t.norm.beta);
                for (std::size_t k = 0; k < t.attention.expansions.size(); ++k)
                    dense_layer(p + ".expansion." + std::to_string(k), t.attention.expansions[k]);
                for (std::size_t j = 0; j < t.attention.heads.size(); ++j)
                {
                    const std::string h = p + ".head." + std::to_string(j);
                    dense_layer(h + ".query", t.attention.heads[j].query);
                    dense_layer(h + ".key", t.attention.heads[j].key);
                    dense_layer(h + ".value", t.attention.heads[j].value);
                }
                dense_layer(p + ".output", t.attention.output);
                dense_layer(p + ".ffn.expand", t.ffn.expand);
                dense_layer(p + ".ffn.contract", t.ffn.contract);
            }
            dense_layer("mca.query", self.feature_attention.query);
            for (std::size_t i = 0; i < self.feature_attention.keys.size(); ++i)
            {
                dense_layer("mca.key." + std::to_string(i), self.feature_attention.keys[i]);
                dense_layer("mca.value." + std::to_string(i), self.feature_attention.values[i]);
            }
            for (std::size_t j = 0; j < self.decoders.size(); ++j)
                for (std::size_t l = 0; l < self.decoders[j].size(); ++l)
                    dense_layer("decoder." + std::to_string(j) + "." + std::to_string(l), self.decoders[j][l]);
        }
    };

    // ---- loss on network outputs ----

    struct NetworkLoss
    {
        LossBreakdown values;
        Var total;
        std::vector<std::vector<std::size_t>> permutations;
    };

    inline std::vector<std::vector<std::size_t>> output_permutations(const NetworkOutputs &o)
    {
        Parameterization shape;
        shape.mode = o.mode;
        shape.N_RF = o.R;
        shape.L = o.L;
        for (const Var v : o.switch_logits)
            shape.switch_logits.push_back(v.value());
        return decode_permutations(shape);
    }

    // Composite loss with A_m = Phi (.) exp(-j 2 pi f_m tau); |Phi| is free and pulled to one by l_ps
    inline NetworkLoss record_network_loss(ad::Tape &tape, const LossContext &ctx, const NetworkOutputs &o, const LossWeights &w = {})
    {
        const auto &params = ctx.params;
        const std::size_t N = o.N, R = o.R, L = o.L, M = o.M, K = o.K;
        require(N == params.num_antennas && R == params.num_rf_chains && M == params.num_subcarriers && K == params.num_users &&
                    L == ttd_count(o.mode, N, params.num_ttds_per_chain),
                ErrorCategory::invalid_argument, "network outputs do not match the parameters");
        require(o.phi_re.size() == N * R && o.phi_im.size() == N * R && o.digital_raws.size() == M * R * K * 2,
                ErrorCategory::invalid_argument, "network outputs have the wrong sizes");
        const bool has_delays = o.mode != ConfigMode::ps_only;
        require(!has_delays || o.delay_raws.size() == L * R, ErrorCategory::invalid_argument, "delay head has the wrong size");
        require(o.mode != ConfigMode::adaptive || o.switch_logits.size() == R * L * L, ErrorCategory::invalid_argument,
                "switch head has the wrong size");
        const std::size_t Q = N / L;
        const double P_t = params.transmit_power_watts, sigma2 = ctx.H->noise_power_watts;
        const double unit = delay_unit(o.mode, params);

        NetworkLoss g;
        g.permutations = output_permutations(o);

        std::vector<Var> x, tau;
        if (has_delays)
        {
            for (const Var r : o.delay_raws)
                x.push_back(ad::softplus(r));
            std::vector<Var> cum(L * R);
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t l = 0; l < L; ++l)
                    cum[l * R + i] = (is_cascaded(o.mode) && l > 0) ? cum[(l - 1) * R + i] + x[l * R + i] : x[l * R + i];
            tau.resize(L * R);
            for (std::size_t i = 0; i < R; ++i)
                for (std::size_t q = 0; q < L; ++q)
                {
                    const Var src = cum[g.permutations[i][q] * R + i];
                    if (o.mode != ConfigMode::adaptive)
                    {
                        tau[q * R + i] = src;
                        continue;
                    }
                    tape.edge(src, 1.0);
                    for (std::size_t l = 0; l < L; ++l)
                        tape.edge(o.switch_logits[(i * L + q) * L + l], cum[l * R + i].value());
                    tau[q * R + i] = tape.finish(ad::Op::sum, src.value());
                }
        }

        std::vector<Var> ps_terms;
        for (std::size_t j = 0; j < N * R; ++j)
        {
            ad::Accumulator m2(tape);
            m2.product(o.phi_re[j], o.phi_re[j]);
            m2.product(o.phi_im[j], o.phi_im[j]);
            m2.constant(-1.0);
            ps_terms.push_back(ad::square(m2.finish()));
        }
        const Var l_ps = ad::sum(ps_terms);

        Var l_ttd = tape.leaf(0.0);
        if (has_delays)
        {
            const double hi = delay_bound_units(o.mode, params);
            std::vector<Var> terms{l_ttd};
            for (const Var xi : x)
            {
                if (xi.value() > hi)
                    terms.push_back(ad::square(xi - hi));
                else if (xi.value() < 0.0)
                    terms.push_back(ad::square(xi));
            }
            l_ttd = ad::sum(terms);
        }

        std::vector<Var> power_terms, rate_logs;
        std::vector<double> rate_coef;
        const double rate_scale = 1.0 / (std::numbers::ln2 * double(M + params.cyclic_prefix_len));
        for (std::size_t m = 0; m < M; ++m)
        {
            const double w_t = two_pi * ctx.frequencies[m] * unit;
            std::vector<Var> a_re(N * R), a_im(N * R);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t i = 0; i < R; ++i)
                {
                    const Var pr = o.phi_re[n * R + i], pi = o.phi_im[n * R + i];
                    if (!has_delays)
                    {
                        a_re[n * R + i] = pr;
                        a_im[n * R + i] = pi;
                        continue;
                    }
                    const Var arg = tau[(n / Q) * R + i] * w_t;
                    const Var c = ad::cos(arg), s = ad::sin(arg);
                    ad::Accumulator re(tape), im(tape);
                    re.product(pr, c);
                    re.product(pi, s);
                    im.product(pi, c);
                    im.product(pr, s, -1.0);
                    a_re[n * R + i] = re.finish();
                    a_im[n * R + i] = im.finish();
                }

            // e_{k,i} = h_k^H a_i
            std::vector<Var> e_re(K * R), e_im(K * R);
            for (std::size_t k = 0; k < K; ++k)
            {
                const double *hr = ctx.h_re.data() + (k * M + m) * N;
                const double *hi = ctx.h_im.data() + (k * M + m) * N;
                for (std::size_t i = 0; i < R; ++i)
                {
                    ad::Accumulator re(tape), im(tape);
                    for (std::size_t n = 0; n < N; ++n)
                    {
                        re.term(a_re[n * R + i], hr[n]);
                        re.term(a_im[n * R + i], hi[n]);
                        im.term(a_im[n * R + i], hr[n]);
                        im.term(a_re[n * R + i], -hi[n]);
                    }
                    e_re[k * R + i] = re.finish();
                    e_im[k * R + i] = im.finish();
                }
            }

            auto dr = [&](std::size_t r, std::size_t k) { return o.digital_raws[((m * R + r) * K + k) * 2]; };
            auto di = [&](std::size_t r, std::size_t k) { return o.digital_raws[((m * R + r) * K + k) * 2 + 1]; };

            // ||A_m D_raw||^2 through the transmitted vectors A_m d_k
            ad::Accumulator praw(tape);
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t n = 0; n < N; ++n)
                {
                    ad::Accumulator xr(tape), xi(tape);
                    for (std::size_t r = 0; r < R; ++r)
                    {
                        xr.product(a_re[n * R + r], dr(r, k));
                        xr.product(a_im[n * R + r], di(r, k), -1.0);
                        xi.product(a_re[n * R + r], di(r, k));
                        xi.product(a_im[n * R + r], dr(r, k));
                    }
                    const Var vr = xr.finish(), vi = xi.finish();
                    praw.product(vr, vr);
                    praw.product(vi, vi);
                }
            const Var P_raw = praw.finish();
            const Var den = P_raw + detail::power_floor;
            const Var c = ad::sqrt(P_t / den);
            power_terms.push_back(P_raw * P_t / den);

            std::vector<Var> d_re(R * K), d_im(R * K);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t k = 0; k < K; ++k)
                {
                    d_re[r * K + k] = c * dr(r, k);
                    d_im[r * K + k] = c * di(r, k);
                }

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
                rate_logs.push_back(ad::log(T));
                rate_coef.push_back(-rate_scale);
                rate_logs.push_back(ad::log(T - mag[k]));
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

    // Values of the outputs as a raw parameter set; phase shifters keep only their angle
    inline Parameterization to_parameterization(const NetworkOutputs &o, const SystemParams &params)
    {
        Parameterization p = Parameterization::zeros(o.mode, params);
        for (std::size_t j = 0; j < p.ps_angles.size(); ++j)
            p.ps_angles[j] = std::atan2(o.phi_im[j].value(), o.phi_re[j].value());
        for (std::size_t j = 0; j < p.delay_raws.size(); ++j)
            p.delay_raws[j] = o.delay_raws[j].value();
        for (std::size_t j = 0; j < p.digital_raws.size(); ++j)
            p.digital_raws[j] = o.digital_raws[j].value();
        for (std::size_t j = 0; j < p.switch_logits.size(); ++j)
            p.switch_logits[j] = o.switch_logits[j].value();
        return p;
    }

    // RMS of |Phi| - 1 over the phase-shifter outputs
    inline double modulus_residual(std::span<const NetworkOutputs> outputs)
    {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto &o : outputs)
            for (std::size_t j = 0; j < o.phi_re.size(); ++j)
            {
                const double e = std::hypot(o.phi_re[j].value(), o.phi_im[j].value()) - 1.0;
                s += e * e;
                ++n;
            }
        return n ? std::sqrt(s / double(n)) : 0.0;
    }
}
