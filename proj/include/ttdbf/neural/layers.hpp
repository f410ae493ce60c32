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

// Differentiable building blocks for the toy beamforming network.
//
// Every layer keeps its parameters as plain double vectors. A Binding lazily turns those vectors
// into tape leaves the first time a forward pass touches them, so a single tape can hold a whole
// mini-batch and the gradient of any parameter is read back through the same Binding.

#include "ttdbf/autodiff/tape.hpp"
#include "ttdbf/channel/channel.hpp"
#include "ttdbf/core/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace ttdbf::nn
{
    using ad::Var;

    // ---- containers ----

    struct VarMatrix
    {
        std::size_t rows = 0, cols = 0;
        std::vector<Var> v; // row-major

        VarMatrix() = default;
        VarMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c) {}

        Var &operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
        Var operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
        std::vector<double> values() const
        {
            std::vector<double> out;
            out.reserve(v.size());
            for (const Var x : v)
                out.push_back(x.value());
            return out;
        }
    };

    // (channels, height, width)
    struct FeatureMap
    {
        std::size_t channels = 0, height = 0, width = 0;
        std::vector<Var> v;

        FeatureMap() = default;
        FeatureMap(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), v(c * h * w) {}

        Var &operator()(std::size_t c, std::size_t h, std::size_t w) { return v[(c * height + h) * width + w]; }
        Var operator()(std::size_t c, std::size_t h, std::size_t w) const { return v[(c * height + h) * width + w]; }
        std::array<std::size_t, 3> shape() const { return {channels, height, width}; }
    };

    class Binding
    {
    public:
        explicit Binding(ad::Tape &tape) : tape_(tape) {}

        ad::Tape &tape() const { return tape_; }

        std::span<const Var> operator()(const std::vector<double> &params)
        {
            auto [it, fresh] = leaves_.try_emplace(&params);
            if (fresh)
                it->second = tape_.leaves(params);
            return it->second;
        }

        Var constant(double v) { return tape_.leaf(v); }

        // Zero for parameters the recording never touched
        std::vector<double> gradient(const std::vector<double> &params, const std::vector<double> &adjoint) const
        {
            std::vector<double> g(params.size(), 0.0);
            const auto it = leaves_.find(&params);
            if (it == leaves_.end())
                return g;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (it->second[i].id < adjoint.size())
                    g[i] = adjoint[it->second[i].id];
            return g;
        }

    private:
        ad::Tape &tape_;
        std::unordered_map<const std::vector<double> *, std::vector<Var>> leaves_;
    };

    inline VarMatrix constant_matrix(Binding &b, std::size_t rows, std::size_t cols, std::span<const double> values)
    {
        require(values.size() == rows * cols, ErrorCategory::invalid_argument, "matrix data has the wrong length");
        VarMatrix m(rows, cols);
        for (std::size_t i = 0; i < values.size(); ++i)
            m.v[i] = b.constant(values[i]);
        return m;
    }

    // ---- channel tensorization ----

    struct ChannelFeatureTensor
    {
        std::size_t K = 0, M = 0, N = 0;
        std::vector<double> values; // (k, m, 2n | 2n+1) real and imaginary parts

        double at(std::size_t k, std::size_t m, std::size_t j) const { return values[(k * M + m) * 2 * N + j]; }
        bool operator==(const ChannelFeatureTensor &) const = default;
    };

    inline ChannelFeatureTensor tensorize_channel(const ChannelInstance &H)
    {
        ChannelFeatureTensor t{H.num_users(), H.num_subcarriers(), H.num_antennas(), {}};
        t.values.reserve(2 * H.responses.size());
        for (const cdouble h : H.responses.data())
        {
            t.values.push_back(h.real());
            t.values.push_back(h.imag());
        }
        return t;
    }

    inline Array3<cdouble> detensorize_channel(const ChannelFeatureTensor &t)
    {
        require(t.values.size() == 2 * t.K * t.M * t.N, ErrorCategory::invalid_argument, "feature tensor has the wrong length");
        Array3<cdouble> out(t.K, t.M, t.N);
        auto &d = out.data();
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = {t.values[2 * i], t.values[2 * i + 1]};
        return out;
    }

    // ---- parameter blocks ----

    struct DenseLayer
    {
        std::size_t in = 0, out = 0;
        std::vector<double> weights; // (out, in)
        std::vector<double> biases;  // out

        static DenseLayer zeros(std::size_t in, std::size_t out)
        {
            require(in > 0 && out > 0, ErrorCategory::invalid_argument, "dense layer dimensions must be positive");
            return {in, out, std::vector<double>(in * out, 0.0), std::vector<double>(out, 0.0)};
        }
        static DenseLayer identity(std::size_t d)
        {
            auto l = zeros(d, d);
            for (std::size_t i = 0; i < d; ++i)
                l.weights[i * d + i] = 1.0;
            return l;
        }
        template <typename Rng>
        static DenseLayer random(std::size_t in, std::size_t out, Rng &rng)
        {
            auto l = zeros(in, out);
            std::uniform_real_distribution<double> u(-1.0 / std::sqrt(double(in)), 1.0 / std::sqrt(double(in)));
            for (auto &w : l.weights)
                w = u(rng);
            for (auto &b : l.biases)
                b = u(rng);
            return l;
        }
    };

    struct ConvLayer
    {
        std::size_t in_channels = 0, out_channels = 0, kernel = 3;
        std::vector<double> weights; // (out, in, kernel)
        std::vector<double> biases;  // out

        static ConvLayer zeros(std::size_t in, std::size_t out, std::size_t kernel = 3)
        {
            require(in > 0 && out > 0 && kernel % 2 == 1, ErrorCategory::invalid_argument,
                    "convolution needs positive channel counts and an odd kernel");
            return {in, out, kernel, std::vector<double>(out * in * kernel, 0.0), std::vector<double>(out, 0.0)};
        }
        template <typename Rng>
        static ConvLayer random(std::size_t in, std::size_t out, Rng &rng, std::size_t kernel = 3)
        {
            auto l = zeros(in, out, kernel);
            const double s = 1.0 / std::sqrt(double(in * kernel));
            std::uniform_real_distribution<double> u(-s, s);
            for (auto &w : l.weights)
                w = u(rng);
            for (auto &b : l.biases)
                b = u(rng);
            return l;
        }
    };

    struct Normalization
    {
        std::vector<double> gamma, beta;
        double eps = 1e-5;

        static Normalization identity(std::size_t n) { return {std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)}; }
    };

    struct EncoderBlock
    {
        ConvLayer entry;       // in -> out
        Normalization norm;    // batch statistics per output channel
        ConvLayer inner_first; // residual branch
        ConvLayer inner_second;
        ConvLayer exit;

        std::size_t in_channels() const { return entry.in_channels; }
        std::size_t out_channels() const { return entry.out_channels; }

        static EncoderBlock zeros(std::size_t in, std::size_t out)
        {
            return {ConvLayer::zeros(in, out), Normalization{std::vector<double>(out, 1.0), std::vector<double>(out, 0.0)},
                    ConvLayer::zeros(out, out), ConvLayer::zeros(out, out), ConvLayer::zeros(out, out)};
        }
        template <typename Rng>
        static EncoderBlock random(std::size_t in, std::size_t out, Rng &rng)
        {
            return {ConvLayer::random(in, out, rng), Normalization::identity(out), ConvLayer::random(out, out, rng),
                    ConvLayer::random(out, out, rng), ConvLayer::random(out, out, rng)};
        }
    };

    struct CrossAttention
    {
        DenseLayer latent; // L_Y from L_X
        DenseLayer query;  // from L_X
        DenseLayer key;    // from L_Y
        DenseLayer value;  // from L_Y

        std::size_t key_dim() const { return query.out; }

        template <typename Rng>
        static CrossAttention random(std::size_t in, std::size_t dim, std::size_t key_dim, Rng &rng)
        {
            return {DenseLayer::random(in, dim, rng), DenseLayer::random(in, key_dim, rng), DenseLayer::random(dim, key_dim, rng),
                    DenseLayer::random(dim, dim, rng)};
        }
    };

    struct AttentionHead
    {
        DenseLayer query, key, value;

        template <typename Rng>
        static AttentionHead random(std::size_t in, std::size_t key_dim, std::size_t value_dim, Rng &rng)
        {
            return {DenseLayer::random(in, key_dim, rng), DenseLayer::random(in, key_dim, rng), DenseLayer::random(in, value_dim, rng)};
        }
    };

    struct MultiUserAttention
    {
        std::vector<DenseLayer> expansions; // one per user
        std::vector<AttentionHead> heads;   // J
        DenseLayer output;                  // J * value_dim -> dim

        std::size_t num_users() const { return expansions.size(); }
        std::size_t head_count() const { return heads.size(); }

        template <typename Rng>
        static MultiUserAttention random(std::size_t dim, std::size_t users, std::size_t heads, Rng &rng)
        {
            require(users >= 1 && heads >= 1, ErrorCategory::invalid_argument, "attention needs at least one user and one head");
            MultiUserAttention a;
            for (std::size_t k = 0; k < users; ++k)
                a.expansions.push_back(DenseLayer::random(dim, dim, rng));
            for (std::size_t j = 0; j < heads; ++j)
                a.heads.push_back(AttentionHead::random(dim, dim, dim, rng));
            a.output = DenseLayer::random(heads * dim, dim, rng);
            return a;
        }
    };

    struct FeedForward
    {
        DenseLayer expand, contract;

        template <typename Rng>
        static FeedForward random(std::size_t dim, std::size_t hidden, Rng &rng)
        {
            return {DenseLayer::random(dim, hidden, rng), DenseLayer::random(hidden, dim, rng)};
        }
    };

    struct TransformerLayer
    {
        Normalization norm;
        MultiUserAttention attention;
        FeedForward ffn;
    };

    struct MultiFeatureAttention
    {
        DenseLayer query;               // concatenated features -> key_dim
        std::vector<DenseLayer> keys;   // per latent, d_X -> key_dim
        std::vector<DenseLayer> values; // per latent, d_X -> d_X

        template <typename Rng>
        static MultiFeatureAttention random(std::span<const std::size_t> dims, std::size_t key_dim, Rng &rng)
        {
            MultiFeatureAttention a;
            std::size_t total = 0;
            for (const auto d : dims)
            {
                total += d;
                a.keys.push_back(DenseLayer::random(d, key_dim, rng));
                a.values.push_back(DenseLayer::random(d, d, rng));
            }
            a.query = DenseLayer::random(total, key_dim, rng);
            return a;
        }
    };

    // ---- elementwise and dense ops ----

    inline Var softplus(Var x) { return ad::softplus(x); }
    inline double softplus(double x) { return ad::softplus(x); }

    // y_r = W x_r + b for every row r
    inline VarMatrix dense(Binding &b, const VarMatrix &x, const DenseLayer &layer)
    {
        require(x.cols == layer.in, ErrorCategory::invalid_argument,
                "dense layer expects " + std::to_string(layer.in) + " features, got " + std::to_string(x.cols));
        const auto W = b(layer.weights);
        const auto B = b(layer.biases);
        VarMatrix y(x.rows, layer.out);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t o = 0; o < layer.out; ++o)
            {
                ad::Accumulator acc(b.tape());
                for (std::size_t i = 0; i < layer.in; ++i)
                    acc.product(W[o * layer.in + i], x(r, i));
                acc.term(B[o], 1.0);
                y(r, o) = acc.finish();
            }
        return y;
    }

    inline VarMatrix transpose(const VarMatrix &x)
    {
        VarMatrix y(x.cols, x.rows);
        for (std::size_t r = 0; r < x.rows; ++r)
            for (std::size_t c = 0; c < x.cols; ++c)
                y(c, r) = x(r, c);
        return y;
    }

    inline VarMatrix add(const VarMatrix &a, const VarMatrix &b)
    {
        require(a.rows == b.rows && a.cols == b.cols, ErrorCategory::invalid_argument, "matrix shapes differ");
        VarMatrix y(a.rows, a.cols);
        for (std::size_t i = 0; i < a.v.size(); ++i)
            y.v[i] = a.v[i] + b.v[i];
        return y;
    }

    inline VarMatrix gelu(const VarMatrix &x)
    {
        VarMatrix y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.v.size(); ++i)
            y.v[i] = ad::gelu(x.v[i]);
        return y;
    }

    // Row-wise softmax; the row maximum is subtracted as a constant
    inline VarMatrix softmax_rows(const VarMatrix &x)
    {
        VarMatrix y(x.rows, x.cols);
        std::vector<Var> e(x.cols);
        for (std::size_t r = 0; r < x.rows; ++r)
        {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < x.cols; ++c)
                top = std::max(top, x(r, c).value());
            for (std::size_t c = 0; c < x.cols; ++c)
                e[c] = ad::exp(x(r, c) - top);
            const Var s = ad::sum(e);
            for (std::size_t c = 0; c < x.cols; ++c)
                y(r, c) = e[c] / s;
        }
        return y;
    }

    // Per-row normalization over the feature axis with a learned affine map
    inline VarMatrix layer_norm(Binding &b, const VarMatrix &x, const Normalization &norm)
    {
        require(norm.gamma.size() == x.cols && norm.beta.size() == x.cols, ErrorCategory::invalid_argument,
                "normalization width does not match the features");
        const auto g = b(norm.gamma);
        const auto be = b(norm.beta);
        const double inv_n = 1.0 / double(x.cols);
        VarMatrix y(x.rows, x.cols);
        for (std::size_t r = 0; r < x.rows; ++r)
        {
            const Var mean = ad::sum(std::span<const Var>(x.v.data() + r * x.cols, x.cols)) * inv_n;
            std::vector<Var> d(x.cols);
            ad::Accumulator var(b.tape());
            for (std::size_t c = 0; c < x.cols; ++c)
            {
                d[c] = x(r, c) - mean;
                var.product(d[c], d[c], inv_n);
            }
            const Var inv = 1.0 / ad::sqrt(var.finish() + norm.eps);
            for (std::size_t c = 0; c < x.cols; ++c)
                y(r, c) = g[c] * (d[c] * inv) + be[c];
        }
        return y;
    }

    // ---- convolutional encoder ----

    // Cross-correlation along the width axis of every row, zero same-padding
    inline FeatureMap conv1d(Binding &b, const FeatureMap &x, const ConvLayer &layer)
    {
        require(x.channels == layer.in_channels, ErrorCategory::invalid_argument,
                "convolution expects " + std::to_string(layer.in_channels) + " channels, got " + std::to_string(x.channels));
        require(x.width >= 1 && x.height >= 1, ErrorCategory::invalid_argument, "convolution input is empty");
        const auto W = b(layer.weights);
        const auto B = b(layer.biases);
        const std::size_t K = layer.kernel, pad = K / 2, C = layer.in_channels;
        FeatureMap y(layer.out_channels, x.height, x.width);
        for (std::size_t o = 0; o < layer.out_channels; ++o)
            for (std::size_t h = 0; h < x.height; ++h)
                for (std::size_t w = 0; w < x.width; ++w)
                {
                    ad::Accumulator acc(b.tape());
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t j = 0; j < K; ++j)
                        {
                            const std::ptrdiff_t src = std::ptrdiff_t(w + j) - std::ptrdiff_t(pad);
                            if (src < 0 || src >= std::ptrdiff_t(x.width))
                                continue;
                            acc.product(W[(o * C + c) * K + j], x(c, h, std::size_t(src)));
                        }
                    acc.term(B[o], 1.0);
                    y(o, h, w) = acc.finish();
                }
        return y;
    }

    inline FeatureMap relu(const FeatureMap &x)
    {
        FeatureMap y(x.channels, x.height, x.width);
        for (std::size_t i = 0; i < x.v.size(); ++i)
            y.v[i] = ad::relu(x.v[i]);
        return y;
    }

    inline FeatureMap add(const FeatureMap &a, const FeatureMap &b)
    {
        require(a.shape() == b.shape(), ErrorCategory::invalid_argument, "feature map shapes differ");
        FeatureMap y(a.channels, a.height, a.width);
        for (std::size_t i = 0; i < a.v.size(); ++i)
            y.v[i] = a.v[i] + b.v[i];
        return y;
    }

    // 2x2 windows, trailing odd rows and columns dropped
    inline FeatureMap max_pool2(const FeatureMap &x)
    {
        require(x.height >= 2 && x.width >= 2, ErrorCategory::invalid_argument,
                "pooling needs spatial sizes of at least 2, got " + std::to_string(x.height) + "x" + std::to_string(x.width));
        FeatureMap y(x.channels, x.height / 2, x.width / 2);
        for (std::size_t c = 0; c < y.channels; ++c)
            for (std::size_t h = 0; h < y.height; ++h)
                for (std::size_t w = 0; w < y.width; ++w)
                    y(c, h, w) = ad::max(ad::max(x(c, 2 * h, 2 * w), x(c, 2 * h, 2 * w + 1)),
                                         ad::max(x(c, 2 * h + 1, 2 * w), x(c, 2 * h + 1, 2 * w + 1)));
        return y;
    }

    // Statistics per channel over the batch and both spatial axes
    inline std::vector<FeatureMap> batch_norm(Binding &b, const std::vector<FeatureMap> &batch, const Normalization &norm)
    {
        require(!batch.empty(), ErrorCategory::invalid_argument, "empty batch");
        const std::size_t C = batch[0].channels;
        require(norm.gamma.size() == C && norm.beta.size() == C, ErrorCategory::invalid_argument,
                "normalization width does not match the channels");
        for (const auto &x : batch)
            require(x.shape() == batch[0].shape(), ErrorCategory::invalid_argument, "batch members differ in shape");
        const auto g = b(norm.gamma);
        const auto be = b(norm.beta);
        const std::size_t per = batch[0].height * batch[0].width;
        const double inv_n = 1.0 / double(per * batch.size());

        std::vector<FeatureMap> out;
        for (const auto &x : batch)
            out.emplace_back(x.channels, x.height, x.width);
        std::vector<Var> members;
        members.reserve(per * batch.size());
        for (std::size_t c = 0; c < C; ++c)
        {
            members.clear();
            for (const auto &x : batch)
                members.insert(members.end(), x.v.begin() + std::ptrdiff_t(c * per), x.v.begin() + std::ptrdiff_t((c + 1) * per));
            const Var mean = ad::sum(members) * inv_n;
            std::vector<Var> d(members.size());
            ad::Accumulator var(b.tape());
            for (std::size_t i = 0; i < members.size(); ++i)
            {
                d[i] = members[i] - mean;
                var.product(d[i], d[i], inv_n);
            }
            const Var inv = 1.0 / ad::sqrt(var.finish() + norm.eps);
            const Var scale = g[c] * inv;
            for (std::size_t s = 0; s < batch.size(); ++s)
                for (std::size_t i = 0; i < per; ++i)
                    out[s].v[c * per + i] = d[s * per + i] * scale + be[c];
        }
        return out;
    }

    // Conv(ReLU(Conv(x))) + x
    inline FeatureMap residual_block(Binding &b, const FeatureMap &x, const ConvLayer &first, const ConvLayer &second)
    {
        return add(conv1d(b, relu(conv1d(b, x, first)), second), x);
    }

    // Conv -> BN -> ReLU -> residual -> Conv -> 2x2 max pool, applied to a whole batch
    inline std::vector<FeatureMap> encoder_block(Binding &b, const std::vector<FeatureMap> &batch, const EncoderBlock &block)
    {
        std::vector<FeatureMap> pre;
        for (const auto &x : batch)
        {
            require(x.height >= 2 && x.width >= 2, ErrorCategory::invalid_argument,
                    "encoder input is too small to pool: " + std::to_string(x.height) + "x" + std::to_string(x.width));
            pre.push_back(conv1d(b, x, block.entry));
        }
        const auto normed = batch_norm(b, pre, block.norm);
        std::vector<FeatureMap> out;
        for (const auto &x : normed)
            out.push_back(max_pool2(conv1d(b, residual_block(b, relu(x), block.inner_first, block.inner_second), block.exit)));
        return out;
    }

    inline std::array<std::size_t, 3> encoder_output_shape(std::array<std::size_t, 3> in, std::size_t out_channels)
    {
        require(in[1] >= 2 && in[2] >= 2, ErrorCategory::invalid_argument, "encoder input is too small to pool");
        return {out_channels, in[1] / 2, in[2] / 2};
    }

    // ---- attention ----

    struct AttentionOutput
    {
        VarMatrix values;
        VarMatrix weights; // rows sum to one
    };

    inline AttentionOutput scaled_dot_attention(const VarMatrix &Q, const VarMatrix &K, const VarMatrix &V)
    {
        require(Q.cols == K.cols && K.rows == V.rows && Q.cols > 0, ErrorCategory::invalid_argument,
                "attention operands have incompatible shapes");
        ad::Tape &t = *Q.v[0].tape;
        const double scale = 1.0 / std::sqrt(double(Q.cols));
        VarMatrix S(Q.rows, K.rows);
        for (std::size_t i = 0; i < Q.rows; ++i)
            for (std::size_t j = 0; j < K.rows; ++j)
            {
                ad::Accumulator acc(t);
                for (std::size_t c = 0; c < Q.cols; ++c)
                    acc.product(Q(i, c), K(j, c), scale);
                S(i, j) = acc.finish();
            }
        AttentionOutput out{VarMatrix(Q.rows, V.cols), softmax_rows(S)};
        for (std::size_t i = 0; i < Q.rows; ++i)
            for (std::size_t c = 0; c < V.cols; ++c)
            {
                ad::Accumulator acc(t);
                for (std::size_t j = 0; j < V.rows; ++j)
                    acc.product(out.weights(i, j), V(j, c));
                out.values(i, c) = acc.finish();
            }
        return out;
    }

    // Query from the input latent, keys and values from a linear image of it
    inline AttentionOutput cross_attention(Binding &b, const VarMatrix &x, const CrossAttention &ca)
    {
        const VarMatrix y = dense(b, x, ca.latent);
        return scaled_dot_attention(dense(b, x, ca.query), dense(b, y, ca.key), dense(b, y, ca.value));
    }

    inline AttentionOutput self_attention(Binding &b, const VarMatrix &x, const AttentionHead &head)
    {
        return scaled_dot_attention(dense(b, x, head.query), dense(b, x, head.key), dense(b, x, head.value));
    }

    // Per-user expansions stacked along the token axis, J parallel heads, output projection and a
    // mean over the user copies of each token
    inline VarMatrix multi_user_attention(Binding &b, const VarMatrix &x, const MultiUserAttention &msa,
                                          std::vector<VarMatrix> *weights = nullptr)
    {
        const std::size_t K = msa.num_users(), J = msa.head_count(), T = x.rows;
        require(K >= 1 && J >= 1, ErrorCategory::invalid_argument, "attention needs at least one user and one head");
        VarMatrix stacked(K * T, x.cols);
        for (std::size_t k = 0; k < K; ++k)
        {
            const VarMatrix e = dense(b, x, msa.expansions[k]);
            require(e.cols == x.cols, ErrorCategory::invalid_argument, "user expansion must keep the feature width");
            std::copy(e.v.begin(), e.v.end(), stacked.v.begin() + std::ptrdiff_t(k * T * x.cols));
        }
        std::vector<VarMatrix> heads;
        std::size_t width = 0;
        for (const auto &h : msa.heads)
        {
            auto a = self_attention(b, stacked, h);
            if (weights)
                weights->push_back(a.weights);
            width += a.values.cols;
            heads.push_back(std::move(a.values));
        }
        VarMatrix cat(K * T, width);
        for (std::size_t r = 0; r < K * T; ++r)
        {
            std::size_t c0 = 0;
            for (const auto &h : heads)
            {
                for (std::size_t c = 0; c < h.cols; ++c)
                    cat(r, c0 + c) = h(r, c);
                c0 += h.cols;
            }
        }
        const VarMatrix projected = dense(b, cat, msa.output);
        if (K == 1)
            return projected;
        VarMatrix pooled(T, projected.cols);
        std::vector<Var> copies(K);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t c = 0; c < projected.cols; ++c)
            {
                for (std::size_t k = 0; k < K; ++k)
                    copies[k] = projected(k * T + t, c);
                pooled(t, c) = ad::sum(copies) * (1.0 / double(K));
            }
        return pooled;
    }

    inline VarMatrix ffn(Binding &b, const VarMatrix &x, const FeedForward &f)
    {
        return dense(b, gelu(dense(b, x, f.expand)), f.contract);
    }

    // x <- MSA(LN(x)) + x ; x <- FFN(x) + x
    inline VarMatrix transformer_layer(Binding &b, const VarMatrix &x, const TransformerLayer &layer,
                                       std::vector<VarMatrix> *weights = nullptr)
    {
        const VarMatrix a = add(multi_user_attention(b, layer_norm(b, x, layer.norm), layer.attention, weights), x);
        return add(ffn(b, a, layer.ffn), a);
    }

    // Query from the feature-wise concatenation of all latents; each latent attends with its own keys and values
    inline std::vector<VarMatrix> mca(Binding &b, const std::vector<VarMatrix> &latents, const MultiFeatureAttention &m,
                                      std::vector<VarMatrix> *weights = nullptr)
    {
        require(!latents.empty() && latents.size() == m.keys.size() && latents.size() == m.values.size(),
                ErrorCategory::invalid_argument, "latent count does not match the attention block");
        const std::size_t T = latents[0].rows;
        std::size_t width = 0;
        for (const auto &l : latents)
        {
            require(l.rows == T, ErrorCategory::invalid_argument, "latents must share the token count");
            width += l.cols;
        }
        VarMatrix cat(T, width);
        for (std::size_t r = 0; r < T; ++r)
        {
            std::size_t c0 = 0;
            for (const auto &l : latents)
            {
                for (std::size_t c = 0; c < l.cols; ++c)
                    cat(r, c0 + c) = l(r, c);
                c0 += l.cols;
            }
        }
        const VarMatrix Q = dense(b, cat, m.query);
        std::vector<VarMatrix> out;
        for (std::size_t i = 0; i < latents.size(); ++i)
        {
            auto a = scaled_dot_attention(Q, dense(b, latents[i], m.keys[i]), dense(b, latents[i], m.values[i]));
            require(a.values.cols == latents[i].cols, ErrorCategory::invalid_argument, "value projection must keep the width");
            if (weights)
                weights->push_back(a.weights);
            out.push_back(std::move(a.values));
        }
        return out;
    }

    // ---- positional code ----

    struct PositionalCode
    {
        std::size_t positions = 0, dim = 0;
        double base = 1000.0;
        std::vector<double> values; // (p - 1, dim)

        double at(std::size_t p, std::size_t j) const { return values[(p - 1) * dim + j]; }
    };

    // Rows p = 1..P; (p, 2i) = sin(p / base^(2i/D)), (p, 2i+1) = cos(p / base^(2i/D))
    inline PositionalCode positional_code(std::size_t P, std::size_t D, double base = 1000.0)
    {
        require(D > 0 && D % 2 == 0, ErrorCategory::invalid_argument, "positional code dimension must be even, got " + std::to_string(D));
        require(base > 1.0, ErrorCategory::invalid_argument, "positional code base must exceed 1");
        PositionalCode pc{P, D, base, std::vector<double>(P * D)};
        for (std::size_t p = 1; p <= P; ++p)
            for (std::size_t i = 0; 2 * i < D; ++i)
            {
                const double arg = double(p) / std::pow(base, double(2 * i) / double(D));
                pc.values[(p - 1) * D + 2 * i] = std::sin(arg);
                pc.values[(p - 1) * D + 2 * i + 1] = std::cos(arg);
            }
        return pc;
    }

    inline VarMatrix add_positional_code(const VarMatrix &x, const PositionalCode &pc)
    {
        require(x.rows == pc.positions && x.cols == pc.dim, ErrorCategory::invalid_argument, "positional code shape mismatch");
        VarMatrix y(x.rows, x.cols);
        for (std::size_t i = 0; i < x.v.size(); ++i)
            y.v[i] = x.v[i] + pc.values[i];
        return y;
    }
}
