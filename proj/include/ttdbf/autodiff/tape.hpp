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

// Reverse-mode differentiation over real scalars.
//
// A Tape records every intermediate value together with the local partial derivative towards each
// of its parents. Nodes are appended in evaluation order, so the recording is already a topological
// order and the backward sweep is a single reverse pass. N-ary nodes (sums, dot products) keep the
// recording compact for the long reductions that dominate beamforming losses.

#include "ttdbf/core/error.hpp"

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ttdbf::ad
{
    enum class Op : std::uint8_t
    {
        leaf,
        add,
        sub,
        mul,
        div,
        neg,
        exp,
        log,
        sqrt,
        sin,
        cos,
        tanh,
        relu,
        softplus,
        gelu,
        square,
        max,
        sum,
        dot,
        affine
    };

    inline std::string_view op_name(Op op)
    {
        constexpr std::string_view names[] = {"leaf", "add", "sub", "mul", "div", "neg", "exp",
                                              "log", "sqrt", "sin", "cos", "tanh", "relu", "softplus",
                                              "gelu", "square", "max", "sum", "dot", "affine"};
        return names[static_cast<std::size_t>(op)];
    }

    class Tape;

    struct Var
    {
        Tape *tape = nullptr;
        std::uint32_t id = 0;

        double value() const;
    };

    class Tape
    {
    public:
        Tape() = default;
        Tape(const Tape &) = delete;
        Tape &operator=(const Tape &) = delete;

        void reserve(std::size_t nodes, std::size_t edges)
        {
            value_.reserve(nodes);
            op_.reserve(nodes);
            edge_end_.reserve(nodes);
            parent_.reserve(edges);
            partial_.reserve(edges);
        }

        void clear()
        {
            value_.clear();
            op_.clear();
            edge_end_.clear();
            parent_.clear();
            partial_.clear();
            first_nonfinite_.reset();
        }

        std::size_t size() const noexcept { return value_.size(); }
        std::size_t edge_count() const noexcept { return parent_.size(); }
        double value(std::uint32_t id) const noexcept { return value_[id]; }
        Op op(std::uint32_t id) const noexcept { return op_[id]; }

        Var leaf(double v) { return finish(Op::leaf, v); }

        std::vector<Var> leaves(std::span<const double> values)
        {
            std::vector<Var> out;
            out.reserve(values.size());
            for (double v : values)
                out.push_back(leaf(v));
            return out;
        }

        // Low-level node construction: push edges, then finish
        void edge(Var parent, double partial)
        {
            assert(parent.tape == this);
            parent_.push_back(parent.id);
            partial_.push_back(partial);
        }

        Var finish(Op op, double value)
        {
            const auto id = static_cast<std::uint32_t>(value_.size());
            value_.push_back(value);
            op_.push_back(op);
            edge_end_.push_back(static_cast<std::uint32_t>(parent_.size()));
            if (!first_nonfinite_ && !std::isfinite(value))
                first_nonfinite_ = id;
            return {this, id};
        }

        // First node whose forward value was NaN or Inf
        std::optional<std::uint32_t> first_nonfinite() const { return first_nonfinite_; }

        // Adjoints d(out)/d(node) for every node recorded up to out
        std::vector<double> backward(Var out) const
        {
            assert(out.tape == this);
            std::vector<double> adj(out.id + 1, 0.0);
            adj[out.id] = 1.0;
            for (std::uint32_t i = out.id + 1; i-- > 0;)
            {
                const double a = adj[i];
                if (a == 0.0)
                    continue;
                const std::uint32_t e0 = i == 0 ? 0 : edge_end_[i - 1];
                const std::uint32_t e1 = edge_end_[i];
                for (std::uint32_t e = e0; e < e1; ++e)
                    adj[parent_[e]] += a * partial_[e];
            }
            return adj;
        }

        std::string describe(std::uint32_t id) const
        {
            return "node " + std::to_string(id) + " (" + std::string(op_name(op_[id])) + ") = " + std::to_string(value_[id]);
        }

    private:
        std::vector<double> value_;
        std::vector<Op> op_;
        std::vector<std::uint32_t> edge_end_;
        std::vector<std::uint32_t> parent_;
        std::vector<double> partial_;
        std::optional<std::uint32_t> first_nonfinite_;
    };

    inline double Var::value() const { return tape->value(id); }

    // ---- binary arithmetic ----

    inline Var operator+(Var a, Var b)
    {
        Tape &t = *a.tape;
        t.edge(a, 1.0);
        t.edge(b, 1.0);
        return t.finish(Op::add, a.value() + b.value());
    }
    inline Var operator-(Var a, Var b)
    {
        Tape &t = *a.tape;
        t.edge(a, 1.0);
        t.edge(b, -1.0);
        return t.finish(Op::sub, a.value() - b.value());
    }
    inline Var operator*(Var a, Var b)
    {
        Tape &t = *a.tape;
        t.edge(a, b.value());
        t.edge(b, a.value());
        return t.finish(Op::mul, a.value() * b.value());
    }
    inline Var operator/(Var a, Var b)
    {
        Tape &t = *a.tape;
        const double inv = 1.0 / b.value();
        const double q = a.value() * inv;
        t.edge(a, inv);
        t.edge(b, -q * inv);
        return t.finish(Op::div, q);
    }
    inline Var operator-(Var a)
    {
        Tape &t = *a.tape;
        t.edge(a, -1.0);
        return t.finish(Op::neg, -a.value());
    }

    // ---- mixed with constants ----

    inline Var operator+(Var a, double c)
    {
        Tape &t = *a.tape;
        t.edge(a, 1.0);
        return t.finish(Op::affine, a.value() + c);
    }
    inline Var operator+(double c, Var a) { return a + c; }
    inline Var operator-(Var a, double c) { return a + (-c); }
    inline Var operator-(double c, Var a)
    {
        Tape &t = *a.tape;
        t.edge(a, -1.0);
        return t.finish(Op::affine, c - a.value());
    }
    inline Var operator*(Var a, double c)
    {
        Tape &t = *a.tape;
        t.edge(a, c);
        return t.finish(Op::affine, a.value() * c);
    }
    inline Var operator*(double c, Var a) { return a * c; }
    inline Var operator/(Var a, double c) { return a * (1.0 / c); }
    inline Var operator/(double c, Var a)
    {
        Tape &t = *a.tape;
        const double inv = 1.0 / a.value();
        t.edge(a, -c * inv * inv);
        return t.finish(Op::div, c * inv);
    }

    // ---- elementary functions ----

    inline Var exp(Var a)
    {
        const double e = std::exp(a.value());
        a.tape->edge(a, e);
        return a.tape->finish(Op::exp, e);
    }
    inline Var log(Var a)
    {
        a.tape->edge(a, 1.0 / a.value());
        return a.tape->finish(Op::log, std::log(a.value()));
    }
    inline Var sqrt(Var a)
    {
        const double s = std::sqrt(a.value());
        a.tape->edge(a, 0.5 / s);
        return a.tape->finish(Op::sqrt, s);
    }
    inline Var sin(Var a)
    {
        a.tape->edge(a, std::cos(a.value()));
        return a.tape->finish(Op::sin, std::sin(a.value()));
    }
    inline Var cos(Var a)
    {
        a.tape->edge(a, -std::sin(a.value()));
        return a.tape->finish(Op::cos, std::cos(a.value()));
    }
    inline Var tanh(Var a)
    {
        const double th = std::tanh(a.value());
        a.tape->edge(a, 1.0 - th * th);
        return a.tape->finish(Op::tanh, th);
    }
    inline Var square(Var a)
    {
        a.tape->edge(a, 2.0 * a.value());
        return a.tape->finish(Op::square, a.value() * a.value());
    }
    inline Var relu(Var a)
    {
        const bool on = a.value() > 0.0;
        a.tape->edge(a, on ? 1.0 : 0.0);
        return a.tape->finish(Op::relu, on ? a.value() : 0.0);
    }
    inline Var max(Var a, Var b)
    {
        const bool first = a.value() >= b.value();
        a.tape->edge(a, first ? 1.0 : 0.0);
        a.tape->edge(b, first ? 0.0 : 1.0);
        return a.tape->finish(Op::max, first ? a.value() : b.value());
    }

    // ln(1 + e^x) without overflow
    inline double softplus(double x)
    {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    inline double sigmoid(double x)
    {
        if (x >= 0.0)
            return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }
    // Inverse of softplus for y > 0
    inline double softplus_inverse(double y)
    {
        return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
    }
    inline Var softplus(Var a)
    {
        a.tape->edge(a, sigmoid(a.value()));
        return a.tape->finish(Op::softplus, softplus(a.value()));
    }

    // Exact GELU, x * Phi(x)
    inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
    inline Var gelu(Var a)
    {
        const double x = a.value();
        const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        a.tape->edge(a, cdf + x * pdf);
        return a.tape->finish(Op::gelu, x * cdf);
    }

    // ---- n-ary reductions ----

    inline Var sum(std::span<const Var> xs, double offset = 0.0)
    {
        assert(!xs.empty());
        Tape &t = *xs[0].tape;
        double s = offset;
        for (Var x : xs)
        {
            t.edge(x, 1.0);
            s += x.value();
        }
        return t.finish(Op::sum, s);
    }

    // offset + sum_i c_i x_i
    inline Var affine(std::span<const double> c, std::span<const Var> xs, double offset = 0.0)
    {
        assert(c.size() == xs.size() && !xs.empty());
        Tape &t = *xs[0].tape;
        double s = offset;
        for (std::size_t i = 0; i < xs.size(); ++i)
        {
            t.edge(xs[i], c[i]);
            s += c[i] * xs[i].value();
        }
        return t.finish(Op::affine, s);
    }

    // sum_i a_i b_i
    inline Var dot(std::span<const Var> a, std::span<const Var> b)
    {
        assert(a.size() == b.size() && !a.empty());
        Tape &t = *a[0].tape;
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i)
        {
            t.edge(a[i], b[i].value());
            t.edge(b[i], a[i].value());
            s += a[i].value() * b[i].value();
        }
        return t.finish(Op::dot, s);
    }

    // Sum of products and scaled terms recorded as a single node. Edges are buffered locally,
    // so several accumulators may be filled in interleaved order.
    class Accumulator
    {
    public:
        explicit Accumulator(Tape &t) : t_(t) {}

        void product(Var a, Var b, double sign = 1.0)
        {
            edges_.push_back({a, sign * b.value()});
            edges_.push_back({b, sign * a.value()});
            value_ += sign * a.value() * b.value();
        }
        void term(Var x, double c)
        {
            edges_.push_back({x, c});
            value_ += c * x.value();
        }
        void constant(double c) { value_ += c; }

        Var finish()
        {
            for (const auto &[v, d] : edges_)
                t_.edge(v, d);
            edges_.clear();
            return t_.finish(Op::dot, value_);
        }

    private:
        Tape &t_;
        std::vector<std::pair<Var, double>> edges_;
        double value_ = 0.0;
    };
}
