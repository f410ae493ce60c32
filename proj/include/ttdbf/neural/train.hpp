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

#include "ttdbf/neural/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <vector>

namespace ttdbf::nn
{
    struct TrainConfig
    {
        std::size_t epochs = 50;
        std::size_t batch_size = 8;
        double learning_rate = 1e-2;
        double clip_norm = 0.0;      // global gradient norm cap, <= 0 disables
        bool cosine_decay = true;    // learning rate follows half a cosine down to zero over all steps
        std::uint64_t seed = 0;
        LossWeights weights{};

        void validate() const
        {
            require(epochs >= 1 && batch_size >= 1, ErrorCategory::configuration, "epochs and batch size must be positive");
            require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCategory::configuration, "learning rate must be positive");
        }
    };

    struct EpochStats
    {
        double mean_loss = 0.0;
        double mean_spectral_efficiency = 0.0;
        LossBreakdown mean_terms;
        bool permutations_valid = true;
        double max_attention_row_error = 0.0; // max |row sum - 1| over all softmax maps
        double max_gradient_norm = 0.0;       // before clipping
    };

    struct TrainResult
    {
        BeamformingNetwork model;
        std::vector<EpochStats> epochs;
        double modulus_residual = 0.0; // after training, over the dataset
    };

    // Standard Adam moments over a flat parameter list
    class Adam
    {
    public:
        explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
            : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

        void set_learning_rate(double lr) { lr_ = lr; }

        void step(std::vector<std::vector<double> *> &params, const std::vector<std::vector<double>> &grads)
        {
            if (m_.empty())
                for (const auto *p : params)
                {
                    m_.emplace_back(p->size(), 0.0);
                    v_.emplace_back(p->size(), 0.0);
                }
            ++t_;
            const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
            for (std::size_t j = 0; j < params.size(); ++j)
                for (std::size_t i = 0; i < params[j]->size(); ++i)
                {
                    const double g = grads[j][i];
                    m_[j][i] = b1_ * m_[j][i] + (1.0 - b1_) * g;
                    v_[j][i] = b2_ * v_[j][i] + (1.0 - b2_) * g * g;
                    (*params[j])[i] -= lr_ * (m_[j][i] / c1) / (std::sqrt(v_[j][i] / c2) + eps_);
                }
        }

    private:
        double lr_, b1_, b2_, eps_;
        std::size_t t_ = 0;
        std::vector<std::vector<double>> m_, v_;
    };

    inline bool is_valid_permutation(const std::vector<std::size_t> &p)
    {
        std::vector<bool> seen(p.size(), false);
        for (const auto v : p)
        {
            if (v >= p.size() || seen[v])
                return false;
            seen[v] = true;
        }
        return true;
    }

    inline double attention_row_error(const VarMatrix &w)
    {
        double worst = 0.0;
        for (std::size_t r = 0; r < w.rows; ++r)
        {
            double s = 0.0;
            for (std::size_t c = 0; c < w.cols; ++c)
                s += w(r, c).value();
            worst = std::max(worst, std::abs(s - 1.0));
        }
        return worst;
    }

    inline void check_tiny(const SystemParams &p)
    {
        require(p.num_antennas <= 32 && p.num_subcarriers <= 4 && p.num_users <= 2 && p.num_ttds_per_chain <= 4,
                ErrorCategory::configuration, "the training loop is limited to N <= 32, M <= 4, K <= 2, L <= 4");
    }

    // Unsupervised end-to-end training on the composite loss; returns per-epoch statistics
    inline TrainResult mini_train(const SystemParams &params, const std::vector<ChannelInstance> &dataset, const ModelConfig &model_cfg,
                                  const TrainConfig &cfg)
    {
        check_tiny(params);
        cfg.validate();
        require(!dataset.empty(), ErrorCategory::invalid_argument, "empty training set");
        TrainResult result{BeamformingNetwork::create(params, model_cfg, derive_seed(cfg.seed, 0)), {}, 0.0};
        auto &net = result.model;

        std::vector<std::vector<double> *> flat;
        net.visit([&flat](const std::string &, std::vector<double> &v) { flat.push_back(&v); });
        Adam adam(cfg.learning_rate);
        std::vector<LossContext> contexts;
        contexts.reserve(dataset.size());
        for (const auto &H : dataset)
            contexts.emplace_back(H, params);

        std::vector<std::size_t> order(dataset.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(cfg.seed, 1));
        ad::Tape tape;

        const std::size_t steps_per_epoch = (dataset.size() + cfg.batch_size - 1) / cfg.batch_size;
        const double total_steps = double(cfg.epochs * steps_per_epoch);
        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch)
        {
            std::shuffle(order.begin(), order.end(), rng);
            EpochStats stats;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size)
            {
                const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                std::vector<const ChannelInstance *> batch;
                for (std::size_t i = start; i < stop; ++i)
                    batch.push_back(&dataset[order[i]]);

                tape.clear();
                Binding b(tape);
                ForwardTrace trace;
                const auto outs = net.forward(b, batch, &trace);
                std::vector<Var> totals;
                for (std::size_t i = 0; i < outs.size(); ++i)
                {
                    const auto loss = record_network_loss(tape, contexts[order[start + i]], outs[i], cfg.weights);
                    totals.push_back(loss.total);
                    stats.mean_loss += loss.values.total;
                    stats.mean_spectral_efficiency -= loss.values.l_eff;
                    stats.mean_terms.l_eff += loss.values.l_eff;
                    stats.mean_terms.l_ps += loss.values.l_ps;
                    stats.mean_terms.l_ttd += loss.values.l_ttd;
                    stats.mean_terms.l_pc += loss.values.l_pc;
                    for (const auto &p : loss.permutations)
                        stats.permutations_valid = stats.permutations_valid && is_valid_permutation(p);
                }
                for (const auto &w : trace.attention)
                    stats.max_attention_row_error = std::max(stats.max_attention_row_error, attention_row_error(w));
                const Var objective = ad::sum(totals) * (1.0 / double(totals.size()));
                if (const auto bad = tape.first_nonfinite())
                    fail(ErrorCategory::numerical, "non-finite value in epoch " + std::to_string(epoch + 1) + ", batch starting at " +
                                                       std::to_string(start) + ": " + tape.describe(*bad));

                const auto adj = tape.backward(objective);
                std::vector<std::vector<double>> grads;
                grads.reserve(flat.size());
                for (const auto *p : flat)
                    grads.push_back(b.gradient(*p, adj));
                for (const auto &g : grads)
                    for (const double v : g)
                        require(std::isfinite(v), ErrorCategory::numerical,
                                "non-finite gradient in epoch " + std::to_string(epoch + 1));
                if (cfg.clip_norm > 0.0)
                {
                    double sq = 0.0;
                    for (const auto &g : grads)
                        for (const double v : g)
                            sq += v * v;
                    const double norm = std::sqrt(sq);
                    stats.max_gradient_norm = std::max(stats.max_gradient_norm, norm);
                    if (norm > cfg.clip_norm)
                        for (auto &g : grads)
                            for (auto &v : g)
                                v *= cfg.clip_norm / norm;
                }
                if (cfg.cosine_decay)
                    adam.set_learning_rate(cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / total_steps)));
                ++step;
                adam.step(flat, grads);
            }
            stats.mean_loss /= double(dataset.size());
            stats.mean_spectral_efficiency /= double(dataset.size());
            for (double *v : {&stats.mean_terms.l_eff, &stats.mean_terms.l_ps, &stats.mean_terms.l_ttd, &stats.mean_terms.l_pc})
                *v /= double(dataset.size());
            stats.mean_terms.total = stats.mean_loss;
            result.epochs.push_back(stats);
        }

        // final outputs with the trained parameters, same batching
        double sq = 0.0, count = 0.0;
        for (std::size_t start = 0; start < dataset.size(); start += cfg.batch_size)
        {
            tape.clear();
            Binding b(tape);
            std::vector<const ChannelInstance *> batch;
            for (std::size_t i = start; i < std::min(dataset.size(), start + cfg.batch_size); ++i)
                batch.push_back(&dataset[i]);
            const auto outs = net.forward(b, batch);
            const double r = modulus_residual(outs);
            const double n = double(outs.size() * outs[0].phi_re.size());
            sq += r * r * n;
            count += n;
        }
        result.modulus_residual = std::sqrt(sq / count);
        return result;
    }

    inline void write_loss_curve_csv(std::ostream &os, const std::vector<EpochStats> &epochs)
    {
        os << "epoch,mean_loss,mean_se,l_ps,l_ttd,l_pc,permutations_valid\n";
        os.precision(17);
        for (std::size_t e = 0; e < epochs.size(); ++e)
        {
            const auto &t = epochs[e].mean_terms;
            os << e + 1 << ',' << epochs[e].mean_loss << ',' << epochs[e].mean_spectral_efficiency << ',' << t.l_ps << ',' << t.l_ttd
               << ',' << t.l_pc << ',' << (epochs[e].permutations_valid ? 1 : 0) << '\n';
        }
    }
}
