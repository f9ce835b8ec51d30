#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "multiads/adapter.hpp"
#include "multiads/loss.hpp"
#include "multiads/rng.hpp"

namespace multiads {

enum class Optimizer { adam, sgd };

struct TrainConfig {
    double learning_rate = 0.001;
    std::size_t batch_size = 8;
    std::size_t epochs = 5;
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    std::size_t stage_count = 4;  // m
    bool exclude_combined = true;
    double tau = kDefaultTau;
    LossConfig loss;
    std::size_t jobs = 1;

    void validate() const {
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be > 0");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (stage_count < 1) throw ConfigError("stage count m must be >= 1");
        if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0");
        loss.validate();
    }
};

/// One training image reduced to its frozen embeddings and ground truth.
struct TrainSample {
    ImageEmbeddings embeddings;
    LabelMap gt_multi;     // M′_x
    BinaryMask gt_binary;  // M_x
    bool combined = false;
    std::size_t text_index = 0;  // which text table (product) scores this image
};

struct TrainLog {
    std::vector<double> step_loss;   // mean loss of each batch
    std::vector<double> epoch_loss;  // mean of the step losses of each epoch
    std::size_t samples_used = 0;
    std::size_t samples_skipped = 0;
};

struct TrainResult {
    AdapterParams params;
    TrainLog log;
};

namespace detail {

/// Adam or SGD over all adapter weights and biases.
class OptimizerState {
  public:
    OptimizerState(const AdapterParams& p, const TrainConfig& cfg) : cfg_(cfg) {
        if (cfg.optimizer == Optimizer::adam) {
            m_ = AdapterGradient::zeros_like(p);
            v_ = AdapterGradient::zeros_like(p);
        }
    }

    void step(AdapterParams& p, const AdapterGradient& g) {
        ++t_;
        for (std::size_t i = 0; i < p.stages.size(); ++i) {
            update(p.stages[i].weight.values(), g.stages[i].weight.values(), i, true);
            update(p.stages[i].bias, g.stages[i].bias, i, false);
        }
    }

  private:
    void update(std::span<double> w, std::span<const double> g, std::size_t stage, bool weight) {
        const double lr = cfg_.learning_rate;
        if (cfg_.optimizer == Optimizer::sgd) {
            for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * g[k];
            return;
        }
        std::span<double> m = weight ? m_.stages[stage].weight.values() : std::span<double>(m_.stages[stage].bias);
        std::span<double> v = weight ? v_.stages[stage].weight.values() : std::span<double>(v_.stages[stage].bias);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.adam_eps);
        }
    }

    TrainConfig cfg_;
    AdapterGradient m_;
    AdapterGradient v_;
    std::size_t t_ = 0;
};

/// Evaluates `fn(k)` for k in [0, n) on up to `jobs` threads. Results land in
/// caller-owned slots, so reduction order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t k = 0; k < n; ++k) fn(k);
        return;
    }
    std::vector<std::exception_ptr> errors(jobs);
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < jobs; ++t) {
            pool.emplace_back([&, t] {
                try {
                    for (std::size_t k = t; k < n; k += jobs) fn(k);
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Fits the adapters with the combined loss on frozen embeddings. The
/// samples and text embeddings are only read.
inline TrainResult train_adapters(const std::vector<TrainSample>& samples, const EmbeddingLayout& layout,
                                  const std::vector<StateTextEmbeddings>& texts, const TrainConfig& cfg) {
    cfg.validate();
    layout.validate();
    if (layout.stage_count() != cfg.stage_count)
        throw DimensionMismatch("backend has " + std::to_string(layout.stage_count()) + " stages, config m = " +
                                std::to_string(cfg.stage_count));
    if (texts.empty()) throw ConfigError("no text embeddings");
    for (const auto& t : texts)
        if (t.width() != layout.joint_width) throw DimensionMismatch("text width differs from backend N_z");

    TrainResult result;
    std::vector<std::size_t> usable;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        if (cfg.exclude_combined && samples[k].combined) {
            ++result.log.samples_skipped;
            continue;
        }
        samples[k].embeddings.check(layout);
        if (samples[k].text_index >= texts.size()) throw ConfigError("sample refers to a missing text table");
        usable.push_back(k);
    }
    if (usable.empty()) throw EmptyDataset("no training samples after filtering");
    result.log.samples_used = usable.size();

    result.params = AdapterParams::initialize(layout, cfg.seed, cfg.tau);
    auto& params = result.params;
    detail::OptimizerState opt(params, cfg);

    std::vector<CombinedLoss> slots;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        SplitMix64 rng(mix_seed(cfg.seed, 0x5eed0000 + epoch));
        auto order = usable;
        shuffle(order, rng);
        double epoch_sum = 0.0;
        std::size_t epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            slots.assign(n, {});
            detail::parallel_for(n, cfg.jobs, [&](std::size_t k) {
                const auto& s = samples[order[start + k]];
                slots[k] = combined_loss(params, s.embeddings, texts[s.text_index], s.gt_multi, s.gt_binary, cfg.loss);
            });
            auto grad = AdapterGradient::zeros_like(params);
            double loss = 0.0;
            const double inv_n = 1.0 / static_cast<double>(n);
            for (const auto& c : slots) {
                loss += c.value * inv_n;
                grad.add_scaled(c.grad, inv_n);
            }
            if (!std::isfinite(loss)) throw NumericError("training loss became non-finite");
            opt.step(params, grad);
            result.log.step_loss.push_back(loss);
            epoch_sum += loss;
            ++epoch_steps;
        }
        result.log.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
    }
    params.validate();
    return result;
}

inline TrainResult train_adapters(const std::vector<TrainSample>& samples, const EmbeddingLayout& layout,
                                  const StateTextEmbeddings& text, const TrainConfig& cfg) {
    return train_adapters(samples, layout, std::vector<StateTextEmbeddings>{text}, cfg);
}

}  // namespace multiads
