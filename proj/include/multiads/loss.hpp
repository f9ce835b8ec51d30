#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "multiads/adapter.hpp"
#include "multiads/upsample.hpp"

namespace multiads {

struct LossConfig {
    double gamma = 2.0;     // focal focusing exponent
    double dice_eps = 1.0;  // dice smoothing
    std::vector<double> stage_weights;  // empty means 1 for every stage
    UpsampleMode upsample = UpsampleMode::bilinear;
    /// Compute the loss at grid resolution against nearest-downsampled ground
    /// truth instead of up-sampling the similarity maps.
    bool downsample_gt = false;
    bool normalize_input = false;

    void validate() const {
        if (!std::isfinite(gamma) || gamma < 0.0) throw ConfigError("gamma must be finite and >= 0");
        if (!(dice_eps > 0.0) || !std::isfinite(dice_eps)) throw ConfigError("dice_eps must be > 0");
        for (double w : stage_weights)
            if (!std::isfinite(w) || w < 0.0) throw ConfigError("stage weights must be finite and >= 0");
    }

    [[nodiscard]] double weight(std::size_t stage) const {
        if (stage_weights.empty()) return 1.0;
        if (stage >= stage_weights.size()) throw ConfigError("missing loss weight for stage " + std::to_string(stage));
        return stage_weights[stage];
    }
};

struct FocalResult {
    double value = 0.0;
    ProbStack grad;  // d value / d probs
};

/// Mean over pixels of -(1 - p_y)^γ log p_y.
inline FocalResult focal_loss(const ProbStack& probs, const LabelMap& target, double gamma) {
    if (probs.dim1() != target.rows() || probs.dim2() != target.cols())
        throw ShapeMismatch("focal loss: probability and label maps differ in size");
    const std::size_t states = probs.dim0();
    const std::size_t H = probs.dim1();
    const std::size_t W = probs.dim2();
    const double inv_n = 1.0 / static_cast<double>(H * W);
    constexpr double kFloor = 1e-12;

    FocalResult r{0.0, ProbStack(states, H, W)};
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            double sum = 0.0;
            for (std::size_t j = 0; j < states; ++j) sum += probs(j, y, x);
            if (std::abs(sum - 1.0) > 1e-4)
                throw NonNormalizedProbs("pixel (" + std::to_string(y) + "," + std::to_string(x) + ") sums to " +
                                         std::to_string(sum));
            const int label = target(y, x);
            if (label < 0 || static_cast<std::size_t>(label) >= states)
                throw LabelOutOfRange("label " + std::to_string(label) + " at (" + std::to_string(y) + "," +
                                      std::to_string(x) + ") with " + std::to_string(states) + " states");
            const double p = std::max(probs(static_cast<std::size_t>(label), y, x), kFloor);
            const double q = std::max(0.0, 1.0 - p);
            const double logp = std::log(p);
            const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
            r.value -= mod * logp;
            double d = -mod / p;
            if (gamma != 0.0 && q > 0.0) d += gamma * std::pow(q, gamma - 1.0) * logp;
            r.grad(static_cast<std::size_t>(label), y, x) = d * inv_n;
        }
    }
    r.value *= inv_n;
    return r;
}

struct DiceResult {
    double value = 0.0;
    ScoreMap grad;  // d value / d pred
};

/// 1 - (2 Σ pred·target + eps) / (Σ pred + Σ target + eps).
inline DiceResult dice_loss(const ScoreMap& pred, const BinaryMask& target, double eps) {
    if (pred.shape() != target.shape()) throw ShapeMismatch("dice loss: prediction and mask differ in size");
    constexpr double kSlack = 1e-9;
    double inter = 0.0;
    double sum_p = 0.0;
    double sum_t = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred.data()[i];
        if (!(p >= -kSlack && p <= 1.0 + kSlack))
            throw OutOfRangePrediction("prediction " + std::to_string(p) + " outside [0,1]");
        const double t = target.data()[i] ? 1.0 : 0.0;
        inter += p * t;
        sum_p += p;
        sum_t += t;
    }
    const double num = 2.0 * inter + eps;
    const double den = sum_p + sum_t + eps;
    DiceResult r{1.0 - num / den, ScoreMap(pred.rows(), pred.cols())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double t = target.data()[i] ? 1.0 : 0.0;
        r.grad.data()[i] = -(2.0 * t * den - num) / (den * den);
    }
    return r;
}

/// Accumulated gradient with the same shapes as the adapter stages.
struct AdapterGradient {
    std::vector<StageAdapter> stages;

    static AdapterGradient zeros_like(const AdapterParams& p) {
        AdapterGradient g;
        for (const auto& s : p.stages) {
            g.stages.push_back({Tensor2<double>(s.out_width(), s.in_width()), std::vector<double>(s.bias.size(), 0.0)});
        }
        return g;
    }

    void add_scaled(const AdapterGradient& other, double scale) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            auto dst = stages[i].weight.values();
            auto src = other.stages[i].weight.values();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * src[k];
            for (std::size_t k = 0; k < stages[i].bias.size(); ++k) stages[i].bias[k] += scale * other.stages[i].bias[k];
        }
    }
};

struct CombinedLoss {
    double value = 0.0;
    AdapterGradient grad;
};

namespace detail {

struct StageTargets {
    const LabelMap* multi;
    const BinaryMask* binary;
    LabelMap multi_small;
    BinaryMask binary_small;
};

/// Loss of one stage map against full-resolution ground truth, with the
/// gradient w.r.t. the (K+1)×h×w map when `grad_out` is non-null.
inline double stage_loss(const ProbStack& sim, const LabelMap& gt_multi, const BinaryMask& gt_binary,
                         const LossConfig& cfg, ProbStack* grad_out) {
    const std::size_t h = sim.dim1();
    const std::size_t w = sim.dim2();
    auto terms = [&](const ProbStack& up, const LabelMap& multi, const BinaryMask& binary, ProbStack& grad_up) {
        auto focal = focal_loss(up, multi, cfg.gamma);
        ScoreMap pred(up.dim1(), up.dim2());
        for (std::size_t y = 0; y < pred.rows(); ++y)
            for (std::size_t x = 0; x < pred.cols(); ++x) pred(y, x) = 1.0 - up(0, y, x);
        auto dice = dice_loss(pred, binary, cfg.dice_eps);
        grad_up = std::move(focal.grad);
        for (std::size_t y = 0; y < pred.rows(); ++y)
            for (std::size_t x = 0; x < pred.cols(); ++x) grad_up(0, y, x) -= dice.grad(y, x);
        return focal.value + dice.value;
    };

    ProbStack grad_up;
    double value = 0.0;
    if (cfg.downsample_gt) {
        const auto multi = resample_nearest(gt_multi, h, w);
        const auto binary = resample_nearest(gt_binary, h, w);
        value = terms(sim, multi, binary, grad_up);
        if (grad_out) *grad_out = std::move(grad_up);
    } else {
        const Upsampler up(h, w, gt_multi.rows(), gt_multi.cols(), cfg.upsample);
        value = terms(up.apply(sim), gt_multi, gt_binary, grad_up);
        if (grad_out) *grad_out = up.adjoint(grad_up);
    }
    return value;
}

}  // namespace detail

inline void check_ground_truth(const LabelMap& gt_multi, const BinaryMask& gt_binary) {
    if (gt_multi.shape() != gt_binary.shape()) throw ShapeMismatch("multi-defect map and binary mask differ in size");
    if (gt_multi.empty()) throw ShapeMismatch("empty ground truth");
}

/// Σ_i weight_i · [focal(UP(S_i), M') + dice(1 - UP(S_i)[0], M)] on a
/// precomputed stack, without gradients.
inline double combined_loss_value(const SimilarityMapStack& stack, const LabelMap& gt_multi, const BinaryMask& gt_binary,
                                  const LossConfig& cfg) {
    cfg.validate();
    check_ground_truth(gt_multi, gt_binary);
    double total = 0.0;
    for (std::size_t i = 0; i < stack.maps.size(); ++i) {
        const double weight = cfg.weight(i);
        if (weight == 0.0) continue;
        total += weight * detail::stage_loss(stack.maps[i], gt_multi, gt_binary, cfg, nullptr);
    }
    return total;
}

/// Combined objective for one image and its analytic gradient w.r.t. every
/// W_i and b_i. Back-propagates through up-sampling, the per-pixel softmax,
/// the L2 normalization and the linear projection.
inline CombinedLoss combined_loss(const AdapterParams& params, const ImageEmbeddings& emb,
                                  const StateTextEmbeddings& text, const LabelMap& gt_multi,
                                  const BinaryMask& gt_binary, const LossConfig& cfg) {
    cfg.validate();
    check_ground_truth(gt_multi, gt_binary);
    if (emb.stages.size() != params.stages.size()) throw ShapeMismatch("embedding and adapter stage counts differ");

    CombinedLoss out{0.0, AdapterGradient::zeros_like(params)};
    const std::size_t states = text.state_count();
    const std::size_t nz = params.joint_width();
    std::vector<double> g_cos(states);
    std::vector<double> g_z(nz);
    std::vector<double> g_u(nz);
    std::vector<double> e;

    for (std::size_t i = 0; i < params.stages.size(); ++i) {
        const double weight = cfg.weight(i);
        if (weight == 0.0) continue;
        const auto& stage = emb.stages[i];
        const auto proj = project_with_norms(params, stage, i, cfg.normalize_input);
        const auto sim = similarity_map(proj.unit, text, params.tau);
        ProbStack g_sim;
        out.value += weight * detail::stage_loss(sim, gt_multi, gt_binary, cfg, &g_sim);

        auto& gw = out.grad.stages[i].weight;
        auto& gb = out.grad.stages[i].bias;
        const std::size_t n_in = stage.dim2();
        e.resize(n_in);
        for (std::size_t y = 0; y < stage.dim0(); ++y) {
            for (std::size_t x = 0; x < stage.dim1(); ++x) {
                // softmax backward: dl_j = p_j (g_j - Σ_k p_k g_k), cos = τ·l
                double mean_g = 0.0;
                for (std::size_t j = 0; j < states; ++j) mean_g += sim(j, y, x) * g_sim(j, y, x);
                for (std::size_t j = 0; j < states; ++j)
                    g_cos[j] = weight * sim(j, y, x) * (g_sim(j, y, x) - mean_g) / params.tau;

                std::fill(g_z.begin(), g_z.end(), 0.0);
                for (std::size_t j = 0; j < states; ++j) {
                    const auto t = text.row(j);
                    for (std::size_t k = 0; k < nz; ++k) g_z[k] += g_cos[j] * t[k];
                }

                // normalization backward: du = (g - z (z·g)) / ‖u‖
                const auto z = proj.unit.fiber(y, x);
                const double zg = dot(z, g_z);
                const double inv_n = 1.0 / proj.norm(y, x);
                for (std::size_t k = 0; k < nz; ++k) g_u[k] = (g_z[k] - z[k] * zg) * inv_n;

                const auto src = stage.fiber(y, x);
                std::copy(src.begin(), src.end(), e.begin());
                if (cfg.normalize_input) e = normalize(std::span<const double>(e));
                for (std::size_t r = 0; r < nz; ++r) {
                    const double g = g_u[r];
                    if (g == 0.0) continue;
                    auto row = gw.row(r);
                    for (std::size_t c = 0; c < n_in; ++c) row[c] += g * e[c];
                    gb[r] += g;
                }
            }
        }
    }
    return out;
}

}  // namespace multiads
