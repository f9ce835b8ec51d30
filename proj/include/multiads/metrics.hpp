#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "multiads/error.hpp"
#include "multiads/infer.hpp"
#include "multiads/tensor.hpp"

namespace multiads {

/// Scores with binary labels (nonzero = positive).
struct ScoredSet {
    std::vector<double> scores;
    std::vector<unsigned char> labels;

    void add(double score, bool positive) {
        scores.push_back(score);
        labels.push_back(positive ? 1 : 0);
    }

    void check() const {
        if (scores.size() != labels.size()) throw ShapeMismatch("scores and labels differ in length");
        if (scores.empty()) throw DegenerateLabels("empty scored set");
    }

    [[nodiscard]] std::size_t positives() const {
        return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto l) { return l != 0; }));
    }
};

namespace detail {

/// Indices sorted by descending score.
inline std::vector<std::size_t> order_desc(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

/// Cumulative (tp, fp) after each group of tied scores, descending.
inline std::vector<std::pair<std::size_t, std::size_t>> tie_groups(const ScoredSet& s) {
    const auto idx = order_desc(s.scores);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        (s.labels[idx[k]] ? tp : fp) += 1;
        if (k + 1 == idx.size() || s.scores[idx[k + 1]] != s.scores[idx[k]]) out.emplace_back(tp, fp);
    }
    return out;
}

}  // namespace detail

/// P(score_pos > score_neg) + ½ P(tie), via mid-ranks.
inline double auroc(const ScoredSet& s) {
    s.check();
    const std::size_t n = s.scores.size();
    const std::size_t pos = s.positives();
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) throw DegenerateLabels("AUROC needs both positive and negative samples");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n;) {
        std::size_t e = k;
        while (e + 1 < n && s.scores[idx[e + 1]] == s.scores[idx[k]]) ++e;
        const double mid = 0.5 * static_cast<double>(k + e) + 1.0;
        for (std::size_t t = k; t <= e; ++t)
            if (s.labels[idx[t]]) rank_sum += mid;
        k = e + 1;
    }
    const double p = static_cast<double>(pos);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

/// Step-wise AP: Σ (R_k - R_{k-1}) P_k over tied-score groups.
inline double average_precision(const ScoredSet& s) {
    s.check();
    const std::size_t pos = s.positives();
    if (pos == 0) throw NoPositives("average precision needs a positive sample");
    double ap = 0.0;
    std::size_t prev_tp = 0;
    for (auto [tp, fp] : detail::tie_groups(s)) {
        if (tp != prev_tp) {
            const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
            ap += precision * static_cast<double>(tp - prev_tp) / static_cast<double>(pos);
        }
        prev_tp = tp;
    }
    return ap;
}

/// Max F1 over thresholds at the distinct scores, predicting score ≥ t.
inline double f1_max(const ScoredSet& s) {
    s.check();
    const std::size_t pos = s.positives();
    if (pos == 0) throw NoPositives("F1 needs a positive sample");
    double best = 0.0;
    for (auto [tp, fp] : detail::tie_groups(s))
        best = std::max(best, 2.0 * static_cast<double>(tp) / static_cast<double>(tp + fp + pos));
    return best;
}

/// 8-connected components of a binary mask; 0 = background, regions 1..n.
inline std::pair<LabelMap, int> connected_regions(const BinaryMask& mask) {
    LabelMap lab(mask.rows(), mask.cols(), 0);
    int next = 0;
    std::vector<std::pair<std::size_t, std::size_t>> stack;
    for (std::size_t y = 0; y < mask.rows(); ++y) {
        for (std::size_t x = 0; x < mask.cols(); ++x) {
            if (!mask(y, x) || lab(y, x)) continue;
            ++next;
            lab(y, x) = next;
            stack.emplace_back(y, x);
            while (!stack.empty()) {
                const auto [cy, cx] = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const auto ny = static_cast<std::ptrdiff_t>(cy) + dy;
                        const auto nx = static_cast<std::ptrdiff_t>(cx) + dx;
                        if (ny < 0 || nx < 0 || ny >= static_cast<std::ptrdiff_t>(mask.rows()) ||
                            nx >= static_cast<std::ptrdiff_t>(mask.cols()))
                            continue;
                        const auto uy = static_cast<std::size_t>(ny);
                        const auto ux = static_cast<std::size_t>(nx);
                        if (mask(uy, ux) && !lab(uy, ux)) {
                            lab(uy, ux) = next;
                            stack.emplace_back(uy, ux);
                        }
                    }
                }
            }
        }
    }
    return {std::move(lab), next};
}

inline constexpr double kDefaultFprLimit = 0.3;
inline constexpr std::size_t kAuproThresholds = 200;

/// Value at quantile q of ascending-sorted data, linear interpolation.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

/// Trapezoid area of a (fpr, pro) curve from 0 to `limit`, divided by
/// `limit`. Points are sorted and padded with (0,0) and (1,1).
inline double pro_curve_area(std::vector<std::pair<double, double>> points, double limit) {
    points.emplace_back(0.0, 0.0);
    points.emplace_back(1.0, 1.0);
    std::sort(points.begin(), points.end());
    double area = 0.0;
    for (std::size_t k = 1; k < points.size(); ++k) {
        const auto [x0, y0] = points[k - 1];
        auto [x1, y1] = points[k];
        if (x0 >= limit) break;
        if (x1 > limit) {
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            x1 = limit;
        }
        area += 0.5 * (x1 - x0) * (y0 + y1);
    }
    return area / limit;
}

/// Area under the per-region overlap curve up to `fpr_limit`, normalized.
/// Thresholds are 200 evenly spaced quantiles of the pooled scores.
inline double aupro(const std::vector<ScoreMap>& maps, const std::vector<BinaryMask>& masks,
                    double fpr_limit = kDefaultFprLimit) {
    if (maps.size() != masks.size()) throw ShapeMismatch("map and mask counts differ");
    if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ConfigError("fpr_limit must lie in (0,1]");
    std::vector<double> negatives;
    std::vector<std::vector<double>> regions;
    std::vector<double> pooled;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (maps[i].shape() != masks[i].shape()) throw ShapeMismatch("anomaly map and mask differ in size");
        const auto [lab, n] = connected_regions(masks[i]);
        const std::size_t base = regions.size();
        regions.resize(base + static_cast<std::size_t>(n));
        for (std::size_t k = 0; k < maps[i].size(); ++k) {
            const double v = maps[i].data()[k];
            pooled.push_back(v);
            if (lab.data()[k] == 0)
                negatives.push_back(v);
            else
                regions[base + static_cast<std::size_t>(lab.data()[k] - 1)].push_back(v);
        }
    }
    if (regions.empty()) throw NoRegions("AUPRO needs at least one anomalous region");
    if (negatives.empty()) throw DegenerateLabels("AUPRO needs normal pixels for the false-positive rate");
    std::sort(pooled.begin(), pooled.end());
    std::sort(negatives.begin(), negatives.end());
    for (auto& r : regions) std::sort(r.begin(), r.end());

    auto fraction_at_least = [](const std::vector<double>& sorted, double t) {
        const auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
        return static_cast<double>(sorted.end() - it) / static_cast<double>(sorted.size());
    };

    std::vector<std::pair<double, double>> points;
    points.reserve(kAuproThresholds);
    for (std::size_t k = 0; k < kAuproThresholds; ++k) {
        const double t =
            sorted_quantile(pooled, static_cast<double>(k) / static_cast<double>(kAuproThresholds - 1));
        double pro = 0.0;
        for (const auto& r : regions) pro += fraction_at_least(r, t);
        points.emplace_back(fraction_at_least(negatives, t), pro / static_cast<double>(regions.size()));
    }
    return pro_curve_area(std::move(points), fpr_limit);
}

struct MtasMetrics {
    double auroc = std::numeric_limits<double>::quiet_NaN();
    double f1 = std::numeric_limits<double>::quiet_NaN();
    double ap = std::numeric_limits<double>::quiet_NaN();
    std::size_t classes_scored = 0;  // classes contributing to the F1 macro
};

/// Macro-averaged one-vs-rest metrics over defect classes 1..K, pooled over
/// all pixels of all images. AUROC and AP use channel j against gt == j; F1
/// uses argmax labels. A class absent from gt and never predicted is skipped;
/// a class predicted but absent from gt scores F1 = 0 and has no AUROC/AP.
inline MtasMetrics mtas_metrics(const std::vector<ProbStack>& probs, const std::vector<LabelMap>& gt) {
    if (probs.size() != gt.size()) throw ShapeMismatch("prediction and ground-truth counts differ");
    if (probs.empty()) throw ShapeMismatch("no images for MTAS metrics");
    const std::size_t states = probs.front().dim0();
    if (states < 2) throw ShapeMismatch("MTAS needs at least one defect class");

    std::vector<LabelMap> pred;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i].dim0() != states) throw ShapeMismatch("images disagree on the state count");
        if (probs[i].dim1() != gt[i].rows() || probs[i].dim2() != gt[i].cols())
            throw ShapeMismatch("prediction and ground truth differ in size");
        for (int v : gt[i].values())
            if (v < 0 || static_cast<std::size_t>(v) >= states)
                throw LabelOutOfRange("ground-truth label " + std::to_string(v));
        pred.push_back(classify_pixels(probs[i]));
    }

    double auroc_sum = 0.0;
    double ap_sum = 0.0;
    double f1_sum = 0.0;
    std::size_t ranked = 0;
    MtasMetrics m;
    for (std::size_t j = 1; j < states; ++j) {
        const int cls = static_cast<int>(j);
        ScoredSet set;
        std::size_t tp = 0;
        std::size_t fp = 0;
        std::size_t fn = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const auto plane = probs[i].values().subspan(j * gt[i].size(), gt[i].size());
            for (std::size_t k = 0; k < gt[i].size(); ++k) {
                const bool is_gt = gt[i].data()[k] == cls;
                const bool is_pred = pred[i].data()[k] == cls;
                set.add(plane[k], is_gt);
                tp += is_gt && is_pred;
                fp += !is_gt && is_pred;
                fn += is_gt && !is_pred;
            }
        }
        const bool in_gt = tp + fn > 0;
        const bool predicted = tp + fp > 0;
        if (!in_gt && !predicted) continue;
        f1_sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        ++m.classes_scored;
        if (in_gt && set.positives() < set.scores.size()) {
            auroc_sum += auroc(set);
            ap_sum += average_precision(set);
            ++ranked;
        }
    }
    if (m.classes_scored > 0) m.f1 = f1_sum / static_cast<double>(m.classes_scored);
    if (ranked > 0) {
        m.auroc = auroc_sum / static_cast<double>(ranked);
        m.ap = ap_sum / static_cast<double>(ranked);
    }
    return m;
}

}  // namespace multiads
