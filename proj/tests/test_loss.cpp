#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace multiads;

namespace {

struct Instance {
    AdapterParams params;
    ImageEmbeddings emb;
    StateTextEmbeddings text;
    LabelMap multi;
    BinaryMask binary;
};

Instance make_instance(std::uint64_t seed, std::size_t H = 6) {
    SplitMix64 rng(seed);
    const auto layout = fixture::layout(2, 3, 4, 5);
    Instance in;
    in.params = AdapterParams::initialize(layout, seed);
    for (auto& s : in.params.stages)
        for (auto& b : s.bias) b = 0.1 * rng.normal();
    in.params.tau = 0.5;
    in.emb = fixture::random_embeddings(layout, rng);
    in.text = fixture::random_text(3, 5, rng);
    std::tie(in.multi, in.binary) = fixture::random_ground_truth(H, H, 2, rng);
    return in;
}

}  // namespace

TEST(FocalLoss, PerfectPredictionIsZero) {
    ProbStack p(2, 2, 2);
    LabelMap y(2, 2, 1);
    for (std::size_t k = 0; k < 4; ++k) p.values()[4 + k] = 1.0;
    EXPECT_EQ(focal_loss(p, y, 2.0).value, 0.0);
}

TEST(FocalLoss, GammaZeroIsCrossEntropy) {
    SplitMix64 rng(3);
    const auto p = fixture::random_probs(4, 3, 3, rng);
    LabelMap y(3, 3);
    for (auto& v : y.values()) v = static_cast<int>(rng.below(4));
    double ce = 0.0;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) ce -= std::log(p(static_cast<std::size_t>(y(r, c)), r, c));
    EXPECT_NEAR(focal_loss(p, y, 0.0).value, ce / 9.0, 1e-9);
}

TEST(FocalLoss, HandEvaluatedHalf) {
    ProbStack p(2, 1, 1, 0.5);
    LabelMap y(1, 1, 0);
    EXPECT_NEAR(focal_loss(p, y, 2.0).value, 0.25 * std::log(2.0), 1e-12);
    EXPECT_NEAR(focal_loss(p, y, 2.0).value, 0.173286, 1e-6);
}

TEST(FocalLoss, Errors) {
    ProbStack p(2, 1, 1, 0.5);
    EXPECT_THROW(focal_loss(p, LabelMap(1, 1, 2), 2.0), LabelOutOfRange);
    p(0, 0, 0) = 0.9;
    EXPECT_THROW(focal_loss(p, LabelMap(1, 1, 0), 2.0), NonNormalizedProbs);
}

TEST(FocalLoss, NonNegativeAndMonotone) {
    double prev = std::numeric_limits<double>::infinity();
    for (double q = 0.05; q <= 1.0; q += 0.05) {
        ProbStack p(2, 1, 1);
        p(0, 0, 0) = q;
        p(1, 0, 0) = 1.0 - q;
        const double v = focal_loss(p, LabelMap(1, 1, 0), 2.0).value;
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, prev);
        prev = v;
    }
}

TEST(DiceLoss, PerfectOverlapNearZero) {
    ScoreMap pred(3, 3);
    BinaryMask t(3, 3);
    for (std::size_t k = 0; k < 9; k += 2) {
        pred.data()[k] = 1.0;
        t.data()[k] = 1;
    }
    EXPECT_LT(dice_loss(pred, t, 1.0).value, 1e-6);
}

TEST(DiceLoss, AllZeroPredAllOneTarget) {
    const std::size_t n = 12;
    EXPECT_NEAR(dice_loss(ScoreMap(3, 4), BinaryMask(3, 4, 1), 1.0).value, 1.0 - 1.0 / (n + 1.0), 1e-15);
}

TEST(DiceLoss, EmptyMaskEmptyPredIsZero) { EXPECT_EQ(dice_loss(ScoreMap(2, 2), BinaryMask(2, 2), 1.0).value, 0.0); }

TEST(DiceLoss, OutOfRangeRejected) {
    ScoreMap pred(1, 1, 1.5);
    EXPECT_THROW(dice_loss(pred, BinaryMask(1, 1), 1.0), OutOfRangePrediction);
}

TEST(DiceLoss, PermutationSymmetric) {
    SplitMix64 rng(2);
    ScoreMap pred(1, 6);
    BinaryMask t(1, 6);
    for (std::size_t k = 0; k < 6; ++k) {
        pred.data()[k] = rng.uniform();
        t.data()[k] = static_cast<unsigned char>(rng.below(2));
    }
    ScoreMap pp(1, 6);
    BinaryMask tp(1, 6);
    const int perm[6] = {3, 5, 0, 1, 4, 2};
    for (int k = 0; k < 6; ++k) {
        pp.data()[k] = pred.data()[perm[k]];
        tp.data()[k] = t.data()[perm[k]];
    }
    const double v = dice_loss(pred, t, 1.0).value;
    EXPECT_NEAR(v, dice_loss(pp, tp, 1.0).value, 1e-15);
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto in = make_instance(seed);
        LossConfig cfg;
        EXPECT_LT(oracle::gradient_check(in.params, in.emb, in.text, in.multi, in.binary, cfg), 1e-3) << seed;
    }
}

TEST(CombinedLoss, GradientCheckVariants) {
    const auto in = make_instance(42);
    LossConfig nearest;
    nearest.upsample = UpsampleMode::nearest;
    EXPECT_LT(oracle::gradient_check(in.params, in.emb, in.text, in.multi, in.binary, nearest), 1e-3);
    LossConfig down;
    down.downsample_gt = true;
    EXPECT_LT(oracle::gradient_check(in.params, in.emb, in.text, in.multi, in.binary, down), 1e-3);
    LossConfig pre;
    pre.normalize_input = true;
    pre.gamma = 0.5;
    pre.stage_weights = {0.3, 2.0};
    EXPECT_LT(oracle::gradient_check(in.params, in.emb, in.text, in.multi, in.binary, pre), 1e-3);
}

TEST(CombinedLoss, ZeroWeightsGiveZero) {
    const auto in = make_instance(7);
    LossConfig cfg;
    cfg.stage_weights = {0.0, 0.0};
    const auto r = combined_loss(in.params, in.emb, in.text, in.multi, in.binary, cfg);
    EXPECT_EQ(r.value, 0.0);
    for (const auto& s : r.grad.stages) {
        for (double g : s.weight.values()) EXPECT_EQ(g, 0.0);
        for (double g : s.bias) EXPECT_EQ(g, 0.0);
    }
}

TEST(CombinedLoss, DuplicatedStageDoublesContribution) {
    const auto in = make_instance(9);
    const auto stack = similarity_stack(in.params, in.emb, in.text);
    SimilarityMapStack one{{stack.maps[0]}, stack.state_ids};
    SimilarityMapStack two{{stack.maps[0], stack.maps[0]}, stack.state_ids};
    const LossConfig cfg;
    EXPECT_NEAR(combined_loss_value(two, in.multi, in.binary, cfg), 2.0 * combined_loss_value(one, in.multi, in.binary, cfg),
                1e-12);
}

TEST(CombinedLoss, ValueMatchesStackEvaluation) {
    const auto in = make_instance(11);
    const LossConfig cfg;
    EXPECT_NEAR(combined_loss(in.params, in.emb, in.text, in.multi, in.binary, cfg).value,
                combined_loss_value(similarity_stack(in.params, in.emb, in.text), in.multi, in.binary, cfg), 1e-12);
}

TEST(LossConfig, Validation) {
    LossConfig c;
    c.gamma = -1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.dice_eps = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}
