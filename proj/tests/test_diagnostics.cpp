#include "oracles.hpp"
#include "quest/data.hpp"
#include "quest/diagnostics.hpp"
#include "quest/trainer.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace quest;

namespace {
Tensor<double> student_t3(Rng& rng, Shape s) {
    Tensor<double> t(std::move(s));
    for (auto& v : t.vec()) {
        const double z = rng.normal();
        double chi = 0;
        for (int k = 0; k < 3; ++k) {
            const double u = rng.normal();
            chi += u * u;
        }
        v = z / std::sqrt(chi / 3.0);
    }
    return t;
}

double untrusted(const Tensor<double>& x, QuantConfig cfg) {
    const Tensor<double> xh = cfg.hadamard ? ht(x, HadamardPlan(x.cols()), 1) : x;
    return mask_fraction(project(xh, cfg));
}
}  // namespace

TEST(Cosine, Basics) {
    std::vector<double> a = {1, 0, 0}, b = {0, 2, 0}, c = {3, 4, 0};
    EXPECT_EQ(*cosine_similarity<double>(a, b), 0.0);
    EXPECT_EQ(*cosine_similarity<double>(c, c), 1.0);
    EXPECT_FALSE(cosine_similarity<double>(a, std::vector<double>(3, 0.0)).has_value());
}

TEST(Cosine, ScaleInvariant) {
    Rng rng(1);
    auto a = sample_normal<double>(rng, {100}), b = sample_normal<double>(rng, {100});
    const double base = *cosine_similarity<double>(a.span(), b.span());
    const auto a2 = 37.5 * a;
    EXPECT_NEAR(*cosine_similarity<double>(a2.span(), b.span()), base, 1e-6);
    EXPECT_LE(std::abs(base), 1.0 + 1e-6);
}

TEST(Alignment, DisabledQuantizationGivesOne) {
    ModelConfig mc;
    mc.num_blocks = 2;
    mc.hidden_size = 32;
    mc.num_heads = 2;
    mc.max_seq_len = 16;
    Rng rng(2);
    auto m = build_model<float>(mc, rng);
    WindowSampler s(tokens_from_text(synthetic_corpus(1, 4096)), 16, 1);
    auto xi = grad_alignment_all(m, s.next_batch(2), QuantConfig::full_precision());
    ASSERT_EQ(xi.size(), 2u);
    for (auto& v : xi) EXPECT_EQ(*v, 1.0);
    EXPECT_THROW(grad_alignment(m, s.next_batch(2), 2, QuantConfig::full_precision()), std::out_of_range);
}

TEST(Alignment, EstimatorConfigs) {
    auto base = QuantConfig::int_uniform(8);
    EXPECT_TRUE(estimator_config(EstimatorTag::quest, base).hadamard);
    EXPECT_FALSE(estimator_config(EstimatorTag::quest_no_ht, base).hadamard);
    EXPECT_EQ(estimator_config(EstimatorTag::ste, base).estimator, Estimator::ste);
    EXPECT_DOUBLE_EQ(estimator_config(EstimatorTag::quest_no_ht, QuantConfig::int_uniform(1)).outer_trust_scale, 1.25);
}

TEST(Alignment, QuestBeatsSteOnEightBitToyModel) {
    ModelConfig mc;
    mc.num_blocks = 2;
    mc.hidden_size = 64;
    mc.num_heads = 2;
    mc.max_seq_len = 32;
    mc.quant = QuantConfig::int_uniform(8);
    Rng rng(3);
    auto m = build_model<float>(mc, rng);
    auto tokens = tokens_from_text(synthetic_corpus(4, 1 << 16));
    WindowSampler train_s(tokens, 32, 5);
    TrainConfig tc;
    tc.peak_lr = 0.01;
    tc.total_steps = 60;
    tc.batch_tokens = 8 * 32;
    train(m, tc, train_s);

    WindowSampler s(tokens, 32, 6);
    std::vector<std::optional<double>> quest_xi, ste_xi;
    for (int i = 0; i < 32; ++i) {
        auto b = s.next_batch(4);
        for (auto v : grad_alignment_all(m, b, estimator_config(EstimatorTag::quest, mc.quant))) quest_xi.push_back(v);
        for (auto v : grad_alignment_all(m, b, estimator_config(EstimatorTag::ste, mc.quant))) ste_xi.push_back(v);
    }
    const auto q = spread(quest_xi), st = spread(ste_xi);
    EXPECT_GT(q.median, st.median) << "quest " << q.median << " ste " << st.median;
}

TEST(MaskFraction, Examples) {
    EXPECT_EQ(mask_fraction(Mask(10, 1)), 0.0);
    EXPECT_EQ(mask_fraction(Mask{0, 1, 0, 1}), 0.5);
}

TEST(MaskFraction, GaussianEightBitMatchesNormalTail) {
    Rng rng(7);
    auto x = sample_normal<double>(rng, {1, 1 << 20});
    const double a = AlphaTable::standard().alpha(8);
    const double expect = 2.0 * (1.0 - oracle::Phi(a + a / 255.0));
    EXPECT_NEAR(untrusted(x, QuantConfig::int_uniform(8, false)) / expect, 1.0, 0.2);
}

TEST(MaskFraction, HadamardNeutralOnGaussianData) {
    Rng rng(8);
    auto x = sample_normal<double>(rng, {1024, 1024});
    const double with = untrusted(x, QuantConfig::int_uniform(4, true));
    const double without = untrusted(x, QuantConfig::int_uniform(4, false));
    EXPECT_NEAR(with / without, 1.0, 0.2);
}

TEST(MaskFraction, HadamardHalvesHeavyTailMasking) {
    Rng rng(9);
    auto x = student_t3(rng, {1024, 1024});
    const double with = untrusted(x, QuantConfig::int_uniform(8, true));
    const double without = untrusted(x, QuantConfig::int_uniform(8, false));
    EXPECT_LE(with, 0.5 * without) << with << " vs " << without;
}

TEST(Persistence, Examples) {
    Mask a = {0, 1, 0, 1}, b = {1, 0, 1, 0};
    EXPECT_EQ(*mask_persistence(a, a), 1.0);
    EXPECT_EQ(*mask_persistence(a, b), 0.0);
    EXPECT_EQ(*mask_persistence({0, 0, 1, 1}, {0, 1, 1, 1}), 0.5);
    EXPECT_FALSE(mask_persistence(Mask(4, 1), a).has_value());
    EXPECT_THROW(mask_persistence(a, Mask(3, 1)), std::invalid_argument);
}

TEST(Csv, UndefinedIsExplicit) {
    std::ostringstream os;
    write_alignment_csv(os, {{0, EstimatorTag::quest, 0.5, 3}, {1, EstimatorTag::ste, std::nullopt, 3}});
    EXPECT_EQ(os.str(), "block,tag,xi,sample\n0,quest,0.5,3\n1,ste,undefined,3\n");
    std::ostringstream ms;
    write_masks_csv(ms, {{10, "blocks.0.q", 0.25, std::nullopt}});
    EXPECT_EQ(ms.str(), "step,layer,fraction,persistence\n10,blocks.0.q,0.25,undefined\n");
}

TEST(Spread, MedianAndIqrSkipUndefined) {
    auto s = spread({1.0, 2.0, std::nullopt, 3.0, 4.0});
    EXPECT_EQ(s.count, 4u);
    EXPECT_DOUBLE_EQ(s.median, 2.5);
    EXPECT_DOUBLE_EQ(s.iqr, 3.25 - 1.75);
}
