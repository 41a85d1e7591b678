#include "oracles.hpp"
#include "quest/pack_gemm.hpp"
#include "quest/qlinear.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace quest;

TEST(Pack, LowNibbleFirst) {
    const std::vector<std::uint8_t> codes = {1, 2, 0, 0};
    auto p = pack(codes, 1, 4);
    ASSERT_EQ(p.payload.size(), 2u);
    EXPECT_EQ(p.payload[0], 0x21);
    EXPECT_EQ(p.payload[1], 0x00);
}

TEST(Pack, RoundTrip) {
    Rng rng(1);
    std::vector<std::uint8_t> codes(6 * 10);
    for (auto& c : codes) c = static_cast<std::uint8_t>(rng.uniform_int(16));
    EXPECT_EQ(unpack(pack(codes, 6, 10)), codes);
}

TEST(Pack, Errors) {
    std::vector<std::uint8_t> codes = {1, 16};
    EXPECT_THROW(pack(codes, 1, 2), std::out_of_range);
    EXPECT_THROW(pack(std::vector<std::uint8_t>(3, 0), 1, 3), std::invalid_argument);
    EXPECT_THROW(pack(std::vector<std::uint8_t>(4, 0), 1, 2), std::invalid_argument);
    EXPECT_THROW(pack(std::vector<std::uint8_t>(4, 0), 1, 4, {}, 3), std::invalid_argument);
    Rng rng(2);
    EXPECT_THROW(pack(project(sample_normal<double>(rng, {2, 8}), QuantConfig::fp4())), std::invalid_argument);
}

TEST(Gemm, SingleCodeProducts) {
    // Code 15 is +1 and code 0 is -1 on a unit scale; one column pair is
    // padded with opposite codes that cancel.
    auto a = pack(std::vector<std::uint8_t>{15, 15}, 1, 2);
    auto b = pack(std::vector<std::uint8_t>{15, 0}, 1, 2);
    EXPECT_EQ(gemm_dequant(a, b).at(0, 0), 0.0);
    auto c = pack(std::vector<std::uint8_t>{15, 15}, 1, 2);
    EXPECT_EQ(gemm_dequant(a, c).at(0, 0), 2.0);
    auto d = pack(std::vector<std::uint8_t>{0, 0}, 1, 2);
    EXPECT_EQ(gemm_dequant(a, d).at(0, 0), -2.0);
    auto half = pack(std::vector<std::uint8_t>{15, 15}, 1, 2, {0.5});
    EXPECT_EQ(gemm_dequant(half, d).at(0, 0), -1.0);
}

TEST(Gemm, Errors) {
    auto a = pack(std::vector<std::uint8_t>(4, 0), 1, 4);
    auto b = pack(std::vector<std::uint8_t>(2, 0), 1, 2);
    EXPECT_THROW(gemm_dequant(a, b), std::invalid_argument);
    auto g = pack(std::vector<std::uint8_t>(4, 0), 1, 4, {1.0, 1.0}, 2);
    EXPECT_THROW(gemm_dequant(a, g), std::invalid_argument);
}

TEST(Gemm, MatchesQuantizedFloatPath) {
    Rng rng(3);
    const auto x = sample_normal<double>(rng, {32, 64});
    const auto w = sample_normal<double>(rng, {48, 64});
    const auto ctx = qlinear_forward(x, w, QuantConfig::int_uniform(4, true));
    const auto ref = oracle::naive_matmul(ctx.x_hat_h(), transpose(ctx.w_hat_h()));
    const auto got = gemm_dequant(pack(ctx.x_proj), pack(ctx.w_proj));
    ASSERT_EQ(got.shape(), ref.shape());
    double max_ref = 0, max_diff = 0;
    for (std::size_t k = 0; k < got.size(); ++k) {
        max_ref = std::max(max_ref, std::abs(ref[k]));
        max_diff = std::max(max_diff, std::abs(got[k] - ref[k]));
    }
    EXPECT_LT(max_diff / max_ref, 1e-6);
    // The float path uses the same projection, so the product equals y too.
    for (std::size_t k = 0; k < got.size(); ++k) EXPECT_NEAR(got[k], ctx.y[k], 1e-9 * max_ref);
}

TEST(Gemm, GroupScalesApplyPerGroup) {
    std::vector<std::uint8_t> ones(8, 15);
    auto a = pack(ones, 1, 8, {1.0, 2.0}, 4);
    auto b = pack(ones, 1, 8, {3.0, 0.5}, 4);
    EXPECT_DOUBLE_EQ(gemm_dequant(a, b).at(0, 0), 4 * 3.0 + 4 * 1.0);
}

TEST(Bench, ShapesAndColumns) {
    const auto shapes = layer_shapes_800m();
    ASSERT_EQ(shapes.size(), 7u);
    EXPECT_EQ(shapes[4].name, "gate");
    EXPECT_EQ(shapes[4].out_features, 5632u);
    EXPECT_EQ(shapes[6].in_features, 5632u);
    BenchOptions o;
    o.tokens = 4;
    o.repeats = 1;
    const auto rows = bench(layer_shapes(64, 128), o);
    ASSERT_EQ(rows.size(), 7u);
    for (const auto& r : rows) {
        EXPECT_GE(r.dense_ms, 0.0);
        EXPECT_GE(r.quant_pack_ms, 0.0);
        EXPECT_GE(r.ht_ms, 0.0);
        EXPECT_GE(r.int_gemm_ms, 0.0);
    }
    EXPECT_EQ(rows[0].shape, "q:4x64x64");
    std::ostringstream os;
    write_bench_csv(os, rows);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "shape,dense_ms,quant_pack_ms,ht_ms,int_gemm_ms,speedup");
    o.repeats = 0;
    EXPECT_THROW(bench(shapes, o), std::invalid_argument);
}
