// INT4 inference reference: quantize, pack two codes per byte, integer GEMM,
// dequantize. Codes i in [0, 15] stand for (2i - 15) / 15 * scale.
#pragma once

#include "quest/hadamard.hpp"
#include "quest/quantizer.hpp"

#include <chrono>
#include <cstdint>
#include <ostream>

namespace quest {

/// Largest inner extent per group for which int32 accumulation of
/// (2a - 15)(2b - 15) terms cannot overflow: 225 * 2^23 < 2^31.
inline constexpr std::size_t kMaxGroupK = std::size_t{1} << 23;
static_assert(225ull * kMaxGroupK < (1ull << 31));

struct PackedMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> payload;  // low nibble = even column
    std::vector<double> scales;         // rows * (cols / group_size), row-major
    std::size_t group_size = 0;

    std::size_t groups_per_row() const { return cols / group_size; }
};

inline PackedMatrix pack(std::span<const std::uint8_t> codes, std::size_t rows, std::size_t cols,
                         std::vector<double> scales = {}, std::size_t group_size = 0) {
    if (cols % 2 != 0) throw std::invalid_argument("pack: column count " + std::to_string(cols) + " is odd");
    if (codes.size() != rows * cols)
        throw std::invalid_argument("pack: " + std::to_string(codes.size()) + " codes for a " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + " matrix");
    if (group_size == 0) group_size = cols;
    if (cols % group_size != 0) throw std::invalid_argument("pack: group size must divide the column count");
    if (scales.empty()) scales.assign(rows * (cols / group_size), 1.0);
    if (scales.size() != rows * (cols / group_size)) throw std::invalid_argument("pack: wrong number of group scales");
    PackedMatrix p{rows, cols, std::vector<std::uint8_t>(rows * cols / 2), std::move(scales), group_size};
    for (std::size_t k = 0; k < codes.size(); k += 2) {
        if (codes[k] > 15 || codes[k + 1] > 15)
            throw std::out_of_range("pack: code " + std::to_string(std::max(codes[k], codes[k + 1])) + " at index " +
                                    std::to_string(codes[k] > 15 ? k : k + 1) + " is outside [0, 15]");
        p.payload[k / 2] = static_cast<std::uint8_t>(codes[k] | (codes[k + 1] << 4));
    }
    return p;
}

/// Packs the codes and group scales of a 4-bit uniform projection.
template <class T>
PackedMatrix pack(const ProjectionResult<T>& q) {
    if (q.format != Format::int_uniform || q.bits != 4)
        throw std::invalid_argument(std::string("pack: needs a 4-bit uniform projection, got ") + format_name(q.format) + " with " +
                                    std::to_string(q.bits) + " bits");
    return pack(q.codes, q.values.rows(), q.values.cols(), q.scales, q.group_size);
}

inline std::vector<std::uint8_t> unpack(const PackedMatrix& p) {
    std::vector<std::uint8_t> codes(p.rows * p.cols);
    for (std::size_t k = 0; k < p.payload.size(); ++k) {
        codes[2 * k] = p.payload[k] & 0x0F;
        codes[2 * k + 1] = p.payload[k] >> 4;
    }
    return codes;
}

namespace detail {

inline std::vector<std::int16_t> centered(const PackedMatrix& p) {
    std::vector<std::int16_t> v(p.rows * p.cols);
    for (std::size_t k = 0; k < p.payload.size(); ++k) {
        v[2 * k] = static_cast<std::int16_t>(2 * (p.payload[k] & 0x0F) - 15);
        v[2 * k + 1] = static_cast<std::int16_t>(2 * (p.payload[k] >> 4) - 15);
    }
    return v;
}

inline std::int32_t dot_i16(const std::int16_t* a, const std::int16_t* b, std::size_t n) {
    std::int32_t acc = 0;
    for (std::size_t k = 0; k < n; ++k) acc += static_cast<std::int32_t>(a[k]) * static_cast<std::int32_t>(b[k]);
    return acc;
}

}  // namespace detail

/// a (M x K) times b (N x K) transposed: out[m][n] = sum over groups of
/// scale_a * scale_b / 225 * (int32 sum of centered code products).
inline Tensor<double> gemm_dequant(const PackedMatrix& a, const PackedMatrix& b) {
    if (a.cols != b.cols)
        throw std::invalid_argument("gemm_dequant: inner dims differ (" + std::to_string(a.cols) + " vs " + std::to_string(b.cols) + ")");
    if (a.group_size != b.group_size)
        throw std::invalid_argument("gemm_dequant: group sizes differ (" + std::to_string(a.group_size) + " vs " +
                                    std::to_string(b.group_size) + ")");
    const std::size_t g = a.group_size;
    if (g > kMaxGroupK) throw std::overflow_error("gemm_dequant: group of " + std::to_string(g) + " exceeds the int32 bound 2^23");
    const std::size_t groups = a.groups_per_row();
    const auto ca = detail::centered(a);
    const auto cb = detail::centered(b);
    Tensor<double> out({a.rows, b.rows});
    for (std::size_t m = 0; m < a.rows; ++m) {
        const std::int16_t* ra = ca.data() + m * a.cols;
        for (std::size_t n = 0; n < b.rows; ++n) {
            const std::int16_t* rb = cb.data() + n * b.cols;
            double acc = 0.0;
            for (std::size_t gi = 0; gi < groups; ++gi) {
                const std::int32_t s = detail::dot_i16(ra + gi * g, rb + gi * g, g);
                acc += static_cast<double>(s) * (a.scales[m * groups + gi] * b.scales[n * groups + gi] / 225.0);
            }
            out.at(m, n) = acc;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Microbenchmark.

struct LayerShape {
    std::string name;
    std::size_t out_features = 0, in_features = 0;
};

/// Q, K, V, O, gate, up and down projections of a Llama-style block.
inline std::vector<LayerShape> layer_shapes(std::size_t hidden, std::size_t intermediate) {
    return {{"q", hidden, hidden},          {"k", hidden, hidden},      {"v", hidden, hidden},
            {"o", hidden, hidden},          {"gate", intermediate, hidden}, {"up", intermediate, hidden},
            {"down", hidden, intermediate}};
}

inline std::vector<LayerShape> layer_shapes_800m() { return layer_shapes(2048, 5632); }

struct BenchRow {
    std::string shape;
    double dense_ms = 0.0, quant_pack_ms = 0.0, ht_ms = 0.0, int_gemm_ms = 0.0;
    double speedup() const { return dense_ms / (quant_pack_ms + ht_ms + int_gemm_ms); }
};

struct BenchOptions {
    std::size_t tokens = 64;
    std::size_t repeats = 5;
    std::uint64_t seed = 0;
};

namespace detail {

template <class F>
double median_ms(std::size_t k, F&& f) {
    std::vector<double> t;
    for (std::size_t i = 0; i < k; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(t.begin(), t.end());
    return t.size() % 2 ? t[t.size() / 2] : 0.5 * (t[t.size() / 2 - 1] + t[t.size() / 2]);
}

}  // namespace detail

/// Median-of-k single-thread timings: float x * w^T against HT + quantize/pack of
/// the activations + packed integer GEMM with prepacked weights.
inline std::vector<BenchRow> bench(const std::vector<LayerShape>& shapes, const BenchOptions& opt = {}) {
    if (opt.repeats == 0 || opt.tokens == 0) throw std::invalid_argument("bench: repeats and tokens must be positive");
    Rng rng(opt.seed);
    const auto cfg = QuantConfig::int_uniform(4, true);
    std::vector<BenchRow> rows;
    for (const auto& s : shapes) {
        const auto x = sample_normal<float>(rng, {opt.tokens, s.in_features});
        const auto w = sample_normal<float>(rng, {s.out_features, s.in_features});
        const HadamardPlan plan(s.in_features);
        const PackedMatrix pw = pack(project(ht(w, plan, 1), cfg));

        BenchRow r;
        r.shape = s.name + ":" + std::to_string(opt.tokens) + "x" + std::to_string(s.in_features) + "x" + std::to_string(s.out_features);
        volatile float sink = 0;
        r.dense_ms = detail::median_ms(opt.repeats, [&] { sink = matmul_nt(x, w)[0]; });
        Tensor<float> xh;
        r.ht_ms = detail::median_ms(opt.repeats, [&] { xh = ht(x, plan, 1); });
        PackedMatrix px;
        r.quant_pack_ms = detail::median_ms(opt.repeats, [&] { px = pack(project(xh, cfg)); });
        volatile double dsink = 0;
        r.int_gemm_ms = detail::median_ms(opt.repeats, [&] { dsink = gemm_dequant(px, pw)[0]; });
        (void)sink;
        (void)dsink;
        rows.push_back(r);
    }
    return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "shape,dense_ms,quant_pack_ms,ht_ms,int_gemm_ms,speedup\n";
    for (const auto& r : rows)
        os << r.shape << ',' << r.dense_ms << ',' << r.quant_pack_ms << ',' << r.ht_ms << ',' << r.int_gemm_ms << ',' << r.speedup()
           << '\n';
}

}  // namespace quest
