// Quantization grids, the Gaussian MSE-optimal clipping scale, RMS-normalized
// projection and trust masks.
//
// Grids live in normalized coordinates: a tensor group is divided by its RMS,
// clipped to [-alpha, alpha] and rounded. INT grids are mid-rise with 2^b
// levels alpha * (2i - L) / L, L = 2^b - 1, so they contain +-alpha and not 0.
#pragma once

#include "quest/tensor.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>

namespace quest {

enum class Format { none, int_uniform, fp4, int4_sparse_2of4 };
enum class Estimator { trust, ste };

inline const char* format_name(Format f) {
    switch (f) {
        case Format::none: return "none";
        case Format::int_uniform: return "int";
        case Format::fp4: return "fp4";
        case Format::int4_sparse_2of4: return "sparse";
    }
    return "?";
}

inline Format parse_format(const std::string& s) {
    if (s == "none") return Format::none;
    if (s == "int") return Format::int_uniform;
    if (s == "fp4") return Format::fp4;
    if (s == "sparse") return Format::int4_sparse_2of4;
    throw std::invalid_argument("unknown quantization format '" + s + "' (expected none, int, fp4, sparse)");
}

/// Default outer trust scale: 1.30 for 1-bit with HT, 1.25 for 1-bit without, 1 otherwise.
inline double default_outer_trust_scale(int bits, bool hadamard) {
    if (bits == 1) return hadamard ? 1.30 : 1.25;
    return 1.0;
}

struct QuantConfig {
    Format format = Format::none;
    int bits = 8;
    std::size_t group_size = 0;  // 0: one group per row along the matmul dimension
    bool hadamard = true;
    double outer_trust_scale = 1.0;
    bool weight_only = false;
    Estimator estimator = Estimator::trust;

    static QuantConfig full_precision() {
        QuantConfig c;
        c.hadamard = false;
        return c;
    }

    static QuantConfig int_uniform(int bits, bool hadamard = true) {
        QuantConfig c;
        c.format = Format::int_uniform;
        c.bits = bits;
        c.hadamard = hadamard;
        c.outer_trust_scale = default_outer_trust_scale(bits, hadamard);
        c.validate();
        return c;
    }

    static QuantConfig fp4(bool hadamard = true) {
        QuantConfig c;
        c.format = Format::fp4;
        c.bits = 4;
        c.hadamard = hadamard;
        return c;
    }

    static QuantConfig sparse_int4(bool hadamard = true) {
        QuantConfig c;
        c.format = Format::int4_sparse_2of4;
        c.bits = 4;
        c.hadamard = hadamard;
        return c;
    }

    bool quantized() const { return format != Format::none; }

    /// Nominal bits per element, used as the precision tag P (16 for unquantized).
    int precision() const { return quantized() ? bits : 16; }

    void validate() const {
        if (bits < 1 || bits > 8) throw std::invalid_argument("QuantConfig: bits must be in [1, 8], got " + std::to_string(bits));
        if ((format == Format::fp4 || format == Format::int4_sparse_2of4) && bits != 4)
            throw std::invalid_argument("QuantConfig: fp4 and 2:4 formats are 4-bit");
        if (!(outer_trust_scale > 0.0)) throw std::invalid_argument("QuantConfig: outer trust scale must be positive");
    }

    std::size_t group_for(std::size_t cols) const {
        const std::size_t g = group_size ? group_size : cols;
        if (cols % g != 0)
            throw std::invalid_argument("QuantConfig: group size " + std::to_string(g) + " does not divide extent " +
                                        std::to_string(cols));
        return g;
    }
};

inline int int_levels(int bits) { return (1 << bits) - 1; }

// ---------------------------------------------------------------------------
// Scalar rounding.

/// Grid index in [0, 2^b - 1] for x on the mid-rise grid at scale alpha; ties go up.
inline int uniform_index(double x, double alpha, int bits) {
    const int L = int_levels(bits);
    const double c = std::clamp(x, -alpha, alpha);
    const double t = (c / alpha + 1.0) * 0.5 * L;
    return std::clamp(static_cast<int>(std::floor(t + 0.5)), 0, L);
}

/// Grid point in [-1, 1] for index i.
inline double uniform_point(int index, int bits) {
    const int L = int_levels(bits);
    return static_cast<double>(2 * index - L) / static_cast<double>(L);
}

inline double quantize_uniform_scalar(double x, double alpha, int bits) {
    return alpha * uniform_point(uniform_index(x, alpha, bits), bits);
}

inline constexpr std::array<double, 15> kFp4Grid = {-6, -4, -3, -2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2, 3, 4, 6};

inline double fp4_point(int index) { return kFp4Grid[static_cast<std::size_t>(index)] / 6.0; }

/// FP4 grid index for x at scale alpha; exact midpoints go to the even index.
inline int fp4_index(double x, double alpha) {
    const double c = std::clamp(x, -alpha, alpha) / alpha;
    int j = 0;
    while (j < 14) {
        const double mid = 0.5 * (fp4_point(j) + fp4_point(j + 1));
        if (c < mid) break;
        if (c == mid) return (j % 2 == 0) ? j : j + 1;
        ++j;
    }
    return j;
}

inline double round_fp4_scalar(double x, double alpha) { return alpha * fp4_point(fp4_index(x, alpha)); }

template <class T>
Tensor<T> quantize_uniform(const Tensor<T>& x, double alpha, int bits) {
    if (bits < 1 || bits > 8) throw std::invalid_argument("quantize_uniform: bits must be in [1, 8], got " + std::to_string(bits));
    if (!(alpha > 0.0)) throw std::invalid_argument("quantize_uniform: alpha must be positive");
    Tensor<T> out = x;
    for (auto& v : out.vec()) v = static_cast<T>(quantize_uniform_scalar(v, alpha, bits));
    return out;
}

template <class T>
Tensor<T> round_fp4(const Tensor<T>& x, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("round_fp4: alpha must be positive");
    Tensor<T> out = x;
    for (auto& v : out.vec()) v = static_cast<T>(round_fp4_scalar(v, alpha));
    return out;
}

// ---------------------------------------------------------------------------
// MSE-optimal alpha for a standard normal.

enum class Grid { int_uniform, fp4 };

namespace detail {

// Decision boundaries of the rounding map in units of alpha (ascending).
inline std::vector<double> decision_points(Grid grid, int bits) {
    std::vector<double> pts;
    if (grid == Grid::fp4) {
        for (int j = 0; j < 14; ++j) pts.push_back(0.5 * (fp4_point(j) + fp4_point(j + 1)));
    } else {
        const int L = int_levels(bits);
        for (int i = 0; i < L; ++i) pts.push_back(0.5 * (uniform_point(i, bits) + uniform_point(i + 1, bits)));
    }
    return pts;
}

inline double grid_round(Grid grid, double x, double alpha, int bits) {
    return grid == Grid::fp4 ? round_fp4_scalar(x, alpha) : quantize_uniform_scalar(x, alpha, bits);
}

}  // namespace detail

/// E[(xi - q(xi))^2] for xi ~ N(0, 1), by composite Simpson on [-12, 12].
/// The range is split at every decision boundary and at +-alpha so the
/// integrand is smooth on each piece; each piece uses step <= `step`.
inline double gaussian_quantization_mse(Grid grid, double alpha, int bits = 4, double step = 1e-4) {
    constexpr double lo = -12.0, hi = 12.0;
    std::vector<double> cuts = {lo, hi};
    for (double d : detail::decision_points(grid, bits)) cuts.push_back(d * alpha);
    cuts.push_back(-alpha);
    cuts.push_back(alpha);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::remove_if(cuts.begin(), cuts.end(), [&](double c) { return c < lo || c > hi; }), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    double total = 0.0;
    for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
        const double a = cuts[p], b = cuts[p + 1];
        if (b <= a) continue;
        // The rounding value is constant on the open piece; take it at the midpoint.
        const double q = detail::grid_round(grid, 0.5 * (a + b), alpha, bits);
        auto f = [&](double xi) {
            const double e = xi - q;
            return e * e * inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
        };
        std::size_t n = static_cast<std::size_t>(std::ceil((b - a) / step));
        if (n % 2) ++n;
        if (n < 2) n = 2;
        const double h = (b - a) / static_cast<double>(n);
        double s = f(a) + f(b);
        for (std::size_t i = 1; i < n; ++i) s += f(a + h * static_cast<double>(i)) * ((i % 2) ? 4.0 : 2.0);
        total += s * h / 3.0;
    }
    return total;
}

struct AlphaEntry {
    double alpha = 0.0;
    double mse = 0.0;
};

/// Golden-section search for the minimizing alpha on [0.05, 12] to |d alpha| < tol.
inline AlphaEntry solve_alpha_star(Grid grid, int bits = 4, double tol = 1e-5) {
    if (grid == Grid::int_uniform && (bits < 1 || bits > 8))
        throw std::invalid_argument("solve_alpha_star: bits must be in [1, 8]");
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = 0.05, b = 12.0;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = gaussian_quantization_mse(grid, c, bits);
    double fd = gaussian_quantization_mse(grid, d, bits);
    while (b - a > tol) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = gaussian_quantization_mse(grid, c, bits);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = gaussian_quantization_mse(grid, d, bits);
        }
    }
    const double alpha = 0.5 * (a + b);
    return {alpha, gaussian_quantization_mse(grid, alpha, bits)};
}

/// Lazily solved, then read-only cache of alpha*(b) and alpha*_FP4.
class AlphaTable {
public:
    static AlphaTable& standard() {
        static AlphaTable table;
        return table;
    }

    AlphaEntry int_entry(int bits) {
        if (bits < 1 || bits > 8) throw std::invalid_argument("AlphaTable: bits must be in [1, 8]");
        std::lock_guard lock(mutex_);
        auto it = int_.find(bits);
        if (it == int_.end()) it = int_.emplace(bits, solve_alpha_star(Grid::int_uniform, bits)).first;
        return it->second;
    }

    AlphaEntry fp4_entry() {
        std::lock_guard lock(mutex_);
        if (!fp4_) fp4_ = solve_alpha_star(Grid::fp4);
        return *fp4_;
    }

    double alpha(int bits) { return int_entry(bits).alpha; }
    double alpha_fp4() { return fp4_entry().alpha; }

    /// alpha* used by a config: INT-b, FP4, or INT4 for the 2:4 format.
    double alpha_for(const QuantConfig& cfg) {
        switch (cfg.format) {
            case Format::fp4: return alpha_fp4();
            case Format::int_uniform: return alpha(cfg.bits);
            case Format::int4_sparse_2of4: return alpha(4);
            case Format::none: break;
        }
        throw std::invalid_argument("AlphaTable: unquantized config has no alpha");
    }

private:
    std::mutex mutex_;
    std::map<int, AlphaEntry> int_;
    std::optional<AlphaEntry> fp4_;
};

// ---------------------------------------------------------------------------
// Trust thresholds and masks (normalized coordinates).

/// Interior trust threshold T: half an interval, alpha / (2^b - 1); FP4 uses
/// its largest half-interval, alpha * (6 - 4) / (2 * 6).
inline double trust_threshold(const QuantConfig& cfg, double alpha) {
    if (cfg.format == Format::fp4) return alpha / 6.0;
    const int bits = cfg.format == Format::int4_sparse_2of4 ? 4 : cfg.bits;
    return alpha / static_cast<double>(int_levels(bits));
}

/// True iff |x_hat - x| <= T, with T scaled by s outside [-alpha, alpha].
inline bool trusted(double x_norm, double x_hat_norm, const QuantConfig& cfg, double alpha) {
    double t = trust_threshold(cfg, alpha);
    if (std::abs(x_norm) > alpha) t *= cfg.outer_trust_scale;
    return std::abs(x_hat_norm - x_norm) <= t;
}

using Mask = std::vector<std::uint8_t>;

template <class T>
Mask trust_mask(const Tensor<T>& x_norm, const Tensor<T>& x_hat_norm, const QuantConfig& cfg, double alpha) {
    require_same_shape(x_norm.shape(), x_hat_norm.shape(), "trust_mask");
    Mask m(x_norm.size());
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = trusted(x_norm[k], x_hat_norm[k], cfg, alpha) ? 1 : 0;
    return m;
}

template <class T>
Mask trust_mask(const Tensor<T>& x_norm, const Tensor<T>& x_hat_norm, const QuantConfig& cfg, AlphaTable& table) {
    return trust_mask(x_norm, x_hat_norm, cfg, table.alpha_for(cfg));
}

// ---------------------------------------------------------------------------
// 2:4 magnitude pruning along the last axis.

/// Keeps the two largest |values| in each consecutive group of four (lower index wins ties).
template <class T>
Mask sparsity_mask_2of4(std::span<const T> line) {
    if (line.size() % 4 != 0) throw std::invalid_argument("sparsify_2of4: extent " + std::to_string(line.size()) + " is not divisible by 4");
    Mask keep(line.size(), 0);
    for (std::size_t g = 0; g < line.size(); g += 4) {
        std::array<std::size_t, 4> idx = {g, g + 1, g + 2, g + 3};
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return std::abs(line[a]) > std::abs(line[b]); });
        keep[idx[0]] = 1;
        keep[idx[1]] = 1;
    }
    return keep;
}

template <class T>
std::pair<Tensor<T>, Mask> sparsify_2of4(const Tensor<T>& x_norm) {
    if (x_norm.empty() || x_norm.cols() % 4 != 0)
        throw std::invalid_argument("sparsify_2of4: last extent " + std::to_string(x_norm.cols()) + " is not divisible by 4");
    Mask keep = sparsity_mask_2of4(x_norm.span());
    Tensor<T> values = x_norm;
    for (std::size_t k = 0; k < keep.size(); ++k)
        if (!keep[k]) values[k] = T(0);
    return {std::move(values), std::move(keep)};
}

// ---------------------------------------------------------------------------
// RMS-normalized projection.

template <class T>
struct ProjectionResult {
    Tensor<T> values;                // dequantized output, same shape as the input
    std::vector<double> scales;      // per group: RMS * alpha*
    std::size_t group_size = 0;
    Mask trust;                      // 1 = trusted
    Mask sparsity;                   // 2:4 format only, 1 = kept
    std::vector<std::uint8_t> codes; // grid indices (INT / FP4 / kept 2:4 entries)
    Format format = Format::none;
    int bits = 0;
};

template <class T>
ProjectionResult<T> project(const Tensor<T>& x, const QuantConfig& cfg, AlphaTable& table = AlphaTable::standard()) {
    ProjectionResult<T> r;
    r.values = x;
    r.trust.assign(x.size(), 1);
    if (!cfg.quantized()) return r;
    cfg.validate();
    r.format = cfg.format;
    r.bits = cfg.format == Format::int_uniform ? cfg.bits : 4;

    const std::size_t g = cfg.group_for(x.cols());
    const std::size_t groups = x.size() / g;
    const double alpha = table.alpha_for(cfg);
    const int bits = cfg.format == Format::int4_sparse_2of4 ? 4 : cfg.bits;
    const bool sparse = cfg.format == Format::int4_sparse_2of4;
    if (sparse) {
        if (g % 4 != 0) throw std::invalid_argument("project: 2:4 format needs groups divisible by 4");
        r.sparsity.assign(x.size(), 0);
    }
    r.group_size = g;
    r.scales.resize(groups);
    r.codes.assign(x.size(), 0);

    std::vector<double> norm(g);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        const std::size_t base = gi * g;
        double ss = 0.0;
        for (std::size_t i = 0; i < g; ++i) ss += static_cast<double>(x[base + i]) * static_cast<double>(x[base + i]);
        const double rms_v = std::sqrt(ss / static_cast<double>(g));
        const double scale = rms_v * alpha;
        r.scales[gi] = scale;
        if (rms_v == 0.0) {
            for (std::size_t i = 0; i < g; ++i) {
                r.values[base + i] = T(0);
                r.codes[base + i] = cfg.format == Format::fp4 ? 7 : static_cast<std::uint8_t>((int_levels(bits) + 1) / 2);
                if (sparse) r.sparsity[base + i] = (i % 4) < 2;
            }
            continue;
        }
        for (std::size_t i = 0; i < g; ++i) norm[i] = static_cast<double>(x[base + i]) / rms_v;
        Mask keep;
        if (sparse) keep = sparsity_mask_2of4(std::span<const double>(norm));
        for (std::size_t i = 0; i < g; ++i) {
            const double xn = norm[i];
            double point;  // grid point in [-1, 1]
            if (sparse && !keep[i]) {
                point = 0.0;
            } else if (cfg.format == Format::fp4) {
                const int idx = fp4_index(xn, alpha);
                r.codes[base + i] = static_cast<std::uint8_t>(idx);
                point = fp4_point(idx);
            } else {
                const int idx = uniform_index(xn, alpha, bits);
                r.codes[base + i] = static_cast<std::uint8_t>(idx);
                point = uniform_point(idx, bits);
            }
            if (sparse) r.sparsity[base + i] = keep[i];
            r.values[base + i] = static_cast<T>(scale * point);
            r.trust[base + i] = trusted(xn, alpha * point, cfg, alpha) ? 1 : 0;
        }
    }
    return r;
}

inline double masked_fraction(const Mask& m) {
    if (m.empty()) return 0.0;
    std::size_t masked = 0;
    for (auto v : m) masked += v == 0;
    return static_cast<double>(masked) / static_cast<double>(m.size());
}

}  // namespace quest
