// Dense row-major tensors, deterministic RNG, and the handful of linear
// algebra primitives the rest of the library is built on.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace quest {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor supports float and double");
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Contiguous row-major array. The element type doubles as the precision flag.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        for (auto e : shape_)
            if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_str(shape_));
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size())
            throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " holds " +
                                        std::to_string(shape_numel(shape_)) + " values, got " +
                                        std::to_string(data_.size()));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D helpers; anything of rank >= 2 is viewed as (prod of leading dims) x last.
    std::size_t rows() const { return shape_.empty() ? 0 : data_.size() / shape_.back(); }
    std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return span().subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const { return span().subspan(r * cols(), cols()); }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        return Tensor(std::move(shape), data_);
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Rng: mt19937_64 raw stream (bit-exact by the standard) plus our own
// uniform/normal transforms, since std::*_distribution is implementation-defined.

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return engine_();
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do r = next_u64();
        while (r >= limit);
        return r % n;
    }

    /// Standard normal via the Marsaglia polar method; the spare deviate is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    /// Fisher-Yates with our own uniform_int (std::shuffle is not portable).
    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = uniform_int(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <class T>
Tensor<T> sample_normal(Rng& rng, Shape shape, T mean = T(0), T stddev = T(1)) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(mean + stddev * rng.normal());
    return t;
}

template <class T>
Tensor<T> sample_uniform(Rng& rng, Shape shape, T lo, T hi) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
    return t;
}

// ---------------------------------------------------------------------------
// Linear algebra. Matrices are 2-D row-major; Eigen maps do the GEMM work.

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_matrix(Tensor<T>& t) {
    return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <class T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
    return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

namespace detail {
inline void require_matrix(const Shape& s, const char* what) {
    if (s.size() != 2) throw std::invalid_argument(std::string(what) + ": expected a matrix, got " + shape_str(s));
}
}  // namespace detail

/// a[m x k] * b[k x n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a.shape(), "matmul");
    detail::require_matrix(b.shape(), "matmul");
    if (a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    Tensor<T> c({a.dim(0), b.dim(1)});
    as_matrix(c).noalias() = as_matrix(a) * as_matrix(b);
    return c;
}

/// a[m x k] * b[n x k]^T, the row-major weight convention of linear layers.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a.shape(), "matmul_nt");
    detail::require_matrix(b.shape(), "matmul_nt");
    if (a.dim(1) != b.dim(1))
        throw std::invalid_argument("matmul_nt: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
    Tensor<T> c({a.dim(0), b.dim(0)});
    as_matrix(c).noalias() = as_matrix(a) * as_matrix(b).transpose();
    return c;
}

/// a[k x m]^T * b[k x n]
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_matrix(a.shape(), "matmul_tn");
    detail::require_matrix(b.shape(), "matmul_tn");
    if (a.dim(0) != b.dim(0))
        throw std::invalid_argument("matmul_tn: inner dimensions disagree: " + shape_str(a.shape()) + "^T x " +
                                    shape_str(b.shape()));
    Tensor<T> c({a.dim(1), b.dim(1)});
    as_matrix(c).noalias() = as_matrix(a).transpose() * as_matrix(b);
    return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_matrix(a.shape(), "transpose");
    Tensor<T> t({a.dim(1), a.dim(0)});
    for (std::size_t r = 0; r < a.dim(0); ++r)
        for (std::size_t c = 0; c < a.dim(1); ++c) t.at(c, r) = a.at(r, c);
    return t;
}

template <class T>
Tensor<T> identity(std::size_t n) {
    Tensor<T> t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T(1);
    return t;
}

// Elementwise helpers. Reductions sum left to right in index order.

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) {
    Tensor<T> c = a;
    for (auto& v : c.vec()) v *= s;
    return c;
}

template <class T>
Tensor<T> hadamard_product(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "hadamard_product");
    Tensor<T> c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

template <class T>
double sum(const Tensor<T>& a) {
    double s = 0.0;
    for (T v : a.vec()) s += v;
    return s;
}

template <class T>
double dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "dot");
    return dot(a.span(), b.span());
}

template <class T>
double norm2(std::span<const T> a) {
    return std::sqrt(dot(a, a));
}

template <class T>
double frobenius(const Tensor<T>& a) {
    return norm2(a.span());
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

/// Root-mean-square of consecutive groups of `group` values along the last axis.
/// Returns one scale per group in row-major group order; an all-zero group has scale 0.
template <class T>
Tensor<T> rms(const Tensor<T>& x, std::size_t group) {
    if (x.empty()) throw std::invalid_argument("rms: empty tensor");
    if (group == 0 || x.cols() % group != 0)
        throw std::invalid_argument("rms: group size " + std::to_string(group) + " does not divide last extent " +
                                    std::to_string(x.cols()));
    const std::size_t groups = x.size() / group;
    Tensor<T> out({groups});
    for (std::size_t g = 0; g < groups; ++g) {
        double ss = 0.0;
        for (std::size_t i = 0; i < group; ++i) {
            const double v = x[g * group + i];
            ss += v * v;
        }
        out[g] = static_cast<T>(std::sqrt(ss / static_cast<double>(group)));
    }
    return out;
}

/// Whole-tensor RMS.
template <class T>
T rms_all(const Tensor<T>& x) {
    return rms(x.reshaped({x.size()}), x.size())[0];
}

}  // namespace quest
