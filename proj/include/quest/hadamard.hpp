// Orthonormal fast Walsh-Hadamard transform along one tensor axis.
//
// Lengths that are not a power of two are split into a block-diagonal
// sequence of the largest power-of-two blocks (640 -> 512 + 128), each
// transformed independently with the Sylvester matrix scaled by 1/sqrt(m).
#pragma once

#include "quest/tensor.hpp"

#include <bit>

namespace quest {

class HadamardPlan {
public:
    HadamardPlan() = default;

    explicit HadamardPlan(std::size_t n) : n_(n) {
        if (n == 0) throw std::invalid_argument("HadamardPlan: length must be positive");
        std::size_t rest = n;
        while (rest) {
            const std::size_t block = std::bit_floor(rest);
            blocks_.push_back(block);
            rest -= block;
        }
    }

    /// Explicit decomposition; every block must be a power of two.
    HadamardPlan(std::size_t n, std::vector<std::size_t> blocks) : n_(n), blocks_(std::move(blocks)) {
        std::size_t total = 0;
        for (auto b : blocks_) {
            if (!std::has_single_bit(b)) throw std::invalid_argument("HadamardPlan: block size " + std::to_string(b) + " is not a power of two");
            total += b;
        }
        if (total != n_) throw std::invalid_argument("HadamardPlan: blocks sum to " + std::to_string(total) + ", expected " + std::to_string(n_));
    }

    std::size_t size() const { return n_; }
    const std::vector<std::size_t>& blocks() const { return blocks_; }

private:
    std::size_t n_ = 0;
    std::vector<std::size_t> blocks_;
};

namespace detail {

// Unnormalized in-place butterfly over a contiguous power-of-two block.
template <class T>
void fwht_block(T* v, std::size_t m) {
    for (std::size_t h = 1; h < m; h *= 2) {
        for (std::size_t i = 0; i < m; i += 2 * h) {
            for (std::size_t j = i; j < i + h; ++j) {
                const T a = v[j];
                const T b = v[j + h];
                v[j] = a + b;
                v[j + h] = a - b;
            }
        }
    }
}

}  // namespace detail

/// In-place orthonormal transform of one contiguous line of length plan.size().
template <class T>
void ht_line(std::span<T> line, const HadamardPlan& plan) {
    if (line.size() != plan.size())
        throw std::invalid_argument("ht: extent " + std::to_string(line.size()) + " does not match plan length " +
                                    std::to_string(plan.size()));
    std::size_t offset = 0;
    for (auto m : plan.blocks()) {
        T* block = line.data() + offset;
        detail::fwht_block(block, m);
        const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(m)));
        for (std::size_t i = 0; i < m; ++i) block[i] *= scale;
        offset += m;
    }
}

template <class T>
void ht_inplace(Tensor<T>& x, const HadamardPlan& plan, std::size_t axis) {
    if (axis >= x.rank()) throw std::invalid_argument("ht: axis out of range for shape " + shape_str(x.shape()));
    const std::size_t extent = x.dim(axis);
    if (extent != plan.size())
        throw std::invalid_argument("ht: axis extent " + std::to_string(extent) + " does not match plan length " +
                                    std::to_string(plan.size()));
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
    const std::size_t outer = x.size() / (extent * inner);

    if (inner == 1) {
        for (std::size_t o = 0; o < outer; ++o) ht_line(x.span().subspan(o * extent, extent), plan);
        return;
    }
    std::vector<T> line(extent);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
            T* base = x.data() + o * extent * inner + i;
            for (std::size_t k = 0; k < extent; ++k) line[k] = base[k * inner];
            ht_line(std::span<T>(line), plan);
            for (std::size_t k = 0; k < extent; ++k) base[k * inner] = line[k];
        }
    }
}

template <class T>
Tensor<T> ht(Tensor<T> x, const HadamardPlan& plan, std::size_t axis) {
    ht_inplace(x, plan, axis);
    return x;
}

/// Inverse transform. The orthonormal Sylvester matrix is symmetric and
/// self-inverse, so this is the same butterfly.
template <class T>
Tensor<T> iht(Tensor<T> x, const HadamardPlan& plan, std::size_t axis) {
    ht_inplace(x, plan, axis);
    return x;
}

}  // namespace quest
