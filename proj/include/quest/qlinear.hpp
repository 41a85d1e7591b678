// Quantized linear layer y = x_hat_h * w_hat_h^T with the trust-masked
// backward operator, plus the plain straight-through baseline.
//
// Forward:  x_h = HT(x), x_hat_h = proj(x_h), w_h = HT(w), w_hat_h = proj(w_h)
// Backward: dx = IHT(M_x . (dy * w_hat_h)),  dw = IHT(M_w . (dy^T * x_hat_h))
// HT runs along the shared inner dimension k; with hadamard off it is the identity.
#pragma once

#include "quest/autodiff.hpp"
#include "quest/hadamard.hpp"
#include "quest/quantizer.hpp"

#include <memory>

namespace quest {

template <class T>
struct QLinearContext {
    Tensor<T> y;
    ProjectionResult<T> x_proj;  // values = x_hat_h, trust = M_x
    ProjectionResult<T> w_proj;  // values = w_hat_h, trust = M_w
    HadamardPlan plan;
    bool hadamard = false;

    const Tensor<T>& x_hat_h() const { return x_proj.values; }
    const Tensor<T>& w_hat_h() const { return w_proj.values; }
    const Mask& mask_x() const { return x_proj.trust; }
    const Mask& mask_w() const { return w_proj.trust; }
};

template <class T>
struct QLinearGrads {
    Tensor<T> dx;
    Tensor<T> dw;
};

/// x[batch x k], w[n x k] (row-major weight) -> y[batch x n] and saved context.
template <class T>
QLinearContext<T> qlinear_forward(const Tensor<T>& x, const Tensor<T>& w, const QuantConfig& cfg,
                                  AlphaTable& table = AlphaTable::standard()) {
    if (x.rank() != 2 || w.rank() != 2) throw std::invalid_argument("qlinear: x and w must be matrices");
    if (x.dim(1) != w.dim(1))
        throw std::invalid_argument("qlinear: inner dimension mismatch " + shape_str(x.shape()) + " vs weight " +
                                    shape_str(w.shape()));
    QLinearContext<T> ctx;
    ctx.hadamard = cfg.hadamard;
    ctx.plan = HadamardPlan(x.dim(1));
    const Tensor<T> x_h = cfg.hadamard ? ht(x, ctx.plan, 1) : x;
    const Tensor<T> w_h = cfg.hadamard ? ht(w, ctx.plan, 1) : w;
    if (cfg.weight_only) {
        QuantConfig none = cfg;
        none.format = Format::none;
        ctx.x_proj = project(x_h, none, table);
    } else {
        ctx.x_proj = project(x_h, cfg, table);
    }
    ctx.w_proj = project(w_h, cfg, table);
    ctx.y = matmul_nt(ctx.x_hat_h(), ctx.w_hat_h());
    return ctx;
}

namespace detail {

template <class T>
Tensor<T> apply_mask(Tensor<T> g, const Mask* mask) {
    if (mask) {
        auto& v = g.vec();
        for (std::size_t i = 0; i < v.size(); ++i)
            if (!(*mask)[i]) v[i] = T(0);
    }
    return g;
}

template <class T>
QLinearGrads<T> qlinear_backward_impl(const QLinearContext<T>& ctx, const Tensor<T>& dy, bool use_masks) {
    if (ctx.y.empty()) throw std::invalid_argument("qlinear backward: missing forward context");
    require_same_shape(dy.shape(), ctx.y.shape(), "qlinear backward dL/dy");
    Tensor<T> gx = apply_mask(matmul(dy, ctx.w_hat_h()), use_masks ? &ctx.mask_x() : nullptr);
    Tensor<T> gw = apply_mask(matmul_tn(dy, ctx.x_hat_h()), use_masks ? &ctx.mask_w() : nullptr);
    if (ctx.hadamard) {
        ht_inplace(gx, ctx.plan, 1);
        ht_inplace(gw, ctx.plan, 1);
    }
    return {std::move(gx), std::move(gw)};
}

}  // namespace detail

/// Trust estimator: gradients pass only where the forward quantization was trusted.
template <class T>
QLinearGrads<T> qlinear_backward(const QLinearContext<T>& ctx, const Tensor<T>& dy) {
    return detail::qlinear_backward_impl(ctx, dy, true);
}

/// Straight-through estimator: masks treated as all-true (IHT still applied).
template <class T>
QLinearGrads<T> ste_backward(const QLinearContext<T>& ctx, const Tensor<T>& dy) {
    return detail::qlinear_backward_impl(ctx, dy, false);
}

namespace ad {

/// Records a quantized linear layer on the tape. The backward follows
/// cfg.estimator. `ctx_out`, when given, receives the saved context.
template <class T>
Var qlinear(Tape<T>& t, Var x, Var w, const QuantConfig& cfg,
            std::shared_ptr<const QLinearContext<T>>* ctx_out = nullptr,
            AlphaTable& table = AlphaTable::standard()) {
    auto ctx = std::make_shared<QLinearContext<T>>(qlinear_forward(t.value(x), t.value(w), cfg, table));
    if (ctx_out) *ctx_out = ctx;
    Tensor<T> y = ctx->y;
    const bool ste = cfg.estimator == Estimator::ste;
    return t.record("qlinear", {x, w}, std::move(y), [x, w, ctx, ste](Tape<T>& tp, const Tensor<T>& g) {
        auto grads = ste ? ste_backward(*ctx, g) : qlinear_backward(*ctx, g);
        tp.accumulate(x, std::move(grads.dx));
        tp.accumulate(w, std::move(grads.dw));
    });
}

}  // namespace ad
}  // namespace quest
