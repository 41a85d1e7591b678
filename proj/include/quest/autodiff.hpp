// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape is built during one forward pass, consumed by one backward pass and
// then discarded. Each recorded node owns its forward value and a closure that
// maps the node's output gradient to contributions for its inputs.
#pragma once

#include "quest/tensor.hpp"

#include <functional>
#include <memory>
#include <string>

namespace quest {

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

    Var leaf(Tensor<T> value, bool requires_grad = true, std::string name = "leaf") {
        nodes_.push_back(Node{std::move(name), std::move(value), {}, nullptr, requires_grad, {}, false});
        return Var{nodes_.size() - 1};
    }

    Var constant(Tensor<T> value) { return leaf(std::move(value), false, "const"); }

    /// Appends a node computed from `inputs`. Inputs must already be on the tape.
    Var record(std::string op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
        bool needs = false;
        for (auto in : inputs) {
            check(in);
            needs = needs || nodes_[in.id].requires_grad;
        }
        nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(backward), needs, {}, false});
        return Var{nodes_.size() - 1};
    }

    const Tensor<T>& value(Var v) const { return node(v).value; }
    const Tensor<T>& grad(Var v) const {
        const Node& n = node(v);
        if (!n.has_grad) throw std::logic_error("Tape: node '" + n.op + "' has no gradient");
        return n.grad;
    }
    bool has_grad(Var v) const { return node(v).has_grad; }
    bool requires_grad(Var v) const { return node(v).requires_grad; }
    const std::string& op(Var v) const { return node(v).op; }
    std::size_t size() const { return nodes_.size(); }

    /// Adds `g` into the gradient of `v` (no-op for constants).
    void accumulate(Var v, Tensor<T> g) {
        Node& n = node(v);
        if (!n.requires_grad) return;
        require_same_shape(n.value.shape(), g.shape(), ("gradient for '" + n.op + "'").c_str());
        if (!n.has_grad) {
            n.grad = std::move(g);
            n.has_grad = true;
        } else {
            auto& dst = n.grad.vec();
            const auto& src = g.vec();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
    }

    /// Reverse sweep from a scalar loss. Every leaf reachable from the loss ends
    /// up with exactly one gradient tensor of its own shape.
    void backward(Var loss) {
        if (consumed_) throw std::logic_error("Tape: backward already ran on this tape");
        Node& l = node(loss);
        if (l.value.size() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar, got shape " + shape_str(l.value.shape()));
        consumed_ = true;
        accumulate(loss, Tensor<T>(l.value.shape(), T(1)));
        std::vector<std::uint8_t> reachable(nodes_.size(), 0);
        reachable[loss.id] = 1;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            if (!reachable[i]) continue;
            Node& n = nodes_[i];
            for (auto in : n.inputs) reachable[in.id] = 1;
            if (!n.requires_grad || !n.backward) continue;
            if (!n.has_grad) n.grad = Tensor<T>(n.value.shape()), n.has_grad = true;
            n.backward(*this, n.grad);
        }
        for (std::size_t i = 0; i <= loss.id; ++i) {
            Node& n = nodes_[i];
            if (reachable[i] && n.requires_grad && !n.has_grad) {
                n.grad = Tensor<T>(n.value.shape());
                n.has_grad = true;
            }
        }
    }

private:
    struct Node {
        std::string op;
        Tensor<T> value;
        std::vector<Var> inputs;
        BackwardFn backward;
        bool requires_grad;
        Tensor<T> grad;
        bool has_grad;
    };

    void check(Var v) const {
        if (v.id >= nodes_.size())
            throw std::out_of_range("Tape: dangling reference to node " + std::to_string(v.id) + " (tape holds " +
                                    std::to_string(nodes_.size()) + ")");
    }
    Node& node(Var v) {
        check(v);
        return nodes_[v.id];
    }
    const Node& node(Var v) const {
        check(v);
        return nodes_[v.id];
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable primitives.

namespace ad {

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
    Tensor<T> y = t.value(a) + t.value(b);
    return t.record("add", {a, b}, std::move(y), [a, b](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
    });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
    Tensor<T> y = hadamard_product(t.value(a), t.value(b));
    return t.record("mul", {a, b}, std::move(y), [a, b](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, hadamard_product(g, tp.value(b)));
        if (tp.requires_grad(b)) tp.accumulate(b, hadamard_product(g, tp.value(a)));
    });
}

template <class T>
Var scale(Tape<T>& t, Var a, T s) {
    return t.record("scale", {a}, s * t.value(a), [a, s](Tape<T>& tp, const Tensor<T>& g) { tp.accumulate(a, s * g); });
}

/// a[m x k] * b[k x n]
template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
    Tensor<T> y = quest::matmul(t.value(a), t.value(b));
    return t.record("matmul", {a, b}, std::move(y), [a, b](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, matmul_nt(g, tp.value(b)));
        if (tp.requires_grad(b)) tp.accumulate(b, matmul_tn(tp.value(a), g));
    });
}

/// x[m x k] * w[n x k]^T, an unquantized linear layer with row-major weight.
template <class T>
Var linear(Tape<T>& t, Var x, Var w) {
    Tensor<T> y = matmul_nt(t.value(x), t.value(w));
    return t.record("linear", {x, w}, std::move(y), [x, w](Tape<T>& tp, const Tensor<T>& g) {
        if (tp.requires_grad(x)) tp.accumulate(x, quest::matmul(g, tp.value(w)));
        if (tp.requires_grad(w)) tp.accumulate(w, matmul_tn(g, tp.value(x)));
    });
}

template <class T>
Var rsqrt(Tape<T>& t, Var a) {
    Tensor<T> y = t.value(a);
    for (auto& v : y.vec()) v = T(1) / std::sqrt(v);
    return t.record("rsqrt", {a}, y, [a, y](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T> d = g;
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= T(-0.5) * y[i] * y[i] * y[i];
        tp.accumulate(a, std::move(d));
    });
}

template <class T>
Var silu(Tape<T>& t, Var a) {
    const Tensor<T>& x = t.value(a);
    Tensor<T> y = x;
    for (auto& v : y.vec()) v = v / (T(1) + std::exp(-v));
    return t.record("silu", {a}, std::move(y), [a](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& x = tp.value(a);
        Tensor<T> d = g;
        for (std::size_t i = 0; i < d.size(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-x[i]));
            d[i] *= s * (T(1) + x[i] * (T(1) - s));
        }
        tp.accumulate(a, std::move(d));
    });
}

template <class T>
Var sum(Tape<T>& t, Var a) {
    Tensor<T> y({1}, static_cast<T>(quest::sum(t.value(a))));
    return t.record("sum", {a}, std::move(y), [a](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(a, Tensor<T>(tp.value(a).shape(), g[0]));
    });
}

namespace detail {

template <class T>
void softmax_row(std::span<const T> in, std::span<T> out, std::size_t valid) {
    T mx = in[0];
    for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, in[j]);
    T s = T(0);
    for (std::size_t j = 0; j < valid; ++j) s += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < valid; ++j) out[j] /= s;
    for (std::size_t j = valid; j < out.size(); ++j) out[j] = T(0);
}

// dx = y * (dy - <dy, y>) per row.
template <class T>
void softmax_row_backward(std::span<const T> y, std::span<const T> dy, std::span<T> dx) {
    T d = T(0);
    for (std::size_t j = 0; j < y.size(); ++j) d += dy[j] * y[j];
    for (std::size_t j = 0; j < y.size(); ++j) dx[j] = y[j] * (dy[j] - d);
}

}  // namespace detail

/// Row-wise softmax of a matrix.
template <class T>
Var softmax_rows(Tape<T>& t, Var a) {
    const Tensor<T>& x = t.value(a);
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) detail::softmax_row(x.row(r), y.row(r), x.cols());
    return t.record("softmax", {a}, y, [a, y](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T> d(y.shape());
        for (std::size_t r = 0; r < y.rows(); ++r) detail::softmax_row_backward(y.row(r), g.row(r), d.row(r));
        tp.accumulate(a, std::move(d));
    });
}

/// Rows of `table` selected by `ids`.
template <class T>
Var gather(Tape<T>& t, Var table, std::vector<int> ids) {
    const Tensor<T>& tab = t.value(table);
    const std::size_t h = tab.cols();
    Tensor<T> y({ids.size(), h});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tab.rows())
            throw std::out_of_range("gather: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(tab.rows()) + " rows");
        std::copy_n(tab.row(static_cast<std::size_t>(ids[r])).begin(), h, y.row(r).begin());
    }
    return t.record("gather", {table}, std::move(y), [table, ids = std::move(ids)](Tape<T>& tp, const Tensor<T>& g) {
        Tensor<T> d(tp.value(table).shape());
        const std::size_t h = d.cols();
        for (std::size_t r = 0; r < ids.size(); ++r) {
            auto dst = d.row(static_cast<std::size_t>(ids[r]));
            auto src = g.row(r);
            for (std::size_t c = 0; c < h; ++c) dst[c] += src[c];
        }
        tp.accumulate(table, std::move(d));
    });
}

/// Rotary position embedding on x[(batch*seq) x (heads*head_dim)]. Row r is
/// position r % seq; within each head, pairs (2i, 2i+1) rotate by
/// pos * base^(-2i/head_dim).
template <class T>
Var rotary(Tape<T>& t, Var x, std::size_t seq, std::size_t heads, double base = 10000.0) {
    const Tensor<T>& in = t.value(x);
    const std::size_t width = in.cols();
    if (heads == 0 || width % heads != 0 || (width / heads) % 2 != 0)
        throw std::invalid_argument("rotary: width " + std::to_string(width) + " not splittable into even heads");
    const std::size_t hd = width / heads;
    // Table of (cos, sin) per position and frequency.
    auto table = std::make_shared<std::vector<std::pair<T, T>>>(seq * (hd / 2));
    for (std::size_t p = 0; p < seq; ++p)
        for (std::size_t i = 0; i < hd / 2; ++i) {
            const double theta = static_cast<double>(p) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
            (*table)[p * (hd / 2) + i] = {static_cast<T>(std::cos(theta)), static_cast<T>(std::sin(theta))};
        }
    auto apply = [=](const Tensor<T>& src, bool inverse) {
        Tensor<T> out(src.shape());
        for (std::size_t r = 0; r < src.rows(); ++r) {
            const std::size_t p = r % seq;
            auto s = src.row(r);
            auto o = out.row(r);
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t i = 0; i < hd / 2; ++i) {
                    const auto [c, sn0] = (*table)[p * (hd / 2) + i];
                    const T sn = inverse ? -sn0 : sn0;
                    const std::size_t j = h * hd + 2 * i;
                    o[j] = s[j] * c - s[j + 1] * sn;
                    o[j + 1] = s[j] * sn + s[j + 1] * c;
                }
        }
        return out;
    };
    return t.record("rotary", {x}, apply(in, false), [x, apply](Tape<T>& tp, const Tensor<T>& g) {
        tp.accumulate(x, apply(g, true));
    });
}

/// y = x / sqrt(mean(x^2) + eps) * gain, per row.
template <class T>
Var rmsnorm(Tape<T>& t, Var x, Var gain, T eps = T(1e-6)) {
    const Tensor<T>& in = t.value(x);
    const Tensor<T>& gv = t.value(gain);
    const std::size_t h = in.cols();
    if (gv.size() != h) throw std::invalid_argument("rmsnorm: gain of " + std::to_string(gv.size()) + " for width " + std::to_string(h));
    auto inv = std::make_shared<std::vector<T>>(in.rows());
    Tensor<T> y(in.shape());
    for (std::size_t r = 0; r < in.rows(); ++r) {
        auto row = in.row(r);
        T ss = T(0);
        for (T v : row) ss += v * v;
        const T iv = T(1) / std::sqrt(ss / static_cast<T>(h) + eps);
        (*inv)[r] = iv;
        auto o = y.row(r);
        for (std::size_t c = 0; c < h; ++c) o[c] = row[c] * iv * gv[c];
    }
    return t.record("rmsnorm", {x, gain}, std::move(y), [x, gain, inv](Tape<T>& tp, const Tensor<T>& g) {
        const Tensor<T>& in = tp.value(x);
        const Tensor<T>& gv = tp.value(gain);
        const std::size_t h = in.cols();
        Tensor<T> dx(in.shape());
        Tensor<T> dg(gv.shape());
        for (std::size_t r = 0; r < in.rows(); ++r) {
            auto row = in.row(r);
            auto gr = g.row(r);
            const T iv = (*inv)[r];
            T dot_v = T(0);  // sum_c g_c * gain_c * x_c
            for (std::size_t c = 0; c < h; ++c) {
                dot_v += gr[c] * gv[c] * row[c];
                dg[c] += gr[c] * row[c] * iv;
            }
            const T k = dot_v * iv * iv * iv / static_cast<T>(h);
            auto d = dx.row(r);
            for (std::size_t c = 0; c < h; ++c) d[c] = gr[c] * gv[c] * iv - row[c] * k;
        }
        tp.accumulate(x, std::move(dx));
        tp.accumulate(gain, std::move(dg));
    });
}

/// Mean cross-entropy of softmax(logits) against integer targets; rows with a
/// negative target are ignored.
template <class T>
Var cross_entropy(Tape<T>& t, Var logits, std::vector<int> targets) {
    const Tensor<T>& z = t.value(logits);
    if (targets.size() != z.rows()) throw std::invalid_argument("cross_entropy: target count does not match logit rows");
    auto probs = std::make_shared<Tensor<T>>(z.shape());
    double loss = 0.0;
    std::size_t counted = 0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        detail::softmax_row(z.row(r), probs->row(r), z.cols());
        if (targets[r] < 0) continue;
        if (static_cast<std::size_t>(targets[r]) >= z.cols()) throw std::out_of_range("cross_entropy: target id out of range");
        T mx = z.row(r)[0];
        for (T v : z.row(r)) mx = std::max(mx, v);
        double s = 0.0;
        for (T v : z.row(r)) s += std::exp(static_cast<double>(v - mx));
        loss += std::log(s) + static_cast<double>(mx) - static_cast<double>(z.at(r, static_cast<std::size_t>(targets[r])));
        ++counted;
    }
    if (counted == 0) throw std::invalid_argument("cross_entropy: no valid targets");
    Tensor<T> y({1}, static_cast<T>(loss / static_cast<double>(counted)));
    return t.record("cross_entropy", {logits}, std::move(y),
                    [logits, probs, targets = std::move(targets), counted](Tape<T>& tp, const Tensor<T>& g) {
                        Tensor<T> d(probs->shape());
                        const T s = g[0] / static_cast<T>(counted);
                        for (std::size_t r = 0; r < d.rows(); ++r) {
                            if (targets[r] < 0) continue;
                            auto dr = d.row(r);
                            auto pr = probs->row(r);
                            for (std::size_t c = 0; c < dr.size(); ++c) dr[c] = pr[c] * s;
                            dr[static_cast<std::size_t>(targets[r])] -= s;
                        }
                        tp.accumulate(logits, std::move(d));
                    });
}

/// Causal multi-head self-attention over q, k, v of shape
/// [(batch*seq) x (heads*head_dim)], scores scaled by 1/sqrt(head_dim).
template <class T>
Var causal_attention(Tape<T>& t, Var q, Var k, Var v, std::size_t seq, std::size_t heads) {
    const Tensor<T>& Q = t.value(q);
    const Tensor<T>& K = t.value(k);
    const Tensor<T>& V = t.value(v);
    require_same_shape(Q.shape(), K.shape(), "causal_attention");
    require_same_shape(Q.shape(), V.shape(), "causal_attention");
    const std::size_t width = Q.cols();
    if (Q.rows() % seq != 0 || width % heads != 0) throw std::invalid_argument("causal_attention: bad batch layout");
    const std::size_t batch = Q.rows() / seq;
    const std::size_t hd = width / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

    using Stride = Eigen::OuterStride<>;
    using CMap = Eigen::Map<const RowMat<T>, 0, Stride>;
    using MMap = Eigen::Map<RowMat<T>, 0, Stride>;
    auto view = [&](const Tensor<T>& m, std::size_t b, std::size_t h) {
        return CMap(m.data() + b * seq * width + h * hd, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(hd),
                    Stride(static_cast<Eigen::Index>(width)));
    };

    // Attention probabilities, one seq x seq block per (batch, head).
    auto probs = std::make_shared<std::vector<T>>(batch * heads * seq * seq);
    Tensor<T> out(Q.shape());
    RowMat<T> scores(seq, seq);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            scores.noalias() = view(Q, b, h) * view(K, b, h).transpose();
            T* P = probs->data() + (b * heads + h) * seq * seq;
            for (std::size_t i = 0; i < seq; ++i) {
                std::span<T> srow(scores.data() + i * seq, seq);
                for (auto& s : srow) s *= inv_sqrt;
                detail::softmax_row<T>(srow, std::span<T>(P + i * seq, seq), i + 1);
            }
            Eigen::Map<const RowMat<T>> Pm(P, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
            MMap(out.data() + b * seq * width + h * hd, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(hd),
                 Stride(static_cast<Eigen::Index>(width))).noalias() = Pm * view(V, b, h);
        }

    return t.record("attention", {q, k, v}, std::move(out),
                    [q, k, v, probs, seq, heads, batch, hd, width, inv_sqrt](Tape<T>& tp, const Tensor<T>& g) {
                        const Tensor<T>& Q = tp.value(q);
                        const Tensor<T>& K = tp.value(k);
                        const Tensor<T>& V = tp.value(v);
                        Tensor<T> dQ(Q.shape()), dK(K.shape()), dV(V.shape());
                        auto cview = [&](const Tensor<T>& m, std::size_t b, std::size_t h) {
                            return CMap(m.data() + b * seq * width + h * hd, static_cast<Eigen::Index>(seq),
                                        static_cast<Eigen::Index>(hd), Stride(static_cast<Eigen::Index>(width)));
                        };
                        auto mview = [&](Tensor<T>& m, std::size_t b, std::size_t h) {
                            return MMap(m.data() + b * seq * width + h * hd, static_cast<Eigen::Index>(seq),
                                        static_cast<Eigen::Index>(hd), Stride(static_cast<Eigen::Index>(width)));
                        };
                        RowMat<T> dP(seq, seq), dS(seq, seq);
                        for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t h = 0; h < heads; ++h) {
                                const T* P = probs->data() + (b * heads + h) * seq * seq;
                                Eigen::Map<const RowMat<T>> Pm(P, static_cast<Eigen::Index>(seq), static_cast<Eigen::Index>(seq));
                                auto G = cview(g, b, h);
                                mview(dV, b, h).noalias() = Pm.transpose() * G;
                                dP.noalias() = G * cview(V, b, h).transpose();
                                for (std::size_t i = 0; i < seq; ++i)
                                    detail::softmax_row_backward<T>(std::span<const T>(P + i * seq, seq),
                                                                    std::span<const T>(dP.data() + i * seq, seq),
                                                                    std::span<T>(dS.data() + i * seq, seq));
                                dS *= inv_sqrt;
                                mview(dQ, b, h).noalias() = dS * cview(K, b, h);
                                mview(dK, b, h).noalias() = dS.transpose() * cview(Q, b, h);
                            }
                        tp.accumulate(q, std::move(dQ));
                        tp.accumulate(k, std::move(dK));
                        tp.accumulate(v, std::move(dV));
                    });
}

}  // namespace ad
}  // namespace quest
