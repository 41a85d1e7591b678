// Gradient alignment between quantized and unquantized-activation backward
// passes, and trust-mask fraction / persistence statistics.
#pragma once

#include "quest/model.hpp"

#include <algorithm>
#include <optional>
#include <ostream>

namespace quest {

/// Cosine similarity; undefined when either vector has zero norm.
template <class T>
std::optional<double> cosine_similarity(std::span<const T> a, std::span<const T> b) {
    const double na = dot(a, a), nb = dot(b, b);
    if (na == 0.0 || nb == 0.0) return std::nullopt;
    return std::clamp(dot(a, b) / std::sqrt(na * nb), -1.0, 1.0);
}

enum class EstimatorTag { quest, quest_no_ht, ste };

inline const char* tag_name(EstimatorTag t) {
    switch (t) {
        case EstimatorTag::quest: return "quest";
        case EstimatorTag::quest_no_ht: return "quest-no-ht";
        case EstimatorTag::ste: return "ste";
    }
    return "?";
}

/// The quantizer settings each estimator is measured with (plain STE runs without HT).
inline QuantConfig estimator_config(EstimatorTag tag, QuantConfig base) {
    switch (tag) {
        case EstimatorTag::quest:
            base.hadamard = true;
            base.estimator = Estimator::trust;
            break;
        case EstimatorTag::quest_no_ht:
            base.hadamard = false;
            base.estimator = Estimator::trust;
            break;
        case EstimatorTag::ste:
            base.hadamard = false;
            base.estimator = Estimator::ste;
            break;
    }
    if (base.format == Format::int_uniform && base.bits == 1) base.outer_trust_scale = default_outer_trust_scale(1, base.hadamard);
    return base;
}

struct AlignmentRecord {
    std::size_t block = 0;
    EstimatorTag tag = EstimatorTag::quest;
    std::optional<double> xi;
    std::size_t sample = 0;
};

/// Xi per block: cosine between dL/d(block output) with activation
/// quantization on and with it off (weights quantized in both passes).
template <class T>
std::vector<std::optional<double>> grad_alignment_all(const Model<T>& model, const TokenBatch& batch, const QuantConfig& cfg) {
    QuantConfig reference = cfg;
    reference.weight_only = true;
    auto quantized = forward_loss(model, batch, cfg);
    quantized.tape.backward(quantized.loss);
    auto exact = forward_loss(model, batch, reference);
    exact.tape.backward(exact.loss);
    std::vector<std::optional<double>> xi;
    for (std::size_t l = 0; l < quantized.block_outputs.size(); ++l)
        xi.push_back(cosine_similarity(quantized.tape.grad(quantized.block_outputs[l]).span(),
                                       exact.tape.grad(exact.block_outputs[l]).span()));
    return xi;
}

template <class T>
std::optional<double> grad_alignment(const Model<T>& model, const TokenBatch& batch, std::size_t block, const QuantConfig& cfg) {
    if (block >= model.config.num_blocks)
        throw std::out_of_range("grad_alignment: block " + std::to_string(block) + " of " + std::to_string(model.config.num_blocks));
    return grad_alignment_all(model, batch, cfg)[block];
}

inline double mask_fraction(const Mask& m) { return masked_fraction(m); }

template <class T>
double mask_fraction(const ProjectionResult<T>& p) {
    return masked_fraction(p.trust);
}

/// Share of entries masked at t1 that are still masked at t2; undefined when
/// nothing was masked at t1.
inline std::optional<double> mask_persistence(const Mask& t1, const Mask& t2) {
    if (t1.size() != t2.size()) throw std::invalid_argument("mask_persistence: masks differ in size");
    std::size_t masked = 0, kept = 0;
    for (std::size_t k = 0; k < t1.size(); ++k) {
        if (t1[k]) continue;
        ++masked;
        kept += t2[k] == 0;
    }
    if (masked == 0) return std::nullopt;
    return static_cast<double>(kept) / static_cast<double>(masked);
}

/// Trust masks of every quantized weight matrix of a model (weights go through
/// HT first when the config uses it).
template <class T>
std::vector<std::pair<std::string, Mask>> weight_masks(const Model<T>& model, const QuantConfig& cfg) {
    std::vector<std::pair<std::string, Mask>> out;
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        if (model.kinds[i] != ParamKind::projection) continue;
        const Tensor<T>& w = model.params[i];
        const Tensor<T> w_h = cfg.hadamard ? ht(w, HadamardPlan(w.cols()), 1) : w;
        out.emplace_back(model.names[i], project(w_h, cfg).trust);
    }
    return out;
}

struct MaskStats {
    std::size_t step = 0;
    std::string layer;
    double masked_fraction = 0.0;
    std::optional<double> persistence;
};

inline std::string format_optional(const std::optional<double>& v) {
    if (!v) return "undefined";
    std::ostringstream os;
    os.precision(10);
    os << *v;
    return os.str();
}

inline void write_alignment_csv(std::ostream& os, const std::vector<AlignmentRecord>& rows) {
    os << "block,tag,xi,sample\n";
    for (const auto& r : rows) os << r.block << ',' << tag_name(r.tag) << ',' << format_optional(r.xi) << ',' << r.sample << '\n';
}

inline void write_masks_csv(std::ostream& os, const std::vector<MaskStats>& rows) {
    os << "step,layer,fraction,persistence\n";
    for (const auto& r : rows)
        os << r.step << ',' << r.layer << ',' << format_optional(r.masked_fraction) << ',' << format_optional(r.persistence) << '\n';
}

/// Median and interquartile range of the defined values (linear interpolation).
struct Spread {
    double median = 0.0;
    double iqr = 0.0;
    std::size_t count = 0;
};

inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Spread spread(const std::vector<std::optional<double>>& xs) {
    std::vector<double> v;
    for (const auto& x : xs)
        if (x) v.push_back(*x);
    if (v.empty()) return {};
    return {quantile(v, 0.5), quantile(v, 0.75) - quantile(v, 0.25), v.size()};
}

}  // namespace quest
