// AdamW with linear warmup + cosine decay, global-norm clipping, and the
// deterministic training loop that writes JSONL metrics and checkpoints.
#pragma once

#include "quest/data.hpp"

#include <chrono>
#include <cstdlib>
#include <functional>

namespace quest {

struct TrainConfig {
    double peak_lr = 1e-3;
    double warmup_frac = 0.10;
    std::size_t total_steps = 100;
    std::size_t batch_tokens = 2048;
    double beta1 = 0.90;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.1;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    std::size_t eval_interval = 0;        // 0: no periodic evaluation
    std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
    std::string data_path;

    void validate() const {
        if (!(warmup_frac > 0.0 && warmup_frac < 1.0)) throw std::invalid_argument("TrainConfig: warmup_frac must lie in (0, 1)");
        if (!(clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: clip_norm must be positive");
        if (total_steps == 0) throw std::invalid_argument("TrainConfig: total_steps must be positive");
        if (!(peak_lr > 0.0)) throw std::invalid_argument("TrainConfig: peak_lr must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"peak_lr", c.peak_lr},         {"warmup_frac", c.warmup_frac},
                       {"total_steps", c.total_steps}, {"batch_tokens", c.batch_tokens},
                       {"betas", {c.beta1, c.beta2}},  {"adam_eps", c.adam_eps},
                       {"weight_decay", c.weight_decay}, {"clip_norm", c.clip_norm},
                       {"seed", c.seed},               {"eval_interval", c.eval_interval},
                       {"checkpoint_interval", c.checkpoint_interval}, {"data", c.data_path}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
    if (j.contains("betas")) {
        c.beta1 = j.at("betas").at(0).get<double>();
        c.beta2 = j.at("betas").at(1).get<double>();
    }
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    c.data_path = j.value("data", std::string{});
    c.validate();
}

/// QUEST_SEED, when set, replaces the configured seed.
inline std::uint64_t seed_from_env(std::uint64_t fallback) {
    if (const char* s = std::getenv("QUEST_SEED"); s && *s) return std::stoull(s);
    return fallback;
}

/// Linear warmup from 0 to peak over warmup_frac * total_steps, then cosine to 0.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
    if (step > cfg.total_steps) throw std::out_of_range("lr_at: step beyond total_steps");
    const double total = static_cast<double>(cfg.total_steps);
    const double warmup = cfg.warmup_frac * total;
    const double s = static_cast<double>(step);
    if (s < warmup) return cfg.peak_lr * s / warmup;
    const double progress = (s - warmup) / (total - warmup);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Peak learning rate for a model with `non_embedding_params` parameters:
/// the per-size table where it applies, otherwise 0.0012 at 50M scaled by 1/N.
inline double lr_for_model_size(double non_embedding_params) {
    static const std::array<std::pair<double, double>, 6> table = {
        {{30e6, 0.0012}, {50e6, 0.0012}, {100e6, 0.0006}, {200e6, 0.0003}, {430e6, 0.00015}, {800e6, 0.000075}}};
    for (auto [n, lr] : table)
        if (n == non_embedding_params) return lr;
    return 0.0012 * 50e6 / non_embedding_params;
}

inline constexpr double kTokensPerParameter = 100.0;

inline double planned_tokens(double non_embedding_params, double tokens_per_param = kTokensPerParameter) {
    return non_embedding_params * tokens_per_param;
}

// ---------------------------------------------------------------------------

/// Scales all gradients by threshold / norm when the global L2 norm exceeds
/// the threshold. Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::span<Tensor<T>*> grads, double threshold) {
    double ss = 0.0;
    for (const auto* g : grads)
        for (T v : g->vec()) ss += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(ss);
    if (norm > threshold) {
        const T s = static_cast<T>(threshold / norm);
        for (auto* g : grads)
            for (auto& v : g->vec()) v *= s;
    }
    return norm;
}

template <class T>
struct AdamWState {
    std::vector<Tensor<T>> m, v;
    std::size_t t = 0;
};

/// One decoupled-weight-decay Adam update. `decay[i]` selects which tensors
/// receive weight decay.
template <class T>
void adamw_step(std::span<Tensor<T>> params, std::span<const Tensor<T>> grads, AdamWState<T>& state, double lr,
                const TrainConfig& cfg, const std::vector<bool>& decay) {
    if (params.size() != grads.size() || decay.size() != params.size())
        throw std::invalid_argument("adamw_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        require_same_shape(params[i].shape(), grads[i].shape(), "adamw_step");
        if (!grads[i].all_finite()) throw std::runtime_error("adamw_step: non-finite gradient in tensor " + std::to_string(i));
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.shape());
            state.v.emplace_back(p.shape());
        }
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].vec();
        const auto& g = grads[i].vec();
        auto& m = state.m[i].vec();
        auto& v = state.v[i].vec();
        const T shrink = decay[i] ? static_cast<T>(1.0 - lr * cfg.weight_decay) : T(1);
        const T step = static_cast<T>(lr / bc1);
        const T inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(cfg.adam_eps);
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = b1 * m[k] + (T(1) - b1) * g[k];
            v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
            p[k] = p[k] * shrink - step * m[k] / (std::sqrt(v[k] * inv_bc2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
    std::vector<std::pair<std::string, double>> untrusted_fraction;  // per quantized layer (weights)
};

inline nlohmann::json to_json_record(const StepRecord& r) {
    nlohmann::json frac = nlohmann::json::object();
    for (const auto& [name, f] : r.untrusted_fraction) frac[name] = f;
    return {{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"untrusted_fraction", frac}};
}

enum class TrainStatus { completed, diverged };

struct TrainResult {
    TrainStatus status = TrainStatus::completed;
    std::vector<StepRecord> log;
    std::string message;
    double seconds = 0.0;

    std::vector<double> losses() const {
        std::vector<double> l;
        for (const auto& r : log) l.push_back(r.loss);
        return l;
    }
};

struct TrainHooks {
    std::string out_dir;  // empty: no files written
    std::function<void(const StepRecord&)> on_step;
    std::function<bool()> should_stop;  // polled before every step
};

/// Runs cfg.total_steps optimizer steps over `sampler`. Master weights stay in
/// full precision; quantization only shapes forward values and gradients.
template <class T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, WindowSampler& sampler, const TrainHooks& hooks = {}) {
    cfg.validate();
    const std::size_t seq = sampler.seq();
    if (seq > model.config.max_seq_len) throw std::invalid_argument("train: window longer than max_seq_len");
    const std::size_t batch = std::max<std::size_t>(1, cfg.batch_tokens / seq);

    std::vector<bool> decay;
    for (auto k : model.kinds) decay.push_back(k != ParamKind::norm);

    std::ofstream metrics;
    if (!hooks.out_dir.empty()) {
        std::filesystem::create_directories(hooks.out_dir);
        metrics.open(hooks.out_dir + "/metrics.jsonl");
        if (!metrics) throw std::runtime_error("train: cannot write metrics in " + hooks.out_dir);
    }
    auto checkpoint = [&](const std::string& file, std::size_t step) {
        if (hooks.out_dir.empty()) return;
        save_checkpoint(hooks.out_dir + "/" + file, model, {{"step", step}, {"train", cfg}});
    };

    TrainResult result;
    const auto start = std::chrono::steady_clock::now();
    AdamWState<T> state;
    for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
        if (hooks.should_stop && hooks.should_stop()) {
            result.message = "stopped before step " + std::to_string(step);
            break;
        }
        TokenBatch b = sampler.next_batch(batch);
        auto fwd = forward_loss(model, b);
        const double loss = fwd.loss_value();
        StepRecord rec{step, lr_at(step, cfg), loss, 0.0, {}};
        if (!std::isfinite(loss)) {
            checkpoint("last_good.qst", step - 1);
            result.status = TrainStatus::diverged;
            result.message = "loss is not finite at step " + std::to_string(step);
            break;
        }
        fwd.tape.backward(fwd.loss);

        std::vector<Tensor<T>> grads;
        grads.reserve(model.params.size());
        for (auto v : fwd.params) grads.push_back(fwd.tape.grad(v));
        bool finite = true;
        for (const auto& g : grads) finite = finite && g.all_finite();
        if (!finite) {
            checkpoint("last_good.qst", step - 1);
            result.status = TrainStatus::diverged;
            result.message = "non-finite gradient at step " + std::to_string(step);
            break;
        }
        std::vector<Tensor<T>*> gp;
        for (auto& g : grads) gp.push_back(&g);
        rec.grad_norm = clip_grad_norm<T>(gp, cfg.clip_norm);
        for (std::size_t i = 0; i < fwd.contexts.size(); ++i)
            rec.untrusted_fraction.emplace_back(fwd.layer_names[i], masked_fraction(fwd.contexts[i]->mask_w()));

        adamw_step<T>(model.params, grads, state, rec.lr, cfg, decay);

        if (metrics) metrics << to_json_record(rec).dump() << '\n';
        if (hooks.on_step) hooks.on_step(rec);
        result.log.push_back(std::move(rec));
        if (cfg.checkpoint_interval && step % cfg.checkpoint_interval == 0 && step != cfg.total_steps)
            checkpoint("ckpt_" + std::to_string(step) + ".qst", step);
    }
    if (result.status == TrainStatus::completed) checkpoint("checkpoint.qst", result.log.size());
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

/// Mean next-token loss over the given batches (no gradients kept).
template <class T>
double evaluate(const Model<T>& model, const std::vector<TokenBatch>& batches) {
    if (batches.empty()) throw std::invalid_argument("evaluate: no batches");
    double total = 0.0;
    for (const auto& b : batches) total += forward_loss(model, b).loss_value();
    return total / static_cast<double>(batches.size());
}

/// Means of consecutive `width`-step windows starting at index `from`; a
/// trailing partial window is dropped.
inline std::vector<double> window_means(const std::vector<double>& xs, std::size_t from, std::size_t width) {
    if (width == 0) throw std::invalid_argument("window_means: width must be positive");
    std::vector<double> out;
    for (std::size_t i = from; i + width <= xs.size(); i += width) {
        double s = 0.0;
        for (std::size_t k = i; k < i + width; ++k) s += xs[k];
        out.push_back(s / static_cast<double>(width));
    }
    return out;
}

inline bool strictly_decreasing(const std::vector<double>& xs) {
    for (std::size_t i = 1; i < xs.size(); ++i)
        if (!(xs[i] < xs[i - 1])) return false;
    return true;
}

/// Exponential moving average of a loss curve.
inline std::vector<double> smooth(const std::vector<double>& xs, double beta = 0.9) {
    std::vector<double> out;
    double ema = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ema = beta * ema + (1.0 - beta) * xs[i];
        out.push_back(ema / (1.0 - std::pow(beta, static_cast<double>(i + 1))));
    }
    return out;
}

}  // namespace quest
