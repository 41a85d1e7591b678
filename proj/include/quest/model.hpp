// Llama-style decoder-only transformer over a byte vocabulary whose seven
// projections per block are quantized linear layers.
//
// Per block: x += O(attn(rope(Q n1(x)), rope(K n1(x)), V n1(x)))
//            x += Down(silu(Gate n2(x)) * Up n2(x))
// Embedding, head and norm gains stay in full precision.
#pragma once

#include "quest/qlinear.hpp"
#include "quest/serialize.hpp"

#include "json.hpp"

#include <fstream>

namespace quest {

inline void to_json(nlohmann::json& j, const QuantConfig& c) {
    j = nlohmann::json{{"format", format_name(c.format)},
                       {"bits", c.bits},
                       {"group_size", c.group_size},
                       {"hadamard", c.hadamard},
                       {"outer_trust_scale", c.outer_trust_scale},
                       {"weight_only", c.weight_only},
                       {"estimator", c.estimator == Estimator::ste ? "ste" : "trust"}};
}

inline void from_json(const nlohmann::json& j, QuantConfig& c) {
    c = QuantConfig{};
    c.format = parse_format(j.value("format", std::string("none")));
    c.bits = j.value("bits", c.format == Format::none ? 8 : 4);
    c.group_size = j.value("group_size", std::size_t{0});
    c.hadamard = j.value("hadamard", c.format != Format::none);
    c.outer_trust_scale = j.value("outer_trust_scale", default_outer_trust_scale(c.bits, c.hadamard));
    c.weight_only = j.value("weight_only", false);
    const auto est = j.value("estimator", std::string("trust"));
    if (est != "trust" && est != "ste") throw std::invalid_argument("unknown estimator '" + est + "'");
    c.estimator = est == "ste" ? Estimator::ste : Estimator::trust;
    c.validate();
}

/// 8/3 of the hidden size rounded up to a multiple of 256.
inline std::size_t mlp_intermediate_for(std::size_t hidden) {
    return (8 * hidden + 3 * 256 - 1) / (3 * 256) * 256;
}

struct ModelConfig {
    std::size_t num_blocks = 2;
    std::size_t hidden_size = 128;
    std::size_t num_heads = 4;
    std::size_t vocab_size = 256;
    std::size_t max_seq_len = 128;
    double rope_base = 10000.0;
    QuantConfig quant = QuantConfig::full_precision();

    std::size_t head_dim() const { return hidden_size / num_heads; }
    std::size_t mlp_intermediate() const { return mlp_intermediate_for(hidden_size); }

    void validate() const {
        if (num_blocks == 0 || hidden_size == 0 || num_heads == 0 || vocab_size == 0 || max_seq_len < 2)
            throw std::invalid_argument("ModelConfig: all dimensions must be positive (max_seq_len >= 2)");
        if (hidden_size % num_heads != 0)
            throw std::invalid_argument("ModelConfig: hidden size " + std::to_string(hidden_size) +
                                        " not divisible by heads " + std::to_string(num_heads));
        if (head_dim() % 2 != 0) throw std::invalid_argument("ModelConfig: rotary embedding needs an even head dimension");
        quant.validate();
    }

    /// Weights of the projections (all quantized) plus norm gains; excludes
    /// the embedding table and the output head.
    std::size_t non_embedding_params() const {
        const std::size_t h = hidden_size, i = mlp_intermediate();
        return num_blocks * (4 * h * h + 3 * h * i + 2 * h) + h;
    }

    std::size_t total_params() const { return non_embedding_params() + 2 * vocab_size * hidden_size; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"num_blocks", c.num_blocks}, {"hidden_size", c.hidden_size}, {"num_heads", c.num_heads},
                       {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len}, {"rope_base", c.rope_base},
                       {"quant", c.quant}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.rope_base = j.value("rope_base", c.rope_base);
    if (j.contains("quant")) c.quant = j.at("quant").get<QuantConfig>();
    c.validate();
}

enum class ParamKind { embedding, norm, projection, head };

template <class T>
struct Model {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<ParamKind> kinds;
    std::vector<Tensor<T>> params;

    std::size_t index(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw std::out_of_range("Model: no parameter named '" + name + "'");
    }
    const Tensor<T>& param(const std::string& name) const { return params[index(name)]; }
    Tensor<T>& param(const std::string& name) { return params[index(name)]; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    template <class U>
    Model<U> cast() const {
        Model<U> m{config, names, kinds, {}};
        for (const auto& p : params) m.params.push_back(p.template cast<U>());
        return m;
    }
};

inline const std::array<const char*, 7> kProjectionNames = {"q", "k", "v", "o", "gate", "up", "down"};

template <class T>
Model<T> build_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Model<T> m;
    m.config = cfg;
    const std::size_t h = cfg.hidden_size, inter = cfg.mlp_intermediate();
    const T std_base = T(0.02);
    const T std_resid = static_cast<T>(0.02 / std::sqrt(2.0 * static_cast<double>(cfg.num_blocks)));
    auto add = [&](std::string name, ParamKind kind, Tensor<T> t) {
        m.names.push_back(std::move(name));
        m.kinds.push_back(kind);
        m.params.push_back(std::move(t));
    };
    add("embed", ParamKind::embedding, sample_normal<T>(rng, {cfg.vocab_size, h}, T(0), std_base));
    for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        add(p + "attn_norm", ParamKind::norm, Tensor<T>({h}, T(1)));
        add(p + "q", ParamKind::projection, sample_normal<T>(rng, {h, h}, T(0), std_base));
        add(p + "k", ParamKind::projection, sample_normal<T>(rng, {h, h}, T(0), std_base));
        add(p + "v", ParamKind::projection, sample_normal<T>(rng, {h, h}, T(0), std_base));
        add(p + "o", ParamKind::projection, sample_normal<T>(rng, {h, h}, T(0), std_resid));
        add(p + "mlp_norm", ParamKind::norm, Tensor<T>({h}, T(1)));
        add(p + "gate", ParamKind::projection, sample_normal<T>(rng, {inter, h}, T(0), std_base));
        add(p + "up", ParamKind::projection, sample_normal<T>(rng, {inter, h}, T(0), std_base));
        add(p + "down", ParamKind::projection, sample_normal<T>(rng, {h, inter}, T(0), std_resid));
    }
    add("final_norm", ParamKind::norm, Tensor<T>({h}, T(1)));
    add("head", ParamKind::head, sample_normal<T>(rng, {cfg.vocab_size, h}, T(0), std_base));
    return m;
}

/// batch x seq token ids, row-major. Targets are the next token within each
/// sequence; the final position of a sequence has no target.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<int> tokens;

    std::vector<int> targets() const {
        std::vector<int> t(tokens.size(), -1);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t p = 0; p + 1 < seq; ++p) t[b * seq + p] = tokens[b * seq + p + 1];
        return t;
    }
};

template <class T>
struct ForwardResult {
    Tape<T> tape;
    Var loss;
    Var logits;
    std::vector<Var> params;         // parallel to Model::params
    std::vector<Var> block_outputs;  // residual stream after each block
    std::vector<std::string> layer_names;  // "blocks.<b>.<proj>" per quantized layer
    std::vector<std::shared_ptr<const QLinearContext<T>>> contexts;

    const Tensor<T>& grad_of(const Model<T>& m, const std::string& name) const { return tape.grad(params[m.index(name)]); }
    T loss_value() const { return tape.value(loss)[0]; }
};

/// Builds the tape for one batch with the given quantization settings.
template <class T>
ForwardResult<T> forward_loss(const Model<T>& m, const TokenBatch& batch, const QuantConfig& quant) {
    const ModelConfig& c = m.config;
    if (batch.seq > c.max_seq_len)
        throw std::invalid_argument("forward_loss: sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                                    std::to_string(c.max_seq_len));
    if (batch.seq < 2 || batch.tokens.size() != batch.batch * batch.seq)
        throw std::invalid_argument("forward_loss: malformed token batch");
    for (int tok : batch.tokens)
        if (tok < 0 || static_cast<std::size_t>(tok) >= c.vocab_size)
            throw std::out_of_range("forward_loss: token id " + std::to_string(tok) + " outside vocabulary");

    ForwardResult<T> r;
    Tape<T>& t = r.tape;
    for (std::size_t i = 0; i < m.params.size(); ++i) r.params.push_back(t.leaf(m.params[i], true, m.names[i]));
    auto P = [&](const std::string& name) { return r.params[m.index(name)]; };
    auto proj = [&](Var x, const std::string& name) {
        std::shared_ptr<const QLinearContext<T>> ctx;
        Var y = ad::qlinear(t, x, P(name), quant, &ctx);
        r.layer_names.push_back(name);
        r.contexts.push_back(std::move(ctx));
        return y;
    };

    Var x = ad::gather(t, P("embed"), batch.tokens);
    for (std::size_t b = 0; b < c.num_blocks; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        Var n1 = ad::rmsnorm(t, x, P(p + "attn_norm"));
        Var q = ad::rotary(t, proj(n1, p + "q"), batch.seq, c.num_heads, c.rope_base);
        Var k = ad::rotary(t, proj(n1, p + "k"), batch.seq, c.num_heads, c.rope_base);
        Var v = proj(n1, p + "v");
        Var a = ad::causal_attention(t, q, k, v, batch.seq, c.num_heads);
        x = ad::add(t, x, proj(a, p + "o"));
        Var n2 = ad::rmsnorm(t, x, P(p + "mlp_norm"));
        Var gate = ad::silu(t, proj(n2, p + "gate"));
        Var up = proj(n2, p + "up");
        x = ad::add(t, x, proj(ad::mul(t, gate, up), p + "down"));
        r.block_outputs.push_back(x);
    }
    Var xf = ad::rmsnorm(t, x, P("final_norm"));
    r.logits = ad::linear(t, xf, P("head"));
    r.loss = ad::cross_entropy(t, r.logits, batch.targets());
    return r;
}

template <class T>
ForwardResult<T> forward_loss(const Model<T>& m, const TokenBatch& batch) {
    return forward_loss(m, batch, m.config.quant);
}

// ---------------------------------------------------------------------------
// Checkpoints:
//   "QSTK" | version u32 | header_len u64 | header JSON (canonical) |
//   count u32 | { name_len u32 | name | tensor record }*
// The header carries {"model": ModelConfig, "meta": {...}}.

inline constexpr char kCheckpointMagic[4] = {'Q', 'S', 'T', 'K'};

template <class T>
void save_checkpoint(const std::string& path, const Model<T>& m, const nlohmann::json& meta = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const std::string header = nlohmann::json{{"model", m.config}, {"meta", meta}}.dump();
    os.write(kCheckpointMagic, 4);
    io::put<std::uint32_t>(os, 1);
    io::put<std::uint64_t>(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.params.size()));
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        io::put<std::uint32_t>(os, static_cast<std::uint32_t>(m.names[i].size()));
        os.write(m.names[i].data(), static_cast<std::streamsize>(m.names[i].size()));
        write_tensor(os, m.params[i]);
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <class T>
struct Checkpoint {
    Model<T> model;
    nlohmann::json meta;
};

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint");
    if (io::get<std::uint32_t>(is) != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    std::string header(io::get<std::uint64_t>(is), '\0');
    is.read(header.data(), static_cast<std::streamsize>(header.size()));
    const auto j = nlohmann::json::parse(header);
    Checkpoint<T> ck;
    ck.meta = j.value("meta", nlohmann::json::object());
    Rng unused(0);
    ck.model = build_model<T>(j.at("model").get<ModelConfig>(), unused);
    const auto count = io::get<std::uint32_t>(is);
    if (count != ck.model.params.size()) throw std::runtime_error("load_checkpoint: parameter count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(io::get<std::uint32_t>(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        Tensor<T> t = read_tensor<T>(is);
        Tensor<T>& dst = ck.model.param(name);
        require_same_shape(dst.shape(), t.shape(), ("checkpoint tensor " + name).c_str());
        dst = std::move(t);
    }
    return ck;
}

}  // namespace quest
