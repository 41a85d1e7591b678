// A training run described by one JSON document: model, optimizer schedule,
// window length and corpus source.
#pragma once

#include "quest/data.hpp"
#include "quest/trainer.hpp"

namespace quest {

struct CorpusSpec {
    std::string path;                 // byte file; empty selects the synthetic corpus
    std::uint64_t synthetic_seed = 7;
    std::size_t synthetic_bytes = 1 << 20;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::size_t seq_len = 128;
    CorpusSpec corpus;
    std::size_t eval_batches = 16;

    void validate() const {
        model.validate();
        train.validate();
        if (seq_len < 2 || seq_len > model.max_seq_len)
            throw std::invalid_argument("run config: seq_len " + std::to_string(seq_len) + " must lie in [2, max_seq_len]");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"train", c.train},
                       {"seq_len", c.seq_len},
                       {"corpus", {{"path", c.corpus.path}, {"synthetic_seed", c.corpus.synthetic_seed}, {"synthetic_bytes", c.corpus.synthetic_bytes}}},
                       {"eval_batches", c.eval_batches}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    c = RunConfig{};
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    c.seq_len = j.value("seq_len", c.model.max_seq_len);
    if (j.contains("corpus")) {
        const auto& k = j.at("corpus");
        c.corpus.path = k.value("path", std::string{});
        c.corpus.synthetic_seed = k.value("synthetic_seed", c.corpus.synthetic_seed);
        c.corpus.synthetic_bytes = k.value("synthetic_bytes", c.corpus.synthetic_bytes);
    }
    if (c.corpus.path.empty()) c.corpus.path = c.train.data_path;
    c.eval_batches = j.value("eval_batches", c.eval_batches);
    c.validate();
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config " + path);
    try {
        return nlohmann::json::parse(is).get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config " + path + ": " + e.what());
    }
}

inline std::vector<int> corpus_tokens(const CorpusSpec& c) {
    if (!c.path.empty()) return ingest(c.path);
    return tokens_from_text(synthetic_corpus(c.synthetic_seed, c.synthetic_bytes));
}

struct RunOutcome {
    TrainResult result;
    Model<float> model;
    double eval_loss = 0.0;
};

/// Builds the model from the run seed, trains it and evaluates on the first
/// eval_batches sequential windows of the corpus.
inline RunOutcome execute(const RunConfig& rc, const TrainHooks& hooks = {}) {
    rc.validate();
    Rng rng(rc.train.seed);
    RunOutcome out{{}, build_model<float>(rc.model, rng), 0.0};
    const auto tokens = corpus_tokens(rc.corpus);
    WindowSampler sampler(tokens, rc.seq_len, rc.train.seed + 1);
    out.result = train(out.model, rc.train, sampler, hooks);
    if (out.result.status == TrainStatus::completed) {
        const std::size_t batch = std::max<std::size_t>(1, rc.train.batch_tokens / rc.seq_len);
        out.eval_loss = evaluate(out.model, sampler.sequential_batches(batch, rc.eval_batches));
    }
    return out;
}

}  // namespace quest
