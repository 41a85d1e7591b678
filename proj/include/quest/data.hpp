// Byte-level token streams and deterministic window batching.
#pragma once

#include "quest/model.hpp"

#include <filesystem>

namespace quest {

/// Raw bytes of a file as token ids in [0, 256).
inline std::vector<int> ingest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("ingest: cannot read " + path);
    std::vector<int> tokens;
    char c;
    while (is.get(c)) tokens.push_back(static_cast<unsigned char>(c));
    if (tokens.empty()) throw std::invalid_argument("ingest: " + path + " is empty");
    return tokens;
}

inline std::vector<int> tokens_from_text(std::string_view text) {
    std::vector<int> tokens;
    tokens.reserve(text.size());
    for (char c : text) tokens.push_back(static_cast<unsigned char>(c));
    return tokens;
}

/// Cuts a token stream into floor(len / seq) non-overlapping windows and
/// serves them in a seeded shuffled order, reshuffling at every epoch.
class WindowSampler {
public:
    WindowSampler(std::vector<int> tokens, std::size_t seq, std::uint64_t seed)
        : tokens_(std::move(tokens)), seq_(seq), rng_(seed) {
        if (seq_ < 2) throw std::invalid_argument("WindowSampler: window length must be at least 2");
        if (tokens_.size() < seq_)
            throw std::invalid_argument("WindowSampler: corpus of " + std::to_string(tokens_.size()) +
                                        " tokens is shorter than one window of " + std::to_string(seq_));
        order_.resize(tokens_.size() / seq_);
        reshuffle();
    }

    std::size_t window_count() const { return order_.size(); }
    std::size_t seq() const { return seq_; }
    std::size_t epoch() const { return epoch_; }

    TokenBatch next_batch(std::size_t batch) {
        TokenBatch b{batch, seq_, {}};
        b.tokens.reserve(batch * seq_);
        for (std::size_t i = 0; i < batch; ++i) {
            if (cursor_ == order_.size()) {
                ++epoch_;
                reshuffle();
            }
            const std::size_t w = order_[cursor_++];
            b.tokens.insert(b.tokens.end(), tokens_.begin() + static_cast<std::ptrdiff_t>(w * seq_),
                            tokens_.begin() + static_cast<std::ptrdiff_t>((w + 1) * seq_));
        }
        return b;
    }

    /// Windows in file order, `batch` at a time, for evaluation.
    std::vector<TokenBatch> sequential_batches(std::size_t batch, std::size_t max_batches = 0) const {
        std::vector<TokenBatch> out;
        for (std::size_t w = 0; w + batch <= order_.size(); w += batch) {
            if (max_batches && out.size() == max_batches) break;
            TokenBatch b{batch, seq_, {}};
            b.tokens.assign(tokens_.begin() + static_cast<std::ptrdiff_t>(w * seq_),
                            tokens_.begin() + static_cast<std::ptrdiff_t>((w + batch) * seq_));
            out.push_back(std::move(b));
        }
        return out;
    }

private:
    void reshuffle() {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        rng_.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
    }

    std::vector<int> tokens_;
    std::size_t seq_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

/// Seeded English-like fixture text: sentences drawn from a small lexicon
/// through a fixed random word-transition table, so the stream carries
/// learnable byte, word and bigram structure.
inline std::string synthetic_corpus(std::uint64_t seed, std::size_t bytes) {
    static const std::vector<std::string> words = {
        "the", "a", "model", "weights", "train", "gradient", "small", "large", "quickly", "slowly", "signal",
        "noise", "learns", "grid", "scale", "trust", "mask", "value", "layer", "token", "data", "step", "loss",
        "falls", "rises", "every", "some", "many", "bits", "four", "eight", "one", "with", "without", "and", "or",
        "of", "to", "in", "on", "error", "round", "clip", "normal", "transform", "sum", "product", "is", "was",
        "becomes", "stays", "low", "high", "precision", "matrix", "vector", "row", "column", "fast", "stable"};
    Rng rng(seed);
    const std::size_t n = words.size();
    // Each word has four preferred successors.
    std::vector<std::array<std::size_t, 4>> next(n);
    for (auto& s : next)
        for (auto& w : s) w = rng.uniform_int(n);
    std::string out;
    out.reserve(bytes + 64);
    std::size_t w = rng.uniform_int(n);
    std::size_t in_sentence = 0;
    while (out.size() < bytes) {
        std::string word = words[w];
        if (in_sentence == 0) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
        out += word;
        ++in_sentence;
        if (in_sentence >= 4 && rng.uniform() < 0.2) {
            out += rng.uniform() < 0.8 ? ". " : "? ";
            if (rng.uniform() < 0.1) out += "\n";
            in_sentence = 0;
        } else {
            out += rng.uniform() < 0.05 ? ", " : " ";
        }
        w = rng.uniform() < 0.85 ? next[w][rng.uniform_int(4)] : rng.uniform_int(n);
    }
    out.resize(bytes);
    return out;
}

}  // namespace quest
