// quest: command-line entry point for training, diagnostics, scaling fits and
// the INT4 kernel benchmark.
#include "quest/diagnostics.hpp"
#include "quest/pack_gemm.hpp"
#include "quest/run.hpp"
#include "quest/scaling_fit.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <regex>

namespace fs = std::filesystem;
using namespace quest;

namespace {

struct QuantFlags {
    std::optional<std::string> format;
    std::optional<int> bits;
    bool no_hadamard = false;
    bool weight_only = false;
    std::optional<double> trust_scale;

    void add(CLI::App* app) {
        app->add_option("--format", format, "Quantization format")->check(CLI::IsMember({"none", "int", "fp4", "sparse"}));
        app->add_option("--bits", bits, "Bit width for the int format")->check(CLI::Range(1, 8));
        app->add_flag("--no-hadamard", no_hadamard, "Quantize without the Hadamard transform");
        app->add_flag("--weight-only", weight_only, "Leave activations in full precision");
        app->add_option("--trust-scale", trust_scale, "Outer trust scale s")->check(CLI::PositiveNumber);
    }

    bool any() const { return format || bits || no_hadamard || weight_only || trust_scale; }

    QuantConfig apply(QuantConfig q) const {
        if (format) q.format = parse_format(*format);
        if (bits) {
            if (q.format == Format::none) q.format = Format::int_uniform;
            q.bits = *bits;
        }
        if (q.format == Format::fp4 || q.format == Format::int4_sparse_2of4) q.bits = 4;
        if (format && !no_hadamard) q.hadamard = q.format != Format::none;
        if (no_hadamard) q.hadamard = false;
        if (weight_only) q.weight_only = true;
        q.outer_trust_scale = trust_scale ? *trust_scale : default_outer_trust_scale(q.bits, q.hadamard);
        q.validate();
        return q;
    }
};

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    QuantFlags quant;
};

std::uint64_t resolve_seed(const Common& c, std::uint64_t configured) { return c.seed ? *c.seed : seed_from_env(configured); }

RunConfig resolve_run(const Common& c) {
    RunConfig rc = load_run_config(c.config);
    rc.train.seed = resolve_seed(c, rc.train.seed);
    if (c.quant.any()) rc.model.quant = c.quant.apply(rc.model.quant);
    return rc;
}

/// Writes through `fn` to out/name, or to stdout when no directory was given.
template <class F>
void emit(const std::string& out, const std::string& name, F&& fn) {
    if (out.empty()) {
        fn(std::cout);
        return;
    }
    fs::create_directories(out);
    const std::string path = (fs::path(out) / name).string();
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    fn(os);
    std::cerr << "wrote " << path << '\n';
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> v;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        v.push_back(std::stod(item, &used));
        if (used != item.size()) throw std::invalid_argument("bad number '" + item + "' in list '" + s + "'");
    }
    if (v.empty()) throw std::invalid_argument("empty list");
    return v;
}

/// The run config saved next to a checkpoint by `train`, unless one is given.
RunConfig config_for_checkpoint(const std::string& checkpoint, const Common& c) {
    if (!c.config.empty()) return resolve_run(c);
    const auto beside = fs::path(checkpoint).parent_path() / "run.json";
    if (!fs::exists(beside)) throw std::invalid_argument("no --config given and no run.json beside " + checkpoint);
    Common copy = c;
    copy.config = beside.string();
    return resolve_run(copy);
}

int cmd_train(const Common& c) {
    const RunConfig rc = resolve_run(c);
    const std::string out = c.out.empty() ? "run" : c.out;
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "run.json") << nlohmann::json(rc).dump(2) << '\n';
    std::cerr << "training " << rc.model.non_embedding_params() << " non-embedding params for " << rc.train.total_steps << " steps ("
              << format_name(rc.model.quant.format) << ", " << rc.model.quant.precision() << " bits)\n";
    TrainHooks hooks;
    hooks.out_dir = out;
    hooks.on_step = [&](const StepRecord& r) {
        if (r.step % 50 == 0 || r.step == rc.train.total_steps) std::cerr << "step " << r.step << " loss " << r.loss << '\n';
    };
    const auto o = execute(rc, hooks);
    const auto losses = o.result.losses();
    nlohmann::json summary = {{"status", o.result.status == TrainStatus::completed ? "completed" : "diverged"},
                              {"message", o.result.message},
                              {"steps", o.result.log.size()},
                              {"final_loss", losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(losses.back())},
                              {"seconds", o.result.seconds}};
    if (o.result.status == TrainStatus::completed) {
        summary["eval_loss"] = o.eval_loss;
        summary["perplexity"] = std::exp(o.eval_loss);
    }
    std::ofstream(fs::path(out) / "summary.json") << summary.dump(2) << '\n';
    std::cout << summary.dump() << '\n';
    return o.result.status == TrainStatus::completed ? 0 : 2;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& data, std::size_t batches) {
    auto ck = load_checkpoint<float>(checkpoint);
    std::vector<int> tokens;
    std::size_t seq = ck.model.config.max_seq_len, batch = 1;
    if (!data.empty()) {
        tokens = ingest(data);
    } else {
        const RunConfig rc = config_for_checkpoint(checkpoint, c);
        tokens = corpus_tokens(rc.corpus);
        seq = rc.seq_len;
        batch = std::max<std::size_t>(1, rc.train.batch_tokens / rc.seq_len);
        if (!batches) batches = rc.eval_batches;
    }
    if (c.quant.any()) ck.model.config.quant = c.quant.apply(ck.model.config.quant);
    const WindowSampler s(tokens, seq, 0);
    const auto bs = s.sequential_batches(batch, batches);
    if (bs.empty()) throw std::invalid_argument("eval: corpus too short for one batch");
    const double loss = evaluate(ck.model, bs);
    const nlohmann::json r = {{"loss", loss}, {"perplexity", std::exp(loss)}, {"batches", bs.size()}, {"tokens", bs.size() * batch * seq}};
    emit(c.out, "eval.json", [&](std::ostream& os) { os << r.dump() << '\n'; });
    return 0;
}

int cmd_align(const Common& c, const std::string& checkpoint, std::size_t batches) {
    auto ck = load_checkpoint<float>(checkpoint);
    const RunConfig rc = config_for_checkpoint(checkpoint, c);
    QuantConfig base = c.quant.any() ? c.quant.apply(ck.model.config.quant) : ck.model.config.quant;
    if (!base.quantized()) throw std::invalid_argument("align: the model is unquantized; pass --bits or --format");
    WindowSampler s(corpus_tokens(rc.corpus), rc.seq_len, resolve_seed(c, rc.train.seed));
    const std::size_t batch = std::max<std::size_t>(1, rc.train.batch_tokens / rc.seq_len);
    std::vector<AlignmentRecord> rows;
    for (std::size_t i = 0; i < batches; ++i) {
        const auto b = s.next_batch(batch);
        for (auto tag : {EstimatorTag::quest, EstimatorTag::quest_no_ht, EstimatorTag::ste}) {
            const auto xi = grad_alignment_all(ck.model, b, estimator_config(tag, base));
            for (std::size_t l = 0; l < xi.size(); ++l) rows.push_back({l, tag, xi[l], i});
        }
    }
    emit(c.out, "alignment.csv", [&](std::ostream& os) { write_alignment_csv(os, rows); });
    return 0;
}

std::vector<std::pair<std::size_t, std::string>> run_checkpoints(const std::string& dir) {
    std::vector<std::pair<std::size_t, std::string>> out;
    const std::regex pat(R"(ckpt_(\d+)\.qst)");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (std::regex_match(name, m, pat)) out.emplace_back(std::stoull(m[1]), e.path().string());
    }
    const auto final_ck = fs::path(dir) / "checkpoint.qst";
    if (fs::exists(final_ck)) {
        auto ck = load_checkpoint<float>(final_ck.string());
        out.emplace_back(ck.meta.value("step", std::size_t{0}), final_ck.string());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::invalid_argument("mask-stats: no checkpoints in " + dir);
    return out;
}

int cmd_mask_stats(const Common& c, const std::string& run_dir) {
    std::vector<MaskStats> rows;
    std::map<std::string, Mask> prev;
    for (const auto& [step, path] : run_checkpoints(run_dir)) {
        auto ck = load_checkpoint<float>(path);
        QuantConfig q = c.quant.any() ? c.quant.apply(ck.model.config.quant) : ck.model.config.quant;
        if (!q.quantized()) throw std::invalid_argument("mask-stats: the model is unquantized; pass --bits or --format");
        for (auto& [name, m] : weight_masks(ck.model, q)) {
            std::optional<double> persist;
            if (auto it = prev.find(name); it != prev.end()) persist = mask_persistence(it->second, m);
            rows.push_back({step, name, mask_fraction(m), persist});
            prev[name] = std::move(m);
        }
    }
    emit(c.out, "masks.csv", [&](std::ostream& os) { write_masks_csv(os, rows); });
    return 0;
}

int cmd_alpha_table(const Common& c) {
    auto& t = AlphaTable::standard();
    emit(c.out, "alpha.csv", [&](std::ostream& os) {
        os << "bits,alpha,mse,format\n";
        os.precision(10);
        for (int b = 1; b <= 8; ++b) os << b << ',' << t.alpha(b) << ',' << t.int_entry(b).mse << ",int\n";
        os << 4 << ',' << t.alpha_fp4() << ',' << t.fp4_entry().mse << ",fp4\n";
    });
    return 0;
}

int cmd_fit_scaling(const Common& c, const std::string& records, const std::string& bytes_list) {
    std::ifstream is(records);
    if (!is) throw std::runtime_error("cannot read " + records);
    const auto recs = read_records_csv(is);
    const auto r = fit(recs);
    std::cerr << "fit " << recs.size() << " runs from " << r.starts << " starts, objective " << r.objective << '\n';
    auto j = to_json_params(r.params);
    j["objective"] = r.objective;
    emit(c.out, "params.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
    emit(c.out, "efficiency.csv", [&](std::ostream& os) { write_efficiency_csv(os, r.params); });
    emit(c.out, "thresholds.csv", [&](std::ostream& os) {
        os << "model_bytes,P,threshold,note\n";
        for (double bytes : parse_list(bytes_list))
            for (auto [p, _] : r.params.eff) {
                if (p == 16) continue;
                const auto t = isomem_threshold(r.params, bytes, p);
                os << bytes << ',' << p << ',' << (t.ratio ? std::to_string(*t.ratio) : "") << ',' << t.note << '\n';
            }
    });
    return 0;
}

int cmd_plan_runs(const Common& c, const std::string& ns, const std::string& ps, const std::string& ratios) {
    std::vector<int> bits;
    for (double p : parse_list(ps)) bits.push_back(static_cast<int>(p));
    const auto runs = plan_runs(parse_list(ns), bits, parse_list(ratios));
    emit(c.out, "plan.csv", [&](std::ostream& os) { write_plan_csv(os, runs); });
    return 0;
}

int cmd_bench(const Common& c, std::size_t hidden, std::size_t intermediate, BenchOptions opt) {
    opt.seed = resolve_seed(c, opt.seed);
    const auto rows = bench(layer_shapes(hidden, intermediate), opt);
    emit(c.out, "bench.csv", [&](std::ostream& os) { write_bench_csv(os, rows); });
    return 0;
}

int cmd_sweep_s(const Common& c, const std::string& grid) {
    RunConfig base = resolve_run(c);
    if (!base.model.quant.quantized()) base.model.quant = QuantConfig::int_uniform(1);
    std::vector<std::tuple<double, double, double, std::string>> rows;
    for (double s : parse_list(grid)) {
        RunConfig rc = base;
        rc.model.quant.outer_trust_scale = s;
        const auto o = execute(rc);
        const auto l = o.result.losses();
        const std::size_t tail = std::max<std::size_t>(1, l.size() / 10);
        const double tail_mean = l.empty() ? NAN : std::accumulate(l.end() - static_cast<std::ptrdiff_t>(tail), l.end(), 0.0) / tail;
        const bool ok = o.result.status == TrainStatus::completed;
        rows.emplace_back(s, ok ? o.eval_loss : NAN, tail_mean, ok ? "completed" : "diverged");
        std::cerr << "s=" << s << " eval " << std::get<1>(rows.back()) << '\n';
    }
    emit(c.out, "sweep_s.csv", [&](std::ostream& os) {
        os << "s,eval_loss,tail_train_loss,status\n";
        os.precision(10);
        for (const auto& [s, e, t, st] : rows) os << s << ',' << e << ',' << t << ',' << st << '\n';
    });
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QuEST quantization-aware training toolkit"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);
    Common c;
    auto common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", c.config, "Run config JSON");
        if (needs_config) opt->required()->check(CLI::ExistingFile);
        sub->add_option("--out", c.out, "Output directory (stdout when omitted)");
        sub->add_option("--seed", c.seed, "Seed (overrides QUEST_SEED and the config)");
        c.quant.add(sub);
    };

    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    common(train_cmd, true);

    std::string checkpoint, data, run_dir;
    std::size_t batches = 0;
    auto* eval_cmd = app.add_subcommand("eval", "Loss and perplexity of a checkpoint");
    common(eval_cmd, false);
    eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", data, "Byte corpus to evaluate on")->check(CLI::ExistingFile);
    eval_cmd->add_option("--batches", batches, "Batch cap (default: the run's eval_batches)");

    std::size_t align_batches = 32;
    auto* align_cmd = app.add_subcommand("align", "Per-block gradient alignment for each estimator");
    common(align_cmd, false);
    align_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    align_cmd->add_option("--batches", align_batches, "Number of seeded batches");

    auto* mask_cmd = app.add_subcommand("mask-stats", "Weight trust-mask fraction and persistence over a run");
    common(mask_cmd, false);
    mask_cmd->add_option("--run", run_dir, "Directory written by train")->required()->check(CLI::ExistingDirectory);

    auto* alpha_cmd = app.add_subcommand("alpha-table", "Optimal Gaussian scales per grid");
    common(alpha_cmd, false);

    std::string records, bytes_list = "1e8,1e9,1e10";
    auto* fit_cmd = app.add_subcommand("fit-scaling", "Fit the precision-aware scaling law");
    common(fit_cmd, false);
    fit_cmd->add_option("--records", records, "CSV of N,D,P,loss")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--model-bytes", bytes_list, "Comma list of model sizes in bytes for thresholds");

    std::string ns = "30e6,50e6,100e6,200e6,430e6,800e6", ps = "1,2,3,4,8,16", ratios = "25,50,100";
    auto* plan_cmd = app.add_subcommand("plan-runs", "Run matrix for a scaling study");
    common(plan_cmd, false);
    plan_cmd->add_option("--n", ns, "Comma list of non-embedding parameter counts");
    plan_cmd->add_option("--p", ps, "Comma list of precisions");
    plan_cmd->add_option("--ratios", ratios, "Comma list of tokens per parameter");

    BenchOptions bopt;
    std::size_t hidden = 2048, intermediate = 5632;
    auto* bench_cmd = app.add_subcommand("bench", "Dense vs INT4 pipeline layer timings");
    common(bench_cmd, false);
    bench_cmd->add_option("--tokens", bopt.tokens)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--repeats", bopt.repeats)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--hidden", hidden)->check(CLI::PositiveNumber);
    bench_cmd->add_option("--intermediate", intermediate)->check(CLI::PositiveNumber);

    std::string grid = "1.0,1.05,1.1,1.15,1.2,1.25,1.3,1.35,1.4,1.45,1.5";
    auto* sweep_cmd = app.add_subcommand("sweep-s", "Outer trust scale sweep on tiny models");
    common(sweep_cmd, true);
    sweep_cmd->add_option("--s-grid", grid, "Comma list of s values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        if (*train_cmd) return cmd_train(c);
        if (*eval_cmd) return cmd_eval(c, checkpoint, data, batches);
        if (*align_cmd) return cmd_align(c, checkpoint, align_batches);
        if (*mask_cmd) return cmd_mask_stats(c, run_dir);
        if (*alpha_cmd) return cmd_alpha_table(c);
        if (*fit_cmd) return cmd_fit_scaling(c, records, bytes_list);
        if (*plan_cmd) return cmd_plan_runs(c, ns, ps, ratios);
        if (*bench_cmd) return cmd_bench(c, hidden, intermediate, bopt);
        if (*sweep_cmd) return cmd_sweep_s(c, grid);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
