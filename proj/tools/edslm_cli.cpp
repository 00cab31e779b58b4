// Command-line front end: pretrain / finetune / distill / eval / profile /
// bench subcommands driven by a flat key=value run config with --set
// overrides. Every run writes out/manifest.txt (tool version, config hash,
// post-override values) before doing any work.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error (flags, unknown
// --set keys), 3 config error (unreadable config, invalid values).
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "edslm/data.hpp"
#include "edslm/distill.hpp"
#include "edslm/evals.hpp"
#include "edslm/infer.hpp"
#include "edslm/model.hpp"
#include "edslm/profiler.hpp"
#include "edslm/run_config.hpp"
#include "edslm/trainer.hpp"

#ifndef EDSLM_VERSION
#define EDSLM_VERSION "0.1.0"
#endif

namespace {

using namespace edslm;
namespace fs = std::filesystem;

// Raised for problems in config-derived values; mapped to exit 3.
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

// model.* fields (plus optional checkpoint weights), initialized from
// train.seed so a config reproduces the run bit for bit.
Model build_configured_model(const RunConfig& cfg) {
    ModelConfig mc = model_from_config(cfg);
    Model m = build_model(mc, static_cast<uint64_t>(cfg.get_int("train.seed")));
    const std::string& ckpt = cfg.get("model.checkpoint");
    if (!ckpt.empty()) load_checkpoint(ckpt, m);
    return m;
}

std::string model_display_name(const RunConfig& cfg) {
    const std::string& name = cfg.get("model.preset");
    return name.empty() ? "model" : name;
}

std::vector<TaskExample> synthetic_dataset(const RunConfig& cfg, const char* subcommand) {
    TaskKind kind = task_from_name(cfg.get("data.task"));
    if (kind == TaskKind::span)
        throw config_error(std::string(subcommand) +
                           ": data.task=span belongs to pretrain (corpus span corruption)");
    return make_synthetic_task(kind, static_cast<int>(cfg.get_int("data.n_examples")),
                               static_cast<uint64_t>(cfg.get_int("data.seed")));
}

void finish_training(const fs::path& out, const char* subcommand, Model& m,
                     const TrainConfig& tc, AdamW& opt, const RunConfig& cfg,
                     const std::vector<StepRecord>& rec) {
    fs::path ckpt = out / "checkpoint.bin";
    save_checkpoint(ckpt.string(), m, tc.total_steps, cfg.canonical_text(), &opt);
    double final_loss = rec.empty() ? 0.0 : rec.back().loss;
    std::printf("%s: %lld steps, final loss %.4f, checkpoint %s\n", subcommand,
                static_cast<long long>(rec.size()), final_loss, ckpt.string().c_str());
}

void cmd_pretrain(const RunConfig& cfg, const fs::path& out) {
    const std::string& corpus_path = cfg.get("data.corpus");
    if (corpus_path.empty()) throw config_error("pretrain: data.corpus is required");
    std::vector<std::vector<int>> docs;
    for (const std::string& doc : load_corpus(corpus_path)) docs.push_back(tokenize(doc));
    std::vector<TaskExample> data = make_span_examples(
        docs, static_cast<int>(cfg.get_int("data.window")),
        static_cast<int>(cfg.get_int("data.n_examples")), cfg.get_double("data.noise_ratio"),
        static_cast<int>(cfg.get_int("data.span_len")),
        static_cast<uint64_t>(cfg.get_int("data.seed")));
    if (data.empty()) throw config_error("pretrain: corpus windows were all too short to corrupt");

    Model m = build_configured_model(cfg);
    TrainConfig tc = train_from_config(cfg, Objective::span_corruption);
    AdamW opt(m.parameters(), tc.weight_decay);
    int64_t start = 0;
    if (!cfg.get("train.resume").empty())
        start = load_checkpoint(cfg.get("train.resume"), m, &opt).step;
    std::vector<StepRecord> rec =
        train(m, data, tc, opt, start, (out / "metrics.csv").string());
    finish_training(out, "pretrain", m, tc, opt, cfg, rec);
}

void cmd_finetune(const RunConfig& cfg, const fs::path& out) {
    std::vector<TaskExample> data = synthetic_dataset(cfg, "finetune");
    Model m = build_configured_model(cfg);
    TrainConfig tc = train_from_config(cfg, Objective::seq2seq);
    AdamW opt(m.parameters(), tc.weight_decay);
    int64_t start = 0;
    if (!cfg.get("train.resume").empty())
        start = load_checkpoint(cfg.get("train.resume"), m, &opt).step;
    std::vector<StepRecord> rec =
        train(m, data, tc, opt, start, (out / "metrics.csv").string());
    finish_training(out, "finetune", m, tc, opt, cfg, rec);
}

void cmd_distill(const RunConfig& cfg, const fs::path& out) {
    uint64_t seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    Model teacher = build_model(preset(cfg.get("teacher.preset")), seed + 1);
    if (!cfg.get("teacher.checkpoint").empty())
        load_checkpoint(cfg.get("teacher.checkpoint"), teacher);

    Model student = build_configured_model(cfg);
    std::vector<TaskExample> data = synthetic_dataset(cfg, "distill");
    TrainConfig tc = train_from_config(cfg, Objective::kd);
    KDConfig kd = kd_from_config(cfg);
    AdamW opt(student.parameters(), tc.weight_decay);
    int64_t start = 0;
    if (!cfg.get("train.resume").empty())
        start = load_checkpoint(cfg.get("train.resume"), student, &opt).step;
    std::vector<StepRecord> rec = distill_train(teacher, student, data, tc, kd, opt, start,
                                                (out / "metrics.csv").string());
    finish_training(out, "distill", student, tc, opt, cfg, rec);
}

void cmd_eval(const RunConfig& cfg, const fs::path& out) {
    Model m = build_configured_model(cfg);
    std::string name = model_display_name(cfg);
    std::vector<NamedModel> models{{name, &m}};
    std::vector<TaskKind> tasks = tasks_from_list(cfg.get("eval.tasks"));
    EvalMetric metric = metric_from_name(cfg.get("eval.metric"));
    EvalGridResult g = eval_grid(models, tasks, metric, eval_options_from_config(cfg));
    write_text(out / "grid.csv", grid_csv(g));
    write_text(out / "grid_raw.csv", grid_raw_csv(g));
    std::string table = grid_table(g);
    write_text(out / "grid.txt", table);
    std::fputs(table.c_str(), stdout);
}

CrossKvMode cross_kv_from_config(const RunConfig& cfg) {
    const std::string& v = cfg.get("profile.cross_kv");
    if (v == "precomputed") return CrossKvMode::precomputed;
    if (v == "recompute") return CrossKvMode::recompute;
    throw config_error("profile.cross_kv must be precomputed or recompute");
}

CostReport profile_one(const std::string& name, const Workload& w, CrossKvMode mode) {
    ModelConfig pc = preset(name);
    CostReport r = analytic_report(pc, w, name);
    if (mode == CrossKvMode::recompute) {
        MemoryEstimate e = memory_model(pc, w, mode);
        r.kv_bytes_peak = e.kv_bytes_peak;
        r.activation_bytes = e.activation_bytes;
    }
    return r;
}

void cmd_profile(const RunConfig& cfg, const fs::path& out) {
    std::vector<std::string> names = split_list(cfg.get("profile.configs"));
    if (names.empty()) throw config_error("profile.configs lists no model configurations");
    Workload w = workload_from_config(cfg, "profile");
    CrossKvMode mode = cross_kv_from_config(cfg);

    std::string csv = cost_csv_header() + "\n";
    std::string json = "[\n";
    for (size_t i = 0; i < names.size(); ++i) {
        CostReport r = profile_one(names[i], w, mode);
        csv += cost_csv_row(r) + "\n";
        json += report_json(r);
        json += i + 1 < names.size() ? ",\n" : "\n";
    }
    json += "]\n";
    write_text(out / "costs.csv", csv);
    write_text(out / "costs.json", json);
    std::fputs(csv.c_str(), stdout);

    const std::string& sweep = cfg.get("profile.sweep");
    if (!sweep.empty()) {
        std::string sweep_csv = cost_csv_header() + "\n";
        for (const std::string& tok : split_list(sweep)) {
            int64_t len = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), len);
            if (ec != std::errc() || p != tok.data() + tok.size() || len < 1)
                throw config_error("profile.sweep entry '" + tok + "' is not a positive integer");
            Workload ws = w;
            ws.input_len = len;
            for (const std::string& name : names) sweep_csv += cost_csv_row(profile_one(name, ws, mode)) + "\n";
        }
        write_text(out / "sweep.csv", sweep_csv);
    }
}

void cmd_bench(const RunConfig& cfg, const fs::path& out) {
    Model m = build_configured_model(cfg);
    Workload w = workload_from_config(cfg, "bench");
    BenchResult b = bench_generate(m, w, static_cast<int>(cfg.get_int("bench.n_trials")));
    CostReport r = analytic_report(m.config, w, model_display_name(cfg));
    r.first_token_ms = b.first_token_ms;
    r.tokens_per_s = b.tokens_per_s;
    write_text(out / "bench.json", report_json(r) + "\n");
    std::printf("bench: %s first-token %.3f ms, %.1f tokens/s (%d trials)\n",
                r.config_name.c_str(), b.first_token_ms, b.tokens_per_s, b.valid_trials);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale encoder-decoder language model laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::vector<std::string> overrides;
    const std::pair<const char*, const char*> subs[] = {
        {"pretrain", "span-corruption pretraining over a text corpus"},
        {"finetune", "teacher-forced training on a synthetic task"},
        {"distill", "cross-architecture knowledge distillation"},
        {"eval", "Rouge-L / perplexity task grid"},
        {"profile", "analytic FLOP and memory reports"},
        {"bench", "wall-clock generation latency and throughput"},
    };
    for (const auto& [name, desc] : subs) {
        CLI::App* s = app.add_subcommand(name, desc);
        s->add_option("--config", config_path, "run-config file (key=value lines)");
        s->add_option("--set", overrides, "override a config key (key=value; repeatable)");
        s->add_option("--out", out_dir, "artifact directory (default: out)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    const std::string sub = app.get_subcommands().front()->get_name();

    RunConfig cfg = default_run_config();
    if (!config_path.empty()) {
        try {
            cfg.load_file(config_path);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: config: %s\n", e.what());
            return 3;
        }
    }
    try {
        for (const std::string& o : overrides) cfg.apply_override(o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return 2;
    }

    try {
        fs::path out(out_dir);
        fs::create_directories(out);
        write_text(out / "manifest.txt", manifest_text(sub, cfg, EDSLM_VERSION));
        if (sub == "pretrain")
            cmd_pretrain(cfg, out);
        else if (sub == "finetune")
            cmd_finetune(cfg, out);
        else if (sub == "distill")
            cmd_distill(cfg, out);
        else if (sub == "eval")
            cmd_eval(cfg, out);
        else if (sub == "profile")
            cmd_profile(cfg, out);
        else
            cmd_bench(cfg, out);
        return 0;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: config: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: runtime: %s\n", e.what());
        return 1;
    }
}
