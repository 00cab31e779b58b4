#include "edslm/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace edslm {

// ----------------------------------------------------------------- registry

namespace {

std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

void RunConfig::declare(const std::string& key, std::string default_value) {
    if (values_.count(key)) throw std::logic_error("config: key '" + key + "' declared twice");
    order_.push_back(key);
    values_.emplace(key, std::move(default_value));
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) != 0; }

bool RunConfig::is_set(const std::string& key) const { return touched_.count(key) != 0; }

void RunConfig::set(const std::string& key, std::string value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second = std::move(value);
    touched_.insert(key);
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot read '" + path + "'");
    std::unordered_set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": expected key=value");
        std::string key = trim(t.substr(0, eq));
        if (!seen.insert(key).second)
            throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                        ": duplicate key '" + key + "'");
        set(key, trim(t.substr(eq + 1)));  // unknown key propagates with its name
    }
}

void RunConfig::apply_override(const std::string& spec) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("config: override '" + spec + "' is not key=value");
    set(trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw std::invalid_argument("config: key '" + key + "' is not an integer: '" + v + "'");
    return out;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    char* end = nullptr;
    double out = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
        throw std::invalid_argument("config: key '" + key + "' is not a number: '" + v + "'");
    return out;
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config: key '" + key + "' is not a boolean: '" + v + "'");
}

std::string RunConfig::canonical_text() const {
    std::vector<std::string> keys = order_;
    std::sort(keys.begin(), keys.end());
    std::string out;
    for (const std::string& k : keys) {
        out += k;
        out += '=';
        out += values_.at(k);
        out += '\n';
    }
    return out;
}

uint64_t RunConfig::hash() const {
    std::string text = canonical_text();
    return fnv1a64(text.data(), text.size());
}

// ----------------------------------------------------------------- defaults

RunConfig default_run_config() {
    RunConfig c;
    // model: the toy encoder-decoder, overridable field by field
    c.declare("model.preset", "toy_ed");
    c.declare("model.kind", "encoder_decoder");
    c.declare("model.n_enc_layers", "2");
    c.declare("model.n_dec_layers", "2");
    c.declare("model.d_model", "64");
    c.declare("model.n_heads", "4");
    c.declare("model.n_kv_heads", "2");
    c.declare("model.d_ff", "256");
    c.declare("model.vocab_size", "512");
    c.declare("model.rope_base", "10000");
    c.declare("model.ntk_train_len", "512");
    c.declare("model.max_enc_len", "1024");
    c.declare("model.max_dec_len", "1024");
    c.declare("model.checkpoint", "");
    // distillation teacher
    c.declare("teacher.preset", "toy_teacher");
    c.declare("teacher.checkpoint", "");
    // data
    c.declare("data.task", "copy");
    c.declare("data.n_examples", "256");
    c.declare("data.seed", "17");
    c.declare("data.corpus", "");
    c.declare("data.window", "256");
    c.declare("data.noise_ratio", "0.15");
    c.declare("data.span_len", "3");
    // training
    c.declare("train.total_steps", "200");
    c.declare("train.batch_size", "8");
    c.declare("train.grad_accum_steps", "1");
    c.declare("train.peak_lr", "0.0003");
    c.declare("train.warmup_steps", "2000");
    c.declare("train.weight_decay", "0.1");
    c.declare("train.seed", "1");
    c.declare("train.resume", "");
    // distillation loss
    c.declare("kd.temperature", "2");
    c.declare("kd.alpha", "0.5");
    c.declare("kd.kl_direction", "reverse");
    c.declare("kd.generation_source", "student");
    c.declare("kd.max_gen_len", "64");
    // evaluation
    c.declare("eval.metric", "rouge_l");
    c.declare("eval.tasks", "copy,reverse,compress,expand");
    c.declare("eval.n_examples", "16");
    c.declare("eval.n_seeds", "3");
    c.declare("eval.base_seed", "1234");
    c.declare("eval.max_new", "64");
    // analytic profiling
    c.declare("profile.configs", "ed_8_4,do_13");
    c.declare("profile.input_len", "512");
    c.declare("profile.output_len", "128");
    c.declare("profile.batch_size", "1");
    c.declare("profile.element_bytes", "2");
    c.declare("profile.cross_kv", "precomputed");
    c.declare("profile.sweep", "");
    // wall-clock benchmarking
    c.declare("bench.input_len", "512");
    c.declare("bench.output_len", "128");
    c.declare("bench.n_trials", "5");
    return c;
}

// --------------------------------------------------------------- converters

ModelConfig model_from_config(const RunConfig& cfg) {
    ModelConfig c;
    const std::string& name = cfg.get("model.preset");
    bool from_preset = !name.empty();
    if (from_preset) c = preset(name);

    auto want = [&](const char* key) { return !from_preset || cfg.is_set(key); };
    if (want("model.kind")) {
        const std::string& kind = cfg.get("model.kind");
        if (kind == "encoder_decoder")
            c.kind = ModelKind::encoder_decoder;
        else if (kind == "decoder_only")
            c.kind = ModelKind::decoder_only;
        else
            throw std::invalid_argument("config: model.kind must be encoder_decoder or decoder_only");
    }
    if (want("model.n_enc_layers")) c.n_enc_layers = cfg.get_int("model.n_enc_layers");
    if (want("model.n_dec_layers")) c.n_dec_layers = cfg.get_int("model.n_dec_layers");
    if (want("model.d_model")) c.d_model = cfg.get_int("model.d_model");
    if (want("model.n_heads")) c.n_heads = cfg.get_int("model.n_heads");
    if (want("model.n_kv_heads")) c.n_kv_heads = cfg.get_int("model.n_kv_heads");
    if (want("model.d_ff")) c.d_ff = cfg.get_int("model.d_ff");
    if (want("model.vocab_size")) c.vocab_size = cfg.get_int("model.vocab_size");
    if (want("model.rope_base")) c.rope_base = cfg.get_double("model.rope_base");
    if (want("model.ntk_train_len")) c.ntk_train_len = cfg.get_int("model.ntk_train_len");
    if (want("model.max_enc_len")) c.max_enc_len = cfg.get_int("model.max_enc_len");
    if (want("model.max_dec_len")) c.max_dec_len = cfg.get_int("model.max_dec_len");
    // A decoder-only override of an encoder-decoder preset drops the encoder.
    if (c.kind == ModelKind::decoder_only) c.n_enc_layers = 0;
    c.validate();
    return c;
}

TrainConfig train_from_config(const RunConfig& cfg, Objective objective) {
    TrainConfig t;
    t.objective = objective;
    t.total_steps = cfg.get_int("train.total_steps");
    t.batch_size = cfg.get_int("train.batch_size");
    t.grad_accum_steps = cfg.get_int("train.grad_accum_steps");
    t.peak_lr = cfg.get_double("train.peak_lr");
    t.warmup_steps = cfg.get_int("train.warmup_steps");
    t.weight_decay = cfg.get_double("train.weight_decay");
    t.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
    t.validate();
    return t;
}

KDConfig kd_from_config(const RunConfig& cfg) {
    KDConfig k;
    k.temperature = cfg.get_double("kd.temperature");
    k.alpha = cfg.get_double("kd.alpha");
    k.kl_direction = kl_direction_from_name(cfg.get("kd.kl_direction"));
    k.generation_source = generation_source_from_name(cfg.get("kd.generation_source"));
    k.max_gen_len = cfg.get_int("kd.max_gen_len");
    k.validate();
    return k;
}

EvalGridOptions eval_options_from_config(const RunConfig& cfg) {
    EvalGridOptions o;
    o.n_examples = static_cast<int>(cfg.get_int("eval.n_examples"));
    o.n_seeds = static_cast<int>(cfg.get_int("eval.n_seeds"));
    o.base_seed = static_cast<uint64_t>(cfg.get_int("eval.base_seed"));
    o.max_new = static_cast<int>(cfg.get_int("eval.max_new"));
    o.validate();
    return o;
}

Workload workload_from_config(const RunConfig& cfg, const std::string& prefix) {
    Workload w;
    w.input_len = cfg.get_int(prefix + ".input_len");
    w.output_len = cfg.get_int(prefix + ".output_len");
    if (cfg.has(prefix + ".batch_size")) w.batch_size = cfg.get_int(prefix + ".batch_size");
    if (cfg.has(prefix + ".element_bytes")) w.element_bytes = cfg.get_int(prefix + ".element_bytes");
    w.validate();
    return w;
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(csv);
    while (std::getline(in, field, ',')) {
        std::string t = trim(field);
        if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
}

std::vector<TaskKind> tasks_from_list(const std::string& csv) {
    std::vector<TaskKind> out;
    for (const std::string& name : split_list(csv)) out.push_back(task_from_name(name));
    if (out.empty()) throw std::invalid_argument("config: empty task list");
    return out;
}

std::string manifest_text(const std::string& subcommand, const RunConfig& cfg,
                          const std::string& version) {
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.hash()));
    std::string out;
    out += "edslm-run v1\n";
    out += "subcommand " + subcommand + "\n";
    out += "version " + version + "\n";
    out += "config-hash " + std::string(hash) + "\n";
    out += "---\n";
    out += cfg.canonical_text();
    return out;
}

}  // namespace edslm
