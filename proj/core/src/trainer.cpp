#include "edslm/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace edslm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian; big-endian hosts need byte swaps");

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

// ---- config / schedule ----

void TrainConfig::validate() const {
    if (peak_lr <= 0.0) throw std::invalid_argument("train config: peak_lr must be positive");
    if (total_steps <= 0) throw std::invalid_argument("train config: total_steps must be positive");
    if (warmup_steps < 0) throw std::invalid_argument("train config: warmup_steps must be non-negative");
    if (effective_warmup() >= total_steps)
        throw std::invalid_argument("train config: warmup must be shorter than total_steps");
    if (batch_size <= 0) throw std::invalid_argument("train config: batch_size must be positive");
    if (grad_accum_steps <= 0)
        throw std::invalid_argument("train config: grad_accum_steps must be positive");
    if (weight_decay < 0.0)
        throw std::invalid_argument("train config: weight_decay must be non-negative");
}

double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    const int64_t warm = cfg.effective_warmup();
    if (step >= cfg.total_steps) return 0.0;
    if (step < warm) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
    const double progress =
        static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(progress * std::numbers::pi));
}

// ---- optimizer ----

AdamW::AdamW(std::vector<Tensor> params, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (params_.empty()) throw std::invalid_argument("AdamW: no parameters");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.requires_grad())
            throw std::invalid_argument("AdamW: parameter '" + p.name() + "' does not require grad");
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
    }
}

void AdamW::step(double lr) {
    t_ += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        std::span<float> w = params_[i].values();
        std::span<float> g = params_[i].grad();
        std::span<float> m = m_[i].values();
        std::span<float> v = v_[i].values();
        for (size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            if (!std::isfinite(gj))
                throw std::runtime_error("AdamW: non-finite gradient in tensor '" +
                                         params_[i].name() + "'");
            const double mj = beta1_ * m[j] + (1.0 - beta1_) * gj;
            const double vj = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps_) + wd_ * w[j];
            w[j] = static_cast<float>(w[j] - lr * update);
        }
    }
}

void AdamW::zero_grad() {
    for (const Tensor& p : params_) p.zero_grad();
}

std::vector<std::pair<std::string, Tensor>> AdamW::state_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(2 * params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        out.emplace_back("adam.m." + params_[i].name(), m_[i]);
        out.emplace_back("adam.v." + params_[i].name(), v_[i]);
    }
    return out;
}

// ---- per-example loss ----

Tensor example_nll(Graph& g, const Model& m, const TaskExample& ex, double scale) {
    if (ex.x.empty()) throw std::invalid_argument("example_nll: empty input");
    Tensor nll;
    if (m.config.kind == ModelKind::encoder_decoder) {
        std::vector<int> dec_in;
        dec_in.reserve(ex.y.size() + 1);
        dec_in.push_back(Vocab::kBos);
        dec_in.insert(dec_in.end(), ex.y.begin(), ex.y.end());
        std::vector<int> targets(ex.y.begin(), ex.y.end());
        targets.push_back(Vocab::kEos);
        const std::vector<uint8_t> x_keep(ex.x.size(), 1);
        const std::vector<uint8_t> dec_keep(dec_in.size(), 1);
        Tensor logits = encdec_forward(g, m, ex.x, x_keep, dec_in, dec_keep);
        nll = g.cross_entropy_masked(logits, targets, dec_keep);
    } else {
        std::vector<int> ids(ex.x.begin(), ex.x.end());
        ids.insert(ids.end(), ex.y.begin(), ex.y.end());
        ids.push_back(Vocab::kEos);
        const int64_t len = static_cast<int64_t>(ids.size());
        const int64_t x_len = static_cast<int64_t>(ex.x.size());
        std::vector<int> targets(len, 0);
        std::vector<uint8_t> mask(len, 0);
        for (int64_t t = 0; t + 1 < len; ++t) targets[t] = ids[t + 1];
        for (int64_t t = x_len - 1; t + 1 < len; ++t) mask[t] = 1;
        const std::vector<uint8_t> keep(len, 1);
        Tensor logits = deconly_forward(g, m, ids, keep);
        nll = g.cross_entropy_masked(logits, targets, mask);
    }
    return scale == 1.0 ? nll : g.scale(nll, scale);
}

int64_t example_loss_tokens(const TaskExample& ex) {
    return static_cast<int64_t>(ex.y.size()) + 1;
}

// ---- data order ----

DataCycler::DataCycler(size_t n, uint64_t seed) : n_(n), seed_(seed) {
    if (n == 0) throw std::invalid_argument("DataCycler: empty dataset");
}

size_t DataCycler::index_at(int64_t position) {
    if (position < 0) throw std::invalid_argument("DataCycler: negative position");
    const int64_t epoch = position / static_cast<int64_t>(n_);
    if (epoch != epoch_) {
        perm_.resize(n_);
        std::iota(perm_.begin(), perm_.end(), size_t{0});
        std::mt19937_64 rng(splitmix64(seed_ ^ splitmix64(static_cast<uint64_t>(epoch) + 1)));
        std::shuffle(perm_.begin(), perm_.end(), rng);
        epoch_ = epoch;
    }
    return perm_[static_cast<size_t>(position % static_cast<int64_t>(n_))];
}

// ---- outer loop ----

std::vector<StepRecord> train(Model& m, const std::vector<TaskExample>& dataset,
                              const TrainConfig& cfg, AdamW& opt, int64_t start_step,
                              const std::string& metrics_csv, int64_t end_step) {
    cfg.validate();
    if (cfg.objective == Objective::kd)
        throw std::invalid_argument("train: the kd objective runs through distill_train");
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (end_step < 0) end_step = cfg.total_steps;
    if (start_step < 0 || start_step > end_step || end_step > cfg.total_steps)
        throw std::invalid_argument("train: step range out of bounds");

    std::ofstream csv;
    if (!metrics_csv.empty()) {
        const bool fresh = start_step == 0;
        csv.open(metrics_csv, fresh ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app);
        if (!csv) throw std::runtime_error("train: cannot open metrics file '" + metrics_csv + "'");
        if (fresh) csv << "step,loss,lr,tokens_per_s\n";
    }

    DataCycler cycler(dataset.size(), cfg.seed);
    const int64_t per_step = cfg.batch_size * cfg.grad_accum_steps;
    const double scale = 1.0 / static_cast<double>(per_step);
    std::vector<StepRecord> records;
    records.reserve(static_cast<size_t>(end_step - start_step));

    for (int64_t step = start_step; step < end_step; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(step, cfg);
        opt.zero_grad();
        double loss_sum = 0.0;
        int64_t token_count = 0;
        for (int64_t j = 0; j < per_step; ++j) {
            const TaskExample& ex = dataset[cycler.index_at(step * per_step + j)];
            Graph g;
            Tensor raw = example_nll(g, m, ex, 1.0);
            Tensor scaled = g.scale(raw, scale);
            g.backward(scaled);
            loss_sum += static_cast<double>(raw.at(0));
            token_count += static_cast<int64_t>(ex.x.size()) + example_loss_tokens(ex);
        }
        opt.step(lr);

        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        StepRecord rec;
        rec.step = step;
        rec.loss = loss_sum / static_cast<double>(per_step);
        rec.lr = lr;
        rec.tokens_per_s = secs > 0.0 ? static_cast<double>(token_count) / secs : 0.0;
        records.push_back(rec);
        if (csv.is_open()) {
            char line[160];
            std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.1f\n",
                          static_cast<long long>(rec.step), rec.loss, rec.lr, rec.tokens_per_s);
            csv << line;
        }
    }
    return records;
}

// ---- checkpointing ----

uint64_t fnv1a64(const void* data, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::string escape_line(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\n') out += "\\n";
        else out += c;
    }
    return out;
}

std::string unescape_line(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            ++i;
            out += s[i] == 'n' ? '\n' : s[i];
        } else {
            out += s[i];
        }
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> checkpoint_tensors(const Model& m, const AdamW* opt) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const Tensor& p : m.parameters()) {
        if (p.name().empty()) throw std::logic_error("checkpoint: unnamed parameter");
        out.emplace_back(p.name(), p);
    }
    if (opt) {
        for (auto& named : opt->state_tensors()) out.push_back(named);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m, int64_t step,
                     const std::string& config_echo, const AdamW* opt) {
    const auto tensors = checkpoint_tensors(m, opt);

    int64_t total = 0;
    std::vector<int64_t> offsets;
    offsets.reserve(tensors.size());
    for (const auto& [name, t] : tensors) {
        offsets.push_back(total);
        total += shape_numel(t.shape());
    }
    std::vector<float> payload(static_cast<size_t>(total));
    for (size_t i = 0; i < tensors.size(); ++i) {
        const auto vals = tensors[i].second.values();
        std::memcpy(payload.data() + offsets[i], vals.data(), vals.size() * sizeof(float));
    }
    const uint64_t checksum = fnv1a64(payload.data(), payload.size() * sizeof(float));

    std::ostringstream head;
    head << "edslm-checkpoint v1\n";
    head << "step " << step << "\n";
    head << "opt-steps " << (opt ? opt->t() : -1) << "\n";
    head << "config " << escape_line(config_echo) << "\n";
    head << "tensors " << tensors.size() << "\n";
    for (size_t i = 0; i < tensors.size(); ++i) {
        const auto& shape = tensors[i].second.shape();
        head << tensors[i].first << ' ' << shape.size();
        for (int64_t d : shape) head << ' ' << d;
        head << ' ' << offsets[i] << "\n";
    }
    head << "payload-floats " << total << "\n";
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(checksum));
    head << "checksum " << hex << "\n";
    head << "---\n";

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: '" + path + "'");
    f << head.str();
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!f) throw std::runtime_error("checkpoint write failed: '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path, Model& m, AdamW* opt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: '" + path + "'");
    auto fail = [&](const std::string& why) -> std::runtime_error {
        return std::runtime_error("checkpoint '" + path + "': " + why);
    };
    std::string line;
    auto next_line = [&]() -> const std::string& {
        if (!std::getline(f, line)) throw fail("truncated header");
        return line;
    };
    auto expect_key = [&](const std::string& key) -> std::string {
        next_line();
        if (line.rfind(key + " ", 0) != 0 && line != key) throw fail("expected '" + key + "' line");
        return line.size() > key.size() ? line.substr(key.size() + 1) : std::string();
    };

    if (next_line() != "edslm-checkpoint v1") throw fail("bad magic");
    LoadedCheckpoint out;
    out.step = std::stoll(expect_key("step"));
    const int64_t opt_steps = std::stoll(expect_key("opt-steps"));
    out.config_echo = unescape_line(expect_key("config"));
    const int64_t n_tensors = std::stoll(expect_key("tensors"));
    if (n_tensors < 0) throw fail("negative tensor count");

    struct Entry {
        std::vector<int64_t> shape;
        int64_t offset = 0;
    };
    std::unordered_map<std::string, Entry> table;
    table.reserve(static_cast<size_t>(n_tensors));
    for (int64_t i = 0; i < n_tensors; ++i) {
        std::istringstream row(next_line());
        std::string name;
        int64_t rank = 0;
        if (!(row >> name >> rank) || rank < 0 || rank > 8) throw fail("malformed tensor row");
        Entry e;
        e.shape.resize(static_cast<size_t>(rank));
        for (int64_t& d : e.shape)
            if (!(row >> d)) throw fail("malformed tensor row");
        if (!(row >> e.offset)) throw fail("malformed tensor row");
        if (!table.emplace(std::move(name), std::move(e)).second)
            throw fail("duplicate tensor name");
    }
    const int64_t n_floats = std::stoll(expect_key("payload-floats"));
    const uint64_t checksum = std::stoull(expect_key("checksum"), nullptr, 16);
    if (next_line() != "---") throw fail("missing payload separator");

    std::vector<float> payload(static_cast<size_t>(n_floats));
    f.read(reinterpret_cast<char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(payload.size() * sizeof(float)))
        throw fail("truncated payload");
    if (fnv1a64(payload.data(), payload.size() * sizeof(float)) != checksum)
        throw fail("payload checksum mismatch");

    auto restore = [&](const std::string& name, const Tensor& t) {
        auto it = table.find(name);
        if (it == table.end()) throw fail("missing tensor '" + name + "'");
        if (it->second.shape != t.shape())
            throw fail("shape mismatch for tensor '" + name + "' (have " + shape_str(t.shape()) +
                       ", checkpoint has " + shape_str(it->second.shape) + ")");
        const int64_t numel = shape_numel(it->second.shape);
        if (it->second.offset < 0 || it->second.offset + numel > n_floats)
            throw fail("offset out of range for tensor '" + name + "'");
        std::memcpy(t.values().data(), payload.data() + it->second.offset,
                    static_cast<size_t>(numel) * sizeof(float));
    };

    for (const Tensor& p : m.parameters()) restore(p.name(), p);
    if (opt) {
        if (opt_steps < 0) throw fail("no optimizer state saved");
        for (const auto& [name, t] : opt->state_tensors()) restore(name, t);
        opt->set_t(opt_steps);
    }
    return out;
}

}  // namespace edslm
