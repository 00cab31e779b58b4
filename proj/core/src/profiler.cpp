#include "edslm/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "edslm/data.hpp"
#include "edslm/infer.hpp"
#include "json.hpp"

namespace edslm {

// ---------------------------------------------------------------- workload

void Workload::validate() const {
    if (input_len < 1) throw std::invalid_argument("workload: input_len must be >= 1");
    if (output_len < 0) throw std::invalid_argument("workload: output_len must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("workload: batch_size must be >= 1");
    if (element_bytes < 1) throw std::invalid_argument("workload: element_bytes must be >= 1");
}

// ------------------------------------------------------------- flop counts
//
// Everything below is 2*m*k*n per matrix product, the same rule FlopCounter
// applies. Causal attention is summed over visible key positions, which for
// the analytic training count equals the sum the incremental decode steps
// would report: sum_{t=1..T} 4*d*t = 2*d*T*(T+1).

namespace {

// Incremental decode step with t entries in the self cache (including the
// one appended this step): projections + attention + FFN for one token.
int64_t deconly_step_flops(const ModelConfig& c, int64_t t) {
    const int64_t d = c.d_model, kvw = c.kv_width();
    int64_t per_layer = 4 * d * d + 4 * d * kvw + 4 * d * c.d_ff + 4 * d * t;
    return c.n_dec_layers * per_layer + 2 * d * c.vocab_size;
}

// Encoder-decoder decode step: self cache holds t entries, cross attention
// spans the full encoded input of length enc_len.
int64_t encdec_step_flops(const ModelConfig& c, int64_t t, int64_t enc_len) {
    const int64_t d = c.d_model, kvw = c.kv_width();
    int64_t per_layer =
        8 * d * d + 4 * d * kvw + 4 * d * c.d_ff + 4 * d * (t + enc_len);
    return c.n_dec_layers * per_layer + 2 * d * c.vocab_size;
}

// sum_{t=lo..hi} t, zero when the range is empty.
int64_t range_sum(int64_t lo, int64_t hi) {
    if (hi < lo) return 0;
    return hi * (hi + 1) / 2 - (lo - 1) * lo / 2;
}

}  // namespace

InferenceFlops flops_inference(const ModelConfig& c, const Workload& w) {
    c.validate();
    w.validate();
    const int64_t d = c.d_model, kvw = c.kv_width(), T = w.input_len, Y = w.output_len;
    InferenceFlops f;
    if (c.kind == ModelKind::encoder_decoder) {
        // One full-attention encoder pass plus cross K/V projection per
        // decoder layer, then Y incremental steps starting from BOS.
        f.prefill = c.n_enc_layers * 4 * T * d * (d + kvw + c.d_ff + T) +
                    c.n_dec_layers * 4 * T * d * kvw;
        for (int64_t t = 1; t <= Y; ++t) f.decode_total += encdec_step_flops(c, t, T);
    } else {
        // T prefill steps (the last already yields the first output token's
        // logits), then Y-1 continuation steps.
        for (int64_t t = 1; t <= T; ++t) f.prefill += deconly_step_flops(c, t);
        if (Y > 1) {
            for (int64_t t = T + 1; t <= T + Y - 1; ++t) f.decode_total += deconly_step_flops(c, t);
        }
    }
    return f;
}

int64_t flops_train_step(const ModelConfig& c, const Workload& w) {
    c.validate();
    w.validate();
    const int64_t d = c.d_model, kvw = c.kv_width(), dff = c.d_ff, V = c.vocab_size;
    const int64_t T = w.input_len, Y = w.output_len;
    int64_t fwd = 0;
    if (c.kind == ModelKind::encoder_decoder) {
        // Decoder input is BOS + targets: U rows.
        const int64_t U = Y + 1;
        int64_t enc_layer = 4 * T * d * (d + kvw + dff) + 4 * T * T * d;
        int64_t dec_layer = U * (4 * d * d + 4 * d * kvw)   // self projections
                            + 4 * d * range_sum(1, U)       // causal self attention
                            + U * 4 * d * d                 // cross q/o projections
                            + 4 * T * d * kvw               // cross K/V projection
                            + 4 * U * T * d                 // cross attention
                            + 4 * U * d * dff;              // FFN
        fwd = c.n_enc_layers * enc_layer + c.n_dec_layers * dec_layer + 2 * U * d * V;
    } else {
        // One causal pass over x + y + EOS: S rows.
        const int64_t S = T + Y + 1;
        int64_t layer = S * (4 * d * d + 4 * d * kvw + 4 * d * dff) + 4 * d * range_sum(1, S);
        fwd = c.n_dec_layers * layer + 2 * S * d * V;
    }
    // Backward costs twice the forward.
    return 3 * fwd * w.batch_size;
}

// ------------------------------------------------------------ memory model

MemoryEstimate memory_model(const ModelConfig& c, const Workload& w, CrossKvMode mode) {
    c.validate();
    w.validate();
    const int64_t kvw = c.kv_width(), per_entry = 2 * kvw;  // K and V
    const int64_t scale = w.batch_size * w.element_bytes;
    MemoryEstimate e;
    if (c.kind == ModelKind::encoder_decoder) {
        int64_t kv_elems = c.n_dec_layers * w.output_len * per_entry;  // self, output side
        if (mode == CrossKvMode::precomputed)
            kv_elems += c.n_dec_layers * w.input_len * per_entry;  // cross K/V
        e.kv_bytes_peak = kv_elems * scale;
        // Final encoder states stay resident through decode (they are the
        // source for cross K/V recomputation as well).
        e.activation_bytes = w.input_len * c.d_model * scale;
    } else {
        e.kv_bytes_peak = c.n_dec_layers * (w.input_len + w.output_len) * per_entry * scale;
        e.activation_bytes = 0;
    }
    return e;
}

CostReport analytic_report(const ModelConfig& c, const Workload& w, std::string config_name) {
    InferenceFlops inf = flops_inference(c, w);
    MemoryEstimate mem = memory_model(c, w);
    CostReport r;
    r.config_name = std::move(config_name);
    r.workload = w;
    r.prefill_flops = inf.prefill;
    r.decode_flops_total = inf.decode_total;
    r.train_step_flops = flops_train_step(c, w);
    r.kv_bytes_peak = mem.kv_bytes_peak;
    r.activation_bytes = mem.activation_bytes;
    return r;
}

// -------------------------------------------------------------- wall clock

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult bench_generate(const Model& m, const Workload& w, int n_trials) {
    w.validate();
    if (n_trials < 1) throw std::invalid_argument("bench_generate: n_trials must be >= 1");
    if (w.output_len < 2)
        throw std::invalid_argument(
            "bench_generate: output_len must be >= 2 to measure a steady-state rate");
    const ModelConfig& c = m.config;
    const bool encdec = c.kind == ModelKind::encoder_decoder;

    // Fixed synthetic input; EOS is ignored during generation so every trial
    // performs identical work.
    const int64_t byte_ids = std::min<int64_t>(c.vocab_size, 256);
    std::vector<int> x(static_cast<size_t>(w.input_len));
    for (size_t i = 0; i < x.size(); ++i)
        x[i] = static_cast<int>((static_cast<int64_t>(i) * 7 + 3) % byte_ids);
    const std::vector<uint8_t> keep(x.size(), 1);
    const int bos = Vocab::kBos < c.vocab_size ? Vocab::kBos : 0;

    using clock = std::chrono::steady_clock;
    auto ms_between = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    auto run_trial = [&](double& first_ms, double& tps) {
        KVCache cache(m);
        EncodedContext ctx;
        int tok = 0;
        auto t0 = clock::now();
        if (encdec) {
            ctx = encode_once(m, x, keep);
            std::vector<float> logits = decode_step(m, &ctx, cache, bos);
            tok = argmax_lowest(logits);
        } else {
            std::vector<float> logits = prefill(m, x, cache);
            std::span<const float> last(logits.data() + (x.size() - 1) * c.vocab_size,
                                        static_cast<size_t>(c.vocab_size));
            tok = argmax_lowest(last);
        }
        auto t1 = clock::now();
        for (int64_t j = 1; j < w.output_len; ++j) {
            std::vector<float> logits = decode_step(m, encdec ? &ctx : nullptr, cache, tok);
            tok = argmax_lowest(logits);
        }
        auto t2 = clock::now();
        first_ms = ms_between(t0, t1);
        tps = (w.output_len - 1) / std::max(ms_between(t1, t2) / 1000.0, 1e-12);
    };

    for (int i = 0; i < 2; ++i) {  // warmup, results discarded
        try {
            double a, b;
            run_trial(a, b);
        } catch (const std::exception&) {
        }
    }

    std::vector<double> first, rate;
    std::string last_error;
    for (int i = 0; i < n_trials; ++i) {
        try {
            double a, b;
            run_trial(a, b);
            first.push_back(a);
            rate.push_back(b);
        } catch (const std::exception& ex) {
            last_error = ex.what();
            std::fprintf(stderr, "bench_generate: trial %d failed: %s\n", i, ex.what());
        }
    }
    if (static_cast<int>(first.size()) * 2 < n_trials) {
        throw std::runtime_error("bench_generate: " + std::to_string(n_trials - first.size()) +
                                 " of " + std::to_string(n_trials) +
                                 " trials failed; last error: " + last_error);
    }
    BenchResult r;
    r.first_token_ms = median_of(first);
    r.tokens_per_s = median_of(rate);
    r.valid_trials = static_cast<int>(first.size());
    return r;
}

// ---------------------------------------------------------------- reports

std::string report_json(const CostReport& r) {
    nlohmann::json j;
    j["config"] = r.config_name;
    j["workload"] = {{"input_len", r.workload.input_len},
                     {"output_len", r.workload.output_len},
                     {"batch_size", r.workload.batch_size},
                     {"element_bytes", r.workload.element_bytes}};
    j["flops"] = {{"prefill", r.prefill_flops},
                  {"decode_total", r.decode_flops_total},
                  {"train_step", r.train_step_flops}};
    j["memory"] = {{"kv_bytes_peak", r.kv_bytes_peak}, {"activation_bytes", r.activation_bytes}};
    if (r.first_token_ms >= 0) j["latency"]["first_token_ms"] = r.first_token_ms;
    if (r.tokens_per_s >= 0) j["latency"]["tokens_per_s"] = r.tokens_per_s;
    return j.dump(2);
}

std::string cost_csv_header() {
    return "config,input_len,output_len,batch_size,element_bytes,prefill_flops,"
           "decode_flops_total,train_step_flops,kv_bytes_peak,activation_bytes,"
           "first_token_ms,tokens_per_s";
}

std::string cost_csv_row(const CostReport& r) {
    std::ostringstream out;
    out << r.config_name << ',' << r.workload.input_len << ',' << r.workload.output_len << ','
        << r.workload.batch_size << ',' << r.workload.element_bytes << ',' << r.prefill_flops
        << ',' << r.decode_flops_total << ',' << r.train_step_flops << ',' << r.kv_bytes_peak
        << ',' << r.activation_bytes << ',';
    char buf[64];
    if (r.first_token_ms >= 0) {
        std::snprintf(buf, sizeof buf, "%.6g", r.first_token_ms);
        out << buf;
    }
    out << ',';
    if (r.tokens_per_s >= 0) {
        std::snprintf(buf, sizeof buf, "%.6g", r.tokens_per_s);
        out << buf;
    }
    return out.str();
}

}  // namespace edslm
