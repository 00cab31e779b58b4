// Efficiency analysis: closed-form matmul-FLOP counts for inference and
// training, a KV-cache/activation memory model, and wall-clock generation
// benchmarks. The analytic counts use the cached-runtime convention (2mkn
// per matrix product, per-row causal sums, norms/activations excluded) and
// match the engine's instrumented counters exactly.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edslm/model.hpp"

namespace edslm {

struct Workload {
    int64_t input_len = 512;
    int64_t output_len = 128;
    int64_t batch_size = 1;
    int64_t element_bytes = 2;  // deployment-style 16-bit cache entries; 4 = this runtime

    void validate() const;  // input/batch/element positive, output non-negative
};

struct InferenceFlops {
    int64_t prefill = 0;       // encoder pass + cross K/V (enc-dec) or causal prefill
    int64_t decode_total = 0;  // steps after the one that yields the first token
};

// Matmul FLOPs for generating output_len tokens from input_len of context,
// mirroring the engine's call pattern: the decoder-only model runs
// input_len + output_len - 1 incremental steps (the last prefill step already
// yields the first token's logits, and logits are produced at every prefill
// position); the encoder-decoder runs the encoder once plus output_len steps
// seeded by BOS. Per batch element; multiply by batch externally if needed.
InferenceFlops flops_inference(const ModelConfig& c, const Workload& w);

// Matmul FLOPs for one teacher-forced training step over the workload's
// (input_len, output_len) shapes, backward counted as 2x forward. The
// decoder-only sequence is x ∘ y ∘ EOS; the encoder-decoder decoder sees
// BOS ∘ y. Scaled by batch_size.
int64_t flops_train_step(const ModelConfig& c, const Workload& w);

enum class CrossKvMode { precomputed, recompute };

struct MemoryEstimate {
    int64_t kv_bytes_peak = 0;     // self caches (+ cross K/V when precomputed)
    int64_t activation_bytes = 0;  // encoder final output held during decode
};

// Steady-state decode memory: decoder-only caches input+output K/V in every
// layer; the encoder-decoder caches output-only self K/V, the encoder output,
// and (in precomputed mode) per-layer cross K/V. Scaled by batch_size and
// element_bytes.
MemoryEstimate memory_model(const ModelConfig& c, const Workload& w,
                            CrossKvMode mode = CrossKvMode::precomputed);

struct CostReport {
    std::string config_name;
    Workload workload;
    int64_t prefill_flops = 0;
    int64_t decode_flops_total = 0;
    int64_t train_step_flops = 0;
    int64_t kv_bytes_peak = 0;
    int64_t activation_bytes = 0;
    double first_token_ms = -1.0;  // negative = not measured
    double tokens_per_s = -1.0;
};

CostReport analytic_report(const ModelConfig& c, const Workload& w, std::string config_name);

// Wall-clock greedy generation: 3 warmup trials, then medians over n_trials.
// first_token_ms covers input submission to first logits (encoder pass +
// first decode step, or the full prefill); tokens_per_s is the steady-state
// rate over the remaining output_len - 1 steps. Trials that throw are
// discarded with a note; fewer than half valid raises std::runtime_error.
struct BenchResult {
    double first_token_ms = 0.0;
    double tokens_per_s = 0.0;
    int valid_trials = 0;
};

BenchResult bench_generate(const Model& m, const Workload& w, int n_trials = 5);

// Report serialization: a JSON object per report, and a CSV matrix (one row
// per report). Unmeasured latency fields are omitted from JSON and left
// empty in CSV.
std::string report_json(const CostReport& r);
std::string cost_csv_header();
std::string cost_csv_row(const CostReport& r);

}  // namespace edslm
