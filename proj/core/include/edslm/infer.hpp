// Incremental inference engine: plain float forward passes (no autograd tape)
// with per-layer KV caches, one-time encoding for encoder-decoder models, and
// an instrumented matmul-volume counter.
//
// The arithmetic mirrors the training forward exactly (same kernels, same
// normalization/softmax/GELU formulas), so cached decode and teacher-forced
// recompute agree to float precision.
//
// FLOP accounting: every matrix product contributes 2*m*k*n, including the
// per-head attention score and mixing products and the output-vocabulary
// projection. Elementwise work (norms, activations, residuals) is not counted.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "edslm/model.hpp"

namespace edslm {

struct FlopCounter {
    int64_t matmul_flops = 0;
    int64_t encoder_calls = 0;  // encode_once invocations

    void on_matmul(int64_t m, int64_t k, int64_t n) { matmul_flops += 2 * m * k * n; }
};

// Immutable product of the one-time encoder pass: final-layer representations
// plus pre-projected cross-attention K/V for every decoder layer.
struct EncodedContext {
    int64_t len = 0;                    // |x|
    std::vector<float> encoder_output;  // [len, d_model]
    struct LayerKV {
        std::vector<float> k, v;  // [len, kv_width]
    };
    std::vector<LayerKV> cross_kv;   // size n_dec_layers
    std::vector<uint8_t> input_mask;  // 1 = real token
};

// Appended K/V per self-attention layer. For encoder-decoder models the cache
// covers output positions only; for decoder-only it covers input + output.
struct KVCache {
    struct LayerKV {
        std::vector<float> k, v;  // [len, kv_width], grown by appending
    };
    std::vector<LayerKV> layers;
    int64_t len = 0;  // tokens cached so far (same for all layers)
    int64_t cap = 0;

    explicit KVCache(const Model& m);
    int64_t length() const { return len; }
    int64_t capacity() const { return cap; }
};

// Runs the encoder stack exactly once and precomputes cross K/V. Decoder-only
// models raise std::logic_error; |x| > max_enc_len raises std::invalid_argument.
// An empty x_keep means every token is real.
EncodedContext encode_once(const Model& m, std::span<const int> x, std::span<const uint8_t> x_keep,
                           FlopCounter* fc = nullptr);

// Decoder-only prefill: one pass over ids through the cached path (each row
// attends to the cache filled so far). Returns logits for every position,
// row-major [|ids|, vocab].
std::vector<float> prefill(const Model& m, std::span<const int> ids, KVCache& cache,
                           FlopCounter* fc = nullptr);

// One incremental step: appends one K/V entry per self-attention layer and
// returns next-token logits [vocab]. ctx is required iff the model is
// encoder-decoder. A full cache raises std::length_error.
std::vector<float> decode_step(const Model& m, const EncodedContext* ctx, KVCache& cache,
                               int token, FlopCounter* fc = nullptr);

// Lowest-index argmax (deterministic tie-break).
int argmax_lowest(std::span<const float> v);

// Greedy generation: encoder-decoder models encode x once and start the
// decoder from bos_id; decoder-only models prefill x and continue it. Appends
// each argmax token (including eos_id, which stops generation) up to max_new.
std::vector<int> greedy_decode(const Model& m, std::span<const int> x, int max_new, int eos_id,
                               int bos_id = -1, FlopCounter* fc = nullptr);

}  // namespace edslm
