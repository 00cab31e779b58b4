// The model zoo: encoder-decoder transformers at several encoder/decoder layer
// splits and a parameter-matched decoder-only baseline.
//
// Blocks are pre-layer-norm: LN -> self-attention (GQA + RoPE) -> residual ->
// [LN -> cross-attention -> residual, decoder of encoder-decoder only] ->
// LN -> feed-forward (GELU, d_ff) -> residual. Each stack ends with a final
// layer norm. Input and output embeddings are tied. Linear layers carry no
// bias; layer norms carry gain and bias.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "edslm/graph.hpp"
#include "edslm/tensor.hpp"

namespace edslm {

enum class ModelKind { encoder_decoder, decoder_only };

struct ModelConfig {
    ModelKind kind = ModelKind::decoder_only;
    int64_t n_enc_layers = 0;  // 0 iff decoder_only
    int64_t n_dec_layers = 1;
    int64_t d_model = 64;
    int64_t n_heads = 4;
    int64_t n_kv_heads = 4;
    int64_t d_ff = 256;
    int64_t vocab_size = 512;
    double rope_base = 10000.0;
    int64_t ntk_train_len = 512;
    int64_t max_enc_len = 4096;
    int64_t max_dec_len = 4096;

    int64_t d_head() const { return d_model / n_heads; }
    int64_t kv_width() const { return n_kv_heads * d_head(); }

    // Throws std::invalid_argument naming the violated invariant.
    void validate() const;
};

// Exact parameter count from the closed-form sum over weight shapes.
int64_t count_params(const ModelConfig& config);

// Named desk/toy configurations checked into the repo. Known names:
//   ed_3_9 ed_6_6 ed_9_3   desk encoder-decoder splits mirroring the paper's
//                          1/3-2/3, 1/2-1/2, 2/3-1/3 ratios
//   ed_8_4 ed_2_9          desk splits parameter-matched to do_13
//   do_13 do_14            desk decoder-only baselines (do_14 matches ed_3_9)
//   toy_ed toy_do          small pair for wall-clock and learning runs
//   toy_teacher            larger decoder-only teacher for distillation runs
// Throws std::invalid_argument for unknown names.
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct LayerNormWeights {
    Tensor gain, bias;
};

struct AttentionWeights {
    Tensor wq, wk, wv, wo;  // [d,d] [d,kvw] [d,kvw] [d,d]
};

struct Block {
    LayerNormWeights ln_self;
    AttentionWeights self_attn;
    bool has_cross = false;
    LayerNormWeights ln_cross;
    AttentionWeights cross_attn;
    LayerNormWeights ln_ffn;
    Tensor w1, w2;  // [d,d_ff] [d_ff,d]
};

struct Model {
    ModelConfig config;
    Tensor embedding;  // [vocab, d], tied input/output
    std::vector<Block> encoder;
    std::vector<Block> decoder;
    LayerNormWeights enc_final_ln;  // defined iff encoder non-empty
    LayerNormWeights dec_final_ln;

    // All trainable tensors in a stable, named order (checkpoint contract).
    std::vector<Tensor> parameters() const;
    int64_t n_params() const;
};

// Deterministic initialization from the seed; invalid configs throw.
Model build_model(const ModelConfig& config, uint64_t seed);

enum class MaskMode { bidirectional, causal, cross };

// Scaled dot-product attention over already-projected (and, for self
// attention, already-rotated) states. q is [Tq, n_heads*d_head], k and v are
// [Tk, n_kv_heads*d_head]; query head h reads kv group h / (n_heads/n_kv_heads).
// key_keep marks real key positions (empty span = all real); masked entries
// get -1e30 before softmax. causal additionally restricts row i to keys <= i
// (requires Tq == Tk).
Tensor attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads,
                 int64_t n_kv_heads, MaskMode mode, std::span<const uint8_t> key_keep);

// Differentiable rotary embedding over rows of [T, n_heads*d_head].
Tensor rope_rows(Graph& g, const Tensor& x, std::vector<int> positions, int64_t n_heads,
                 int64_t d_head, double base, int64_t ntk_train_len);

// Position ids that skip padding: real tokens are numbered 0..n_real-1 in
// order; each pad row repeats the running count (it is masked out anyway).
std::vector<int> positions_skip_pads(std::span<const uint8_t> keep);

// ---- teacher-forced training forwards (autograd path) ----

// Encoder-decoder: runs the encoder over x and the decoder over dec_in
// (typically BOS + targets); returns next-token logits [T_dec, vocab].
Tensor encdec_forward(Graph& g, const Model& m, std::span<const int> x_ids,
                      std::span<const uint8_t> x_keep, std::span<const int> dec_in_ids,
                      std::span<const uint8_t> dec_keep);

// Decoder-only: one causal pass over the whole sequence; logits [T, vocab].
Tensor deconly_forward(Graph& g, const Model& m, std::span<const int> ids,
                       std::span<const uint8_t> keep);

}  // namespace edslm
