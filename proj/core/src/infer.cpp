#include "edslm/infer.hpp"

#include <cmath>
#include <stdexcept>

#include "edslm/rope.hpp"
#include "kernels.hpp"

namespace edslm {

namespace {

constexpr double kLnEps = 1e-5;   // matches the autograd layer_norm default
constexpr float kMaskAdd = -1e30f;

// Row-wise layer norm mirroring the training-path formula exactly.
void ln_rows(const float* x, int64_t rows, int64_t cols, const LayerNormWeights& w, float* out) {
    const float* gv = w.gain.values().data();
    const float* bv = w.bias.values().data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = x + r * cols;
        float* orow = out + r * cols;
        float mean = 0.f;
        for (int64_t j = 0; j < cols; ++j) mean += row[j];
        mean /= static_cast<float>(cols);
        float var = 0.f;
        for (int64_t j = 0; j < cols; ++j) {
            const float d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<float>(cols);
        const float inv = 1.f / std::sqrt(var + static_cast<float>(kLnEps));
        for (int64_t j = 0; j < cols; ++j) orow[j] = gv[j] * (row[j] - mean) * inv + bv[j];
    }
}

void gelu_inplace(float* x, int64_t n) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    for (int64_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x[i]);
        x[i] = static_cast<float>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
}

void softmax_inplace(float* row, int64_t n) {
    float mx = row[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    float denom = 0.f;
    for (int64_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        denom += row[j];
    }
    for (int64_t j = 0; j < n; ++j) row[j] /= denom;
}

// out[rows, n] = x[rows, k] * W[k, n]
void linear(const float* x, int64_t rows, const Tensor& w, float* out, FlopCounter* fc) {
    const int64_t k = w.dim(0), n = w.dim(1);
    kernels::gemm_nn(x, w.values().data(), out, rows, k, n, false);
    if (fc) fc->on_matmul(rows, k, n);
}

void check_token(const ModelConfig& c, int id, const char* what) {
    if (id < 0 || id >= c.vocab_size)
        throw std::invalid_argument(std::string(what) + ": token id out of vocab range");
}

// Full-sequence GQA attention over materialized q/k/v blocks (encoder path).
// q: [t, d], k/v: [t, kvw]; result [t, d].
void attn_block(const float* q, const float* k, const float* v, int64_t t, int64_t n_heads,
                int64_t n_kv_heads, int64_t dh, std::span<const uint8_t> keep, float* out,
                FlopCounter* fc) {
    const int64_t group = n_heads / n_kv_heads;
    const int64_t kvw = n_kv_heads * dh;
    const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<float> scores(static_cast<size_t>(t));
    std::vector<float> oh(static_cast<size_t>(dh));
    for (int64_t h = 0; h < n_heads; ++h) {
        const int64_t kv = h / group;
        for (int64_t i = 0; i < t; ++i) {
            const float* qrow = q + i * n_heads * dh + h * dh;
            for (int64_t j = 0; j < t; ++j) {
                const float* krow = k + j * kvw + kv * dh;
                float dot = 0.f;
                for (int64_t e = 0; e < dh; ++e) dot += qrow[e] * krow[e];
                scores[static_cast<size_t>(j)] = dot * inv_sqrt;
                if (!keep.empty() && !keep[static_cast<size_t>(j)])
                    scores[static_cast<size_t>(j)] += kMaskAdd;
            }
            softmax_inplace(scores.data(), t);
            std::fill(oh.begin(), oh.end(), 0.f);
            for (int64_t j = 0; j < t; ++j) {
                const float* vrow = v + j * kvw + kv * dh;
                const float p = scores[static_cast<size_t>(j)];
                for (int64_t e = 0; e < dh; ++e) oh[static_cast<size_t>(e)] += p * vrow[e];
            }
            float* orow = out + i * n_heads * dh + h * dh;
            for (int64_t e = 0; e < dh; ++e) orow[e] = oh[static_cast<size_t>(e)];
        }
        if (fc) {
            fc->on_matmul(t, dh, t);  // scores
            fc->on_matmul(t, t, dh);  // mixing
        }
    }
}

// Single-query GQA attention over t cached/precomputed K/V rows.
void attn_row(const float* q, const float* k, const float* v, int64_t t, int64_t n_heads,
              int64_t n_kv_heads, int64_t dh, std::span<const uint8_t> keep, float* out,
              FlopCounter* fc) {
    const int64_t group = n_heads / n_kv_heads;
    const int64_t kvw = n_kv_heads * dh;
    const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<float> scores(static_cast<size_t>(t));
    for (int64_t h = 0; h < n_heads; ++h) {
        const int64_t kv = h / group;
        const float* qh = q + h * dh;
        for (int64_t j = 0; j < t; ++j) {
            const float* krow = k + j * kvw + kv * dh;
            float dot = 0.f;
            for (int64_t e = 0; e < dh; ++e) dot += qh[e] * krow[e];
            scores[static_cast<size_t>(j)] = dot * inv_sqrt;
            if (!keep.empty() && !keep[static_cast<size_t>(j)])
                scores[static_cast<size_t>(j)] += kMaskAdd;
        }
        softmax_inplace(scores.data(), t);
        float* oh = out + h * dh;
        std::fill(oh, oh + dh, 0.f);
        for (int64_t j = 0; j < t; ++j) {
            const float* vrow = v + j * kvw + kv * dh;
            const float p = scores[static_cast<size_t>(j)];
            for (int64_t e = 0; e < dh; ++e) oh[e] += p * vrow[e];
        }
        if (fc) {
            fc->on_matmul(1, dh, t);
            fc->on_matmul(1, t, dh);
        }
    }
}

}  // namespace

KVCache::KVCache(const Model& m) {
    const ModelConfig& c = m.config;
    cap = c.kind == ModelKind::decoder_only ? c.max_enc_len + c.max_dec_len : c.max_dec_len;
    layers.resize(static_cast<size_t>(c.n_dec_layers));
}

EncodedContext encode_once(const Model& m, std::span<const int> x, std::span<const uint8_t> x_keep,
                           FlopCounter* fc) {
    const ModelConfig& c = m.config;
    if (c.kind != ModelKind::encoder_decoder)
        throw std::logic_error("encode_once: decoder_only models have no encoder");
    if (x.empty()) throw std::invalid_argument("encode_once: empty input");
    if (static_cast<int64_t>(x.size()) > c.max_enc_len)
        throw std::invalid_argument("encode_once: input exceeds max_enc_len");
    for (int id : x) check_token(c, id, "encode_once");
    std::vector<uint8_t> keep_store;
    if (x_keep.empty()) {
        keep_store.assign(x.size(), uint8_t(1));
        x_keep = keep_store;
    }
    if (x_keep.size() != x.size())
        throw std::invalid_argument("encode_once: mask length mismatch");
    if (fc) ++fc->encoder_calls;

    const int64_t t = static_cast<int64_t>(x.size());
    const int64_t d = c.d_model, kvw = c.kv_width(), dh = c.d_head();
    const std::vector<int> pos = positions_skip_pads(x_keep);
    const float* emb = m.embedding.values().data();

    std::vector<float> h(static_cast<size_t>(t * d));
    for (int64_t i = 0; i < t; ++i)
        std::copy_n(emb + static_cast<int64_t>(x[static_cast<size_t>(i)]) * d, d, h.data() + i * d);

    std::vector<float> n(static_cast<size_t>(t * d)), q(static_cast<size_t>(t * d));
    std::vector<float> k(static_cast<size_t>(t * kvw)), v(static_cast<size_t>(t * kvw));
    std::vector<float> a(static_cast<size_t>(t * d)), proj(static_cast<size_t>(t * d));
    std::vector<float> f1(static_cast<size_t>(t * c.d_ff));
    for (const Block& b : m.encoder) {
        ln_rows(h.data(), t, d, b.ln_self, n.data());
        linear(n.data(), t, b.self_attn.wq, q.data(), fc);
        linear(n.data(), t, b.self_attn.wk, k.data(), fc);
        linear(n.data(), t, b.self_attn.wv, v.data(), fc);
        rope_apply_inplace(q.data(), std::span<const int>(pos), c.n_heads, dh, c.rope_base,
                           c.ntk_train_len);
        rope_apply_inplace(k.data(), std::span<const int>(pos), c.n_kv_heads, dh, c.rope_base,
                           c.ntk_train_len);
        attn_block(q.data(), k.data(), v.data(), t, c.n_heads, c.n_kv_heads, dh, x_keep, a.data(),
                   fc);
        linear(a.data(), t, b.self_attn.wo, proj.data(), fc);
        for (size_t i = 0; i < h.size(); ++i) h[i] += proj[i];
        ln_rows(h.data(), t, d, b.ln_ffn, n.data());
        linear(n.data(), t, b.w1, f1.data(), fc);
        gelu_inplace(f1.data(), t * c.d_ff);
        linear(f1.data(), t, b.w2, proj.data(), fc);
        for (size_t i = 0; i < h.size(); ++i) h[i] += proj[i];
    }

    EncodedContext ctx;
    ctx.len = t;
    ctx.encoder_output.resize(static_cast<size_t>(t * d));
    ln_rows(h.data(), t, d, m.enc_final_ln, ctx.encoder_output.data());
    ctx.input_mask.assign(x_keep.begin(), x_keep.end());
    ctx.cross_kv.resize(m.decoder.size());
    for (size_t l = 0; l < m.decoder.size(); ++l) {
        ctx.cross_kv[l].k.resize(static_cast<size_t>(t * kvw));
        ctx.cross_kv[l].v.resize(static_cast<size_t>(t * kvw));
        linear(ctx.encoder_output.data(), t, m.decoder[l].cross_attn.wk, ctx.cross_kv[l].k.data(),
               fc);
        linear(ctx.encoder_output.data(), t, m.decoder[l].cross_attn.wv, ctx.cross_kv[l].v.data(),
               fc);
    }
    return ctx;
}

std::vector<float> decode_step(const Model& m, const EncodedContext* ctx, KVCache& cache,
                               int token, FlopCounter* fc) {
    const ModelConfig& c = m.config;
    const bool encdec = c.kind == ModelKind::encoder_decoder;
    if (encdec && ctx == nullptr)
        throw std::invalid_argument("decode_step: encoder-decoder model requires an EncodedContext");
    if (!encdec && ctx != nullptr)
        throw std::invalid_argument("decode_step: decoder_only model takes no EncodedContext");
    if (cache.len >= cache.cap) throw std::length_error("decode_step: kv cache is full");
    if (encdec && static_cast<int64_t>(ctx->cross_kv.size()) != c.n_dec_layers)
        throw std::invalid_argument("decode_step: context layer count mismatch");
    check_token(c, token, "decode_step");

    const int64_t d = c.d_model, kvw = c.kv_width(), dh = c.d_head();
    const int pos = static_cast<int>(cache.len);
    std::vector<float> row(static_cast<size_t>(d));
    std::copy_n(m.embedding.values().data() + static_cast<int64_t>(token) * d, d, row.data());

    std::vector<float> n(static_cast<size_t>(d)), q(static_cast<size_t>(d));
    std::vector<float> kv_k(static_cast<size_t>(kvw)), kv_v(static_cast<size_t>(kvw));
    std::vector<float> a(static_cast<size_t>(d)), proj(static_cast<size_t>(d));
    std::vector<float> f1(static_cast<size_t>(c.d_ff));
    const std::vector<int> pos1{pos};
    for (size_t l = 0; l < m.decoder.size(); ++l) {
        const Block& b = m.decoder[l];
        ln_rows(row.data(), 1, d, b.ln_self, n.data());
        linear(n.data(), 1, b.self_attn.wq, q.data(), fc);
        linear(n.data(), 1, b.self_attn.wk, kv_k.data(), fc);
        linear(n.data(), 1, b.self_attn.wv, kv_v.data(), fc);
        rope_apply_inplace(q.data(), std::span<const int>(pos1), c.n_heads, dh, c.rope_base,
                           c.ntk_train_len);
        rope_apply_inplace(kv_k.data(), std::span<const int>(pos1), c.n_kv_heads, dh, c.rope_base,
                           c.ntk_train_len);
        KVCache::LayerKV& lay = cache.layers[l];
        lay.k.insert(lay.k.end(), kv_k.begin(), kv_k.end());
        lay.v.insert(lay.v.end(), kv_v.begin(), kv_v.end());
        const int64_t t = cache.len + 1;
        attn_row(q.data(), lay.k.data(), lay.v.data(), t, c.n_heads, c.n_kv_heads, dh, {}, a.data(),
                 fc);
        linear(a.data(), 1, b.self_attn.wo, proj.data(), fc);
        for (int64_t i = 0; i < d; ++i) row[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];
        if (encdec) {
            ln_rows(row.data(), 1, d, b.ln_cross, n.data());
            linear(n.data(), 1, b.cross_attn.wq, q.data(), fc);
            attn_row(q.data(), ctx->cross_kv[l].k.data(), ctx->cross_kv[l].v.data(), ctx->len,
                     c.n_heads, c.n_kv_heads, dh, ctx->input_mask, a.data(), fc);
            linear(a.data(), 1, b.cross_attn.wo, proj.data(), fc);
            for (int64_t i = 0; i < d; ++i)
                row[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];
        }
        ln_rows(row.data(), 1, d, b.ln_ffn, n.data());
        linear(n.data(), 1, b.w1, f1.data(), fc);
        gelu_inplace(f1.data(), c.d_ff);
        linear(f1.data(), 1, b.w2, proj.data(), fc);
        for (int64_t i = 0; i < d; ++i) row[static_cast<size_t>(i)] += proj[static_cast<size_t>(i)];
    }
    cache.len += 1;

    ln_rows(row.data(), 1, d, m.dec_final_ln, n.data());
    std::vector<float> logits(static_cast<size_t>(c.vocab_size));
    kernels::gemm_nt(n.data(), m.embedding.values().data(), logits.data(), 1, d, c.vocab_size,
                     false);
    if (fc) fc->on_matmul(1, d, c.vocab_size);
    return logits;
}

std::vector<float> prefill(const Model& m, std::span<const int> ids, KVCache& cache,
                           FlopCounter* fc) {
    if (m.config.kind != ModelKind::decoder_only)
        throw std::logic_error("prefill: only decoder_only models prefill their input");
    if (ids.empty()) throw std::invalid_argument("prefill: empty input");
    std::vector<float> all;
    all.reserve(ids.size() * static_cast<size_t>(m.config.vocab_size));
    for (int id : ids) {
        std::vector<float> logits = decode_step(m, nullptr, cache, id, fc);
        all.insert(all.end(), logits.begin(), logits.end());
    }
    return all;
}

int argmax_lowest(std::span<const float> v) {
    if (v.empty()) throw std::invalid_argument("argmax over empty span");
    int best = 0;
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

std::vector<int> greedy_decode(const Model& m, std::span<const int> x, int max_new, int eos_id,
                               int bos_id, FlopCounter* fc) {
    const ModelConfig& c = m.config;
    if (max_new < 1) throw std::invalid_argument("greedy_decode: max_new must be >= 1");
    const bool encdec = c.kind == ModelKind::encoder_decoder;
    if (encdec && bos_id < 0)
        throw std::invalid_argument("greedy_decode: encoder-decoder model requires bos_id");

    std::vector<int> out;
    KVCache cache(m);
    EncodedContext ctx;
    std::vector<float> logits;
    if (encdec) {
        ctx = encode_once(m, x, {}, fc);
        logits = decode_step(m, &ctx, cache, bos_id, fc);
    } else {
        std::vector<float> all = prefill(m, x, cache, fc);
        logits.assign(all.end() - c.vocab_size, all.end());
    }
    for (int i = 0; i < max_new; ++i) {
        const int tok = argmax_lowest(logits);
        out.push_back(tok);
        if (tok == eos_id || i + 1 == max_new) break;
        logits = decode_step(m, encdec ? &ctx : nullptr, cache, tok, fc);
    }
    return out;
}

}  // namespace edslm
