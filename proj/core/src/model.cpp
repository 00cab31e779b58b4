#include "edslm/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "edslm/rope.hpp"

namespace edslm {

// ---------------------------------------------------------------- config --

void ModelConfig::validate() const {
    if (n_dec_layers <= 0) throw std::invalid_argument("config: n_dec_layers must be positive");
    if (n_enc_layers < 0) throw std::invalid_argument("config: n_enc_layers must be nonnegative");
    if (kind == ModelKind::decoder_only && n_enc_layers != 0)
        throw std::invalid_argument("config: decoder_only requires n_enc_layers == 0");
    if (kind == ModelKind::encoder_decoder && n_enc_layers == 0)
        throw std::invalid_argument("config: encoder_decoder requires n_enc_layers > 0");
    if (d_model <= 0) throw std::invalid_argument("config: d_model must be positive");
    if (n_heads <= 0) throw std::invalid_argument("config: n_heads must be positive");
    if (n_kv_heads <= 0) throw std::invalid_argument("config: n_kv_heads must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("config: d_model must be a multiple of n_heads");
    if (n_heads % n_kv_heads != 0)
        throw std::invalid_argument("config: n_kv_heads must divide n_heads");
    if (d_head() % 2 != 0) throw std::invalid_argument("config: rope requires an even d_head");
    if (d_ff <= 0) throw std::invalid_argument("config: d_ff must be positive");
    if (vocab_size <= 0) throw std::invalid_argument("config: vocab_size must be positive");
    if (rope_base <= 0) throw std::invalid_argument("config: rope_base must be positive");
    if (ntk_train_len <= 0) throw std::invalid_argument("config: ntk_train_len must be positive");
    if (max_enc_len <= 0) throw std::invalid_argument("config: max_enc_len must be positive");
    if (max_dec_len <= 0) throw std::invalid_argument("config: max_dec_len must be positive");
}

int64_t count_params(const ModelConfig& c) {
    c.validate();
    const int64_t d = c.d_model, kvw = c.kv_width();
    const int64_t attn = d * d + 2 * d * kvw + d * d;  // wq + wk + wv + wo
    const int64_t ln = 2 * d;                          // gain + bias
    const int64_t ffn = 2 * d * c.d_ff;                // w1 + w2
    const int64_t layer_plain = attn + ffn + 2 * ln;   // ln_self, ln_ffn
    const int64_t layer_cross = layer_plain + attn + ln;
    int64_t total = c.vocab_size * d;  // tied embedding
    total += c.n_enc_layers * layer_plain + (c.n_enc_layers > 0 ? ln : 0);
    const bool cross = c.kind == ModelKind::encoder_decoder;
    total += c.n_dec_layers * (cross ? layer_cross : layer_plain) + ln;
    return total;
}

namespace {

ModelConfig desk_base() {
    ModelConfig c;
    c.d_model = 256;
    c.n_heads = 8;
    c.n_kv_heads = 2;
    c.d_ff = 1024;
    c.vocab_size = 512;
    c.rope_base = 10000.0;
    c.ntk_train_len = 1024;
    c.max_enc_len = 4096;
    c.max_dec_len = 4096;
    return c;
}

ModelConfig desk_encdec(int64_t n_enc, int64_t n_dec) {
    ModelConfig c = desk_base();
    c.kind = ModelKind::encoder_decoder;
    c.n_enc_layers = n_enc;
    c.n_dec_layers = n_dec;
    return c;
}

ModelConfig desk_deconly(int64_t n_layers) {
    ModelConfig c = desk_base();
    c.kind = ModelKind::decoder_only;
    c.n_enc_layers = 0;
    c.n_dec_layers = n_layers;
    return c;
}

ModelConfig toy_base() {
    ModelConfig c;
    c.d_model = 64;
    c.n_heads = 4;
    c.n_kv_heads = 2;
    c.d_ff = 256;
    c.vocab_size = 512;
    c.ntk_train_len = 512;
    c.max_enc_len = 1024;
    c.max_dec_len = 1024;
    return c;
}

}  // namespace

ModelConfig preset(const std::string& name) {
    if (name == "ed_3_9") return desk_encdec(3, 9);
    if (name == "ed_6_6") return desk_encdec(6, 6);
    if (name == "ed_9_3") return desk_encdec(9, 3);
    if (name == "ed_8_4") return desk_encdec(8, 4);
    if (name == "ed_2_9") return desk_encdec(2, 9);
    if (name == "do_13") return desk_deconly(13);
    if (name == "do_14") return desk_deconly(14);
    if (name == "toy_ed") {
        ModelConfig c = toy_base();
        c.kind = ModelKind::encoder_decoder;
        c.n_enc_layers = 2;
        c.n_dec_layers = 2;
        return c;
    }
    if (name == "toy_do") {
        ModelConfig c = toy_base();
        c.kind = ModelKind::decoder_only;
        c.n_enc_layers = 0;
        c.n_dec_layers = 5;
        return c;
    }
    if (name == "toy_teacher") {
        ModelConfig c = toy_base();
        c.kind = ModelKind::decoder_only;
        c.n_enc_layers = 0;
        c.n_dec_layers = 6;
        c.d_model = 128;
        c.d_ff = 512;
        return c;
    }
    throw std::invalid_argument("unknown model preset '" + name + "'");
}

std::vector<std::string> preset_names() {
    return {"ed_3_9", "ed_6_6", "ed_9_3", "ed_8_4", "ed_2_9",
            "do_13",  "do_14",  "toy_ed", "toy_do", "toy_teacher"};
}

// ----------------------------------------------------------------- build --

namespace {

struct Initializer {
    std::mt19937_64 rng;
    std::normal_distribution<float> dist{0.0f, 0.02f};

    Tensor normal(std::vector<int64_t> shape, const std::string& name) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        for (float& v : t.values()) v = dist(rng);
        t.set_name(name);
        return t;
    }
    LayerNormWeights norm(int64_t d, const std::string& prefix) {
        LayerNormWeights w;
        w.gain = Tensor::full({d}, 1.0f, true);
        w.gain.set_name(prefix + ".gain");
        w.bias = Tensor::zeros({d}, true);
        w.bias.set_name(prefix + ".bias");
        return w;
    }
    AttentionWeights attn(int64_t d, int64_t kvw, const std::string& prefix) {
        AttentionWeights w;
        w.wq = normal({d, d}, prefix + ".wq");
        w.wk = normal({d, kvw}, prefix + ".wk");
        w.wv = normal({d, kvw}, prefix + ".wv");
        w.wo = normal({d, d}, prefix + ".wo");
        return w;
    }
    Block block(const ModelConfig& c, bool with_cross, const std::string& prefix) {
        Block b;
        b.ln_self = norm(c.d_model, prefix + ".ln_self");
        b.self_attn = attn(c.d_model, c.kv_width(), prefix + ".self");
        b.has_cross = with_cross;
        if (with_cross) {
            b.ln_cross = norm(c.d_model, prefix + ".ln_cross");
            b.cross_attn = attn(c.d_model, c.kv_width(), prefix + ".cross");
        }
        b.ln_ffn = norm(c.d_model, prefix + ".ln_ffn");
        b.w1 = normal({c.d_model, c.d_ff}, prefix + ".ffn.w1");
        b.w2 = normal({c.d_ff, c.d_model}, prefix + ".ffn.w2");
        return b;
    }
};

void push_norm(std::vector<Tensor>& out, const LayerNormWeights& w) {
    out.push_back(w.gain);
    out.push_back(w.bias);
}

void push_attn(std::vector<Tensor>& out, const AttentionWeights& w) {
    out.push_back(w.wq);
    out.push_back(w.wk);
    out.push_back(w.wv);
    out.push_back(w.wo);
}

void push_block(std::vector<Tensor>& out, const Block& b) {
    push_norm(out, b.ln_self);
    push_attn(out, b.self_attn);
    if (b.has_cross) {
        push_norm(out, b.ln_cross);
        push_attn(out, b.cross_attn);
    }
    push_norm(out, b.ln_ffn);
    out.push_back(b.w1);
    out.push_back(b.w2);
}

}  // namespace

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    out.push_back(embedding);
    for (const Block& b : encoder) push_block(out, b);
    if (!encoder.empty()) push_norm(out, enc_final_ln);
    for (const Block& b : decoder) push_block(out, b);
    push_norm(out, dec_final_ln);
    return out;
}

int64_t Model::n_params() const {
    int64_t n = 0;
    for (const Tensor& t : parameters()) n += t.numel();
    return n;
}

Model build_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    Initializer init{std::mt19937_64(seed)};
    m.embedding = init.normal({config.vocab_size, config.d_model}, "embed");
    for (int64_t i = 0; i < config.n_enc_layers; ++i)
        m.encoder.push_back(init.block(config, false, "enc." + std::to_string(i)));
    if (!m.encoder.empty()) m.enc_final_ln = init.norm(config.d_model, "enc_final");
    const bool cross = config.kind == ModelKind::encoder_decoder;
    for (int64_t i = 0; i < config.n_dec_layers; ++i)
        m.decoder.push_back(init.block(config, cross, "dec." + std::to_string(i)));
    m.dec_final_ln = init.norm(config.d_model, "dec_final");
    return m;
}

// ------------------------------------------------------------- attention --

std::vector<int> positions_skip_pads(std::span<const uint8_t> keep) {
    std::vector<int> pos(keep.size());
    int p = 0;
    for (size_t i = 0; i < keep.size(); ++i) {
        pos[i] = p;
        if (keep[i]) ++p;
    }
    return pos;
}

Tensor attention(Graph& g, const Tensor& q, const Tensor& k, const Tensor& v, int64_t n_heads,
                 int64_t n_kv_heads, MaskMode mode, std::span<const uint8_t> key_keep) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
        throw std::invalid_argument("attention expects 2-d q/k/v");
    const int64_t tq = q.dim(0), tk = k.dim(0);
    if (n_heads % n_kv_heads != 0)
        throw std::invalid_argument("attention: n_kv_heads must divide n_heads");
    if (q.dim(1) % n_heads != 0) throw std::invalid_argument("attention: q width not divisible by heads");
    const int64_t dh = q.dim(1) / n_heads;
    if (k.dim(1) != n_kv_heads * dh || v.dim(1) != n_kv_heads * dh)
        throw std::invalid_argument("attention: k/v width mismatch with kv heads");
    if (k.dim(0) != v.dim(0)) throw std::invalid_argument("attention: k/v length mismatch");
    if (mode == MaskMode::causal && tq != tk)
        throw std::invalid_argument("attention: causal mode requires Tq == Tk");
    if (!key_keep.empty() && static_cast<int64_t>(key_keep.size()) != tk)
        throw std::invalid_argument("attention: key mask length mismatch");

    // Additive mask; shared across heads. -1e30 knocks entries out of softmax.
    const bool any_pad = [&] {
        for (uint8_t b : key_keep)
            if (!b) return true;
        return false;
    }();
    Tensor mask;
    if (mode == MaskMode::causal || any_pad) {
        mask = Tensor::zeros({tq, tk});
        for (int64_t i = 0; i < tq; ++i)
            for (int64_t j = 0; j < tk; ++j) {
                bool blocked = (mode == MaskMode::causal && j > i);
                if (!key_keep.empty() && !key_keep[static_cast<size_t>(j)]) blocked = true;
                if (blocked) mask.at(i, j) = -1e30f;
            }
    }

    const int64_t group = n_heads / n_kv_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<size_t>(n_heads));
    for (int64_t h = 0; h < n_heads; ++h) {
        const int64_t kv = h / group;
        Tensor qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = g.slice_cols(k, kv * dh, (kv + 1) * dh);
        Tensor vh = g.slice_cols(v, kv * dh, (kv + 1) * dh);
        Tensor scores = g.scale(g.matmul_nt(qh, kh), inv_sqrt);
        if (mask.defined()) scores = g.add(scores, mask);
        Tensor probs = g.softmax_rows(scores);
        heads.push_back(g.matmul(probs, vh));
    }
    return g.concat_cols(heads);
}

Tensor rope_rows(Graph& g, const Tensor& x, std::vector<int> positions, int64_t n_heads,
                 int64_t d_head, double base, int64_t ntk_train_len) {
    if (x.shape().size() != 2 || x.dim(1) != n_heads * d_head)
        throw std::invalid_argument("rope_rows: input must be [T, n_heads*d_head]");
    if (x.dim(0) != static_cast<int64_t>(positions.size()))
        throw std::invalid_argument("rope_rows: one position per row required");
    Tensor out = Tensor::from(x.shape(), {x.values().begin(), x.values().end()});
    rope_apply_inplace(out.values().data(), std::span<const int>(positions), n_heads, d_head, base,
                       ntk_train_len, +1);
    auto shared_pos = std::make_shared<std::vector<int>>(std::move(positions));
    Tensor in = x;
    g.record_custom("rope", {x}, out,
                    [in, out, shared_pos, n_heads, d_head, base, ntk_train_len]() {
                        if (!in.requires_grad()) return;
                        std::vector<float> gin(out.grad().begin(), out.grad().end());
                        rope_apply_inplace(gin.data(), std::span<const int>(*shared_pos), n_heads,
                                           d_head, base, ntk_train_len, -1);
                        auto dst = in.grad();
                        for (size_t i = 0; i < gin.size(); ++i) dst[i] += gin[i];
                    });
    return out;
}

// ---------------------------------------------------------- train passes --

namespace {

Tensor apply_ln(Graph& g, const Tensor& x, const LayerNormWeights& w) {
    return g.layer_norm(x, w.gain, w.bias);
}

Tensor ffn_forward(Graph& g, const Block& b, const Tensor& h) {
    Tensor n = apply_ln(g, h, b.ln_ffn);
    return g.add(h, g.matmul(g.gelu(g.matmul(n, b.w1)), b.w2));
}

// Self-attention sub-block with RoPE; returns h + attn_out.
Tensor self_attn_forward(Graph& g, const ModelConfig& c, const Block& b, const Tensor& h,
                         const std::vector<int>& positions, MaskMode mode,
                         std::span<const uint8_t> keep) {
    Tensor n = apply_ln(g, h, b.ln_self);
    Tensor q = g.matmul(n, b.self_attn.wq);
    Tensor k = g.matmul(n, b.self_attn.wk);
    Tensor v = g.matmul(n, b.self_attn.wv);
    q = rope_rows(g, q, positions, c.n_heads, c.d_head(), c.rope_base, c.ntk_train_len);
    k = rope_rows(g, k, positions, c.n_kv_heads, c.d_head(), c.rope_base, c.ntk_train_len);
    Tensor a = attention(g, q, k, v, c.n_heads, c.n_kv_heads, mode, keep);
    return g.add(h, g.matmul(a, b.self_attn.wo));
}

// Cross-attention sub-block (no RoPE: encoder output is position-agnostic here).
Tensor cross_attn_forward(Graph& g, const ModelConfig& c, const Block& b, const Tensor& h,
                          const Tensor& enc_out, std::span<const uint8_t> x_keep) {
    Tensor n = apply_ln(g, h, b.ln_cross);
    Tensor q = g.matmul(n, b.cross_attn.wq);
    Tensor k = g.matmul(enc_out, b.cross_attn.wk);
    Tensor v = g.matmul(enc_out, b.cross_attn.wv);
    Tensor a = attention(g, q, k, v, c.n_heads, c.n_kv_heads, MaskMode::cross, x_keep);
    return g.add(h, g.matmul(a, b.cross_attn.wo));
}

std::vector<uint8_t> all_ones(size_t n) { return std::vector<uint8_t>(n, uint8_t(1)); }

void check_ids(const ModelConfig& c, std::span<const int> ids, const char* what) {
    if (ids.empty()) throw std::invalid_argument(std::string(what) + ": empty token sequence");
    for (int id : ids)
        if (id < 0 || id >= c.vocab_size)
            throw std::invalid_argument(std::string(what) + ": token id out of vocab range");
}

}  // namespace

Tensor encdec_forward(Graph& g, const Model& m, std::span<const int> x_ids,
                      std::span<const uint8_t> x_keep, std::span<const int> dec_in_ids,
                      std::span<const uint8_t> dec_keep) {
    const ModelConfig& c = m.config;
    if (c.kind != ModelKind::encoder_decoder)
        throw std::invalid_argument("encdec_forward: model is not encoder_decoder");
    check_ids(c, x_ids, "encoder input");
    check_ids(c, dec_in_ids, "decoder input");
    std::vector<uint8_t> xk_store, dk_store;
    if (x_keep.empty()) {
        xk_store = all_ones(x_ids.size());
        x_keep = xk_store;
    }
    if (dec_keep.empty()) {
        dk_store = all_ones(dec_in_ids.size());
        dec_keep = dk_store;
    }
    if (x_keep.size() != x_ids.size() || dec_keep.size() != dec_in_ids.size())
        throw std::invalid_argument("encdec_forward: mask length mismatch");
    if (static_cast<int64_t>(x_ids.size()) > c.max_enc_len)
        throw std::invalid_argument("encdec_forward: encoder input exceeds max_enc_len");
    if (static_cast<int64_t>(dec_in_ids.size()) > c.max_dec_len)
        throw std::invalid_argument("encdec_forward: decoder input exceeds max_dec_len");

    const std::vector<int> x_pos = positions_skip_pads(x_keep);
    Tensor h = g.embedding(m.embedding, x_ids);
    for (const Block& b : m.encoder) {
        h = self_attn_forward(g, c, b, h, x_pos, MaskMode::bidirectional, x_keep);
        h = ffn_forward(g, b, h);
    }
    Tensor enc_out = apply_ln(g, h, m.enc_final_ln);

    const std::vector<int> d_pos = positions_skip_pads(dec_keep);
    Tensor hd = g.embedding(m.embedding, dec_in_ids);
    for (const Block& b : m.decoder) {
        hd = self_attn_forward(g, c, b, hd, d_pos, MaskMode::causal, dec_keep);
        hd = cross_attn_forward(g, c, b, hd, enc_out, x_keep);
        hd = ffn_forward(g, b, hd);
    }
    Tensor fin = apply_ln(g, hd, m.dec_final_ln);
    return g.matmul_nt(fin, m.embedding);
}

Tensor deconly_forward(Graph& g, const Model& m, std::span<const int> ids,
                       std::span<const uint8_t> keep) {
    const ModelConfig& c = m.config;
    if (c.kind != ModelKind::decoder_only)
        throw std::invalid_argument("deconly_forward: model is not decoder_only");
    check_ids(c, ids, "input");
    std::vector<uint8_t> k_store;
    if (keep.empty()) {
        k_store = all_ones(ids.size());
        keep = k_store;
    }
    if (keep.size() != ids.size())
        throw std::invalid_argument("deconly_forward: mask length mismatch");
    if (static_cast<int64_t>(ids.size()) > c.max_enc_len + c.max_dec_len)
        throw std::invalid_argument("deconly_forward: sequence exceeds max length");

    const std::vector<int> pos = positions_skip_pads(keep);
    Tensor h = g.embedding(m.embedding, ids);
    for (const Block& b : m.decoder) {
        h = self_attn_forward(g, c, b, h, pos, MaskMode::causal, keep);
        h = ffn_forward(g, b, h);
    }
    Tensor fin = apply_ln(g, h, m.dec_final_ln);
    return g.matmul_nt(fin, m.embedding);
}

}  // namespace edslm
