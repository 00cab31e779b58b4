#include "edslm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kernels.hpp"

namespace edslm {

namespace {

template <typename S>
void require_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

template <typename S>
void require_2d(const char* op, const TensorT<S>& a) {
    if (a.shape().size() != 2)
        throw std::invalid_argument(std::string(op) + ": expected 2-d tensor, got " +
                                    shape_str(a.shape()));
}

}  // namespace

template <typename S>
TensorT<S> GraphT<S>::make_output(std::vector<int64_t> shape, bool requires_grad) {
    return TensorT<S>::zeros(std::move(shape), requires_grad);
}

template <typename S>
void GraphT<S>::check_finite(const char* op, const TensorT<S>& out) const {
    for (S v : out.values()) {
        if (!std::isfinite(static_cast<double>(v)))
            throw std::runtime_error(std::string("non-finite value produced by op '") + op + "'");
    }
}

template <typename S>
void GraphT<S>::finish_op(const char* op, TensorT<S>& out, bool record, std::function<void()> fn) {
    check_finite(op, out);
    if (record) tape_.push_back(TapeEntry{op, out, std::move(fn)});
}

// ---- elementwise ----

template <typename S>
TensorT<S> GraphT<S>::add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output(a.shape(), rg);
    auto ov = out.values();
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    finish_op("add", out, rg, [a, b, out]() mutable {
        auto go = out.grad();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
        }
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output(a.shape(), rg);
    auto ov = out.values();
    auto av = a.values(), bv = b.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    finish_op("mul", out, rg, [a, b, out]() mutable {
        auto go = out.grad();
        auto av = a.values(), bv = b.values();
        if (a.requires_grad()) {
            auto ga = a.grad();
            for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
        }
        if (b.requires_grad()) {
            auto gb = b.grad();
            for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
        }
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::scale(const Tensor& a, double c) {
    const bool rg = a.requires_grad();
    Tensor out = make_output(a.shape(), rg);
    auto ov = out.values();
    auto av = a.values();
    const S cs = static_cast<S>(c);
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * cs;
    finish_op("scale", out, rg, [a, out, cs]() mutable {
        auto go = out.grad();
        auto ga = a.grad();
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * cs;
    });
    return out;
}

// ---- matrix products ----

template <typename S>
TensorT<S> GraphT<S>::matmul(const Tensor& a, const Tensor& b) {
    require_2d("matmul", a);
    require_2d("matmul", b);
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw std::invalid_argument("matmul: inner dims differ, " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output({m, n}, rg);
    kernels::gemm_nn(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
    finish_op("matmul", out, rg, [a, b, out, m, k, n]() mutable {
        const S* go = out.grad().data();
        if (a.requires_grad())  // dA[m,k] += dC[m,n] * B[k,n]^T
            kernels::gemm_nt(go, b.values().data(), a.grad().data(), m, n, k, true);
        if (b.requires_grad())  // dB[k,n] += A[m,k]^T * dC[m,n]
            kernels::gemm_tn(a.values().data(), go, b.grad().data(), m, k, n, true);
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::matmul_nt(const Tensor& a, const Tensor& b) {
    require_2d("matmul_nt", a);
    require_2d("matmul_nt", b);
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw std::invalid_argument("matmul_nt: inner dims differ, " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()) + "^T");
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make_output({m, n}, rg);
    kernels::gemm_nt(a.values().data(), b.values().data(), out.values().data(), m, k, n, false);
    finish_op("matmul_nt", out, rg, [a, b, out, m, k, n]() mutable {
        const S* go = out.grad().data();
        if (a.requires_grad())  // dA[m,k] += dC[m,n] * B[n,k]
            kernels::gemm_nn(go, b.values().data(), a.grad().data(), m, n, k, true);
        if (b.requires_grad())  // dB[n,k] += dC[m,n]^T * A[m,k]
            kernels::gemm_tn(go, a.values().data(), b.grad().data(), m, n, k, true);
    });
    return out;
}

// ---- structural ----

template <typename S>
TensorT<S> GraphT<S>::slice_rows(const Tensor& a, int64_t r0, int64_t r1) {
    require_2d("slice_rows", a);
    if (r0 < 0 || r1 > a.dim(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    const int64_t cols = a.dim(1);
    const bool rg = a.requires_grad();
    Tensor out = make_output({r1 - r0, cols}, rg);
    std::copy_n(a.values().data() + r0 * cols, (r1 - r0) * cols, out.values().data());
    finish_op("slice_rows", out, rg, [a, out, r0, cols]() mutable {
        auto go = out.grad();
        S* ga = a.grad().data() + r0 * cols;
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
    require_2d("slice_cols", a);
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    const int64_t rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
    const bool rg = a.requires_grad();
    Tensor out = make_output({rows, w}, rg);
    {
        const S* av = a.values().data();
        S* ov = out.values().data();
        for (int64_t r = 0; r < rows; ++r)
            std::copy_n(av + r * cols + c0, w, ov + r * w);
    }
    finish_op("slice_cols", out, rg, [a, out, c0, rows, cols, w]() mutable {
        const S* go = out.grad().data();
        S* ga = a.grad().data();
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < w; ++j) ga[r * cols + c0 + j] += go[r * w + j];
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    const int64_t rows = parts[0].dim(0);
    int64_t total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        require_2d("concat_cols", p);
        if (p.dim(0) != rows) throw std::invalid_argument("concat_cols: row count mismatch");
        total += p.dim(1);
        rg = rg || p.requires_grad();
    }
    Tensor out = make_output({rows, total}, rg);
    {
        S* ov = out.values().data();
        int64_t off = 0;
        for (const Tensor& p : parts) {
            const int64_t w = p.dim(1);
            const S* pv = p.values().data();
            for (int64_t r = 0; r < rows; ++r) std::copy_n(pv + r * w, w, ov + r * total + off);
            off += w;
        }
    }
    finish_op("concat_cols", out, rg, [parts, out, rows, total]() mutable {
        const S* go = out.grad().data();
        int64_t off = 0;
        for (Tensor& p : const_cast<std::vector<Tensor>&>(parts)) {
            const int64_t w = p.dim(1);
            if (p.requires_grad()) {
                S* gp = p.grad().data();
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t j = 0; j < w; ++j) gp[r * w + j] += go[r * total + off + j];
            }
            off += w;
        }
    });
    return out;
}

// ---- nonlinear rows ----

template <typename S>
TensorT<S> GraphT<S>::softmax_rows(const Tensor& x, double temperature) {
    require_2d("softmax_rows", x);
    if (!(temperature > 0.0)) throw std::invalid_argument("softmax_rows: temperature must be > 0");
    const int64_t rows = x.dim(0), cols = x.dim(1);
    const bool rg = x.requires_grad();
    Tensor out = make_output({rows, cols}, rg);
    const S inv_t = static_cast<S>(1.0 / temperature);
    {
        const S* xv = x.values().data();
        S* ov = out.values().data();
        for (int64_t r = 0; r < rows; ++r) {
            const S* row = xv + r * cols;
            S* orow = ov + r * cols;
            S mx = row[0] * inv_t;
            for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j] * inv_t);
            S denom = S(0);
            for (int64_t j = 0; j < cols; ++j) {
                orow[j] = std::exp(row[j] * inv_t - mx);
                denom += orow[j];
            }
            for (int64_t j = 0; j < cols; ++j) orow[j] /= denom;
        }
    }
    finish_op("softmax_rows", out, rg, [x, out, rows, cols, inv_t]() mutable {
        const S* go = out.grad().data();
        const S* ov = out.values().data();
        S* gx = x.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
            const S* g = go + r * cols;
            const S* p = ov + r * cols;
            S dot = S(0);
            for (int64_t j = 0; j < cols; ++j) dot += g[j] * p[j];
            for (int64_t j = 0; j < cols; ++j) gx[r * cols + j] += p[j] * (g[j] - dot) * inv_t;
        }
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                                 double eps) {
    require_2d("layer_norm", x);
    const int64_t rows = x.dim(0), cols = x.dim(1);
    if (gain.numel() != cols || bias.numel() != cols)
        throw std::invalid_argument("layer_norm: gain/bias size must equal column count");
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor out = make_output({rows, cols}, rg);
    // Saved for backward: normalized activations and per-row inverse stddev.
    auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(rows * cols));
    auto inv_sd = std::make_shared<std::vector<S>>(static_cast<size_t>(rows));
    {
        const S* xv = x.values().data();
        const S* gv = gain.values().data();
        const S* bv = bias.values().data();
        S* ov = out.values().data();
        for (int64_t r = 0; r < rows; ++r) {
            const S* row = xv + r * cols;
            S mean = S(0);
            for (int64_t j = 0; j < cols; ++j) mean += row[j];
            mean /= static_cast<S>(cols);
            S var = S(0);
            for (int64_t j = 0; j < cols; ++j) {
                const S d = row[j] - mean;
                var += d * d;
            }
            var /= static_cast<S>(cols);
            const S inv = S(1) / std::sqrt(var + static_cast<S>(eps));
            (*inv_sd)[static_cast<size_t>(r)] = inv;
            for (int64_t j = 0; j < cols; ++j) {
                const S xh = (row[j] - mean) * inv;
                (*xhat)[static_cast<size_t>(r * cols + j)] = xh;
                ov[r * cols + j] = gv[j] * xh + bv[j];
            }
        }
    }
    finish_op("layer_norm", out, rg, [x, gain, bias, out, xhat, inv_sd, rows, cols]() mutable {
        const S* go = out.grad().data();
        const S* gv = gain.values().data();
        for (int64_t r = 0; r < rows; ++r) {
            const S* g = go + r * cols;
            const S* xh = xhat->data() + r * cols;
            if (x.requires_grad()) {
                S* gx = x.grad().data() + r * cols;
                const S inv = (*inv_sd)[static_cast<size_t>(r)];
                S mean_h = S(0), mean_hx = S(0);
                for (int64_t j = 0; j < cols; ++j) {
                    const S h = g[j] * gv[j];
                    mean_h += h;
                    mean_hx += h * xh[j];
                }
                mean_h /= static_cast<S>(cols);
                mean_hx /= static_cast<S>(cols);
                for (int64_t j = 0; j < cols; ++j) {
                    const S h = g[j] * gv[j];
                    gx[j] += inv * (h - mean_h - xh[j] * mean_hx);
                }
            }
            if (gain.requires_grad()) {
                S* gg = gain.grad().data();
                for (int64_t j = 0; j < cols; ++j) gg[j] += g[j] * xh[j];
            }
            if (bias.requires_grad()) {
                S* gb = bias.grad().data();
                for (int64_t j = 0; j < cols; ++j) gb[j] += g[j];
            }
        }
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::gelu(const Tensor& x) {
    const bool rg = x.requires_grad();
    Tensor out = make_output(x.shape(), rg);
    auto ov = out.values();
    auto xv = x.values();
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    for (size_t i = 0; i < ov.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        ov[i] = static_cast<S>(v * phi);
    }
    finish_op("gelu", out, rg, [x, out]() mutable {
        auto go = out.grad();
        auto xv = x.values();
        auto gx = x.grad();
        constexpr double kInvSqrt2 = 0.7071067811865475244;
        constexpr double kInvSqrt2Pi = 0.3989422804014326779;
        for (size_t i = 0; i < go.size(); ++i) {
            const double v = static_cast<double>(xv[i]);
            const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx[i] += go[i] * static_cast<S>(phi + v * pdf);
        }
    });
    return out;
}

// ---- lookup ----

template <typename S>
TensorT<S> GraphT<S>::embedding(const Tensor& table, std::span<const int> ids) {
    require_2d("embedding", table);
    const int64_t vocab = table.dim(0), d = table.dim(1);
    const int64_t t = static_cast<int64_t>(ids.size());
    if (t == 0) throw std::invalid_argument("embedding: empty id list");
    for (int id : ids)
        if (id < 0 || id >= vocab)
            throw std::invalid_argument("embedding: id " + std::to_string(id) +
                                        " outside vocab of " + std::to_string(vocab));
    const bool rg = table.requires_grad();
    Tensor out = make_output({t, d}, rg);
    {
        const S* tv = table.values().data();
        S* ov = out.values().data();
        for (int64_t i = 0; i < t; ++i) std::copy_n(tv + ids[i] * d, d, ov + i * d);
    }
    std::vector<int> ids_saved(ids.begin(), ids.end());
    finish_op("embedding", out, rg, [table, out, ids_saved, d]() mutable {
        const S* go = out.grad().data();
        S* gt = table.grad().data();
        for (size_t i = 0; i < ids_saved.size(); ++i) {
            S* dst = gt + static_cast<int64_t>(ids_saved[i]) * d;
            const S* src = go + static_cast<int64_t>(i) * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return out;
}

// ---- losses ----

template <typename S>
TensorT<S> GraphT<S>::cross_entropy_masked(const Tensor& logits, std::span<const int> targets,
                                           std::span<const uint8_t> mask) {
    require_2d("cross_entropy_masked", logits);
    const int64_t rows = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != rows || static_cast<int64_t>(mask.size()) != rows)
        throw std::invalid_argument("cross_entropy_masked: targets/mask length must equal rows");
    int64_t m_count = 0;
    for (int64_t r = 0; r < rows; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        ++m_count;
        if (targets[static_cast<size_t>(r)] < 0 || targets[static_cast<size_t>(r)] >= vocab)
            throw std::invalid_argument("cross_entropy_masked: target id outside vocab");
    }
    if (m_count == 0) throw std::invalid_argument("cross_entropy_masked: empty mask");

    const bool rg = logits.requires_grad();
    Tensor out = make_output({1}, rg);
    // Saved softmax probabilities for masked rows (zeros elsewhere).
    auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(rows * vocab), S(0));
    {
        const S* lv = logits.values().data();
        S total = S(0);
        for (int64_t r = 0; r < rows; ++r) {
            if (!mask[static_cast<size_t>(r)]) continue;
            const S* row = lv + r * vocab;
            S mx = row[0];
            for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
            S denom = S(0);
            S* prow = probs->data() + r * vocab;
            for (int64_t j = 0; j < vocab; ++j) {
                prow[j] = std::exp(row[j] - mx);
                denom += prow[j];
            }
            for (int64_t j = 0; j < vocab; ++j) prow[j] /= denom;
            const S lse = mx + std::log(denom);
            total += lse - row[targets[static_cast<size_t>(r)]];
        }
        out.values()[0] = total / static_cast<S>(m_count);
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<uint8_t> msk(mask.begin(), mask.end());
    finish_op("cross_entropy_masked", out, rg,
              [logits, out, probs, tgt, msk, rows, vocab, m_count]() mutable {
                  const S go = out.grad()[0];
                  const S scale = go / static_cast<S>(m_count);
                  S* gl = logits.grad().data();
                  for (int64_t r = 0; r < rows; ++r) {
                      if (!msk[static_cast<size_t>(r)]) continue;
                      const S* prow = probs->data() + r * vocab;
                      S* grow = gl + r * vocab;
                      for (int64_t j = 0; j < vocab; ++j) grow[j] += scale * prow[j];
                      grow[tgt[static_cast<size_t>(r)]] -= scale;
                  }
              });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::kl_rows(const Tensor& p, const Tensor& q, std::span<const uint8_t> mask) {
    require_same_shape("kl_rows", p, q);
    require_2d("kl_rows", p);
    const int64_t rows = p.dim(0), cols = p.dim(1);
    if (static_cast<int64_t>(mask.size()) != rows)
        throw std::invalid_argument("kl_rows: mask length must equal rows");
    int64_t m_count = 0;
    for (uint8_t m : mask) m_count += (m != 0);
    if (m_count == 0) throw std::invalid_argument("kl_rows: empty mask");

    const bool rg = p.requires_grad() || q.requires_grad();
    Tensor out = make_output({1}, rg);
    const S eps = static_cast<S>(kEps);
    {
        const S* pv = p.values().data();
        const S* qv = q.values().data();
        S total = S(0);
        for (int64_t r = 0; r < rows; ++r) {
            if (!mask[static_cast<size_t>(r)]) continue;
            const S* prow = pv + r * cols;
            const S* qrow = qv + r * cols;
            S row_sum = S(0);
            for (int64_t j = 0; j < cols; ++j) {
                if (prow[j] <= S(0)) continue;  // 0 * log 0 := 0
                const S lp = std::log(std::max(prow[j], eps));
                const S lq = std::log(std::max(qrow[j], eps));
                row_sum += prow[j] * (lp - lq);
            }
            total += row_sum;
        }
        out.values()[0] = total / static_cast<S>(m_count);
    }
    std::vector<uint8_t> msk(mask.begin(), mask.end());
    finish_op("kl_rows", out, rg, [p, q, out, msk, rows, cols, m_count, eps]() mutable {
        const S go = out.grad()[0];
        const S scale = go / static_cast<S>(m_count);
        const S* pv = p.values().data();
        const S* qv = q.values().data();
        for (int64_t r = 0; r < rows; ++r) {
            if (!msk[static_cast<size_t>(r)]) continue;
            const S* prow = pv + r * cols;
            const S* qrow = qv + r * cols;
            if (q.requires_grad()) {
                S* gq = q.grad().data() + r * cols;
                for (int64_t j = 0; j < cols; ++j) {
                    if (prow[j] <= S(0) || qrow[j] <= eps) continue;
                    gq[j] -= scale * prow[j] / qrow[j];
                }
            }
            if (p.requires_grad()) {
                S* gp = p.grad().data() + r * cols;
                for (int64_t j = 0; j < cols; ++j) {
                    if (prow[j] <= S(0)) continue;
                    const S lp = std::log(std::max(prow[j], eps));
                    const S lq = std::log(std::max(qrow[j], eps));
                    gp[j] += scale * (lp - lq + S(1));
                }
            }
        }
    });
    return out;
}

template <typename S>
TensorT<S> GraphT<S>::sum(const Tensor& a) {
    const bool rg = a.requires_grad();
    Tensor out = make_output({1}, rg);
    S total = S(0);
    for (S v : a.values()) total += v;
    out.values()[0] = total;
    finish_op("sum", out, rg, [a, out]() mutable {
        const S go = out.grad()[0];
        auto ga = a.grad();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += go;
    });
    return out;
}

template <typename S>
void GraphT<S>::record_custom(const char* op, const std::vector<Tensor>& inputs, Tensor& out,
                              std::function<void()> backward_fn) {
    bool rg = false;
    for (const Tensor& in : inputs) rg = rg || in.requires_grad();
    if (rg && !out.requires_grad()) out.set_requires_grad(true);
    finish_op(op, out, rg, std::move(backward_fn));
}

template <typename S>
void GraphT<S>::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss does not require grad (no recorded path)");
    // Op-output grads are transient per backward call: re-zero them, seed the
    // loss, then replay the tape in exact reverse recording order. Leaf grads
    // (parameters, inputs) are never cleared here, so repeated calls
    // accumulate gradient sums.
    for (TapeEntry& e : tape_) e.out.zero_grad();
    Tensor seed = loss;  // shared handle
    seed.grad()[0] = S(1);
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) it->backward_fn();
}

template class GraphT<float>;
template class GraphT<double>;

}  // namespace edslm
