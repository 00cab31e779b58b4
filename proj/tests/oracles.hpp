// Independent reference implementations used to check the production code.
// Everything here is straight-line double precision, written against the
// definitions rather than the production kernels.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "edslm/graph.hpp"
#include "edslm/tensor.hpp"

namespace oracle {

inline std::vector<double> random_values(size_t n, uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// ---- straight-line math references ----

inline std::vector<double> ref_softmax(std::span<const double> row, double temperature = 1.0) {
    std::vector<double> out(row.size());
    double mx = -1e300;
    for (double v : row) mx = std::max(mx, v / temperature);
    double denom = 0.0;
    for (size_t j = 0; j < row.size(); ++j) {
        out[j] = std::exp(row[j] / temperature - mx);
        denom += out[j];
    }
    for (double& v : out) v /= denom;
    return out;
}

inline double ref_cross_entropy_masked(const std::vector<std::vector<double>>& logits,
                                       std::span<const int> targets,
                                       std::span<const uint8_t> mask) {
    double total = 0.0;
    int count = 0;
    for (size_t r = 0; r < logits.size(); ++r) {
        if (!mask[r]) continue;
        auto p = ref_softmax(logits[r]);
        total += -std::log(p[static_cast<size_t>(targets[r])]);
        ++count;
    }
    return total / count;
}

inline double ref_kl(std::span<const double> p, std::span<const double> q, double eps = 1e-9) {
    double total = 0.0;
    for (size_t j = 0; j < p.size(); ++j) {
        if (p[j] <= 0.0) continue;
        total += p[j] * (std::log(std::max(p[j], eps)) - std::log(std::max(q[j], eps)));
    }
    return total;
}

inline std::vector<double> ref_layer_norm(std::span<const double> row,
                                          std::span<const double> gain,
                                          std::span<const double> bias, double eps = 1e-5) {
    const size_t d = row.size();
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    std::vector<double> out(d);
    for (size_t j = 0; j < d; ++j)
        out[j] = gain[j] * (row[j] - mean) / std::sqrt(var + eps) + bias[j];
    return out;
}

inline double ref_gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Full attention reference: already-projected q [Tq][H*dh], k/v [Tk][Hkv*dh].
// mask_kind: 0 = none, 1 = causal (query t sees keys <= t), 2 = key padding.
inline std::vector<std::vector<double>> ref_attention(
    const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& k,
    const std::vector<std::vector<double>>& v, int n_heads, int n_kv_heads, int mask_kind,
    std::span<const uint8_t> key_keep = {}) {
    const size_t tq = q.size(), tk = k.size();
    const int dh = static_cast<int>(q[0].size()) / n_heads;
    std::vector<std::vector<double>> out(tq, std::vector<double>(q[0].size(), 0.0));
    const int group = n_heads / n_kv_heads;
    for (int h = 0; h < n_heads; ++h) {
        const int g = h / group;
        for (size_t t = 0; t < tq; ++t) {
            std::vector<double> scores(tk, -1e300);
            for (size_t s = 0; s < tk; ++s) {
                if (mask_kind == 1 && s > t) continue;
                if (mask_kind == 2 && !key_keep.empty() && !key_keep[s]) continue;
                double dot = 0.0;
                for (int j = 0; j < dh; ++j) dot += q[t][h * dh + j] * k[s][g * dh + j];
                scores[s] = dot / std::sqrt(static_cast<double>(dh));
            }
            auto p = ref_softmax(scores);
            for (size_t s = 0; s < tk; ++s) {
                if (p[s] == 0.0) continue;
                for (int j = 0; j < dh; ++j) out[t][h * dh + j] += p[s] * v[s][g * dh + j];
            }
        }
    }
    return out;
}

// ---- rotary-embedding scalar-angle oracle ----

// Angle for frequency index i (pair i rotates dims 2i, 2i+1) at position pos.
// NTK scaling kicks in when max_pos reaches ntk_train_len.
inline double ref_rope_angle(int64_t pos, int i, int d_head, double base, int64_t ntk_train_len,
                             int64_t max_pos) {
    double eff_base = base;
    if (ntk_train_len > 0 && max_pos >= ntk_train_len) {
        const double s = static_cast<double>(max_pos + 1) / static_cast<double>(ntk_train_len);
        eff_base = base * std::pow(s, static_cast<double>(d_head) / (d_head - 2.0));
    }
    const double theta = std::pow(eff_base, -2.0 * i / static_cast<double>(d_head));
    return static_cast<double>(pos) * theta;
}

inline std::vector<double> ref_rope_apply(std::span<const double> vec, int64_t pos, int d_head,
                                          double base, int64_t ntk_train_len, int64_t max_pos) {
    std::vector<double> out(vec.begin(), vec.end());
    for (int i = 0; i < d_head / 2; ++i) {
        const double a = ref_rope_angle(pos, i, d_head, base, ntk_train_len, max_pos);
        const double c = std::cos(a), s = std::sin(a);
        const double x0 = vec[2 * i], x1 = vec[2 * i + 1];
        out[2 * i] = x0 * c - x1 * s;
        out[2 * i + 1] = x0 * s + x1 * c;
    }
    return out;
}

// ---- sequence oracles ----

// Memoized recursive LCS, deliberately structured differently from the
// production iterative DP.
inline int ref_lcs(std::span<const int> a, std::span<const int> b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> memo((n + 1) * (m + 1), -1);
    std::function<int(size_t, size_t)> go = [&](size_t i, size_t j) -> int {
        if (i == n || j == m) return 0;
        int& slot = memo[i * (m + 1) + j];
        if (slot >= 0) return slot;
        if (a[i] == b[j])
            slot = 1 + go(i + 1, j + 1);
        else
            slot = std::max(go(i + 1, j), go(i, j + 1));
        return slot;
    };
    return go(0, 0);
}

// ---- finite-difference gradient oracle (64-bit, central differences) ----

struct GradCheck {
    double max_rel_err = 0.0;
    std::string worst;  // "tensor[i]" of the worst element
};

// build(graph, leaves) must construct a scalar loss from the given leaves.
// Leaves are created from `shapes` with seeded values; all require grad.
inline GradCheck finite_diff_check(
    const std::function<edslm::Tensor64(edslm::Graph64&, std::vector<edslm::Tensor64>&)>& build,
    const std::vector<std::vector<int64_t>>& shapes, uint64_t seed, double h = 1e-4,
    double value_scale = 0.5) {
    using edslm::Graph64;
    using edslm::Tensor64;

    std::vector<std::vector<double>> base_values;
    for (size_t i = 0; i < shapes.size(); ++i) {
        int64_t n = 1;
        for (int64_t d : shapes[i]) n *= d;
        base_values.push_back(random_values(static_cast<size_t>(n), seed + i * 1000003, value_scale));
    }

    auto eval = [&](int leaf, int64_t elem, double delta, std::vector<std::vector<double>>* grads_out) {
        Graph64 g;
        std::vector<Tensor64> leaves;
        for (size_t i = 0; i < shapes.size(); ++i) {
            std::vector<double> vals = base_values[i];
            if (static_cast<int>(i) == leaf) vals[static_cast<size_t>(elem)] += delta;
            leaves.push_back(Tensor64::from(shapes[i], std::move(vals), true));
        }
        Tensor64 loss = build(g, leaves);
        if (grads_out) {
            g.backward(loss);
            grads_out->clear();
            for (Tensor64& t : leaves)
                grads_out->emplace_back(t.grad().begin(), t.grad().end());
        }
        return static_cast<double>(loss.values()[0]);
    };

    std::vector<std::vector<double>> analytic;
    eval(-1, 0, 0.0, &analytic);

    GradCheck result;
    for (size_t i = 0; i < shapes.size(); ++i) {
        for (size_t e = 0; e < base_values[i].size(); ++e) {
            const double lp = eval(static_cast<int>(i), static_cast<int64_t>(e), h, nullptr);
            const double lm = eval(static_cast<int>(i), static_cast<int64_t>(e), -h, nullptr);
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[i][e];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst = "leaf" + std::to_string(i) + "[" + std::to_string(e) + "]";
            }
        }
    }
    return result;
}

}  // namespace oracle
