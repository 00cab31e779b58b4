// Reverse-mode autodiff tape over TensorT.
//
// Every primitive computes its output eagerly, verifies the result is finite,
// and — when any input requires a gradient — records a backward closure on the
// tape. backward() replays the tape in exact reverse order; all reductions run
// in a fixed left-to-right order so repeated runs are bit-identical.
//
// A Graph and the tensors recorded on it are confined to one thread.
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "edslm/tensor.hpp"

namespace edslm {

template <typename S>
class GraphT {
  public:
    using Tensor = TensorT<S>;

    // ---- elementwise ----
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double c);

    // ---- matrix products ----
    // matmul:    [m,k] x [k,n]   -> [m,n]
    // matmul_nt: [m,k] x [n,k]^T -> [m,n]
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor matmul_nt(const Tensor& a, const Tensor& b);

    // ---- structural ----
    Tensor slice_rows(const Tensor& a, int64_t r0, int64_t r1);
    Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);
    Tensor concat_cols(const std::vector<Tensor>& parts);

    // ---- nonlinear rows ----
    // softmax_rows: softmax of (x / temperature), row-wise, max-subtracted.
    Tensor softmax_rows(const Tensor& x, double temperature = 1.0);
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
    Tensor gelu(const Tensor& x);

    // ---- lookup ----
    Tensor embedding(const Tensor& table, std::span<const int> ids);

    // ---- losses (means over mask-selected rows) ----
    // cross_entropy_masked: mean over masked rows of -log softmax(logits)[target].
    // kl_rows: mean over masked rows of sum_j p*(log p - log max(q, kEps)).
    // Gradient flows into logits / into q (and into p when p requires grad).
    Tensor cross_entropy_masked(const Tensor& logits, std::span<const int> targets,
                                std::span<const uint8_t> mask);
    Tensor kl_rows(const Tensor& p, const Tensor& q, std::span<const uint8_t> mask);

    Tensor sum(const Tensor& a);

    // ---- custom ops ----
    // Escape hatch for model-level differentiable ops (e.g. rotary embedding):
    // the caller builds `out` itself, then registers inputs + a backward
    // closure here. The output is finiteness-checked like any primitive.
    void record_custom(const char* op, const std::vector<Tensor>& inputs, Tensor& out,
                       std::function<void()> backward_fn);

    // Accumulates d(loss)/d(tensor) into the .grad of every recorded tensor
    // that requires a gradient. loss must be scalar (numel == 1). Calling
    // twice without zeroing grads accumulates.
    void backward(const Tensor& loss);

    size_t tape_size() const { return tape_.size(); }
    void clear() { tape_.clear(); }

    // Probability floor used inside logs (kl_rows).
    static constexpr double kEps = 1e-9;

  private:
    // Each entry keeps the op name, the output tensor (its grad is transient
    // and re-zeroed at the start of every backward call), and the closure that
    // pushes the output grad into the input grads.
    struct TapeEntry {
        const char* op;
        Tensor out;
        std::function<void()> backward_fn;
    };

    Tensor make_output(std::vector<int64_t> shape, bool requires_grad);
    void finish_op(const char* op, Tensor& out, bool record, std::function<void()> fn);
    void check_finite(const char* op, const Tensor& out) const;

    std::vector<TapeEntry> tape_;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

}  // namespace edslm
