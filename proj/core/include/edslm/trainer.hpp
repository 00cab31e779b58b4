// Optimization loop: warmup-cosine learning rate, decoupled-weight-decay
// adaptive optimizer, gradient accumulation, metrics logging, and text+binary
// checkpoints with a checksummed float32 payload.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edslm/data.hpp"
#include "edslm/graph.hpp"
#include "edslm/model.hpp"

namespace edslm {

enum class Objective { span_corruption, seq2seq, kd };

struct TrainConfig {
    double peak_lr = 3e-4;
    int64_t warmup_steps = 2000;  // shrunk to <=100 for short desk runs, see effective_warmup
    int64_t total_steps = 1000;
    int64_t batch_size = 8;        // examples per micro-batch
    int64_t grad_accum_steps = 1;  // micro-batches per optimizer step
    uint64_t seed = 0;
    Objective objective = Objective::seq2seq;
    double weight_decay = 0.1;

    void validate() const;  // throws on warmup >= total and non-positive fields

    // Short desk runs keep the schedule's shape with a 100-step warmup.
    int64_t effective_warmup() const {
        return total_steps < 5000 ? std::min<int64_t>(warmup_steps, 100) : warmup_steps;
    }
};

// Linear 0 -> peak over the warmup, then cosine decay to 0 at total_steps;
// steps beyond total_steps clamp to 0.
double lr_at(int64_t step, const TrainConfig& cfg);

// AdamW with decoupled weight decay and bias correction
// (beta1 0.9, beta2 0.95, eps 1e-8, wd 0.1).
class AdamW {
  public:
    explicit AdamW(std::vector<Tensor> params, double weight_decay = 0.1, double beta1 = 0.9,
                   double beta2 = 0.95, double eps = 1e-8);

    // Applies one update from the accumulated gradients. A non-finite
    // gradient aborts with the offending tensor's name in the message.
    void step(double lr);
    void zero_grad();

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }  // checkpoint restore
    const std::vector<Tensor>& params() const { return params_; }
    // First/second moment buffers, named "adam.m.<param>" / "adam.v.<param>".
    std::vector<std::pair<std::string, Tensor>> state_tensors() const;

  private:
    std::vector<Tensor> params_;
    std::vector<Tensor> m_, v_;
    double wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// Teacher-forced token-mean negative log likelihood for one example:
// encoder-decoder models read x and predict y ∘ EOS from BOS ∘ y; decoder-only
// models read x ∘ y ∘ EOS causally with the loss over the y ∘ EOS predictions.
// No padding is involved. scale multiplies the loss (gradient accumulation).
Tensor example_nll(Graph& g, const Model& m, const TaskExample& ex, double scale = 1.0);
// Number of positions the loss averages over (|y| + 1).
int64_t example_loss_tokens(const TaskExample& ex);

struct StepRecord {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double tokens_per_s = 0.0;
};

// Deterministic epoch-reshuffling example stream: position i maps to a
// seeded permutation of the dataset for epoch i / N.
class DataCycler {
  public:
    DataCycler(size_t n, uint64_t seed);
    size_t index_at(int64_t position);

  private:
    size_t n_;
    uint64_t seed_;
    int64_t epoch_ = -1;
    std::vector<size_t> perm_;
};

// Runs optimizer steps [start_step, end_step) where end_step defaults to
// cfg.total_steps (an early end_step supports checkpoint-then-resume; the
// schedule always follows total_steps). Each step consumes
// batch_size * grad_accum_steps examples from the seeded cycle; gradients are
// scaled so accumulation is equivalent to one large batch. Appends one CSV
// line per step (`step,loss,lr,tokens_per_s`) when metrics_csv is non-empty.
// Objective::kd is handled by distill_train (distill.hpp), not here.
std::vector<StepRecord> train(Model& m, const std::vector<TaskExample>& dataset,
                              const TrainConfig& cfg, AdamW& opt, int64_t start_step = 0,
                              const std::string& metrics_csv = "", int64_t end_step = -1);

// ---- checkpointing ----

uint64_t fnv1a64(const void* data, size_t n);

// Text manifest (config echo, step, tensor table, payload checksum) followed
// by a contiguous little-endian float32 payload. Optimizer moments and the
// step counter ride along when opt is given.
void save_checkpoint(const std::string& path, const Model& m, int64_t step,
                     const std::string& config_echo, const AdamW* opt = nullptr);

struct LoadedCheckpoint {
    int64_t step = 0;
    std::string config_echo;
};

// Restores parameters (and optimizer state if opt is given) by tensor name.
// Checksum or shape mismatches raise std::runtime_error.
LoadedCheckpoint load_checkpoint(const std::string& path, Model& m, AdamW* opt = nullptr);

}  // namespace edslm
