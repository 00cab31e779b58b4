// Cross-architecture knowledge distillation: a decoder-only teacher scores
// the student's (or the dataset's) target tokens, and the student minimizes
// a tempered KL term plus hard cross entropy. Padding layouts keep teacher
// and student y positions aligned so batches of mixed lengths line up.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edslm/data.hpp"
#include "edslm/graph.hpp"
#include "edslm/model.hpp"
#include "edslm/trainer.hpp"

namespace edslm {

enum class KlDirection { forward, reverse };
enum class GenerationSource { student, teacher, dataset };

const char* kl_direction_name(KlDirection d);
const char* generation_source_name(GenerationSource s);
KlDirection kl_direction_from_name(std::string_view name);
GenerationSource generation_source_from_name(std::string_view name);

struct KDConfig {
    double temperature = 2.0;
    double alpha = 0.5;  // weight on the tempered KL term; 1-alpha on hard CE
    KlDirection kl_direction = KlDirection::reverse;
    GenerationSource generation_source = GenerationSource::student;
    int64_t max_gen_len = 64;  // cap on generated targets

    void validate() const;  // temperature > 0, alpha in [0,1], max_gen_len > 0
};

// One example laid out so the decoder-only teacher and the student agree on
// where y lives:
//   teacher input     : PAD^n_e ∘ x ∘ y ∘ PAD^n_d   (x left-padded, y right-padded)
//   student (enc-dec) : encoder x ∘ PAD^n_e, decoder BOS ∘ y ∘ PAD^n_d
//   student (dec-only): the teacher row, sliced at the same offsets
// Position ids skip padding, so every real token sits at the same rotary
// position in all three views. Teacher logits rows
// [teacher_slice_start, teacher_slice_start + y_len) predict y_0..y_{y_len-1}.
struct AlignedKDBatch {
    std::vector<int> teacher_input;
    std::vector<uint8_t> teacher_keep;
    std::vector<int> student_enc_input;  // x ∘ PAD^n_e
    std::vector<uint8_t> student_enc_keep;
    std::vector<int> student_dec_input;  // BOS ∘ y ∘ PAD^n_d
    std::vector<uint8_t> student_dec_keep;
    std::vector<uint8_t> loss_mask;  // ones over the y_len sliced rows
    std::vector<int> y;
    int64_t x_len = 0, y_len = 0;
    int64_t n_e = 0, n_d = 0;
    int64_t teacher_slice_start = 0;  // x_len + n_e - 1
};

// enc_len / dec_len fix the student's padded widths (dec_len counts the BOS
// row); teacher_len must equal enc_len + dec_len - 1. Caps that cannot fit
// the example raise std::invalid_argument naming the violated bound.
AlignedKDBatch build_kd_batch(std::span<const int> x, std::span<const int> y, int64_t enc_len,
                              int64_t dec_len, int64_t teacher_len);

// Detached [y_len, vocab] copy of the teacher rows that predict y.
// Out-of-range slices raise std::out_of_range.
Tensor align_teacher_logits(const Tensor& teacher_logits, const AlignedKDBatch& b);

// alpha * tau^2 * KL(tempered distributions) + (1 - alpha) * CE(student, targets),
// means over mask-selected rows. reverse KL puts the student distribution in
// front (mode-seeking); forward puts the teacher first. alpha == 0 returns
// the plain CE tensor; alpha == 1 drops the CE term. Templated so gradient
// checks can run the identical code in double precision.
template <typename S>
TensorT<S> kd_loss(GraphT<S>& g, const TensorT<S>& student_logits,
                   const TensorT<S>& teacher_logits, std::span<const int> targets,
                   std::span<const uint8_t> mask, const KDConfig& cfg) {
    cfg.validate();
    if (student_logits.shape() != teacher_logits.shape())
        throw std::invalid_argument("kd_loss: student logits " + shape_str(student_logits.shape()) +
                                    " vs teacher logits " + shape_str(teacher_logits.shape()));
    TensorT<S> ce = g.cross_entropy_masked(student_logits, targets, mask);
    if (cfg.alpha == 0.0) return ce;
    TensorT<S> ps = g.softmax_rows(student_logits, cfg.temperature);
    TensorT<S> pt = g.softmax_rows(teacher_logits, cfg.temperature);
    TensorT<S> kl = cfg.kl_direction == KlDirection::reverse ? g.kl_rows(ps, pt, mask)
                                                             : g.kl_rows(pt, ps, mask);
    const double t2 = cfg.temperature * cfg.temperature;
    if (cfg.alpha == 1.0) return g.scale(kl, t2);
    return g.add(g.scale(kl, cfg.alpha * t2), g.scale(ce, 1.0 - cfg.alpha));
}

struct DistillStepStats {
    double loss = 0.0;    // mean loss over contributing examples
    int64_t used = 0;     // examples that contributed gradients
    int64_t skipped = 0;  // examples dropped for exceeding a capacity
    int64_t tokens = 0;   // x + y tokens across contributing examples
};

// One optimizer update over the batch: per example, obtain y from the
// configured source (greedy student / greedy teacher rollout, or the dataset
// target with EOS appended), score it with the frozen decoder-only teacher,
// and backpropagate kd_loss through the student only. Examples that cannot
// fit either model's length caps are skipped (counted in stats, one stderr
// note each). If every example is skipped, no optimizer step is taken.
DistillStepStats distill_step(const Model& teacher, Model& student,
                              std::span<const TaskExample> batch, const KDConfig& kd, AdamW& opt,
                              double lr);

// KD outer loop with the trainer's schedule, data order, metrics CSV, and
// resume semantics (cfg.objective must be kd).
std::vector<StepRecord> distill_train(const Model& teacher, Model& student,
                                      const std::vector<TaskExample>& dataset,
                                      const TrainConfig& cfg, const KDConfig& kd, AdamW& opt,
                                      int64_t start_step = 0, const std::string& metrics_csv = "",
                                      int64_t end_step = -1);

}  // namespace edslm
