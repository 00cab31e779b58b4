#include "edslm/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "edslm/infer.hpp"

namespace edslm {

// ---- names / config ----

const char* kl_direction_name(KlDirection d) {
    return d == KlDirection::forward ? "forward" : "reverse";
}

const char* generation_source_name(GenerationSource s) {
    switch (s) {
        case GenerationSource::student: return "student";
        case GenerationSource::teacher: return "teacher";
        default: return "dataset";
    }
}

KlDirection kl_direction_from_name(std::string_view name) {
    if (name == "forward") return KlDirection::forward;
    if (name == "reverse") return KlDirection::reverse;
    throw std::invalid_argument("unknown kl direction '" + std::string(name) + "'");
}

GenerationSource generation_source_from_name(std::string_view name) {
    if (name == "student") return GenerationSource::student;
    if (name == "teacher") return GenerationSource::teacher;
    if (name == "dataset") return GenerationSource::dataset;
    throw std::invalid_argument("unknown generation source '" + std::string(name) + "'");
}

void KDConfig::validate() const {
    if (!(temperature > 0.0))
        throw std::invalid_argument("kd config: temperature must be positive");
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("kd config: alpha must lie in [0, 1]");
    if (max_gen_len <= 0) throw std::invalid_argument("kd config: max_gen_len must be positive");
}

// ---- aligned batches ----

AlignedKDBatch build_kd_batch(std::span<const int> x, std::span<const int> y, int64_t enc_len,
                              int64_t dec_len, int64_t teacher_len) {
    const int64_t x_len = static_cast<int64_t>(x.size());
    const int64_t y_len = static_cast<int64_t>(y.size());
    if (x_len == 0) throw std::invalid_argument("kd batch: empty input");
    if (y_len == 0) throw std::invalid_argument("kd batch: empty target");
    if (x_len > enc_len)
        throw std::invalid_argument("kd batch: input length " + std::to_string(x_len) +
                                    " exceeds enc_len " + std::to_string(enc_len));
    if (y_len + 1 > dec_len)
        throw std::invalid_argument("kd batch: target length " + std::to_string(y_len) +
                                    " + 1 exceeds dec_len " + std::to_string(dec_len));
    if (teacher_len != enc_len + dec_len - 1)
        throw std::invalid_argument("kd batch: teacher_len " + std::to_string(teacher_len) +
                                    " must equal enc_len + dec_len - 1 = " +
                                    std::to_string(enc_len + dec_len - 1));

    AlignedKDBatch b;
    b.x_len = x_len;
    b.y_len = y_len;
    b.n_e = enc_len - x_len;
    b.n_d = dec_len - 1 - y_len;
    b.teacher_slice_start = x_len + b.n_e - 1;
    b.y.assign(y.begin(), y.end());

    b.teacher_input.assign(static_cast<size_t>(teacher_len), Vocab::kPad);
    b.teacher_keep.assign(static_cast<size_t>(teacher_len), 0);
    for (int64_t i = 0; i < x_len; ++i) {
        b.teacher_input[static_cast<size_t>(b.n_e + i)] = x[static_cast<size_t>(i)];
        b.teacher_keep[static_cast<size_t>(b.n_e + i)] = 1;
    }
    for (int64_t i = 0; i < y_len; ++i) {
        b.teacher_input[static_cast<size_t>(b.n_e + x_len + i)] = y[static_cast<size_t>(i)];
        b.teacher_keep[static_cast<size_t>(b.n_e + x_len + i)] = 1;
    }

    b.student_enc_input.assign(static_cast<size_t>(enc_len), Vocab::kPad);
    b.student_enc_keep.assign(static_cast<size_t>(enc_len), 0);
    for (int64_t i = 0; i < x_len; ++i) {
        b.student_enc_input[static_cast<size_t>(i)] = x[static_cast<size_t>(i)];
        b.student_enc_keep[static_cast<size_t>(i)] = 1;
    }

    b.student_dec_input.assign(static_cast<size_t>(dec_len), Vocab::kPad);
    b.student_dec_keep.assign(static_cast<size_t>(dec_len), 0);
    b.student_dec_input[0] = Vocab::kBos;
    b.student_dec_keep[0] = 1;
    for (int64_t i = 0; i < y_len; ++i) {
        b.student_dec_input[static_cast<size_t>(1 + i)] = y[static_cast<size_t>(i)];
        b.student_dec_keep[static_cast<size_t>(1 + i)] = 1;
    }

    b.loss_mask.assign(static_cast<size_t>(y_len), 1);
    return b;
}

Tensor align_teacher_logits(const Tensor& teacher_logits, const AlignedKDBatch& b) {
    const auto& sh = teacher_logits.shape();
    if (sh.size() != 2) throw std::invalid_argument("align_teacher_logits: logits must be 2-d");
    if (b.teacher_slice_start < 0 || b.y_len <= 0 || b.teacher_slice_start + b.y_len > sh[0])
        throw std::out_of_range("align_teacher_logits: rows [" +
                                std::to_string(b.teacher_slice_start) + ", " +
                                std::to_string(b.teacher_slice_start + b.y_len) +
                                ") outside logits with " + std::to_string(sh[0]) + " rows");
    Tensor out = Tensor::zeros({b.y_len, sh[1]});
    const auto src = teacher_logits.values();
    auto dst = out.values();
    std::memcpy(dst.data(), src.data() + b.teacher_slice_start * sh[1],
                static_cast<size_t>(b.y_len * sh[1]) * sizeof(float));
    return out;
}

// ---- per-example step ----

namespace {

int64_t deconly_cap(const ModelConfig& c) { return c.max_enc_len + c.max_dec_len; }

// Capacity checks plus target acquisition; tight layout (n_e = n_d = 0).
std::optional<AlignedKDBatch> prepare_example(const Model& teacher, const Model& student,
                                              const TaskExample& ex, const KDConfig& kd,
                                              std::string& why) {
    const int64_t x_len = static_cast<int64_t>(ex.x.size());
    if (x_len == 0) {
        why = "empty input";
        return std::nullopt;
    }
    const bool encdec = student.config.kind == ModelKind::encoder_decoder;
    const int64_t teacher_cap = deconly_cap(teacher.config);
    if (encdec && x_len > student.config.max_enc_len) {
        why = "input longer than the student encoder cap";
        return std::nullopt;
    }
    // leave at least one target slot everywhere
    int64_t model_cap = teacher_cap - x_len;
    model_cap = std::min(model_cap, encdec ? student.config.max_dec_len - 1
                                           : deconly_cap(student.config) - x_len);
    if (model_cap < 1) {
        why = "no room for targets after the input";
        return std::nullopt;
    }
    const int64_t gen_cap = std::min(model_cap, kd.max_gen_len);

    std::vector<int> y;
    switch (kd.generation_source) {
        case GenerationSource::dataset:
            y.assign(ex.y.begin(), ex.y.end());
            y.push_back(Vocab::kEos);
            if (static_cast<int64_t>(y.size()) > model_cap) {
                why = "dataset target exceeds a model length cap";
                return std::nullopt;
            }
            break;
        case GenerationSource::student:
            y = greedy_decode(student, ex.x, static_cast<int>(gen_cap), Vocab::kEos,
                              encdec ? Vocab::kBos : -1);
            break;
        case GenerationSource::teacher:
            y = greedy_decode(teacher, ex.x, static_cast<int>(gen_cap), Vocab::kEos);
            break;
    }
    if (y.empty()) {
        why = "empty target";
        return std::nullopt;
    }
    const int64_t y_len = static_cast<int64_t>(y.size());
    return build_kd_batch(ex.x, y, x_len, y_len + 1, x_len + y_len);
}

// Teacher scores the aligned rows (no backward), student backpropagates
// kd_loss scaled for accumulation. Returns the unscaled loss value.
double example_kd_backward(const Model& teacher, const Model& student, const AlignedKDBatch& b,
                           const KDConfig& kd, double scale) {
    Tensor teacher_slice;
    {
        Graph gt;
        Tensor tl = deconly_forward(gt, teacher, b.teacher_input, b.teacher_keep);
        teacher_slice = align_teacher_logits(tl, b);
    }
    Graph gs;
    Tensor slice;
    if (student.config.kind == ModelKind::encoder_decoder) {
        Tensor logits = encdec_forward(gs, student, b.student_enc_input, b.student_enc_keep,
                                       b.student_dec_input, b.student_dec_keep);
        slice = gs.slice_rows(logits, 0, b.y_len);
    } else {
        Tensor logits = deconly_forward(gs, student, b.teacher_input, b.teacher_keep);
        slice = gs.slice_rows(logits, b.teacher_slice_start, b.teacher_slice_start + b.y_len);
    }
    Tensor loss = kd_loss(gs, slice, teacher_slice, b.y, b.loss_mask, kd);
    Tensor scaled = gs.scale(loss, scale);
    gs.backward(scaled);
    return static_cast<double>(loss.at(0));
}

}  // namespace

DistillStepStats distill_step(const Model& teacher, Model& student,
                              std::span<const TaskExample> batch, const KDConfig& kd, AdamW& opt,
                              double lr) {
    kd.validate();
    if (teacher.config.kind != ModelKind::decoder_only)
        throw std::invalid_argument("distill_step: teacher must be decoder-only");
    if (teacher.config.vocab_size != student.config.vocab_size)
        throw std::invalid_argument("distill_step: teacher and student vocab sizes differ");
    if (batch.empty()) throw std::invalid_argument("distill_step: empty batch");

    DistillStepStats stats;
    std::vector<AlignedKDBatch> prepared;
    prepared.reserve(batch.size());
    for (const TaskExample& ex : batch) {
        std::string why;
        auto b = prepare_example(teacher, student, ex, kd, why);
        if (!b) {
            stats.skipped += 1;
            std::cerr << "distill: skipping example (" << why << ")\n";
            continue;
        }
        stats.tokens += b->x_len + b->y_len;
        prepared.push_back(std::move(*b));
    }
    if (prepared.empty()) return stats;

    opt.zero_grad();
    const double scale = 1.0 / static_cast<double>(prepared.size());
    double loss_sum = 0.0;
    for (const AlignedKDBatch& b : prepared)
        loss_sum += example_kd_backward(teacher, student, b, kd, scale);
    opt.step(lr);
    stats.used = static_cast<int64_t>(prepared.size());
    stats.loss = loss_sum / static_cast<double>(prepared.size());
    return stats;
}

std::vector<StepRecord> distill_train(const Model& teacher, Model& student,
                                      const std::vector<TaskExample>& dataset,
                                      const TrainConfig& cfg, const KDConfig& kd, AdamW& opt,
                                      int64_t start_step, const std::string& metrics_csv,
                                      int64_t end_step) {
    cfg.validate();
    kd.validate();
    if (cfg.objective != Objective::kd)
        throw std::invalid_argument("distill_train: objective must be kd");
    if (dataset.empty()) throw std::invalid_argument("distill_train: empty dataset");
    if (end_step < 0) end_step = cfg.total_steps;
    if (start_step < 0 || start_step > end_step || end_step > cfg.total_steps)
        throw std::invalid_argument("distill_train: step range out of bounds");

    std::ofstream csv;
    if (!metrics_csv.empty()) {
        const bool fresh = start_step == 0;
        csv.open(metrics_csv, fresh ? std::ios::out | std::ios::trunc : std::ios::out | std::ios::app);
        if (!csv)
            throw std::runtime_error("distill_train: cannot open metrics file '" + metrics_csv + "'");
        if (fresh) csv << "step,loss,lr,tokens_per_s\n";
    }

    DataCycler cycler(dataset.size(), cfg.seed);
    const int64_t per_step = cfg.batch_size * cfg.grad_accum_steps;
    std::vector<StepRecord> records;
    records.reserve(static_cast<size_t>(end_step - start_step));

    std::vector<TaskExample> batch;
    for (int64_t step = start_step; step < end_step; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(step, cfg);
        batch.clear();
        for (int64_t j = 0; j < per_step; ++j)
            batch.push_back(dataset[cycler.index_at(step * per_step + j)]);
        const DistillStepStats stats = distill_step(teacher, student, batch, kd, opt, lr);

        const auto t1 = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t1 - t0).count();
        StepRecord rec;
        rec.step = step;
        rec.loss = stats.loss;
        rec.lr = lr;
        rec.tokens_per_s = secs > 0.0 ? static_cast<double>(stats.tokens) / secs : 0.0;
        records.push_back(rec);
        if (csv.is_open()) {
            char line[160];
            std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.1f\n",
                          static_cast<long long>(rec.step), rec.loss, rec.lr, rec.tokens_per_s);
            csv << line;
        }
    }
    return records;
}

}  // namespace edslm
