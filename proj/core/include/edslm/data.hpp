// Byte-level vocabulary, T5-style span corruption, synthetic asymmetric
// sequence tasks, corpus ingestion, and batch collation with the
// encoder/decoder padding scheme used by the distillation alignment.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace edslm {

// 256 byte tokens, then PAD/BOS/EOS, then 100 sentinels S0..S99; the model
// vocabulary rounds up to 512.
struct Vocab {
    static constexpr int kBytes = 256;
    static constexpr int kPad = 256;
    static constexpr int kBos = 257;
    static constexpr int kEos = 258;
    static constexpr int kSentinelBase = 259;
    static constexpr int kNumSentinels = 100;
    static constexpr int kSize = 512;

    static int sentinel(int i);             // S_i id; throws if i outside [0,100)
    static bool is_byte(int id) { return id >= 0 && id < kBytes; }
    static bool is_sentinel(int id) {
        return id >= kSentinelBase && id < kSentinelBase + kNumSentinels;
    }
};

// Bijective byte-string <-> id-sequence mapping.
std::vector<int> tokenize(std::string_view text);
std::string detokenize(std::span<const int> ids);  // non-byte id -> invalid_argument

enum class TaskKind { copy, reverse, compress, expand, span };
const char* task_name(TaskKind k);
TaskKind task_from_name(std::string_view name);  // unknown -> invalid_argument

struct TaskExample {
    std::vector<int> x, y;
    TaskKind tag = TaskKind::copy;
};

// Paper-scale sequence caps (inputs 1024, outputs 256).
inline constexpr int kMaxInputLen = 1024;
inline constexpr int kMaxTargetLen = 256;

// Replaces fixed-length non-overlapping spans (~noise_ratio of the tokens)
// with sentinels S0, S1, ... in order; the target spells each sentinel
// followed by its span, ending in EOS. Returns nullopt when the sequence is
// shorter than one span (skip-with-warning contract: the caller drops it).
std::optional<std::pair<std::vector<int>, std::vector<int>>> span_corrupt(
    std::span<const int> tokens, double noise_ratio, int span_len, uint64_t seed);

// n examples of the given task over a small byte alphabet:
//   copy     y = x
//   reverse  y = reversed(x)
//   compress y = every 4th token of x          (|x| a multiple of 4)
//   expand   y = x | x | x with '|' separators (generation-heavy)
std::vector<TaskExample> make_synthetic_task(TaskKind kind, int n, uint64_t seed);

// Random corpus windows pushed through span_corrupt; too-short windows are
// skipped, so fewer than n examples may come back.
std::vector<TaskExample> make_span_examples(const std::vector<std::vector<int>>& docs,
                                            int window, int n, double noise_ratio, int span_len,
                                            uint64_t seed);

// Row-major [n, enc_len] / [n, dec_len] arrays. Decoder rows are
// BOS ∘ y ∘ EOS ∘ PAD^{n_d}; targets align y ∘ EOS with the predictions, and
// the loss mask covers exactly those m+1 positions.
struct Batch {
    int64_t n = 0;
    int64_t enc_len = 0, dec_len = 0;
    std::vector<int> enc_ids;
    std::vector<uint8_t> enc_mask;   // 1 = real input token
    std::vector<int> dec_in;
    std::vector<uint8_t> dec_mask;   // 1 = real decoder input (BOS..EOS)
    std::vector<int> targets;
    std::vector<uint8_t> loss_mask;  // 1 = position contributes to the loss
    std::vector<int> n_pad_enc;      // n_e per example
    std::vector<int> n_pad_dec;      // n_d per example

    std::span<const int> enc_row(int64_t i) const;
    std::span<const uint8_t> enc_mask_row(int64_t i) const;
    std::span<const int> dec_row(int64_t i) const;
    std::span<const uint8_t> dec_mask_row(int64_t i) const;
    std::span<const int> target_row(int64_t i) const;
    std::span<const uint8_t> loss_mask_row(int64_t i) const;
};

// Overlong examples are rejected with the offending index in the message.
Batch collate_batch(std::span<const TaskExample> examples, int64_t enc_len, int64_t dec_len);

// Newline-delimited UTF-8 documents; blank lines are skipped.
std::vector<std::string> load_corpus(const std::string& path);

// Line format: task_tag \t hex(x) \t hex(y), four lowercase hex digits per token.
void write_examples(const std::string& path, std::span<const TaskExample> examples);
std::vector<TaskExample> read_examples(const std::string& path);

}  // namespace edslm
