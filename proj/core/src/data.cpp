#include "edslm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace edslm {

int Vocab::sentinel(int i) {
    if (i < 0 || i >= kNumSentinels)
        throw std::invalid_argument("sentinel index out of range: " + std::to_string(i));
    return kSentinelBase + i;
}

std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(static_cast<int>(c));
    return ids;
}

std::string detokenize(std::span<const int> ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (!Vocab::is_byte(id))
            throw std::invalid_argument("detokenize: id " + std::to_string(id) +
                                        " is not a byte token");
        out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    }
    return out;
}

const char* task_name(TaskKind k) {
    switch (k) {
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::compress: return "compress";
        case TaskKind::expand: return "expand";
        case TaskKind::span: return "span";
    }
    throw std::invalid_argument("task_name: bad enum value");
}

TaskKind task_from_name(std::string_view name) {
    if (name == "copy") return TaskKind::copy;
    if (name == "reverse") return TaskKind::reverse;
    if (name == "compress") return TaskKind::compress;
    if (name == "expand") return TaskKind::expand;
    if (name == "span") return TaskKind::span;
    throw std::invalid_argument("unknown task name '" + std::string(name) + "'");
}

// ---------------------------------------------------------- span corrupt --

std::optional<std::pair<std::vector<int>, std::vector<int>>> span_corrupt(
    std::span<const int> tokens, double noise_ratio, int span_len, uint64_t seed) {
    if (!(noise_ratio > 0.0 && noise_ratio < 1.0))
        throw std::invalid_argument("span_corrupt: noise_ratio must lie in (0, 1)");
    if (span_len < 1) throw std::invalid_argument("span_corrupt: span_len must be >= 1");
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n < span_len) return std::nullopt;  // too short: caller skips this example

    int64_t n_spans = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(noise_ratio * static_cast<double>(n) / span_len)));
    n_spans = std::min<int64_t>(n_spans, Vocab::kNumSentinels);
    n_spans = std::min<int64_t>(n_spans, n / span_len);  // must fit disjointly

    // Rejection-sample non-overlapping starts; deterministic in the seed.
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> start_d(0, n - span_len);
    std::vector<int64_t> starts;
    int64_t attempts = 0;
    const int64_t max_attempts = 200 * n_spans + 200;
    while (static_cast<int64_t>(starts.size()) < n_spans && attempts < max_attempts) {
        ++attempts;
        const int64_t s = start_d(rng);
        bool overlaps = false;
        for (int64_t t : starts)
            if (s < t + span_len && t < s + span_len) {
                overlaps = true;
                break;
            }
        if (!overlaps) starts.push_back(s);
    }
    if (starts.empty()) return std::nullopt;
    std::sort(starts.begin(), starts.end());

    std::vector<int> input, target;
    input.reserve(tokens.size());
    target.reserve(static_cast<size_t>(static_cast<int64_t>(starts.size()) * (span_len + 1) + 1));
    size_t next = 0;
    for (int64_t i = 0; i < n;) {
        if (next < starts.size() && i == starts[next]) {
            const int s_id = Vocab::sentinel(static_cast<int>(next));
            input.push_back(s_id);
            target.push_back(s_id);
            for (int j = 0; j < span_len; ++j) target.push_back(tokens[static_cast<size_t>(i + j)]);
            i += span_len;
            ++next;
        } else {
            input.push_back(tokens[static_cast<size_t>(i)]);
            ++i;
        }
    }
    target.push_back(Vocab::kEos);
    return std::make_pair(std::move(input), std::move(target));
}

// ------------------------------------------------------- synthetic tasks --

namespace {

// Small alphabet ('a'..'p') keeps toy models able to learn the mappings.
constexpr int kAlphaBase = 'a';
constexpr int kAlphaSize = 16;
constexpr int kSeparator = '|';

std::vector<int> random_word(std::mt19937_64& rng, int len) {
    std::uniform_int_distribution<int> d(0, kAlphaSize - 1);
    std::vector<int> w(static_cast<size_t>(len));
    for (auto& t : w) t = kAlphaBase + d(rng);
    return w;
}

}  // namespace

std::vector<TaskExample> make_synthetic_task(TaskKind kind, int n, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("make_synthetic_task: n must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<TaskExample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        TaskExample ex;
        ex.tag = kind;
        switch (kind) {
            case TaskKind::copy: {
                std::uniform_int_distribution<int> len_d(4, 24);
                ex.x = random_word(rng, len_d(rng));
                ex.y = ex.x;
                break;
            }
            case TaskKind::reverse: {
                std::uniform_int_distribution<int> len_d(4, 24);
                ex.x = random_word(rng, len_d(rng));
                ex.y.assign(ex.x.rbegin(), ex.x.rend());
                break;
            }
            case TaskKind::compress: {
                std::uniform_int_distribution<int> len_d(2, 16);  // x length = 4 * this
                ex.x = random_word(rng, 4 * len_d(rng));
                for (size_t j = 3; j < ex.x.size(); j += 4) ex.y.push_back(ex.x[j]);
                break;
            }
            case TaskKind::expand: {
                std::uniform_int_distribution<int> len_d(4, 40);
                ex.x = random_word(rng, len_d(rng));
                for (int rep = 0; rep < 3; ++rep) {
                    if (rep) ex.y.push_back(kSeparator);
                    ex.y.insert(ex.y.end(), ex.x.begin(), ex.x.end());
                }
                break;
            }
            case TaskKind::span:
                throw std::invalid_argument(
                    "make_synthetic_task: span examples come from make_span_examples");
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<TaskExample> make_span_examples(const std::vector<std::vector<int>>& docs, int window,
                                            int n, double noise_ratio, int span_len,
                                            uint64_t seed) {
    if (docs.empty()) throw std::invalid_argument("make_span_examples: empty corpus");
    if (window < 1) throw std::invalid_argument("make_span_examples: window must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> doc_d(0, docs.size() - 1);
    std::vector<TaskExample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::vector<int>& doc = docs[doc_d(rng)];
        if (doc.empty()) continue;
        const int64_t len = std::min<int64_t>(window, static_cast<int64_t>(doc.size()));
        std::uniform_int_distribution<int64_t> off_d(0, static_cast<int64_t>(doc.size()) - len);
        const int64_t off = off_d(rng);
        auto corrupted = span_corrupt(
            std::span<const int>(doc.data() + off, static_cast<size_t>(len)), noise_ratio,
            span_len, rng());
        if (!corrupted) continue;  // window too short; skip
        TaskExample ex;
        ex.tag = TaskKind::span;
        ex.x = std::move(corrupted->first);
        ex.y = std::move(corrupted->second);
        if (ex.x.size() > kMaxInputLen || ex.y.size() > kMaxTargetLen) continue;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------- batch --

std::span<const int> Batch::enc_row(int64_t i) const {
    return {enc_ids.data() + i * enc_len, static_cast<size_t>(enc_len)};
}
std::span<const uint8_t> Batch::enc_mask_row(int64_t i) const {
    return {enc_mask.data() + i * enc_len, static_cast<size_t>(enc_len)};
}
std::span<const int> Batch::dec_row(int64_t i) const {
    return {dec_in.data() + i * dec_len, static_cast<size_t>(dec_len)};
}
std::span<const uint8_t> Batch::dec_mask_row(int64_t i) const {
    return {dec_mask.data() + i * dec_len, static_cast<size_t>(dec_len)};
}
std::span<const int> Batch::target_row(int64_t i) const {
    return {targets.data() + i * dec_len, static_cast<size_t>(dec_len)};
}
std::span<const uint8_t> Batch::loss_mask_row(int64_t i) const {
    return {loss_mask.data() + i * dec_len, static_cast<size_t>(dec_len)};
}

Batch collate_batch(std::span<const TaskExample> examples, int64_t enc_len, int64_t dec_len) {
    if (examples.empty()) throw std::invalid_argument("collate_batch: no examples");
    Batch b;
    b.n = static_cast<int64_t>(examples.size());
    b.enc_len = enc_len;
    b.dec_len = dec_len;
    b.enc_ids.assign(static_cast<size_t>(b.n * enc_len), Vocab::kPad);
    b.enc_mask.assign(static_cast<size_t>(b.n * enc_len), 0);
    b.dec_in.assign(static_cast<size_t>(b.n * dec_len), Vocab::kPad);
    b.dec_mask.assign(static_cast<size_t>(b.n * dec_len), 0);
    b.targets.assign(static_cast<size_t>(b.n * dec_len), Vocab::kPad);
    b.loss_mask.assign(static_cast<size_t>(b.n * dec_len), 0);

    for (int64_t i = 0; i < b.n; ++i) {
        const TaskExample& ex = examples[static_cast<size_t>(i)];
        const int64_t lx = static_cast<int64_t>(ex.x.size());
        const int64_t ly = static_cast<int64_t>(ex.y.size());
        if (lx > enc_len)
            throw std::invalid_argument("collate_batch: example " + std::to_string(i) +
                                        " input length " + std::to_string(lx) +
                                        " exceeds enc_len " + std::to_string(enc_len));
        if (ly + 2 > dec_len)
            throw std::invalid_argument("collate_batch: example " + std::to_string(i) +
                                        " target length " + std::to_string(ly) +
                                        " exceeds dec_len " + std::to_string(dec_len) +
                                        " (room for BOS and EOS required)");
        int* enc = b.enc_ids.data() + i * enc_len;
        uint8_t* em = b.enc_mask.data() + i * enc_len;
        for (int64_t j = 0; j < lx; ++j) {
            enc[j] = ex.x[static_cast<size_t>(j)];
            em[j] = 1;
        }
        b.n_pad_enc.push_back(static_cast<int>(enc_len - lx));

        int* din = b.dec_in.data() + i * dec_len;
        uint8_t* dm = b.dec_mask.data() + i * dec_len;
        int* tgt = b.targets.data() + i * dec_len;
        uint8_t* lm = b.loss_mask.data() + i * dec_len;
        din[0] = Vocab::kBos;
        for (int64_t j = 0; j < ly; ++j) din[1 + j] = ex.y[static_cast<size_t>(j)];
        din[1 + ly] = Vocab::kEos;
        for (int64_t j = 0; j < ly + 2; ++j) dm[j] = 1;
        for (int64_t j = 0; j < ly; ++j) tgt[j] = ex.y[static_cast<size_t>(j)];
        tgt[ly] = Vocab::kEos;
        for (int64_t j = 0; j <= ly; ++j) lm[j] = 1;
        b.n_pad_dec.push_back(static_cast<int>(dec_len - ly - 2));
    }
    return b;
}

// ----------------------------------------------------------------- files --

std::vector<std::string> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_corpus: cannot open '" + path + "'");
    std::vector<std::string> docs;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) docs.push_back(line);
    }
    return docs;
}

namespace {

void append_hex(std::string& out, std::span<const int> ids) {
    static const char* digits = "0123456789abcdef";
    for (int id : ids) {
        if (id < 0 || id > 0xffff) throw std::invalid_argument("token id outside hex range");
        out.push_back(digits[(id >> 12) & 0xf]);
        out.push_back(digits[(id >> 8) & 0xf]);
        out.push_back(digits[(id >> 4) & 0xf]);
        out.push_back(digits[id & 0xf]);
    }
}

std::vector<int> parse_hex(std::string_view s, const std::string& where) {
    if (s.size() % 4 != 0)
        throw std::runtime_error("malformed token field (" + where + "): length not a multiple of 4");
    std::vector<int> ids;
    ids.reserve(s.size() / 4);
    for (size_t i = 0; i < s.size(); i += 4) {
        int v = 0;
        for (size_t j = 0; j < 4; ++j) {
            const char c = s[i + j];
            int d;
            if (c >= '0' && c <= '9')
                d = c - '0';
            else if (c >= 'a' && c <= 'f')
                d = 10 + (c - 'a');
            else
                throw std::runtime_error("malformed hex digit (" + where + ")");
            v = (v << 4) | d;
        }
        ids.push_back(v);
    }
    return ids;
}

}  // namespace

void write_examples(const std::string& path, std::span<const TaskExample> examples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_examples: cannot open '" + path + "'");
    std::string line;
    for (const TaskExample& ex : examples) {
        line.clear();
        line += task_name(ex.tag);
        line += '\t';
        append_hex(line, ex.x);
        line += '\t';
        append_hex(line, ex.y);
        line += '\n';
        out << line;
    }
    if (!out) throw std::runtime_error("write_examples: write failed for '" + path + "'");
}

std::vector<TaskExample> read_examples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_examples: cannot open '" + path + "'");
    std::vector<TaskExample> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(lineno);
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw std::runtime_error("malformed record (" + where + "): expected 3 tab fields");
        TaskExample ex;
        ex.tag = task_from_name(std::string_view(line).substr(0, t1));
        ex.x = parse_hex(std::string_view(line).substr(t1 + 1, t2 - t1 - 1), where);
        ex.y = parse_hex(std::string_view(line).substr(t2 + 1), where);
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace edslm
