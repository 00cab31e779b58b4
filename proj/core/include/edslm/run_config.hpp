// Flat dotted-key run configuration: a declared registry with defaults,
// config-file loading, key=value overrides, typed getters, and a canonical
// serialization whose FNV-1a hash identifies the run in manifests.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "edslm/data.hpp"
#include "edslm/distill.hpp"
#include "edslm/evals.hpp"
#include "edslm/model.hpp"
#include "edslm/profiler.hpp"
#include "edslm/trainer.hpp"

namespace edslm {

class RunConfig {
  public:
    // Defines a key and its default. Only declared keys can be set later.
    void declare(const std::string& key, std::string default_value);

    bool has(const std::string& key) const;
    bool is_set(const std::string& key) const;  // touched by a file or override

    // Unknown keys raise invalid_argument naming the key.
    void set(const std::string& key, std::string value);

    // `key=value` lines; blank lines and #-comments skipped; keys must be
    // declared and unique within the file. Unreadable path -> runtime_error.
    void load_file(const std::string& path);

    // A single `key=value` override (the --set form).
    void apply_override(const std::string& spec);

    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Sorted `key=value` lines; the run identity.
    std::string canonical_text() const;
    uint64_t hash() const;  // fnv1a64 over canonical_text()

    const std::vector<std::string>& keys() const { return order_; }  // declaration order

  private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::string> values_;
    std::unordered_set<std::string> touched_;
};

// The full key space shared by every subcommand, with defaults. Model keys
// mirror the toy encoder-decoder preset.
RunConfig default_run_config();

// model.preset picks a named configuration; any explicitly set model.* field
// then overrides it. An empty preset builds purely from the fields.
ModelConfig model_from_config(const RunConfig& cfg);

TrainConfig train_from_config(const RunConfig& cfg, Objective objective);
KDConfig kd_from_config(const RunConfig& cfg);
EvalGridOptions eval_options_from_config(const RunConfig& cfg);

// Reads <prefix>.input_len / output_len, plus batch_size / element_bytes
// when those keys exist under the prefix.
Workload workload_from_config(const RunConfig& cfg, const std::string& prefix);

// Comma-separated lists, fields trimmed, empties dropped.
std::vector<std::string> split_list(const std::string& csv);
std::vector<TaskKind> tasks_from_list(const std::string& csv);

// Reproducibility record: subcommand, tool version, config hash, and the
// canonical post-override key=value listing.
std::string manifest_text(const std::string& subcommand, const RunConfig& cfg,
                          const std::string& version);

}  // namespace edslm
