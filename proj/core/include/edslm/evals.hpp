// Evaluation: Rouge-L (LCS F-measure over token ids), teacher-forced
// perplexity, and a model x task grid that scores greedy generations on the
// synthetic tasks with per-seed raw scores and CSV / aligned-table output.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "edslm/data.hpp"
#include "edslm/model.hpp"

namespace edslm {

// Longest common subsequence length (classic quadratic DP; symmetric).
int64_t lcs_length(std::span<const int> a, std::span<const int> b);

// LCS F-measure on token ids: P = LCS/|candidate|, R = LCS/|reference|,
// F = 2PR/(P+R), and 0 whenever the LCS is empty. An empty input scores 0
// with a stderr note rather than raising.
double rouge_l(std::span<const int> candidate, std::span<const int> reference);

// exp(mean teacher-forced cross-entropy over every target position), token
// counts weighting examples of different lengths. Empty datasets throw.
double perplexity(const Model& m, const std::vector<TaskExample>& dataset);

// ------------------------------------------------------------------- grid

enum class EvalMetric { rouge_l, perplexity };
const char* metric_name(EvalMetric m);
EvalMetric metric_from_name(std::string_view name);  // unknown -> invalid_argument

struct NamedModel {
    std::string name;
    const Model* model = nullptr;  // non-owning
};

struct EvalGridOptions {
    int n_examples = 16;    // per task per seed
    int n_seeds = 3;        // independent eval sets per (model, task) cell
    uint64_t base_seed = 1234;
    int max_new = 64;       // generation budget for rouge_l scoring

    void validate() const;
};

struct GridCell {
    std::string model, task;
    double mean = 0.0, std_dev = 0.0;  // across per_seed (population std)
    std::vector<double> per_seed;
};

struct EvalGridResult {
    EvalMetric metric = EvalMetric::rouge_l;
    int n_seeds = 0;
    std::vector<GridCell> cells;  // model-major, task-minor order
};

// Scores every model on every task. Eval sets are fixed by (base_seed, seed
// index), so all models see identical examples. rouge_l cells average the
// per-example score of the greedy decode against the reference (EOS
// stripped); a generation failure scores 0 and is logged, never dropped.
// perplexity cells run the teacher-forced scorer per eval set. Models must
// share a vocabulary.
EvalGridResult eval_grid(std::span<const NamedModel> models, std::span<const TaskKind> tasks,
                         EvalMetric metric, const EvalGridOptions& opt = {});

// `model,task,metric,mean,std,n_seeds` rows, and the per-seed raw scores as
// `model,task,seed,score` rows.
std::string grid_csv(const EvalGridResult& g);
std::string grid_raw_csv(const EvalGridResult& g);

// Aligned text table: one row per model, one column per task.
std::string grid_table(const EvalGridResult& g);

}  // namespace edslm
