#include "edslm/evals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "edslm/infer.hpp"
#include "edslm/trainer.hpp"

namespace edslm {

// ---------------------------------------------------------------- rouge-l

int64_t lcs_length(std::span<const int> a, std::span<const int> b) {
    // Two-row DP; prev[j] = LCS(a[0..i), b[0..j)).
    std::vector<int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::span<const int> candidate, std::span<const int> reference) {
    if (candidate.empty() || reference.empty()) {
        std::fprintf(stderr, "rouge_l: empty %s scored 0\n",
                     candidate.empty() ? "candidate" : "reference");
        return 0.0;
    }
    int64_t lcs = lcs_length(candidate, reference);
    if (lcs == 0) return 0.0;
    double p = double(lcs) / double(candidate.size());
    double r = double(lcs) / double(reference.size());
    return 2.0 * p * r / (p + r);
}

// ------------------------------------------------------------- perplexity

double perplexity(const Model& m, const std::vector<TaskExample>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("perplexity: empty dataset");
    double total_nll = 0.0;
    int64_t total_tokens = 0;
    for (const TaskExample& ex : dataset) {
        Graph g;
        Tensor loss = example_nll(g, m, ex);
        int64_t tokens = example_loss_tokens(ex);
        total_nll += double(loss.at(0)) * double(tokens);
        total_tokens += tokens;
    }
    return std::exp(total_nll / double(total_tokens));
}

// ------------------------------------------------------------------- grid

const char* metric_name(EvalMetric m) {
    return m == EvalMetric::rouge_l ? "rouge_l" : "perplexity";
}

EvalMetric metric_from_name(std::string_view name) {
    if (name == "rouge_l") return EvalMetric::rouge_l;
    if (name == "perplexity") return EvalMetric::perplexity;
    throw std::invalid_argument("unknown eval metric '" + std::string(name) + "'");
}

void EvalGridOptions::validate() const {
    if (n_examples < 1) throw std::invalid_argument("eval_grid: n_examples must be >= 1");
    if (n_seeds < 1) throw std::invalid_argument("eval_grid: n_seeds must be >= 1");
    if (max_new < 1) throw std::invalid_argument("eval_grid: max_new must be >= 1");
}

namespace {

// Greedy decode scored against the reference; EOS is stripped first. Any
// failure (length caps, cache exhaustion) scores 0 so the cell keeps its
// denominator; dropping examples silently would bias comparisons.
double score_generation(const Model& m, const TaskExample& ex, int max_new, const char* model_name,
                        const char* task, int seed_idx, int ex_idx) {
    try {
        int bos = m.config.kind == ModelKind::encoder_decoder ? Vocab::kBos : -1;
        std::vector<int> gen = greedy_decode(m, ex.x, max_new, Vocab::kEos, bos);
        if (!gen.empty() && gen.back() == Vocab::kEos) gen.pop_back();
        return rouge_l(gen, ex.y);
    } catch (const std::exception& err) {
        std::fprintf(stderr, "eval_grid: generation failed (model %s, task %s, seed %d, example %d): %s\n",
                     model_name, task, seed_idx, ex_idx, err.what());
        return 0.0;
    }
}

struct Stats {
    double mean = 0.0, std_dev = 0.0;
};

Stats mean_std(std::span<const double> v) {
    Stats s;
    for (double x : v) s.mean += x;
    s.mean /= double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - s.mean) * (x - s.mean);
    s.std_dev = std::sqrt(std::max(0.0, var / double(v.size())));
    return s;
}

}  // namespace

EvalGridResult eval_grid(std::span<const NamedModel> models, std::span<const TaskKind> tasks,
                         EvalMetric metric, const EvalGridOptions& opt) {
    opt.validate();
    if (models.empty()) throw std::invalid_argument("eval_grid: no models");
    if (tasks.empty()) throw std::invalid_argument("eval_grid: no tasks");
    for (const NamedModel& nm : models) {
        if (nm.model == nullptr) throw std::invalid_argument("eval_grid: null model pointer");
        if (nm.model->config.vocab_size != models.front().model->config.vocab_size)
            throw std::invalid_argument("eval_grid: models must share a vocabulary");
    }

    // One fixed eval set per (task, seed index), shared by every model.
    std::vector<std::vector<std::vector<TaskExample>>> sets(tasks.size());
    for (size_t t = 0; t < tasks.size(); ++t) {
        sets[t].reserve(static_cast<size_t>(opt.n_seeds));
        for (int s = 0; s < opt.n_seeds; ++s)
            sets[t].push_back(make_synthetic_task(tasks[t], opt.n_examples,
                                                  opt.base_seed + static_cast<uint64_t>(s)));
    }

    EvalGridResult out;
    out.metric = metric;
    out.n_seeds = opt.n_seeds;
    for (const NamedModel& nm : models) {
        for (size_t t = 0; t < tasks.size(); ++t) {
            GridCell cell;
            cell.model = nm.name;
            cell.task = task_name(tasks[t]);
            for (int s = 0; s < opt.n_seeds; ++s) {
                const std::vector<TaskExample>& set = sets[t][static_cast<size_t>(s)];
                double score = 0.0;
                if (metric == EvalMetric::rouge_l) {
                    for (size_t i = 0; i < set.size(); ++i)
                        score += score_generation(*nm.model, set[i], opt.max_new, nm.name.c_str(),
                                                  cell.task.c_str(), s, static_cast<int>(i));
                    score /= double(set.size());
                } else {
                    try {
                        score = perplexity(*nm.model, set);
                    } catch (const std::exception& err) {
                        std::fprintf(stderr, "eval_grid: perplexity failed (model %s, task %s, seed %d): %s\n",
                                     nm.name.c_str(), cell.task.c_str(), s, err.what());
                        score = 0.0;
                    }
                }
                cell.per_seed.push_back(score);
            }
            Stats st = mean_std(cell.per_seed);
            cell.mean = st.mean;
            cell.std_dev = st.std_dev;
            out.cells.push_back(std::move(cell));
        }
    }
    return out;
}

// ---------------------------------------------------------------- reports

std::string grid_csv(const EvalGridResult& g) {
    std::ostringstream out;
    out << "model,task,metric,mean,std,n_seeds\n";
    char buf[96];
    for (const GridCell& c : g.cells) {
        std::snprintf(buf, sizeof buf, "%.6g,%.6g", c.mean, c.std_dev);
        out << c.model << ',' << c.task << ',' << metric_name(g.metric) << ',' << buf << ','
            << g.n_seeds << '\n';
    }
    return out.str();
}

std::string grid_raw_csv(const EvalGridResult& g) {
    std::ostringstream out;
    out << "model,task,seed,score\n";
    char buf[48];
    for (const GridCell& c : g.cells) {
        for (size_t s = 0; s < c.per_seed.size(); ++s) {
            std::snprintf(buf, sizeof buf, "%.6g", c.per_seed[s]);
            out << c.model << ',' << c.task << ',' << s << ',' << buf << '\n';
        }
    }
    return out.str();
}

std::string grid_table(const EvalGridResult& g) {
    // Collect model/task orders as they appear.
    std::vector<std::string> models, tasks;
    for (const GridCell& c : g.cells) {
        if (models.empty() || models.back() != c.model) {
            if (std::find(models.begin(), models.end(), c.model) == models.end())
                models.push_back(c.model);
        }
        if (std::find(tasks.begin(), tasks.end(), c.task) == tasks.end()) tasks.push_back(c.task);
    }
    auto cell_text = [&](const std::string& model, const std::string& task) -> std::string {
        for (const GridCell& c : g.cells) {
            if (c.model == model && c.task == task) {
                char buf[48];
                std::snprintf(buf, sizeof buf, "%.4f+-%.4f", c.mean, c.std_dev);
                return buf;
            }
        }
        return "-";
    };

    size_t model_w = 5;  // "model"
    for (const std::string& m : models) model_w = std::max(model_w, m.size());
    std::vector<size_t> col_w(tasks.size());
    for (size_t t = 0; t < tasks.size(); ++t) {
        col_w[t] = tasks[t].size();
        for (const std::string& m : models) col_w[t] = std::max(col_w[t], cell_text(m, tasks[t]).size());
    }

    std::ostringstream out;
    out << "metric: " << metric_name(g.metric) << " (" << g.n_seeds << " seeds)\n";
    out << std::string(model_w, ' ').replace(0, 5, "model");
    for (size_t t = 0; t < tasks.size(); ++t)
        out << "  " << tasks[t] << std::string(col_w[t] - tasks[t].size(), ' ');
    out << '\n';
    for (const std::string& m : models) {
        out << m << std::string(model_w - m.size(), ' ');
        for (size_t t = 0; t < tasks.size(); ++t) {
            std::string cell = cell_text(m, tasks[t]);
            out << "  " << cell << std::string(col_w[t] - cell.size(), ' ');
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace edslm
