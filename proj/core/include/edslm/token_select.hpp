// Variance-based token compression: score each token row by the population
// variance of its features and keep the top-k, preserving original order.
// Low-variance rows (uniform background content) are dropped first.
#pragma once

#include <cstdint>
#include <vector>

#include "edslm/tensor.hpp"

namespace edslm {

struct VarianceSelection {
    Tensor selected;            // [keep, d], rows in original order
    std::vector<int64_t> kept;  // ascending source row indices
};

// Population variance over the feature axis of each row of tokens [N, d];
// the `keep` highest-scoring rows survive, ties broken toward the lower
// index. Requires a 2-D tensor and 1 <= keep <= N.
VarianceSelection variance_select(const Tensor& tokens, int64_t keep);

// The per-row scores themselves, for inspection and tests.
std::vector<double> variance_scores(const Tensor& tokens);

}  // namespace edslm
