#include "edslm/token_select.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace edslm {

std::vector<double> variance_scores(const Tensor& tokens) {
    if (!tokens.defined() || tokens.shape().size() != 2)
        throw std::invalid_argument("variance_scores: tokens must be a 2-D tensor");
    const int64_t n = tokens.dim(0), d = tokens.dim(1);
    std::span<const float> v = tokens.values();
    std::vector<double> scores(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const float* row = v.data() + i * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= double(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        scores[static_cast<size_t>(i)] = var / double(d);
    }
    return scores;
}

VarianceSelection variance_select(const Tensor& tokens, int64_t keep) {
    std::vector<double> scores = variance_scores(tokens);
    const int64_t n = tokens.dim(0), d = tokens.dim(1);
    if (keep < 1 || keep > n)
        throw std::invalid_argument("variance_select: keep must be in [1, n_tokens]");

    // Order by score descending, index ascending on ties; the survivors are
    // then restored to source order.
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    });
    order.resize(static_cast<size_t>(keep));
    std::sort(order.begin(), order.end());

    VarianceSelection out;
    out.kept = order;
    out.selected = Tensor::zeros({keep, d});
    std::span<const float> src = tokens.values();
    std::span<float> dst = out.selected.values();
    for (int64_t r = 0; r < keep; ++r)
        std::memcpy(dst.data() + r * d, src.data() + out.kept[static_cast<size_t>(r)] * d,
                    sizeof(float) * static_cast<size_t>(d));
    return out;
}

}  // namespace edslm
