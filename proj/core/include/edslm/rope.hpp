// Rotary positional embedding with NTK-aware length extension.
//
// Feature pairs (2i, 2i+1) of each head are rotated by pos * theta_i with
// theta_i = base'^(-2i/d_head). The effective base is the configured one
// while every position in the call stays below ntk_train_len; beyond that it
// is stretched to base * s^(d_head/(d_head-2)) with s = (max_pos+1)/ntk_train_len,
// which rescales the rotation frequencies instead of truncating context.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace edslm {

inline double rope_effective_base(double base, int64_t d_head, int64_t max_pos,
                                  int64_t ntk_train_len) {
    if (base <= 0) throw std::invalid_argument("rope base must be positive");
    if (ntk_train_len <= 0) throw std::invalid_argument("ntk_train_len must be positive");
    if (max_pos < ntk_train_len) return base;
    const double s = static_cast<double>(max_pos + 1) / static_cast<double>(ntk_train_len);
    const double d = static_cast<double>(d_head);
    return base * std::pow(s, d / (d - 2.0));
}

// Angle of pair i at one position under the (possibly NTK-adjusted) base.
inline double rope_angle(int64_t pos, int64_t pair_index, int64_t d_head, double effective_base) {
    const double theta =
        std::pow(effective_base, -2.0 * static_cast<double>(pair_index) / static_cast<double>(d_head));
    return static_cast<double>(pos) * theta;
}

// In-place rotation of rows laid out as [n_rows, n_heads * d_head]; row r uses
// positions[r]. direction = +1 applies the rotation, -1 its inverse (used by
// the backward pass: the rotation is orthogonal, so the adjoint is the
// opposite rotation).
template <typename S>
void rope_apply_inplace(S* data, std::span<const int> positions, int64_t n_heads, int64_t d_head,
                        double base, int64_t ntk_train_len, int direction = +1) {
    if (d_head % 2 != 0) throw std::invalid_argument("rope requires an even d_head");
    if (d_head < 2) throw std::invalid_argument("rope requires d_head >= 2");
    int64_t max_pos = 0;
    for (int p : positions) {
        if (p < 0) throw std::invalid_argument("rope position must be nonnegative");
        max_pos = std::max<int64_t>(max_pos, p);
    }
    const double eff_base = rope_effective_base(base, d_head, max_pos, ntk_train_len);
    const int64_t row_width = n_heads * d_head;
    for (size_t r = 0; r < positions.size(); ++r) {
        S* row = data + static_cast<int64_t>(r) * row_width;
        for (int64_t h = 0; h < n_heads; ++h) {
            S* head = row + h * d_head;
            for (int64_t i = 0; i < d_head / 2; ++i) {
                const double a = direction * rope_angle(positions[r], i, d_head, eff_base);
                const S c = static_cast<S>(std::cos(a));
                const S s = static_cast<S>(std::sin(a));
                const S x = head[2 * i];
                const S y = head[2 * i + 1];
                head[2 * i] = c * x - s * y;
                head[2 * i + 1] = s * x + c * y;
            }
        }
    }
}

}  // namespace edslm
