// Small dense-matmul kernels shared by the autograd tape and the inference
// engine. Row-major everywhere; accumulation order is fixed (ascending inner
// index) so results are bit-reproducible run to run.
#pragma once

#include <cstdint>

namespace edslm::kernels {

// c[m,n] (+)= a[m,k] * b[k,n]
template <typename S>
inline void gemm_nn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        S* crow = c + i * n;
        if (!accumulate)
            for (int64_t j = 0; j < n; ++j) crow[j] = S(0);
        const S* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T   (dot products of rows)
template <typename S>
inline void gemm_nt(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const S* brow = b + j * k;
            S acc = S(0);
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            if (accumulate)
                crow[j] += acc;
            else
                crow[j] = acc;
        }
    }
}

// c[k,n] (+)= a[m,k]^T * b[m,n]
template <typename S>
inline void gemm_tn(const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    if (!accumulate) {
        for (int64_t idx = 0; idx < k * n; ++idx) c[idx] = S(0);
    }
    for (int64_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        const S* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const S av = arow[p];
            S* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace edslm::kernels
