#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace scanet::detail {

// C[M x N] = A[M x K] . B[K x N]. Each output element accumulates in double
// with k ascending, so the rounded f32 value is identical to the naive
// triple-loop 64-bit oracle. The i-k-j ordering keeps B row access contiguous
// without changing per-element accumulation order. When init is non-null it
// seeds the accumulator per row block (conv bias).
inline void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n,
                    const double* row_init = nullptr) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), row_init ? row_init[i] : 0.0);
        const float* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double aip = arow[p];
            const float* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += aip * brow[j];
        }
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[static_cast<std::size_t>(j)]);
    }
}

// C[M x N] += A[M x K] . B^T where B is [N x K].
inline void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<std::size_t>(i) * k;
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const float* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * brow[p];
            crow[j] += static_cast<float>(acc);
        }
    }
}

// C[M x N] += A^T . B where A is [K x M], B is [K x N].
inline void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int p = 0; p < k; ++p) {
            const double aip = a[static_cast<std::size_t>(p) * m + i];
            const float* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += aip * brow[j];
        }
        float* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j)
            crow[j] += static_cast<float>(acc[static_cast<std::size_t>(j)]);
    }
}

}  // namespace scanet::detail
