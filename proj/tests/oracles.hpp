#pragma once

// Independent reference implementations used by the test and acceptance
// suites. Everything here is deliberately naive and double precision; none of
// it calls into the library's fast paths.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// Triple loop, 64-bit accumulation, cast to f32 at the end.
inline std::vector<float> matmul64(const std::vector<float>& a,
                                   const std::vector<float>& b, int m, int k, int n) {
    std::vector<float> c(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += static_cast<double>(a[static_cast<std::size_t>(i) * k + p]) *
                       b[static_cast<std::size_t>(p) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = static_cast<float>(acc);
        }
    }
    return c;
}

// Six nested loops over (batch, filter, oy, ox) x (channel, ky, kx),
// zero padding, 64-bit accumulation.
inline std::vector<float> conv2d64(const std::vector<float>& input,
                                   const std::vector<float>& kernels,
                                   const std::vector<float>* bias, int b, int c, int h,
                                   int w, int f, int kh, int kw, int stride, int pad) {
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<float> out(static_cast<std::size_t>(b) * f * oh * ow);
    for (int bb = 0; bb < b; ++bb) {
        for (int ff = 0; ff < f; ++ff) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias ? static_cast<double>((*bias)[static_cast<std::size_t>(ff)]) : 0.0;
                    for (int cc = 0; cc < c; ++cc) {
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const int iy = oy * stride - pad + ky;
                                const int ix = ox * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += static_cast<double>(
                                           input[((static_cast<std::size_t>(bb) * c + cc) * h +
                                                  iy) * w + ix]) *
                                       kernels[((static_cast<std::size_t>(ff) * c + cc) * kh +
                                                ky) * kw + kx];
                            }
                        }
                    }
                    out[((static_cast<std::size_t>(bb) * f + ff) * oh + oy) * ow + ox] =
                        static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

// O(n^2) pairwise AUC: each positive/negative pair contributes 1, 0.5 or 0.
// Exact integer numerator in half units.
inline double pairwise_auc(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
    long long twice = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) {
            ++np;
            for (std::size_t j = 0; j < scores.size(); ++j) {
                if (labels[j] != 0) continue;
                if (scores[i] > scores[j]) twice += 2;
                else if (scores[i] == scores[j]) twice += 1;
            }
        } else {
            ++nn;
        }
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(np) * static_cast<double>(nn));
}

// Plain softmax in double.
inline std::vector<double> softmax64(const std::vector<double>& x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : x) denom += std::exp(v - mx);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i] - mx) / denom;
    return y;
}

inline std::vector<double> layer_norm64(const std::vector<double>& x,
                                        const std::vector<double>& gain,
                                        const std::vector<double>& bias, double eps) {
    const std::size_t d = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> y(d);
    for (std::size_t i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * gain[i] + bias[i];
    return y;
}

// Single-head scaled dot-product attention, step by step in double:
// A = softmax(Q K^T / sqrt(dk)) row-wise, output = A V.
inline std::vector<double> attention64(const std::vector<double>& q,
                                       const std::vector<double>& k,
                                       const std::vector<double>& v, int tq, int tk,
                                       int dk, int dv) {
    std::vector<double> out(static_cast<std::size_t>(tq) * dv, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (int i = 0; i < tq; ++i) {
        std::vector<double> row(static_cast<std::size_t>(tk));
        for (int j = 0; j < tk; ++j) {
            double s = 0.0;
            for (int p = 0; p < dk; ++p)
                s += q[static_cast<std::size_t>(i) * dk + p] * k[static_cast<std::size_t>(j) * dk + p];
            row[static_cast<std::size_t>(j)] = s * scale;
        }
        const std::vector<double> a = softmax64(row);
        for (int j = 0; j < tk; ++j)
            for (int p = 0; p < dv; ++p)
                out[static_cast<std::size_t>(i) * dv + p] +=
                    a[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j) * dv + p];
    }
    return out;
}

// Sample mean and (n-1) standard deviation.
inline void mean_std64(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double v : xs) mean += v;
    mean /= static_cast<double>(xs.size());
    double acc = 0.0;
    for (double v : xs) acc += (v - mean) * (v - mean);
    sd = xs.size() > 1 ? std::sqrt(acc / static_cast<double>(xs.size() - 1)) : 0.0;
}

// 64-bit scalar Adam(W) reference for a single weight.
struct ScalarAdamRef {
    double m = 0.0, v = 0.0;
    long t = 0;
    double step(double w, double g, double lr, double b1, double b2, double eps,
                double wd) {
        ++t;
        w -= lr * wd * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, t));
        const double vhat = v / (1.0 - std::pow(b2, t));
        return w - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

}  // namespace oracle
