#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "scanet/tensor.hpp"

namespace scanet {

namespace detail {
Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<NodePtr> parents,
                   std::function<void(TensorImpl&)> backward_fn);
}

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ArgumentError("softmax: axis out of range");
    const int n = x.dim(axis);
    long long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);

    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (long long o = 0; o < outer; ++o) {
        for (long long in = 0; in < inner; ++in) {
            const std::size_t base = static_cast<std::size_t>(o * n * inner + in);
            const std::size_t step = static_cast<std::size_t>(inner);
            float mx = -std::numeric_limits<float>::infinity();
            for (int j = 0; j < n; ++j) {
                const float v = xd[base + j * step];
                if (!std::isfinite(v)) {
                    throw NumericError("softmax: non-finite input value");
                }
                if (v > mx) mx = v;
            }
            double denom = 0.0;
            for (int j = 0; j < n; ++j)
                denom += std::exp(static_cast<double>(xd[base + j * step]) - mx);
            for (int j = 0; j < n; ++j)
                out[base + j * step] = static_cast<float>(
                    std::exp(static_cast<double>(xd[base + j * step]) - mx) / denom);
        }
    }
    NodePtr xi = x.impl();
    return detail::make_result(
        x.shape(), std::move(out), {xi}, [xi, outer, inner, n](TensorImpl& self) {
            if (!xi->requires_grad) return;
            xi->ensure_grad();
            const std::size_t step = static_cast<std::size_t>(inner);
            for (long long o = 0; o < outer; ++o) {
                for (long long in = 0; in < inner; ++in) {
                    const std::size_t base = static_cast<std::size_t>(o * n * inner + in);
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j)
                        dot += static_cast<double>(self.grad[base + j * step]) *
                               self.data[base + j * step];
                    for (int j = 0; j < n; ++j) {
                        const float y = self.data[base + j * step];
                        xi->grad[base + j * step] +=
                            y * (self.grad[base + j * step] - static_cast<float>(dot));
                    }
                }
            }
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    if (gain.rank() != 1 || bias.rank() != 1) {
        throw ShapeError("layer_norm: gain/bias must be 1-D");
    }
    const int d = gain.dim(0);
    if (bias.dim(0) != d || x.rank() < 1 || x.shape().back() != d) {
        throw ShapeError("layer_norm: last dim of " + shape_str(x.shape()) +
                         " must match gain " + shape_str(gain.shape()));
    }
    if (eps <= 0.0f) throw ArgumentError("layer_norm: eps must be > 0");
    const std::size_t rows = x.data().size() / static_cast<std::size_t>(d);
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    std::vector<float> out(xd.size());
    auto stats = std::make_shared<std::vector<double>>(rows * 2);  // mean, inv_std
    for (std::size_t r = 0; r < rows; ++r) {
        const float* row = xd.data() + r * static_cast<std::size_t>(d);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        (*stats)[r * 2] = mean;
        (*stats)[r * 2 + 1] = inv;
        float* orow = out.data() + r * static_cast<std::size_t>(d);
        for (int j = 0; j < d; ++j)
            orow[j] = static_cast<float>((row[j] - mean) * inv) * gd[static_cast<std::size_t>(j)] +
                      bd[static_cast<std::size_t>(j)];
    }
    NodePtr xi = x.impl(), gi = gain.impl(), bi = bias.impl();
    return detail::make_result(
        x.shape(), std::move(out), {xi, gi, bi}, [xi, gi, bi, stats, rows, d](TensorImpl& self) {
            const bool need_dx = xi->requires_grad;
            const bool need_dg = gi->requires_grad;
            const bool need_db = bi->requires_grad;
            if (need_dx) xi->ensure_grad();
            if (need_dg) gi->ensure_grad();
            if (need_db) bi->ensure_grad();
            std::vector<float> xhat(static_cast<std::size_t>(d));
            for (std::size_t r = 0; r < rows; ++r) {
                const double mean = (*stats)[r * 2];
                const double inv = (*stats)[r * 2 + 1];
                const float* row = xi->data.data() + r * static_cast<std::size_t>(d);
                const float* dy = self.grad.data() + r * static_cast<std::size_t>(d);
                for (int j = 0; j < d; ++j)
                    xhat[static_cast<std::size_t>(j)] =
                        static_cast<float>((row[j] - mean) * inv);
                if (need_dg || need_db) {
                    for (int j = 0; j < d; ++j) {
                        if (need_dg)
                            gi->grad[static_cast<std::size_t>(j)] +=
                                dy[j] * xhat[static_cast<std::size_t>(j)];
                        if (need_db) bi->grad[static_cast<std::size_t>(j)] += dy[j];
                    }
                }
                if (need_dx) {
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = static_cast<double>(dy[j]) *
                                           gi->data[static_cast<std::size_t>(j)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xhat[static_cast<std::size_t>(j)];
                    }
                    const double m1 = sum_dxh / d;
                    const double m2 = sum_dxh_xh / d;
                    float* dx = xi->grad.data() + r * static_cast<std::size_t>(d);
                    for (int j = 0; j < d; ++j) {
                        const double dxh = static_cast<double>(dy[j]) *
                                           gi->data[static_cast<std::size_t>(j)];
                        dx[j] += static_cast<float>(
                            inv * (dxh - m1 - xhat[static_cast<std::size_t>(j)] * m2));
                    }
                }
            }
        });
}

Tensor group_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int groups,
                  float eps) {
    if (x.rank() != 4) throw ShapeError("group_norm: expects [BxCxHxW], got " + shape_str(x.shape()));
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (groups < 1 || c % groups != 0) {
        throw ConfigError("group_norm: channels " + std::to_string(c) +
                          " not divisible by groups " + std::to_string(groups));
    }
    if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c) {
        throw ShapeError("group_norm: gain/bias must be [" + std::to_string(c) + "]");
    }
    if (eps <= 0.0f) throw ArgumentError("group_norm: eps must be > 0");
    const int cg = c / groups;
    const long long gsize = static_cast<long long>(cg) * h * w;
    const auto& xd = x.data();
    const auto& gd = gain.data();
    const auto& bd = bias.data();
    std::vector<float> out(xd.size());
    auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * groups * 2);
    for (int bb = 0; bb < b; ++bb) {
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = (static_cast<std::size_t>(bb) * c +
                                      static_cast<std::size_t>(g) * cg) *
                                     static_cast<std::size_t>(h) * w;
            double mean = 0.0;
            for (long long i = 0; i < gsize; ++i) mean += xd[base + static_cast<std::size_t>(i)];
            mean /= static_cast<double>(gsize);
            double var = 0.0;
            for (long long i = 0; i < gsize; ++i) {
                const double d0 = xd[base + static_cast<std::size_t>(i)] - mean;
                var += d0 * d0;
            }
            var /= static_cast<double>(gsize);
            const double inv = 1.0 / std::sqrt(var + eps);
            const std::size_t si = (static_cast<std::size_t>(bb) * groups + g) * 2;
            (*stats)[si] = mean;
            (*stats)[si + 1] = inv;
            for (int cc = 0; cc < cg; ++cc) {
                const int ch = g * cg + cc;
                const std::size_t pb = base + static_cast<std::size_t>(cc) * h * w;
                for (int i = 0; i < h * w; ++i)
                    out[pb + static_cast<std::size_t>(i)] =
                        static_cast<float>((xd[pb + static_cast<std::size_t>(i)] - mean) * inv) *
                            gd[static_cast<std::size_t>(ch)] +
                        bd[static_cast<std::size_t>(ch)];
            }
        }
    }
    NodePtr xi = x.impl(), gi = gain.impl(), bi = bias.impl();
    return detail::make_result(
        x.shape(), std::move(out), {xi, gi, bi},
        [xi, gi, bi, stats, b, c, h, w, groups, cg, gsize](TensorImpl& self) {
            const bool need_dx = xi->requires_grad;
            const bool need_dg = gi->requires_grad;
            const bool need_db = bi->requires_grad;
            if (need_dx) xi->ensure_grad();
            if (need_dg) gi->ensure_grad();
            if (need_db) bi->ensure_grad();
            const int hw = h * w;
            for (int bb = 0; bb < b; ++bb) {
                for (int g = 0; g < groups; ++g) {
                    const std::size_t base = (static_cast<std::size_t>(bb) * c +
                                              static_cast<std::size_t>(g) * cg) *
                                             static_cast<std::size_t>(hw);
                    const std::size_t si = (static_cast<std::size_t>(bb) * groups + g) * 2;
                    const double mean = (*stats)[si];
                    const double inv = (*stats)[si + 1];
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int cc = 0; cc < cg; ++cc) {
                        const int ch = g * cg + cc;
                        const float gn = gi->data[static_cast<std::size_t>(ch)];
                        const std::size_t pb = base + static_cast<std::size_t>(cc) * hw;
                        double dg_acc = 0.0, db_acc = 0.0;
                        for (int i = 0; i < hw; ++i) {
                            const double xh =
                                (xi->data[pb + static_cast<std::size_t>(i)] - mean) * inv;
                            const double dy = self.grad[pb + static_cast<std::size_t>(i)];
                            const double dxh = dy * gn;
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                            dg_acc += dy * xh;
                            db_acc += dy;
                        }
                        if (need_dg) gi->grad[static_cast<std::size_t>(ch)] += static_cast<float>(dg_acc);
                        if (need_db) bi->grad[static_cast<std::size_t>(ch)] += static_cast<float>(db_acc);
                    }
                    if (need_dx) {
                        const double m1 = sum_dxh / static_cast<double>(gsize);
                        const double m2 = sum_dxh_xh / static_cast<double>(gsize);
                        for (int cc = 0; cc < cg; ++cc) {
                            const int ch = g * cg + cc;
                            const float gn = gi->data[static_cast<std::size_t>(ch)];
                            const std::size_t pb = base + static_cast<std::size_t>(cc) * hw;
                            for (int i = 0; i < hw; ++i) {
                                const double xh =
                                    (xi->data[pb + static_cast<std::size_t>(i)] - mean) * inv;
                                const double dxh =
                                    static_cast<double>(self.grad[pb + static_cast<std::size_t>(i)]) * gn;
                                xi->grad[pb + static_cast<std::size_t>(i)] +=
                                    static_cast<float>(inv * (dxh - m1 - xh * m2));
                            }
                        }
                    }
                }
            }
        });
}

}  // namespace scanet
