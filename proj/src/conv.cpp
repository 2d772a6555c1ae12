#include <cstddef>
#include <cstdint>
#include <vector>

#include "gemm.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

namespace detail {
Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<NodePtr> parents,
                   std::function<void(TensorImpl&)> backward_fn);
}

namespace testhooks {
bool conv_backward_bug = false;
}

namespace {

// Patch rows ordered (c, kh, kw); together with the GEMM's ascending-k
// accumulation this reproduces the six-loop oracle's summation order.
void im2col(const float* in, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, float* col) {
    const int patch = oh * ow;
    for (int ch = 0; ch < c; ++ch) {
        const float* plane = in + static_cast<std::size_t>(ch) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                float* crow = col + (static_cast<std::size_t>(ch) * kh * kw +
                                     static_cast<std::size_t>(ki) * kw + kj) *
                                        patch;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) crow[oy * ow + ox] = 0.0f;
                        continue;
                    }
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        crow[oy * ow + ox] =
                            (ix < 0 || ix >= w) ? 0.0f : plane[iy * w + ix];
                    }
                }
            }
        }
    }
}

void col2im_acc(const float* col, int c, int h, int w, int kh, int kw, int stride,
                int pad, int oh, int ow, float* grad) {
    const int patch = oh * ow;
    for (int ch = 0; ch < c; ++ch) {
        float* plane = grad + static_cast<std::size_t>(ch) * h * w;
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const float* crow = col + (static_cast<std::size_t>(ch) * kh * kw +
                                           static_cast<std::size_t>(ki) * kw + kj) *
                                              patch;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ki;
                    if (iy < 0 || iy >= h) continue;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + kj;
                        if (ix < 0 || ix >= w) continue;
                        plane[iy * w + ix] += crow[oy * ow + ox];
                    }
                }
            }
        }
    }
}

Tensor conv2d_impl(const Tensor& input, const Tensor& kernels, const Tensor* bias,
                   int stride, int padding) {
    if (input.rank() != 4 || kernels.rank() != 4) {
        throw ShapeError("conv2d: expects input [BxCxHxW] and kernels [FxCxkhxkw], got " +
                         shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
    }
    if (stride < 1) throw ArgumentError("conv2d: stride must be >= 1");
    if (padding < 0) throw ArgumentError("conv2d: padding must be >= 0");
    const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int f = kernels.dim(0), kc = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kc != c) {
        throw ShapeError("conv2d: kernel channels " + shape_str(kernels.shape()) +
                         " do not match input " + shape_str(input.shape()));
    }
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ShapeError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
    }
    if (bias && (bias->rank() != 1 || bias->dim(0) != f)) {
        throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " must be [" +
                         std::to_string(f) + "]");
    }
    const int oh = (h + 2 * padding - kh) / stride + 1;
    const int ow = (w + 2 * padding - kw) / stride + 1;
    const int ckk = c * kh * kw;
    const int patch = oh * ow;

    std::vector<double> bias_init;
    if (bias) {
        bias_init.resize(static_cast<std::size_t>(f));
        for (int i = 0; i < f; ++i) bias_init[static_cast<std::size_t>(i)] = bias->data()[static_cast<std::size_t>(i)];
    }

    std::vector<float> out(static_cast<std::size_t>(b) * f * patch);
    std::vector<float> col(static_cast<std::size_t>(ckk) * patch);
    for (int bi = 0; bi < b; ++bi) {
        im2col(input.data().data() + static_cast<std::size_t>(bi) * c * h * w, c, h, w, kh,
               kw, stride, padding, oh, ow, col.data());
        detail::gemm_nn(kernels.data().data(), col.data(),
                        out.data() + static_cast<std::size_t>(bi) * f * patch, f, ckk, patch,
                        bias ? bias_init.data() : nullptr);
    }

    NodePtr xi = input.impl(), ki = kernels.impl();
    NodePtr bi_node = bias ? bias->impl() : nullptr;
    std::vector<NodePtr> parents{xi, ki};
    if (bi_node) parents.push_back(bi_node);

    auto backward_fn = [xi, ki, bi_node, b, c, h, w, f, kh, kw, stride, padding, oh, ow,
                        ckk, patch](TensorImpl& self) {
        if (bi_node && bi_node->requires_grad) {
            bi_node->ensure_grad();
            for (int fi = 0; fi < f; ++fi) {
                double acc = 0.0;
                for (int bb = 0; bb < b; ++bb) {
                    const float* g = self.grad.data() +
                                     (static_cast<std::size_t>(bb) * f + fi) * patch;
                    for (int p = 0; p < patch; ++p) acc += g[p];
                }
                bi_node->grad[static_cast<std::size_t>(fi)] += static_cast<float>(acc);
            }
        }
        const bool need_dk = ki->requires_grad;
        const bool need_dx = xi->requires_grad;
        if (!need_dk && !need_dx) return;
        if (need_dk) ki->ensure_grad();
        if (need_dx) xi->ensure_grad();
        // im2col is recomputed here rather than kept from the forward pass;
        // the graph retains the input anyway and the buffers dominate memory
        // at full scale.
        std::vector<float> col(static_cast<std::size_t>(ckk) * patch);
        std::vector<float> dcol;
        if (need_dx) dcol.resize(static_cast<std::size_t>(ckk) * patch);
        for (int bb = 0; bb < b; ++bb) {
            const float* dout = self.grad.data() + static_cast<std::size_t>(bb) * f * patch;
            if (need_dk) {
                im2col(xi->data.data() + static_cast<std::size_t>(bb) * c * h * w, c, h, w,
                       kh, kw, stride, padding, oh, ow, col.data());
                if (testhooks::conv_backward_bug) {
                    // negative control, see gradcheck.hpp
                    std::vector<float> wrong(dout,
                                             dout + static_cast<std::size_t>(f) * patch);
                    for (auto& v : wrong) v *= 1.02f;
                    detail::gemm_nt_acc(wrong.data(), col.data(), ki->grad.data(), f,
                                        patch, ckk);
                } else {
                    detail::gemm_nt_acc(dout, col.data(), ki->grad.data(), f, patch, ckk);
                }
            }
            if (need_dx) {
                std::fill(dcol.begin(), dcol.end(), 0.0f);
                detail::gemm_tn_acc(ki->data.data(), dout, dcol.data(), ckk, f, patch);
                col2im_acc(dcol.data(), c, h, w, kh, kw, stride, padding, oh, ow,
                           xi->grad.data() + static_cast<std::size_t>(bb) * c * h * w);
            }
        }
    };
    return detail::make_result({b, f, oh, ow}, std::move(out), std::move(parents),
                               std::move(backward_fn));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    return conv2d_impl(input, kernels, nullptr, stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, int stride,
              int padding) {
    return conv2d_impl(input, kernels, &bias, stride, padding);
}

Tensor max_pool2d(const Tensor& input, int kernel, int stride) {
    if (input.rank() != 4) {
        throw ShapeError("max_pool2d: expects [BxCxHxW], got " + shape_str(input.shape()));
    }
    if (kernel < 1 || stride < 1) throw ArgumentError("max_pool2d: kernel and stride must be >= 1");
    const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel > h || kernel > w) {
        throw ShapeError("max_pool2d: window " + std::to_string(kernel) + " exceeds input " +
                         shape_str(input.shape()));
    }
    const int oh = (h - kernel) / stride + 1;
    const int ow = (w - kernel) / stride + 1;
    std::vector<float> out(static_cast<std::size_t>(b) * c * oh * ow);
    auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
    const float* in = input.data().data();
    std::size_t o = 0;
    for (int bb = 0; bb < b; ++bb) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t plane = (static_cast<std::size_t>(bb) * c + ch) *
                                      static_cast<std::size_t>(h) * w;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    std::int64_t best_at = -1;
                    for (int ky = 0; ky < kernel; ++ky) {
                        for (int kx = 0; kx < kernel; ++kx) {
                            const std::size_t at = plane +
                                static_cast<std::size_t>(oy * stride + ky) * w +
                                static_cast<std::size_t>(ox * stride + kx);
                            // strict > keeps the first index on ties
                            if (in[at] > best) {
                                best = in[at];
                                best_at = static_cast<std::int64_t>(at);
                            }
                        }
                    }
                    out[o] = best;
                    (*argmax)[o] = best_at;
                }
            }
        }
    }
    NodePtr xi = input.impl();
    return detail::make_result({b, c, oh, ow}, std::move(out), {xi},
                               [xi, argmax](TensorImpl& self) {
                                   if (!xi->requires_grad) return;
                                   xi->ensure_grad();
                                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       xi->grad[static_cast<std::size_t>((*argmax)[i])] +=
                                           self.grad[i];
                               });
}

Tensor mean_pool(const Tensor& input) {
    if (input.rank() != 4) {
        throw ShapeError("mean_pool: expects [BxCxHxW], got " + shape_str(input.shape()));
    }
    const int b = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int hw = h * w;
    std::vector<float> out(static_cast<std::size_t>(b) * c);
    const float* in = input.data().data();
    for (int bc = 0; bc < b * c; ++bc) {
        double acc = 0.0;
        const float* plane = in + static_cast<std::size_t>(bc) * hw;
        for (int i = 0; i < hw; ++i) acc += plane[i];
        out[static_cast<std::size_t>(bc)] = static_cast<float>(acc / hw);
    }
    NodePtr xi = input.impl();
    return detail::make_result({b, c}, std::move(out), {xi}, [xi, hw](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const float inv = 1.0f / static_cast<float>(hw);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const float g = self.grad[i] * inv;
            float* gp = xi->grad.data() + i * static_cast<std::size_t>(hw);
            for (int p = 0; p < hw; ++p) gp[p] += g;
        }
    });
}

}  // namespace scanet
