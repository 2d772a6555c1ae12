#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scanet/errors.hpp"
#include "scanet/rng.hpp"

namespace scanet {

using Shape = std::vector<int>;

long long numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using NodePtr = std::shared_ptr<TensorImpl>;

// One node of the reverse-mode graph. Leaves (parameters, inputs) have no
// parents; interior nodes carry the closure that pushes their output gradient
// into their parents' buffers.
struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // allocated lazily, same length as data
    std::vector<NodePtr> parents;
    std::function<void(TensorImpl&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

// Value-semantic handle; copies share the underlying node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> values,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, float stddev,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    long long numel() const { return static_cast<long long>(impl_->data.size()); }

    std::vector<float>& data() { return impl_->data; }
    const std::vector<float>& data() const { return impl_->data; }
    float item() const;
    float at(const std::vector<int>& index) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool v);

    std::vector<float>& grad();
    const std::vector<float>& grad() const;
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad();

    // Copy of the values with no graph attached.
    Tensor detached() const;

    NodePtr impl() const { return impl_; }

private:
    NodePtr impl_;
};

// Thread-local switch; ops built while disabled record no graph.
bool grad_enabled();
void set_grad_enabled(bool enabled);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All free functions; result tensors record the graph
// unless grad mode is off or no input requires grad.
// ---------------------------------------------------------------------------

// [M x K] . [K x N] -> [M x N]. Accumulates each output element in double,
// ascending k, so the f32 result is bit-identical to a naive 64-bit loop.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);  // 2-D

// input [B x C x H x W], kernels [F x C x kh x kw], cross-correlation.
// H' = (H + 2*padding - kh) / stride + 1. Same double-accumulation contract
// as matmul; optional bias [F] seeds the accumulator.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride,
              int padding);
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              int stride, int padding);

// kernel x kernel window, no padding. Gradient goes to the argmax; ties break
// to the first element in row-major window order.
Tensor max_pool2d(const Tensor& input, int kernel, int stride);

// Global average pool: [B x C x H x W] -> [B x C].
Tensor mean_pool(const Tensor& input);

// Stabilized by subtracting the slice max; throws NumericError on non-finite
// input. axis may be negative (Python convention).
Tensor softmax(const Tensor& x, int axis);

// Normalizes the last dimension to mean 0 / variance 1, then applies
// gain/bias (both 1-D of that dimension's extent).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps);

// x [B x C x H x W], statistics per (sample, group); gain/bias are [C].
Tensor group_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  int groups, float eps);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& x, float c);
// y = s[0] * x where s is a 1-element tensor participating in the graph.
Tensor scale_by(const Tensor& x, const Tensor& s);
// x [... x D] + v [D], broadcast over leading dims.
Tensor add_rowvec(const Tensor& x, const Tensor& v);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor flatten(const Tensor& x);            // -> [numel]
Tensor select0(const Tensor& x, int index);   // drop axis 0
Tensor select_elem(const Tensor& x, int index);  // 1-D -> [1]
Tensor stack0(const std::vector<Tensor>& xs);     // new leading axis
Tensor concat_cols(const std::vector<Tensor>& xs);  // 2-D, along columns
Tensor narrow_cols(const Tensor& x, int start, int len);  // 2-D column slice
Tensor mean_rows(const Tensor& x);  // [R x C] -> [1 x C]

Tensor sum(const Tensor& x);       // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]

// Inverted dropout; identity when rate == 0. Only meaningful in training.
Tensor dropout(const Tensor& x, float rate, Rng& rng);

// Reverse pass from a scalar loss. Gradients of leaves accumulate across
// calls (zero_grad between steps); interior buffers are reset per call.
void backward(const Tensor& loss);

}  // namespace scanet
