#include "scanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace scanet {

long long numel_of(const Shape& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

NodePtr make_node(Shape shape, std::vector<float> data) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return impl;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool enabled) { g_grad_enabled = enabled; }

namespace detail {

// Shared by every op: wires parents/backward only when the result actually
// needs a graph.
Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<NodePtr> parents,
                   std::function<void(TensorImpl&)> backward_fn) {
    auto impl = make_node(std::move(shape), std::move(data));
    bool needs_grad = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p->requires_grad) {
                needs_grad = true;
                break;
            }
        }
    }
    if (needs_grad) {
        impl->requires_grad = true;
        impl->parents = std::move(parents);
        impl->backward_fn = std::move(backward_fn);
    }
    return Tensor(impl);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

using detail::check_same_shape;
using detail::make_result;

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = numel_of(shape);
    auto impl = make_node(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const auto n = numel_of(shape);
    auto impl = make_node(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
    const auto n = numel_of(shape);
    if (static_cast<long long>(values.size()) != n) {
        throw ShapeError("from_data: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    auto impl = make_node(std::move(shape), std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
    const auto n = numel_of(shape);
    std::vector<float> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = rng.normal(0.0f, stddev);
    auto impl = make_node(std::move(shape), std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(impl);
}

float Tensor::item() const {
    if (numel() != 1) {
        throw ArgumentError("item(): tensor has " + std::to_string(numel()) + " elements");
    }
    return impl_->data[0];
}

float Tensor::at(const std::vector<int>& index) const {
    const Shape& s = impl_->shape;
    if (index.size() != s.size()) throw ArgumentError("at(): rank mismatch");
    long long flat = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (index[i] < 0 || index[i] >= s[i]) throw ArgumentError("at(): index out of range");
        flat = flat * s[i] + index[i];
    }
    return impl_->data[static_cast<std::size_t>(flat)];
}

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

std::vector<float>& Tensor::grad() {
    impl_->ensure_grad();
    return impl_->grad;
}

const std::vector<float>& Tensor::grad() const {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detached() const {
    return Tensor::from_data(impl_->shape, impl_->data, false);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ArgumentError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    NodePtr root = loss.impl();
    if (!root->requires_grad) return;

    // Iterative post-order DFS -> topological order.
    std::vector<NodePtr> topo;
    std::unordered_set<TensorImpl*> visited;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodePtr child = node->parents[next++];
            if (child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients are per-call scratch; leaf gradients accumulate.
    for (const auto& node : topo) {
        if (!node->is_leaf()) {
            node->grad.assign(node->data.size(), 0.0f);
        } else {
            node->ensure_grad();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0f;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorImpl& node = **it;
        if (node.backward_fn) node.backward_fn(node);
    }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
    NodePtr ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {ai, bi}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i];
    NodePtr ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {ai, bi}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bi->grad[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
    NodePtr ai = a.impl(), bi = b.impl();
    return make_result(a.shape(), std::move(out), {ai, bi}, [ai, bi](TensorImpl& self) {
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ai->grad[i] += self.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bi->grad[i] += self.grad[i] * ai->data[i];
        }
    });
}

Tensor scale(const Tensor& x, float c) {
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * c;
    NodePtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {xi}, [xi, c](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += c * self.grad[i];
    });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1) throw ShapeError("scale_by: scale tensor must have 1 element");
    const float c = s.data()[0];
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * c;
    NodePtr xi = x.impl(), si = s.impl();
    return make_result(x.shape(), std::move(out), {xi, si}, [xi, si, c](TensorImpl& self) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += c * self.grad[i];
        }
        if (si->requires_grad) {
            si->ensure_grad();
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                acc += static_cast<double>(self.grad[i]) * xi->data[i];
            si->grad[0] += static_cast<float>(acc);
        }
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    if (v.rank() != 1) throw ShapeError("add_rowvec: v must be 1-D, got " + shape_str(v.shape()));
    const int d = v.dim(0);
    if (x.rank() < 1 || x.shape().back() != d) {
        throw ShapeError("add_rowvec: last dim of " + shape_str(x.shape()) +
                         " != " + shape_str(v.shape()));
    }
    const auto& xd = x.data();
    const auto& vd = v.data();
    std::vector<float> out(xd.size());
    const std::size_t rows = xd.size() / static_cast<std::size_t>(d);
    for (std::size_t r = 0; r < rows; ++r)
        for (int j = 0; j < d; ++j)
            out[r * d + j] = xd[r * d + j] + vd[static_cast<std::size_t>(j)];
    NodePtr xi = x.impl(), vi = v.impl();
    return make_result(x.shape(), std::move(out), {xi, vi}, [xi, vi, rows, d](TensorImpl& self) {
        if (xi->requires_grad) {
            xi->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i];
        }
        if (vi->requires_grad) {
            vi->ensure_grad();
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (std::size_t r = 0; r < rows; ++r)
                    acc += self.grad[r * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
                vi->grad[static_cast<std::size_t>(j)] += static_cast<float>(acc);
            }
        }
    });
}

Tensor relu(const Tensor& x) {
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    NodePtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {xi}, [xi](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (xi->data[i] > 0.0f) xi->grad[i] += self.grad[i];
    });
}

Tensor gelu(const Tensor& x) {
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const double v = xd[i];
        out[i] = static_cast<float>(0.5 * v * (1.0 + std::erf(v / M_SQRT2)));
    }
    NodePtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {xi}, [xi](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        constexpr double kInvSqrt2Pi = 0.3989422804014327;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = xi->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v / M_SQRT2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            xi->grad[i] += self.grad[i] * static_cast<float>(cdf + v * pdf);
        }
    });
}

Tensor dropout(const Tensor& x, float rate, Rng& rng) {
    if (rate < 0.0f || rate >= 1.0f) throw ArgumentError("dropout: rate must be in [0, 1)");
    if (rate == 0.0f) return x;
    const auto& xd = x.data();
    const float keep = 1.0f - rate;
    const float inv_keep = 1.0f / keep;
    auto mask = std::make_shared<std::vector<float>>(xd.size());
    std::vector<float> out(xd.size());
    for (std::size_t i = 0; i < xd.size(); ++i) {
        const float m = rng.uniform() < rate ? 0.0f : inv_keep;
        (*mask)[i] = m;
        out[i] = xd[i] * m;
    }
    NodePtr xi = x.impl();
    return make_result(x.shape(), std::move(out), {xi}, [xi, mask](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            xi->grad[i] += self.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (numel_of(new_shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    }
    NodePtr xi = x.impl();
    return make_result(std::move(new_shape), x.data(), {xi}, [xi](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[i] += self.grad[i];
    });
}

Tensor flatten(const Tensor& x) {
    return reshape(x, {static_cast<int>(x.numel())});
}

Tensor select0(const Tensor& x, int index) {
    if (x.rank() < 1) throw ShapeError("select0: rank-0 tensor");
    const int n0 = x.dim(0);
    if (index < 0 || index >= n0) {
        throw ArgumentError("select0: index " + std::to_string(index) + " out of [0," +
                            std::to_string(n0) + ")");
    }
    Shape out_shape(x.shape().begin() + 1, x.shape().end());
    if (out_shape.empty()) out_shape = {1};
    const std::size_t block = static_cast<std::size_t>(x.numel() / n0);
    const std::size_t off = static_cast<std::size_t>(index) * block;
    std::vector<float> out(x.data().begin() + off, x.data().begin() + off + block);
    NodePtr xi = x.impl();
    return make_result(std::move(out_shape), std::move(out), {xi}, [xi, off](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xi->grad[off + i] += self.grad[i];
    });
}

Tensor select_elem(const Tensor& x, int index) {
    if (x.rank() != 1) throw ShapeError("select_elem: expects 1-D tensor");
    return select0(x, index);
}

Tensor stack0(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ArgumentError("stack0: empty input list");
    const Shape& part = xs[0].shape();
    for (const auto& t : xs) {
        if (t.shape() != part) {
            throw ShapeError("stack0: mismatched shapes " + shape_str(part) + " vs " +
                             shape_str(t.shape()));
        }
    }
    Shape out_shape;
    out_shape.push_back(static_cast<int>(xs.size()));
    out_shape.insert(out_shape.end(), part.begin(), part.end());
    const std::size_t block = xs[0].data().size();
    std::vector<float> out;
    out.reserve(block * xs.size());
    std::vector<NodePtr> parents;
    parents.reserve(xs.size());
    for (const auto& t : xs) {
        out.insert(out.end(), t.data().begin(), t.data().end());
        parents.push_back(t.impl());
    }
    auto saved = std::make_shared<std::vector<NodePtr>>(parents);
    return make_result(std::move(out_shape), std::move(out), std::move(parents),
                       [saved, block](TensorImpl& self) {
                           for (std::size_t k = 0; k < saved->size(); ++k) {
                               NodePtr& p = (*saved)[k];
                               if (!p->requires_grad) continue;
                               p->ensure_grad();
                               const std::size_t off = k * block;
                               for (std::size_t i = 0; i < block; ++i)
                                   p->grad[i] += self.grad[off + i];
                           }
                       });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ArgumentError("concat_cols: empty input list");
    const int rows = xs[0].dim(0);
    int total_cols = 0;
    for (const auto& t : xs) {
        if (t.rank() != 2 || t.dim(0) != rows) {
            throw ShapeError("concat_cols: expects 2-D with equal rows, got " +
                             shape_str(t.shape()));
        }
        total_cols += t.dim(1);
    }
    std::vector<float> out(static_cast<std::size_t>(rows) * total_cols);
    std::vector<NodePtr> parents;
    std::vector<int> col_offsets;
    int off = 0;
    for (const auto& t : xs) {
        const int c = t.dim(1);
        for (int r = 0; r < rows; ++r)
            std::copy_n(t.data().begin() + static_cast<std::size_t>(r) * c, c,
                        out.begin() + static_cast<std::size_t>(r) * total_cols + off);
        parents.push_back(t.impl());
        col_offsets.push_back(off);
        off += c;
    }
    auto saved = std::make_shared<std::vector<NodePtr>>(parents);
    auto offs = std::make_shared<std::vector<int>>(std::move(col_offsets));
    return make_result({rows, total_cols}, std::move(out), std::move(parents),
                       [saved, offs, rows, total_cols](TensorImpl& self) {
                           for (std::size_t k = 0; k < saved->size(); ++k) {
                               NodePtr& p = (*saved)[k];
                               if (!p->requires_grad) continue;
                               p->ensure_grad();
                               const int c = p->shape[1];
                               const int o = (*offs)[k];
                               for (int r = 0; r < rows; ++r)
                                   for (int j = 0; j < c; ++j)
                                       p->grad[static_cast<std::size_t>(r) * c + j] +=
                                           self.grad[static_cast<std::size_t>(r) * total_cols + o + j];
                           }
                       });
}

Tensor narrow_cols(const Tensor& x, int start, int len) {
    if (x.rank() != 2) throw ShapeError("narrow_cols: expects 2-D, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    if (start < 0 || len < 1 || start + len > cols) {
        throw ArgumentError("narrow_cols: window [" + std::to_string(start) + "," +
                            std::to_string(start + len) + ") out of " + std::to_string(cols));
    }
    std::vector<float> out(static_cast<std::size_t>(rows) * len);
    for (int r = 0; r < rows; ++r)
        std::copy_n(x.data().begin() + static_cast<std::size_t>(r) * cols + start, len,
                    out.begin() + static_cast<std::size_t>(r) * len);
    NodePtr xi = x.impl();
    return make_result({rows, len}, std::move(out), {xi},
                       [xi, rows, cols, start, len](TensorImpl& self) {
                           if (!xi->requires_grad) return;
                           xi->ensure_grad();
                           for (int r = 0; r < rows; ++r)
                               for (int j = 0; j < len; ++j)
                                   xi->grad[static_cast<std::size_t>(r) * cols + start + j] +=
                                       self.grad[static_cast<std::size_t>(r) * len + j];
                       });
}

Tensor mean_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("mean_rows: expects 2-D, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<float> out(static_cast<std::size_t>(cols));
    for (int j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += x.data()[static_cast<std::size_t>(r) * cols + j];
        out[static_cast<std::size_t>(j)] = static_cast<float>(acc / rows);
    }
    NodePtr xi = x.impl();
    return make_result({1, cols}, std::move(out), {xi}, [xi, rows, cols](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const float inv = 1.0f / static_cast<float>(rows);
        for (int r = 0; r < rows; ++r)
            for (int j = 0; j < cols; ++j)
                xi->grad[static_cast<std::size_t>(r) * cols + j] +=
                    self.grad[static_cast<std::size_t>(j)] * inv;
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    NodePtr xi = x.impl();
    return make_result({1}, {static_cast<float>(acc)}, {xi}, [xi](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const float g = self.grad[0];
        for (auto& gv : xi->grad) gv += g;
    });
}

Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.data()) acc += v;
    const float inv = 1.0f / static_cast<float>(x.numel());
    NodePtr xi = x.impl();
    return make_result({1}, {static_cast<float>(acc / static_cast<double>(x.numel()))}, {xi},
                       [xi, inv](TensorImpl& self) {
                           if (!xi->requires_grad) return;
                           xi->ensure_grad();
                           const float g = self.grad[0] * inv;
                           for (auto& gv : xi->grad) gv += g;
                       });
}

}  // namespace scanet
