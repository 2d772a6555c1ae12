#include <cstddef>
#include <vector>

#include "gemm.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

namespace detail {
Tensor make_result(Shape shape, std::vector<float> data,
                   std::vector<NodePtr> parents,
                   std::function<void(TensorImpl&)> backward_fn);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: expects 2-D operands, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
    std::vector<float> out(static_cast<std::size_t>(m) * n);
    detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    NodePtr ai = a.impl(), bi = b.impl();
    return detail::make_result({m, n}, std::move(out), {ai, bi},
                               [ai, bi, m, k, n](TensorImpl& self) {
                                   // dA = dC . B^T, dB = A^T . dC
                                   if (ai->requires_grad) {
                                       ai->ensure_grad();
                                       detail::gemm_nt_acc(self.grad.data(), bi->data.data(),
                                                           ai->grad.data(), m, n, k);
                                   }
                                   if (bi->requires_grad) {
                                       bi->ensure_grad();
                                       detail::gemm_tn_acc(ai->data.data(), self.grad.data(),
                                                           bi->grad.data(), k, m, n);
                                   }
                               });
}

Tensor transpose(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expects 2-D, got " + shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    std::vector<float> out(x.data().size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = x.data()[static_cast<std::size_t>(i) * c + j];
    NodePtr xi = x.impl();
    return detail::make_result({c, r}, std::move(out), {xi}, [xi, r, c](TensorImpl& self) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                xi->grad[static_cast<std::size_t>(i) * c + j] +=
                    self.grad[static_cast<std::size_t>(j) * r + i];
    });
}

}  // namespace scanet
