#pragma once

#include <vector>

#include "scanet/gradcheck.hpp"
#include "scanet/tensor.hpp"

namespace scanet::testsupport {

inline Tensor uniform_tensor(Shape shape, Rng& rng, float lo, float hi) {
    const long long n = numel_of(shape);
    std::vector<float> v(static_cast<std::size_t>(n));
    for (auto& e : v) e = static_cast<float>(rng.uniform(lo, hi));
    return Tensor::from_data(std::move(shape), std::move(v));
}

using scanet::guarded_grad_check;
using scanet::OpFn;

}  // namespace scanet::testsupport
