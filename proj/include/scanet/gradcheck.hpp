#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scanet/tensor.hpp"

namespace scanet {

// Scalar-valued function of a list of tensors; must be deterministic.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;
// Same shape-agnostic signature for ops whose output is not a scalar.
using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckOptions {
    float eps = 1e-3f;
    // Check at most this many elements per input tensor (0 = all); elements
    // are taken in a deterministic stride pattern covering the tensor.
    int max_elements_per_input = 0;
};

// Central differences (f(x+eps) - f(x-eps)) / (2 eps) against backward().
// Relative error per element uses denominator max(|analytic|, |numeric|, 1e-6);
// returns the maximum over all checked elements.
float grad_check(const ScalarFn& f, std::vector<Tensor>& inputs,
                 const GradCheckOptions& opts = {});

// Finite differences on f32 tensors can't resolve elements whose gradient is
// tiny by cancellation: the relative error there is all rounding noise. Two
// measures keep the check meaningful at eps=1e-3:
//  - the objective subtracts the start-point output inside the graph, so the
//    summed scalar stays near zero and its rounding tracks the perturbation
//    rather than the full output magnitude;
//  - a linear bypass term c.(x - x0) with |c| about 3x the op's gradient
//    scale gives every element a floor, so errors are measured against the
//    tensor's gradient scale. A wrong backward formula still shifts the total
//    well past the tolerance; exact per-element values of near-zero gradients
//    are separately pinned by analytic-formula tests.
// amp_floor sets the minimum bypass amplitude. Deep graphs with interior
// relu kinks need a larger floor: a channel-wide shift (e.g. a norm bias)
// moves pre-activations across zero, and the crossing error is absolute in
// gradient units, so only a bigger denominator absorbs it.
float guarded_grad_check(const OpFn& op, std::vector<Tensor> inputs, Rng& rng,
                         float w_lo = 0.6f, float w_hi = 1.4f,
                         const GradCheckOptions& opts = {},
                         float amp_floor = 0.5f);

struct GradCheckRow {
    std::string name;
    float max_rel_err = 0.0f;
    float tolerance = 0.0f;
    bool pass = false;
};

// Deterministic sweep over every differentiable op (eps and tolerance both
// 1e-3) plus an end-to-end check through a tiny model.
std::vector<GradCheckRow> gradcheck_suite();

// Aligned text table, one row per check plus a verdict column.
std::string gradcheck_table(const std::vector<GradCheckRow>& rows);

namespace testhooks {
// Negative control for the suite: when set, conv2d accumulates a wrongly
// scaled kernel gradient, so conv rows must flip to "fail".
extern bool conv_backward_bug;
}  // namespace testhooks

}  // namespace scanet
