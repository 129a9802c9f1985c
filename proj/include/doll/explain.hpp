#pragma once

#include "doll/core.hpp"
#include "doll/models.hpp"

#include <functional>

namespace doll {

struct AttributionMap {
    Plane values;  // channel-reduced, nonnegative
    std::string model_id;
    int class_index = 0;
    int steps = 0;
};

/// Loss-gradient callable: maps an input tensor to d(loss)/d(input) at it.
using GradFn = std::function<Tensor(const Tensor&)>;

/// Average of input gradients along the straight path from the all-black
/// image to the input, sampled at t/T for t = 1..T, with the gradient
/// evaluated at the scaled input. Signed, per channel.
Tensor integrated_gradients_raw(const GradFn& grad, const Tensor& input, int steps);
Tensor integrated_gradients_raw(const Classifier& model, const Plane& image, int class_index,
                                int steps);

/// The raw map reduced to one plane by summed absolute values per pixel.
AttributionMap integrated_gradients(const Classifier& model, const Plane& image,
                                    int class_index, int steps);

/// Max-norm distance between the T-step and T_ref-step reduced maps; a
/// convergence diagnostic that trends to zero for smooth scorers as T grows.
real riemann_error(const GradFn& grad, const Tensor& input, int steps, int steps_ref);
real riemann_error(const Classifier& model, const Plane& image, int class_index, int steps,
                   int steps_ref);

/// Sum of per-channel absolute values, the reduction integrated_gradients uses.
Plane abs_reduce(const Tensor& t);

}  // namespace doll
