#include "doll/explain.hpp"

namespace doll {

Tensor integrated_gradients_raw(const GradFn& grad, const Tensor& input, int steps) {
    if (steps < 1) throw ConfigError("integrated_gradients: steps must be >= 1");
    Tensor acc(input.c, input.h, input.w);
    for (int t = 1; t <= steps; ++t) {
        const real alpha = static_cast<real>(t) / steps;
        Tensor scaled = input;
        for (real& v : scaled.v) v *= alpha;
        Tensor g;
        try {
            g = grad(scaled);
        } catch (const NumericError& e) {
            throw NumericError("integrated_gradients step " + std::to_string(t) + "/" +
                               std::to_string(steps) + ": " + e.what());
        }
        for (size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += g.v[i];
    }
    const real inv = 1.0 / static_cast<real>(steps);
    for (real& v : acc.v) v *= inv;
    return acc;
}

Tensor integrated_gradients_raw(const Classifier& model, const Plane& image, int class_index,
                                int steps) {
    const Tensor x = to_input_tensor(image, model.in_channels);
    return integrated_gradients_raw(
        [&](const Tensor& at) { return model.loss_gradient_at(at, class_index); }, x, steps);
}

Plane abs_reduce(const Tensor& t) {
    Plane out(t.h, t.w);
    for (int ci = 0; ci < t.c; ++ci) {
        const real* p = t.chan(ci);
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += std::abs(p[i]);
    }
    return out;
}

AttributionMap integrated_gradients(const Classifier& model, const Plane& image,
                                    int class_index, int steps) {
    AttributionMap map;
    map.values = abs_reduce(integrated_gradients_raw(model, image, class_index, steps));
    map.model_id = model.arch_id;
    map.class_index = class_index;
    map.steps = steps;
    return map;
}

real riemann_error(const GradFn& grad, const Tensor& input, int steps, int steps_ref) {
    if (steps_ref <= steps) throw ConfigError("riemann_error: steps_ref must exceed steps");
    const Plane a = abs_reduce(integrated_gradients_raw(grad, input, steps));
    const Plane b = abs_reduce(integrated_gradients_raw(grad, input, steps_ref));
    real err = 0.0;
    for (size_t i = 0; i < a.v.size(); ++i) err = std::max(err, std::abs(a.v[i] - b.v[i]));
    return err;
}

real riemann_error(const Classifier& model, const Plane& image, int class_index, int steps,
                   int steps_ref) {
    const Tensor x = to_input_tensor(image, model.in_channels);
    return riemann_error(
        [&](const Tensor& at) { return model.loss_gradient_at(at, class_index); }, x, steps,
        steps_ref);
}

}  // namespace doll
