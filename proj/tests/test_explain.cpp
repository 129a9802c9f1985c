#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doll/explain.hpp"

using namespace doll;

namespace {

Tensor make_input(std::initializer_list<real> vals, int h, int w) {
    Tensor t(1, h, w);
    std::copy(vals.begin(), vals.end(), t.v.begin());
    return t;
}

Plane plane_of(const Tensor& t) { return abs_reduce(t); }

// Toy scorers, given as closed-form gradients of L at the evaluation point.
GradFn linear_grad(const Tensor& w) {
    return [w](const Tensor&) { return w; };
}

GradFn quadratic_grad() {  // L = sum x^2, dL/dx = 2x
    return [](const Tensor& x) {
        Tensor g = x;
        for (real& v : g.v) v *= 2.0;
        return g;
    };
}

GradFn cubic_poly_grad() {  // L = sum (x^3 + x^2 + x), dL/dx = 3x^2 + 2x + 1
    return [](const Tensor& x) {
        Tensor g = x;
        for (real& v : g.v) v = 3.0 * v * v + 2.0 * v + 1.0;
        return g;
    };
}

}  // namespace

TEST_CASE("linear scorer: attribution is |w| per pixel for every T") {
    const Tensor w = make_input({0.5, -1.5, 2.0, 0.0}, 2, 2);
    const Tensor x = make_input({0.1, 0.9, 0.4, 0.7}, 2, 2);
    for (int T : {1, 2, 5, 17, 100}) {
        const Plane map = plane_of(integrated_gradients_raw(linear_grad(w), x, T));
        for (size_t i = 0; i < map.v.size(); ++i)
            CHECK(map.v[i] == doctest::Approx(std::abs(w.v[i])));
    }
}

TEST_CASE("quadratic scorer at T=5 gives the exact Riemann value 1.2*x") {
    // (1/5) sum_t 2*(t/5)*x = 2x * (1+2+3+4+5)/25 = 1.2 x, before abs-reduction.
    const Tensor x = make_input({0.2, 0.5, -0.3, 1.0}, 2, 2);
    const Tensor raw = integrated_gradients_raw(quadratic_grad(), x, 5);
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(raw.v[i] == doctest::Approx(1.2 * x.v[i]).epsilon(1e-12));
}

TEST_CASE("cubic polynomial scorer at T=100 is within 1% of the analytic integral") {
    // Analytic: integral_0^1 (3a^2x^2 + 2ax + 1) da = x^2 + x + 1 per pixel.
    Tensor x(1, 4, 4);
    Rng rng(3);
    for (real& v : x.v) v = rng.uniform();
    const Tensor raw = integrated_gradients_raw(cubic_poly_grad(), x, 100);
    for (size_t i = 0; i < x.v.size(); ++i) {
        const real analytic = x.v[i] * x.v[i] + x.v[i] + 1.0;
        const real rel = std::abs(raw.v[i] - analytic) / std::abs(analytic);
        CHECK(rel < 0.01);
    }
}

TEST_CASE("linearity in the scorer before abs-reduction") {
    Tensor x(1, 3, 3);
    Rng rng(4);
    for (real& v : x.v) v = rng.uniform();
    const Tensor w = make_input({1, -2, 3, -4, 5, -6, 7, -8, 9}, 3, 3);
    const real a = 2.5, b = -1.25;

    GradFn g1 = linear_grad(w);
    GradFn g2 = quadratic_grad();
    GradFn combined = [&](const Tensor& at) {
        Tensor ga = g1(at), gb = g2(at);
        Tensor out = ga;
        for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * ga.v[i] + b * gb.v[i];
        return out;
    };

    const int T = 7;
    const Tensor m1 = integrated_gradients_raw(g1, x, T);
    const Tensor m2 = integrated_gradients_raw(g2, x, T);
    const Tensor mc = integrated_gradients_raw(combined, x, T);
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(mc.v[i] == doctest::Approx(a * m1.v[i] + b * m2.v[i]).epsilon(1e-12));
}

TEST_CASE("riemann error: zero for linear scorers, decreasing on the quadratic") {
    const Tensor w = make_input({1.0, -2.0, 0.5, 3.0}, 2, 2);
    Tensor x(1, 2, 2, 0.6);
    CHECK(riemann_error(linear_grad(w), x, 3, 50) == 0.0);
    CHECK(riemann_error(linear_grad(w), x, 1, 1000) == 0.0);

    const real e5 = riemann_error(quadratic_grad(), x, 5, 1000);
    const real e50 = riemann_error(quadratic_grad(), x, 50, 1000);
    CHECK(e5 >= e50);
    CHECK(e50 > 0.0);
    CHECK_THROWS_AS(riemann_error(quadratic_grad(), x, 50, 50), ConfigError);
}

TEST_CASE("classifier attribution: determinism and the zero-image path") {
    const Classifier model = build_classifier("cnn-s", 3, 1, 16, 11);
    Rng rng(8);
    Plane img(16, 16);
    for (real& v : img.v) v = rng.uniform();

    const AttributionMap a = integrated_gradients(model, img, 1, 5);
    const AttributionMap b = integrated_gradients(model, img, 1, 5);
    CHECK(a.values.v == b.values.v);  // bit-identical
    CHECK(a.model_id == "cnn-s");
    CHECK(a.steps == 5);
    for (real v : a.values.v) CHECK(v >= 0.0);

    // Zero image: the path is constant, so the map equals |grad at zero|.
    const Plane zero(16, 16, 0.0);
    const AttributionMap z = integrated_gradients(model, zero, 1, 7);
    const Plane direct = abs_reduce(model.loss_gradient(zero, 1));
    for (size_t i = 0; i < z.values.v.size(); ++i)
        CHECK(z.values.v[i] == doctest::Approx(direct.v[i]).epsilon(1e-12));
}

TEST_CASE("multi-channel attributions reduce by summed absolute values") {
    const Classifier model = build_classifier("cnn-s", 2, 3, 16, 13);
    Rng rng(9);
    Plane img(16, 16);
    for (real& v : img.v) v = rng.uniform();
    const Tensor raw = integrated_gradients_raw(model, img, 0, 3);
    CHECK(raw.c == 3);
    const AttributionMap map = integrated_gradients(model, img, 0, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            const real expect = std::abs(raw.at(0, y, x)) + std::abs(raw.at(1, y, x)) +
                                std::abs(raw.at(2, y, x));
            CHECK(map.values.at(y, x) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("invalid step counts are rejected") {
    const Classifier model = build_classifier("cnn-t", 2, 1, 16, 1);
    CHECK_THROWS_AS(integrated_gradients(model, Plane(16, 16), 0, 0), ConfigError);
}
