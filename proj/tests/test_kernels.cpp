#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doll/kernels.hpp"

using doll::real;
using doll::Rng;
using namespace doll::kernels;

namespace {

std::vector<real> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<real> v(n);
    for (real& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("conv2d forward matches a direct loop on a hand case") {
    // 1 channel, 3x3 input, 1 output channel, identity-ish kernel.
    ConvShape s{1, 3, 3, 1, 3, 1, 1};
    std::vector<real> in = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<real> w(9, 0.0);
    w[4] = 2.0;  // center tap only
    std::vector<real> b = {0.5};
    std::vector<real> out(9);
    conv2d_forward(s, in.data(), w.data(), b.data(), out.data());
    for (int i = 0; i < 9; ++i) CHECK(out[i] == doctest::Approx(2.0 * in[i] + 0.5));
}

TEST_CASE("conv2d stride-2 output geometry") {
    ConvShape s{2, 8, 8, 4, 3, 2, 1};
    CHECK(s.oh() == 4);
    CHECK(s.ow() == 4);
}

TEST_CASE("omp kernels are bit-identical to the serial references") {
    for (const ConvShape s : {ConvShape{1, 16, 16, 8, 3, 2, 1}, ConvShape{8, 8, 8, 4, 3, 1, 1},
                              ConvShape{3, 9, 7, 5, 3, 2, 1}}) {
        const auto in = random_vec(static_cast<size_t>(s.ci) * s.h * s.w, 11);
        const auto w = random_vec(static_cast<size_t>(s.co) * s.ci * s.k * s.k, 12);
        const auto b = random_vec(static_cast<size_t>(s.co), 13);
        const size_t out_n = static_cast<size_t>(s.co) * s.oh() * s.ow();
        std::vector<real> a(out_n), r(out_n);
        conv2d_forward(s, in.data(), w.data(), b.data(), a.data());
        ref::conv2d_forward(s, in.data(), w.data(), b.data(), r.data());
        CHECK(a == r);

        const auto dout = random_vec(out_n, 14);
        std::vector<real> din_a(in.size()), din_r(in.size());
        conv2d_backward_input(s, dout.data(), w.data(), din_a.data());
        ref::conv2d_backward_input(s, dout.data(), w.data(), din_r.data());
        CHECK(din_a == din_r);

        std::vector<real> dw_a(w.size()), dw_r(w.size()), db_a(b.size()), db_r(b.size());
        conv2d_backward_weights(s, dout.data(), in.data(), dw_a.data(), db_a.data());
        ref::conv2d_backward_weights(s, dout.data(), in.data(), dw_r.data(), db_r.data());
        CHECK(dw_a == dw_r);
        CHECK(db_a == db_r);
    }
}

TEST_CASE("conv2d backward matches finite differences of the forward") {
    ConvShape s{2, 5, 5, 3, 3, 1, 1};
    const auto in = random_vec(static_cast<size_t>(s.ci) * s.h * s.w, 21);
    const auto w = random_vec(static_cast<size_t>(s.co) * s.ci * s.k * s.k, 22);
    const auto b = random_vec(static_cast<size_t>(s.co), 23);
    const size_t out_n = static_cast<size_t>(s.co) * s.oh() * s.ow();
    const auto dout = random_vec(out_n, 24);

    auto objective = [&](const std::vector<real>& input, const std::vector<real>& weights) {
        std::vector<real> out(out_n);
        ref::conv2d_forward(s, input.data(), weights.data(), b.data(), out.data());
        real acc = 0.0;
        for (size_t i = 0; i < out_n; ++i) acc += out[i] * dout[i];
        return acc;
    };

    std::vector<real> din(in.size());
    conv2d_backward_input(s, dout.data(), w.data(), din.data());
    std::vector<real> dw(w.size()), db(b.size());
    conv2d_backward_weights(s, dout.data(), in.data(), dw.data(), db.data());

    const real h = 1e-6;
    for (size_t i = 0; i < in.size(); i += 7) {
        auto ip = in, im = in;
        ip[i] += h;
        im[i] -= h;
        const real fd = (objective(ip, w) - objective(im, w)) / (2 * h);
        CHECK(din[i] == doctest::Approx(fd).epsilon(1e-5));
    }
    for (size_t i = 0; i < w.size(); i += 11) {
        auto wp = w, wm = w;
        wp[i] += h;
        wm[i] -= h;
        const real fd = (objective(in, wp) - objective(in, wm)) / (2 * h);
        CHECK(dw[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("dense kernels match references and a hand case") {
    const int rows = 3, cols = 4;
    std::vector<real> w = {1, 0, 0, 0, 0, 2, 0, 0, 0, 0, 0, 3};
    std::vector<real> b = {0.1, 0.2, 0.3};
    std::vector<real> x = {5, 6, 7, 8};
    std::vector<real> y(rows), yr(rows);
    dense_forward(rows, cols, w.data(), b.data(), x.data(), y.data());
    ref::dense_forward(rows, cols, w.data(), b.data(), x.data(), yr.data());
    CHECK(y == yr);
    CHECK(y[0] == doctest::Approx(5.1));
    CHECK(y[1] == doctest::Approx(12.2));
    CHECK(y[2] == doctest::Approx(24.3));

    std::vector<real> dy = {1, 1, 1};
    std::vector<real> dx(cols), dxr(cols);
    dense_backward_input(rows, cols, w.data(), dy.data(), dx.data());
    ref::dense_backward_input(rows, cols, w.data(), dy.data(), dxr.data());
    CHECK(dx == dxr);
    CHECK(dx[0] == doctest::Approx(1.0));
    CHECK(dx[3] == doctest::Approx(3.0));
}
