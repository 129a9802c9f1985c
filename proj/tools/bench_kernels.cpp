// Compares the OpenMP kernels against the serial references on the shapes
// the pipeline actually runs, and checks they agree bit for bit.

#include "doll/kernels.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <vector>

using doll::real;
using doll::kernels::ConvShape;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

std::vector<real> random_vec(size_t n, uint64_t seed) {
    doll::Rng rng(seed);
    std::vector<real> v(n);
    for (real& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <typename F>
double time_best_of(int reps, F&& fn) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        best = std::min(best, ms_since(t0));
    }
    return best;
}

void bench_conv(const char* label, const ConvShape& s, int reps) {
    const auto in = random_vec(static_cast<size_t>(s.ci) * s.h * s.w, 1);
    const auto w = random_vec(static_cast<size_t>(s.co) * s.ci * s.k * s.k, 2);
    const auto b = random_vec(static_cast<size_t>(s.co), 3);
    const size_t out_n = static_cast<size_t>(s.co) * s.oh() * s.ow();
    std::vector<real> out_omp(out_n), out_ref(out_n);
    std::vector<real> dout = random_vec(out_n, 4);
    std::vector<real> din_omp(in.size()), din_ref(in.size());
    std::vector<real> dw_omp(w.size()), dw_ref(w.size()), db_omp(b.size()), db_ref(b.size());

    const double fwd_omp = time_best_of(reps, [&] {
        doll::kernels::conv2d_forward(s, in.data(), w.data(), b.data(), out_omp.data());
    });
    const double fwd_ref = time_best_of(reps, [&] {
        doll::kernels::ref::conv2d_forward(s, in.data(), w.data(), b.data(), out_ref.data());
    });
    const double bwd_omp = time_best_of(reps, [&] {
        doll::kernels::conv2d_backward_input(s, dout.data(), w.data(), din_omp.data());
        doll::kernels::conv2d_backward_weights(s, dout.data(), in.data(), dw_omp.data(),
                                               db_omp.data());
    });
    const double bwd_ref = time_best_of(reps, [&] {
        doll::kernels::ref::conv2d_backward_input(s, dout.data(), w.data(), din_ref.data());
        doll::kernels::ref::conv2d_backward_weights(s, dout.data(), in.data(), dw_ref.data(),
                                                    db_ref.data());
    });

    bool identical = out_omp == out_ref && din_omp == din_ref && dw_omp == dw_ref &&
                     db_omp == db_ref;
    std::printf("%-28s fwd %8.3f ms (ref %8.3f, x%.2f)  bwd %8.3f ms (ref %8.3f, x%.2f)  %s\n",
                label, fwd_omp, fwd_ref, fwd_ref / fwd_omp, bwd_omp, bwd_ref, bwd_ref / bwd_omp,
                identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    bench_conv("conv 1->16 s2 64x64", ConvShape{1, 64, 64, 16, 3, 2, 1}, 20);
    bench_conv("conv 16->32 s2 32x32", ConvShape{16, 32, 32, 32, 3, 2, 1}, 20);
    bench_conv("conv 32->32 s1 16x16", ConvShape{32, 16, 16, 32, 3, 1, 1}, 20);
    bench_conv("conv 32->16 s1 32x32", ConvShape{32, 32, 32, 16, 3, 1, 1}, 10);
    bench_conv("conv 16->4  s1 64x64", ConvShape{16, 64, 64, 4, 3, 1, 1}, 10);
    return 0;
}
