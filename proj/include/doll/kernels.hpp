#pragma once

#include "doll/core.hpp"

namespace doll::kernels {

// Dense-array convolution kernels. Layouts:
//   input   ci x h x w        (channel-major, row-major planes)
//   weights co x ci x k x k
//   output  co x ho x wo,  ho = (h + 2*pad - k)/stride + 1
//
// The default entry points are OpenMP-parallel; kernels::ref holds the serial
// reference implementations. Both compute each output element as the same
// fixed-order reduction, so results are bit-identical for any thread count.

struct ConvShape {
    int ci, h, w;      // input
    int co, k;         // filter bank
    int stride, pad;
    int oh() const { return (h + 2 * pad - k) / stride + 1; }
    int ow() const { return (w + 2 * pad - k) / stride + 1; }
};

void conv2d_forward(const ConvShape& s, const real* in, const real* weight,
                    const real* bias, real* out);
void conv2d_backward_input(const ConvShape& s, const real* dout, const real* weight,
                           real* din);
void conv2d_backward_weights(const ConvShape& s, const real* dout, const real* in,
                             real* dweight, real* dbias);

// y = W x + b, W is rows x cols (row-major), x cols, y rows.
void dense_forward(int rows, int cols, const real* wmat, const real* bias,
                   const real* x, real* y);
void dense_backward_input(int rows, int cols, const real* wmat, const real* dy,
                          real* dx);
void dense_backward_weights(int rows, int cols, const real* x, const real* dy,
                            real* dwmat, real* dbias);

namespace ref {
void conv2d_forward(const ConvShape& s, const real* in, const real* weight,
                    const real* bias, real* out);
void conv2d_backward_input(const ConvShape& s, const real* dout, const real* weight,
                           real* din);
void conv2d_backward_weights(const ConvShape& s, const real* dout, const real* in,
                             real* dweight, real* dbias);
void dense_forward(int rows, int cols, const real* wmat, const real* bias,
                   const real* x, real* y);
void dense_backward_input(int rows, int cols, const real* wmat, const real* dy,
                          real* dx);
void dense_backward_weights(int rows, int cols, const real* x, const real* dy,
                            real* dwmat, real* dbias);
}  // namespace ref

}  // namespace doll::kernels
