#include "doll/kernels.hpp"

#include <cstring>

namespace doll::kernels {

namespace {

inline size_t idx3(int c, int y, int x, int h, int w) {
    return (static_cast<size_t>(c) * h + y) * w + x;
}

// One output element of the forward pass: a fixed-order reduction over
// (ci, ky, kx). Shared by the serial and OpenMP variants.
inline real conv_out_elem(const ConvShape& s, const real* in, const real* weight,
                          int co, int oy, int ox) {
    real acc = 0.0;
    const int y0 = oy * s.stride - s.pad;
    const int x0 = ox * s.stride - s.pad;
    for (int ci = 0; ci < s.ci; ++ci) {
        const real* wbase = weight + ((static_cast<size_t>(co) * s.ci + ci) * s.k) * s.k;
        for (int ky = 0; ky < s.k; ++ky) {
            const int y = y0 + ky;
            if (y < 0 || y >= s.h) continue;
            const real* irow = in + idx3(ci, y, 0, s.h, s.w);
            const real* wrow = wbase + static_cast<size_t>(ky) * s.k;
            for (int kx = 0; kx < s.k; ++kx) {
                const int x = x0 + kx;
                if (x < 0 || x >= s.w) continue;
                acc += irow[x] * wrow[kx];
            }
        }
    }
    return acc;
}

inline real conv_din_elem(const ConvShape& s, const real* dout, const real* weight,
                          int ci, int y, int x) {
    const int oh = s.oh(), ow = s.ow();
    real acc = 0.0;
    for (int co = 0; co < s.co; ++co) {
        const real* wbase = weight + ((static_cast<size_t>(co) * s.ci + ci) * s.k) * s.k;
        for (int ky = 0; ky < s.k; ++ky) {
            const int ynum = y + s.pad - ky;
            if (ynum < 0 || ynum % s.stride != 0) continue;
            const int oy = ynum / s.stride;
            if (oy >= oh) continue;
            for (int kx = 0; kx < s.k; ++kx) {
                const int xnum = x + s.pad - kx;
                if (xnum < 0 || xnum % s.stride != 0) continue;
                const int ox = xnum / s.stride;
                if (ox >= ow) continue;
                acc += dout[idx3(co, oy, ox, oh, ow)] * wbase[static_cast<size_t>(ky) * s.k + kx];
            }
        }
    }
    return acc;
}

inline real conv_dw_elem(const ConvShape& s, const real* dout, const real* in,
                         int co, int ci, int ky, int kx) {
    const int oh = s.oh(), ow = s.ow();
    real acc = 0.0;
    for (int oy = 0; oy < oh; ++oy) {
        const int y = oy * s.stride - s.pad + ky;
        if (y < 0 || y >= s.h) continue;
        const real* drow = dout + idx3(co, oy, 0, oh, ow);
        const real* irow = in + idx3(ci, y, 0, s.h, s.w);
        for (int ox = 0; ox < ow; ++ox) {
            const int x = ox * s.stride - s.pad + kx;
            if (x < 0 || x >= s.w) continue;
            acc += drow[ox] * irow[x];
        }
    }
    return acc;
}

}  // namespace

void conv2d_forward(const ConvShape& s, const real* in, const real* weight,
                    const real* bias, real* out) {
    const int oh = s.oh(), ow = s.ow();
    const int n = s.co * oh;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const int co = i / oh, oy = i % oh;
        real* orow = out + idx3(co, oy, 0, oh, ow);
        for (int ox = 0; ox < ow; ++ox)
            orow[ox] = bias[co] + conv_out_elem(s, in, weight, co, oy, ox);
    }
}

void conv2d_backward_input(const ConvShape& s, const real* dout, const real* weight,
                           real* din) {
    const int n = s.ci * s.h;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const int ci = i / s.h, y = i % s.h;
        real* drow = din + idx3(ci, y, 0, s.h, s.w);
        for (int x = 0; x < s.w; ++x)
            drow[x] = conv_din_elem(s, dout, weight, ci, y, x);
    }
}

void conv2d_backward_weights(const ConvShape& s, const real* dout, const real* in,
                             real* dweight, real* dbias) {
    const int oh = s.oh(), ow = s.ow();
    const int n = s.co * s.ci;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const int co = i / s.ci, ci = i % s.ci;
        real* wbase = dweight + (static_cast<size_t>(i) * s.k) * s.k;
        for (int ky = 0; ky < s.k; ++ky)
            for (int kx = 0; kx < s.k; ++kx)
                wbase[static_cast<size_t>(ky) * s.k + kx] = conv_dw_elem(s, dout, in, co, ci, ky, kx);
    }
#pragma omp parallel for schedule(static)
    for (int co = 0; co < s.co; ++co) {
        real acc = 0.0;
        const real* dbase = dout + static_cast<size_t>(co) * oh * ow;
        for (int j = 0; j < oh * ow; ++j) acc += dbase[j];
        dbias[co] = acc;
    }
}

void dense_forward(int rows, int cols, const real* wmat, const real* bias,
                   const real* x, real* y) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        real acc = bias[r];
        const real* wrow = wmat + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += wrow[c] * x[c];
        y[r] = acc;
    }
}

void dense_backward_input(int rows, int cols, const real* wmat, const real* dy,
                          real* dx) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cols; ++c) {
        real acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += wmat[static_cast<size_t>(r) * cols + c] * dy[r];
        dx[c] = acc;
    }
}

void dense_backward_weights(int rows, int cols, const real* x, const real* dy,
                            real* dwmat, real* dbias) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        real* wrow = dwmat + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) wrow[c] = dy[r] * x[c];
        dbias[r] = dy[r];
    }
}

namespace ref {

void conv2d_forward(const ConvShape& s, const real* in, const real* weight,
                    const real* bias, real* out) {
    const int oh = s.oh(), ow = s.ow();
    for (int co = 0; co < s.co; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                out[idx3(co, oy, ox, oh, ow)] = bias[co] + conv_out_elem(s, in, weight, co, oy, ox);
}

void conv2d_backward_input(const ConvShape& s, const real* dout, const real* weight,
                           real* din) {
    for (int ci = 0; ci < s.ci; ++ci)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                din[idx3(ci, y, x, s.h, s.w)] = conv_din_elem(s, dout, weight, ci, y, x);
}

void conv2d_backward_weights(const ConvShape& s, const real* dout, const real* in,
                             real* dweight, real* dbias) {
    const int oh = s.oh(), ow = s.ow();
    for (int co = 0; co < s.co; ++co)
        for (int ci = 0; ci < s.ci; ++ci)
            for (int ky = 0; ky < s.k; ++ky)
                for (int kx = 0; kx < s.k; ++kx)
                    dweight[((static_cast<size_t>(co) * s.ci + ci) * s.k + ky) * s.k + kx] =
                        conv_dw_elem(s, dout, in, co, ci, ky, kx);
    for (int co = 0; co < s.co; ++co) {
        real acc = 0.0;
        const real* dbase = dout + static_cast<size_t>(co) * oh * ow;
        for (int j = 0; j < oh * ow; ++j) acc += dbase[j];
        dbias[co] = acc;
    }
}

void dense_forward(int rows, int cols, const real* wmat, const real* bias,
                   const real* x, real* y) {
    for (int r = 0; r < rows; ++r) {
        real acc = bias[r];
        const real* wrow = wmat + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) acc += wrow[c] * x[c];
        y[r] = acc;
    }
}

void dense_backward_input(int rows, int cols, const real* wmat, const real* dy,
                          real* dx) {
    for (int c = 0; c < cols; ++c) {
        real acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += wmat[static_cast<size_t>(r) * cols + c] * dy[r];
        dx[c] = acc;
    }
}

void dense_backward_weights(int rows, int cols, const real* x, const real* dy,
                            real* dwmat, real* dbias) {
    for (int r = 0; r < rows; ++r) {
        real* wrow = dwmat + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) wrow[c] = dy[r] * x[c];
        dbias[r] = dy[r];
    }
}

}  // namespace ref

}  // namespace doll::kernels
