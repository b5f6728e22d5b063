#include "maskwright/kernels.hpp"

#include <algorithm>
#include <cstddef>

namespace maskwright::kernels {

namespace {

// Below this many multiply-adds the thread start-up cost dominates.
constexpr long kParallelThreshold = 1L << 15;

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            int m, int k, int n) {
    const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int i = 0; i < m; ++i) {
        double* crow = c.data() + static_cast<std::ptrdiff_t>(i) * n;
        std::fill(crow, crow + n, 0.0);
        const double* arow = a.data() + static_cast<std::ptrdiff_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.data() + static_cast<std::ptrdiff_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int k, int n) {
    const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int p = 0; p < k; ++p) {
        double* crow = c.data() + static_cast<std::ptrdiff_t>(p) * n;
        std::fill(crow, crow + n, 0.0);
        for (int i = 0; i < m; ++i) {
            const double av = a[static_cast<std::size_t>(i) * k + p];
            const double* brow = b.data() + static_cast<std::ptrdiff_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int n, int k) {
    const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold)
    for (int i = 0; i < m; ++i) {
        const double* arow = a.data() + static_cast<std::ptrdiff_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double* brow = b.data() + static_cast<std::ptrdiff_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            c[static_cast<std::size_t>(i) * k + p] = acc;
        }
    }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    const long work = static_cast<long>(g.batch) * g.out_ch * g.in_ch * g.kh * g.kw * oh * ow;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelThreshold)
    for (int b = 0; b < g.batch; ++b) {
        for (int co = 0; co < g.out_ch; ++co) {
            double* out = y.data() + (static_cast<std::ptrdiff_t>(b) * g.out_ch + co) * oh * ow;
            std::fill(out, out + static_cast<std::ptrdiff_t>(oh) * ow, 0.0);
            for (int ci = 0; ci < g.in_ch; ++ci) {
                const double* in =
                    x.data() + (static_cast<std::ptrdiff_t>(b) * g.in_ch + ci) * g.height * g.width;
                for (int ki = 0; ki < g.kh; ++ki) {
                    // rows i with 0 <= i + ki - pad_h < height
                    const int i0 = std::max(0, g.pad_h - ki);
                    const int i1 = std::min(oh, g.height + g.pad_h - ki);
                    for (int kj = 0; kj < g.kw; ++kj) {
                        const double wv =
                            w[((static_cast<std::size_t>(co) * g.in_ch + ci) * g.kh + ki) * g.kw + kj];
                        const int j0 = std::max(0, g.pad_w - kj);
                        const int j1 = std::min(ow, g.width + g.pad_w - kj);
                        for (int i = i0; i < i1; ++i) {
                            const double* src = in + static_cast<std::ptrdiff_t>(i + ki - g.pad_h) * g.width +
                                                (kj - g.pad_w);
                            double* dst = out + static_cast<std::ptrdiff_t>(i) * ow;
                            for (int j = j0; j < j1; ++j) dst[j] += wv * src[j];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    const long work = static_cast<long>(g.batch) * g.out_ch * g.in_ch * g.kh * g.kw * oh * ow;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelThreshold)
    for (int b = 0; b < g.batch; ++b) {
        for (int ci = 0; ci < g.in_ch; ++ci) {
            double* din =
                dx.data() + (static_cast<std::ptrdiff_t>(b) * g.in_ch + ci) * g.height * g.width;
            std::fill(din, din + static_cast<std::ptrdiff_t>(g.height) * g.width, 0.0);
            for (int co = 0; co < g.out_ch; ++co) {
                const double* dout =
                    dy.data() + (static_cast<std::ptrdiff_t>(b) * g.out_ch + co) * oh * ow;
                for (int ki = 0; ki < g.kh; ++ki) {
                    const int i0 = std::max(0, g.pad_h - ki);
                    const int i1 = std::min(oh, g.height + g.pad_h - ki);
                    for (int kj = 0; kj < g.kw; ++kj) {
                        const double wv =
                            w[((static_cast<std::size_t>(co) * g.in_ch + ci) * g.kh + ki) * g.kw + kj];
                        const int j0 = std::max(0, g.pad_w - kj);
                        const int j1 = std::min(ow, g.width + g.pad_w - kj);
                        for (int i = i0; i < i1; ++i) {
                            double* dst = din + static_cast<std::ptrdiff_t>(i + ki - g.pad_h) * g.width +
                                          (kj - g.pad_w);
                            const double* src = dout + static_cast<std::ptrdiff_t>(i) * ow;
                            for (int j = j0; j < j1; ++j) dst[j] += wv * src[j];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_kernel(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    const long work = static_cast<long>(g.batch) * g.out_ch * g.in_ch * g.kh * g.kw * oh * ow;
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelThreshold)
    for (int co = 0; co < g.out_ch; ++co) {
        for (int ci = 0; ci < g.in_ch; ++ci) {
            for (int ki = 0; ki < g.kh; ++ki) {
                const int i0 = std::max(0, g.pad_h - ki);
                const int i1 = std::min(oh, g.height + g.pad_h - ki);
                for (int kj = 0; kj < g.kw; ++kj) {
                    const int j0 = std::max(0, g.pad_w - kj);
                    const int j1 = std::min(ow, g.width + g.pad_w - kj);
                    double acc = 0.0;
                    for (int b = 0; b < g.batch; ++b) {
                        const double* dout =
                            dy.data() + (static_cast<std::ptrdiff_t>(b) * g.out_ch + co) * oh * ow;
                        const double* in = x.data() +
                                           (static_cast<std::ptrdiff_t>(b) * g.in_ch + ci) * g.height * g.width;
                        for (int i = i0; i < i1; ++i) {
                            const double* src = in + static_cast<std::ptrdiff_t>(i + ki - g.pad_h) * g.width +
                                                (kj - g.pad_w);
                            const double* d = dout + static_cast<std::ptrdiff_t>(i) * ow;
                            for (int j = j0; j < j1; ++j) acc += d[j] * src[j];
                        }
                    }
                    dw[((static_cast<std::size_t>(co) * g.in_ch + ci) * g.kh + ki) * g.kw + kj] = acc;
                }
            }
        }
    }
}

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            int m, int k, int n) {
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int k, int n) {
    for (int p = 0; p < k; ++p)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
            c[p * n + j] = acc;
        }
}

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int n, int k) {
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += a[i * n + j] * b[p * n + j];
            c[i * k + p] = acc;
        }
}

namespace {

double at(std::span<const double> t, int c_count, int h, int w, int b, int c, int i, int j) {
    return t[((static_cast<std::size_t>(b) * c_count + c) * h + i) * w + j];
}

double weight(const ConvGeometry& g, std::span<const double> w, int co, int ci, int ki, int kj) {
    return w[((static_cast<std::size_t>(co) * g.in_ch + ci) * g.kh + ki) * g.kw + kj];
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    for (int b = 0; b < g.batch; ++b)
        for (int co = 0; co < g.out_ch; ++co)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = 0.0;
                    for (int ci = 0; ci < g.in_ch; ++ci)
                        for (int ki = 0; ki < g.kh; ++ki)
                            for (int kj = 0; kj < g.kw; ++kj) {
                                const int r = i + ki - g.pad_h;
                                const int s = j + kj - g.pad_w;
                                if (r < 0 || r >= g.height || s < 0 || s >= g.width) continue;
                                acc += weight(g, w, co, ci, ki, kj) *
                                       at(x, g.in_ch, g.height, g.width, b, ci, r, s);
                            }
                    y[((static_cast<std::size_t>(b) * g.out_ch + co) * oh + i) * ow + j] = acc;
                }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    for (int b = 0; b < g.batch; ++b)
        for (int ci = 0; ci < g.in_ch; ++ci)
            for (int r = 0; r < g.height; ++r)
                for (int s = 0; s < g.width; ++s) {
                    double acc = 0.0;
                    for (int co = 0; co < g.out_ch; ++co)
                        for (int ki = 0; ki < g.kh; ++ki)
                            for (int kj = 0; kj < g.kw; ++kj) {
                                const int i = r - ki + g.pad_h;
                                const int j = s - kj + g.pad_w;
                                if (i < 0 || i >= oh || j < 0 || j >= ow) continue;
                                acc += weight(g, w, co, ci, ki, kj) * at(dy, g.out_ch, oh, ow, b, co, i, j);
                            }
                    dx[((static_cast<std::size_t>(b) * g.in_ch + ci) * g.height + r) * g.width + s] = acc;
                }
}

void conv2d_backward_kernel(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw) {
    const int oh = g.out_h();
    const int ow = g.out_w();
    for (int co = 0; co < g.out_ch; ++co)
        for (int ci = 0; ci < g.in_ch; ++ci)
            for (int ki = 0; ki < g.kh; ++ki)
                for (int kj = 0; kj < g.kw; ++kj) {
                    double acc = 0.0;
                    for (int b = 0; b < g.batch; ++b)
                        for (int i = 0; i < oh; ++i)
                            for (int j = 0; j < ow; ++j) {
                                const int r = i + ki - g.pad_h;
                                const int s = j + kj - g.pad_w;
                                if (r < 0 || r >= g.height || s < 0 || s >= g.width) continue;
                                acc += at(dy, g.out_ch, oh, ow, b, co, i, j) *
                                       at(x, g.in_ch, g.height, g.width, b, ci, r, s);
                            }
                    dw[((static_cast<std::size_t>(co) * g.in_ch + ci) * g.kh + ki) * g.kw + kj] = acc;
                }
}

}  // namespace serial

}  // namespace maskwright::kernels
