#pragma once

#include <span>

namespace maskwright::kernels {

// Dense row-major GEMM variants. All outputs are overwritten.
//   matmul:      c[m,n] = a[m,k] * b[k,n]
//   matmul_tn:   c[k,n] = a[m,k]^T * b[m,n]
//   matmul_nt:   c[m,k] = a[m,n] * b[k,n]^T
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            int m, int k, int n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int k, int n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int n, int k);

// Batched 2D cross-correlation, stride 1, symmetric zero padding.
// x: [batch, in_ch, height, width], w: [out_ch, in_ch, kh, kw],
// y: [batch, out_ch, out_h, out_w] with out_h = height + 2*pad_h - kh + 1.
// conv1d is the height == kh == 1 special case.
struct ConvGeometry {
    int batch = 1;
    int in_ch = 1;
    int out_ch = 1;
    int height = 1;
    int width = 1;
    int kh = 1;
    int kw = 1;
    int pad_h = 0;
    int pad_w = 0;

    int out_h() const { return height + 2 * pad_h - kh + 1; }
    int out_w() const { return width + 2 * pad_w - kw + 1; }
};

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
void conv2d_backward_kernel(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw);

// Straightforward single-threaded versions. Every output element is summed in
// the same order as the parallel kernels, so results agree bitwise.
namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            int m, int k, int n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int k, int n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               int m, int n, int k);
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);
void conv2d_backward_kernel(const ConvGeometry& g, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw);

}  // namespace serial

}  // namespace maskwright::kernels
