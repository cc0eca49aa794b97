#pragma once

#include <cstddef>

// Dense compute kernels behind the differentiable ops.
//
// Each kernel exists in two drivers sharing one per-row body:
//   serial::   plain loop over rows
//   parallel:: OpenMP work-sharing over rows
// Every output row is owned by exactly one thread and accumulated in a fixed
// order, so both drivers produce bitwise-identical results. The top-level
// functions pick the parallel driver when more than one thread is available
// and the problem is large enough to amortize the fork.
//
// reference:: holds the textbook triple loops used only as test oracles.
//
// All matrices are row-major and contiguous.
namespace protoscale::kernels {

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t kernel_h, kernel_w, stride, padding;
  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t col_rows() const { return in_channels * kernel_h * kernel_w; }
  std::size_t col_cols() const { return batch * out_h() * out_w(); }
};

#define PROTOSCALE_KERNEL_SET                                                                         \
  /* C[MxN] (+)= A[MxK] * B[KxN] */                                                                   \
  void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,         \
               double* C, bool accumulate);                                                           \
  /* C[MxN] (+)= A[MxK] * B[NxK]^T */                                                                 \
  void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,         \
               double* C, bool accumulate);                                                           \
  /* C[MxN] (+)= A[KxM]^T * B[KxN] */                                                                 \
  void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,         \
               double* C, bool accumulate);                                                           \
  /* input [B,C,H,W] -> columns [C*kh*kw, B*oh*ow] */                                                 \
  void im2col(const ConvGeometry& g, const double* input, double* cols);                              \
  /* input_grad [B,C,H,W] += scatter of columns */                                                    \
  void col2im(const ConvGeometry& g, const double* cols, double* input_grad);

namespace serial {
PROTOSCALE_KERNEL_SET
}
namespace parallel {
PROTOSCALE_KERNEL_SET
}
PROTOSCALE_KERNEL_SET

#undef PROTOSCALE_KERNEL_SET

/// Threads the parallel driver would use (1 when built without OpenMP).
int max_threads();

namespace reference {
void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C);
/// Direct cross-correlation, input [B,Cin,H,W], kernel [Cout,Cin,kh,kw].
void conv2d(const ConvGeometry& g, std::size_t out_channels, const double* input,
            const double* kernel, double* output);
}  // namespace reference

}  // namespace protoscale::kernels
