#include "protoscale/kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace protoscale::kernels {

namespace {

// Work (multiply-adds) below which forking threads costs more than it saves.
constexpr std::size_t kParallelThreshold = 1u << 15;

inline void nn_row(std::size_t i, std::size_t N, std::size_t K, const double* A, const double* B,
                   double* C, bool accumulate) {
  double* c = C + i * N;
  if (!accumulate) std::fill(c, c + N, 0.0);
  const double* a = A + i * K;
  for (std::size_t k = 0; k < K; ++k) {
    const double aik = a[k];
    if (aik == 0.0) continue;
    const double* b = B + k * N;
#pragma omp simd
    for (std::size_t j = 0; j < N; ++j) c[j] += aik * b[j];
  }
}

inline void nt_row(std::size_t i, std::size_t N, std::size_t K, const double* A, const double* B,
                   double* C, bool accumulate) {
  double* c = C + i * N;
  const double* a = A + i * K;
  for (std::size_t j = 0; j < N; ++j) {
    const double* b = B + j * K;
    double acc = 0.0;
#pragma omp simd reduction(+ : acc)
    for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
    c[j] = accumulate ? c[j] + acc : acc;
  }
}

inline void tn_row(std::size_t i, std::size_t M, std::size_t N, std::size_t K, const double* A,
                   const double* B, double* C, bool accumulate) {
  double* c = C + i * N;
  if (!accumulate) std::fill(c, c + N, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double aki = A[k * M + i];
    if (aki == 0.0) continue;
    const double* b = B + k * N;
#pragma omp simd
    for (std::size_t j = 0; j < N; ++j) c[j] += aki * b[j];
  }
}

// One row of the column matrix: fixed (channel, ki, kj).
inline void im2col_row(const ConvGeometry& g, std::size_t r, const double* input, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t kk = g.kernel_h * g.kernel_w;
  const std::size_t c = r / kk;
  const std::size_t ki = (r % kk) / g.kernel_w;
  const std::size_t kj = r % g.kernel_w;
  double* out = cols + r * g.col_cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    const double* plane = input + (b * g.in_channels + c) * g.height * g.width;
    for (std::size_t y = 0; y < oh; ++y) {
      const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
      double* dst = out + (b * oh + y) * ow;
      if (iy < 0 || iy >= static_cast<long>(g.height)) {
        std::fill(dst, dst + ow, 0.0);
        continue;
      }
      const double* src = plane + static_cast<std::size_t>(iy) * g.width;
      for (std::size_t x = 0; x < ow; ++x) {
        const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
        dst[x] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
      }
    }
  }
}

// All column rows feeding one input channel, so channels can be owned by threads.
inline void col2im_channel(const ConvGeometry& g, std::size_t c, const double* cols, double* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t kk = g.kernel_h * g.kernel_w;
  for (std::size_t q = 0; q < kk; ++q) {
    const std::size_t r = c * kk + q;
    const std::size_t ki = q / g.kernel_w;
    const std::size_t kj = q % g.kernel_w;
    const double* src_row = cols + r * g.col_cols();
    for (std::size_t b = 0; b < g.batch; ++b) {
      double* plane = dx + (b * g.in_channels + c) * g.height * g.width;
      for (std::size_t y = 0; y < oh; ++y) {
        const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
        if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
        double* dst = plane + static_cast<std::size_t>(iy) * g.width;
        const double* src = src_row + (b * oh + y) * ow;
        for (std::size_t x = 0; x < ow; ++x) {
          const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
          if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += src[x];
        }
      }
    }
  }
}

}  // namespace

namespace serial {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) nn_row(i, N, K, A, B, C, accumulate);
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) nt_row(i, N, K, A, B, C, accumulate);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
  for (std::size_t i = 0; i < M; ++i) tn_row(i, M, N, K, A, B, C, accumulate);
}

void im2col(const ConvGeometry& g, const double* input, double* cols) {
  for (std::size_t r = 0; r < g.col_rows(); ++r) im2col_row(g, r, input, cols);
}

void col2im(const ConvGeometry& g, const double* cols, double* input_grad) {
  for (std::size_t c = 0; c < g.in_channels; ++c) col2im_channel(g, c, cols, input_grad);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(M); ++i) nn_row(i, N, K, A, B, C, accumulate);
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(M); ++i) nt_row(i, N, K, A, B, C, accumulate);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(M); ++i) tn_row(i, M, N, K, A, B, C, accumulate);
}

void im2col(const ConvGeometry& g, const double* input, double* cols) {
#pragma omp parallel for schedule(static)
  for (long r = 0; r < static_cast<long>(g.col_rows()); ++r) im2col_row(g, r, input, cols);
}

void col2im(const ConvGeometry& g, const double* cols, double* input_grad) {
#pragma omp parallel for schedule(static)
  for (long c = 0; c < static_cast<long>(g.in_channels); ++c) col2im_channel(g, c, cols, input_grad);
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
bool use_parallel(std::size_t work) { return work >= kParallelThreshold && max_threads() > 1; }
}  // namespace

void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
  if (use_parallel(M * N * K)) return parallel::gemm_nn(M, N, K, A, B, C, accumulate);
  serial::gemm_nn(M, N, K, A, B, C, accumulate);
}

void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
  if (use_parallel(M * N * K)) return parallel::gemm_nt(M, N, K, A, B, C, accumulate);
  serial::gemm_nt(M, N, K, A, B, C, accumulate);
}

void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C,
             bool accumulate) {
  if (use_parallel(M * N * K)) return parallel::gemm_tn(M, N, K, A, B, C, accumulate);
  serial::gemm_tn(M, N, K, A, B, C, accumulate);
}

void im2col(const ConvGeometry& g, const double* input, double* cols) {
  if (use_parallel(g.col_rows() * g.col_cols())) return parallel::im2col(g, input, cols);
  serial::im2col(g, input, cols);
}

void col2im(const ConvGeometry& g, const double* cols, double* input_grad) {
  if (use_parallel(g.col_rows() * g.col_cols())) return parallel::col2im(g, cols, input_grad);
  serial::col2im(g, cols, input_grad);
}

namespace reference {

void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
      C[i * N + j] = s;
    }
  }
}

void conv2d(const ConvGeometry& g, std::size_t out_channels, const double* input, const double* kernel,
            double* output) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double s = 0.0;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const long iy = static_cast<long>(y * g.stride + ki) - static_cast<long>(g.padding);
                const long ix = static_cast<long>(x * g.stride + kj) - static_cast<long>(g.padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) || ix >= static_cast<long>(g.width))
                  continue;
                s += input[((b * g.in_channels + ci) * g.height + iy) * g.width + ix] *
                     kernel[((co * g.in_channels + ci) * g.kernel_h + ki) * g.kernel_w + kj];
              }
          output[((b * out_channels + co) * oh + y) * ow + x] = s;
        }
}

}  // namespace reference

}  // namespace protoscale::kernels
