#include "rls/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <utility>
#include <vector>

namespace rls::kernels::parallel {
namespace {

// Fixed partition count for batch reductions; keeps summation order
// independent of how many threads actually run.
constexpr std::size_t kReductionChunks = 4;
constexpr std::size_t kColumnBlock = 256;
constexpr std::size_t kDepthBlock = 256;
constexpr std::size_t kMinParallelWork = 1u << 16;

using v8d = double __attribute__((vector_size(64)));
using v8d_unaligned = double __attribute__((vector_size(64), aligned(8), may_alias));

inline v8d load8(const double* p) { return *reinterpret_cast<const v8d_unaligned*>(p); }
inline void store8(double* p, v8d v) { *reinterpret_cast<v8d_unaligned*>(p) = v; }

// c[4 rows, 16 cols] += a[4 rows, depth] * b, with b packed as [depth][16]
// and the c tile held in registers.
inline void tile_4x16(const double* a, std::size_t lda, const double* b, double* c, std::size_t ldc,
                      std::size_t depth) {
  const double* a0 = a;
  const double* a1 = a0 + lda;
  const double* a2 = a1 + lda;
  const double* a3 = a2 + lda;
  double* c0 = c;
  double* c1 = c0 + ldc;
  double* c2 = c1 + ldc;
  double* c3 = c2 + ldc;
  v8d t00 = load8(c0), t01 = load8(c0 + 8);
  v8d t10 = load8(c1), t11 = load8(c1 + 8);
  v8d t20 = load8(c2), t21 = load8(c2 + 8);
  v8d t30 = load8(c3), t31 = load8(c3 + 8);
  for (std::size_t p = 0; p < depth; ++p) {
    const double* bp = b + p * 16;
    const v8d b0 = load8(bp), b1 = load8(bp + 8);
    t00 += a0[p] * b0, t01 += a0[p] * b1;
    t10 += a1[p] * b0, t11 += a1[p] * b1;
    t20 += a2[p] * b0, t21 += a2[p] * b1;
    t30 += a3[p] * b0, t31 += a3[p] * b1;
  }
  store8(c0, t00), store8(c0 + 8, t01);
  store8(c1, t10), store8(c1 + 8, t11);
  store8(c2, t20), store8(c2 + 8, t21);
  store8(c3, t30), store8(c3 + 8, t31);
}

// Rows [row_begin, row_end) of c (+)= a * b. Blocked over columns and depth;
// each block of b is packed into contiguous 16-wide strips that stay in L2
// while every row quad sweeps over them. Each c element still sums its
// terms in increasing p order.
void gemm_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k, const double* a,
               const double* b, double* c, bool accumulate) {
  if (!accumulate) std::fill(c + row_begin * n, c + row_end * n, 0.0);
  const bool pack = row_end - row_begin >= 4;
  thread_local std::vector<double> packed;
  if (pack) packed.resize(kColumnBlock * kDepthBlock);
  for (std::size_t j0 = 0; j0 < n; j0 += kColumnBlock) {
    const std::size_t j1 = std::min(n, j0 + kColumnBlock);
    const std::size_t strips = (j1 - j0) / 16;
    for (std::size_t p0 = 0; p0 < k; p0 += kDepthBlock) {
      const std::size_t depth = std::min(k, p0 + kDepthBlock) - p0;
      if (pack)
        for (std::size_t t = 0; t < strips; ++t)
          for (std::size_t p = 0; p < depth; ++p)
            std::copy_n(b + (p0 + p) * n + j0 + t * 16, 16, packed.data() + (t * depth + p) * 16);
      std::size_t i = row_begin;
      for (; i + 4 <= row_end; i += 4) {
        std::size_t j = j0;
        for (std::size_t t = 0; t < strips; ++t, j += 16)
          tile_4x16(a + i * k + p0, k, packed.data() + t * depth * 16, c + i * n + j, n, depth);
        for (; j < j1; ++j)
          for (std::size_t r = i; r < i + 4; ++r) {
            double s = c[r * n + j];
            for (std::size_t p = p0; p < p0 + depth; ++p) s += a[r * k + p] * b[p * n + j];
            c[r * n + j] = s;
          }
      }
      for (; i < row_end; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        std::size_t j = j0;
        for (; j + 16 <= j1; j += 16) {
          v8d t0 = load8(ci + j), t1 = load8(ci + j + 8);
          for (std::size_t p = p0; p < p0 + depth; ++p) {
            const double* bp = b + p * n + j;
            t0 += ai[p] * load8(bp), t1 += ai[p] * load8(bp + 8);
          }
          store8(ci + j, t0), store8(ci + j + 8, t1);
        }
        for (; j < j1; ++j) {
          double s = ci[j];
          for (std::size_t p = p0; p < p0 + depth; ++p) s += ai[p] * b[p * n + j];
          ci[j] = s;
        }
      }
    }
  }
}

void gemm_serial(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
                 bool accumulate) {
  gemm_rows(0, m, n, k, a, b, c, accumulate);
}

// c[m, n] += a[m, k] * b[n, k]^T. Dot products over contiguous rows, 4x4
// blocked so each loaded row feeds four accumulators.
void gemm_abt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      double s00 = 0, s01 = 0, s02 = 0, s03 = 0, s10 = 0, s11 = 0, s12 = 0, s13 = 0;
      double s20 = 0, s21 = 0, s22 = 0, s23 = 0, s30 = 0, s31 = 0, s32 = 0, s33 = 0;
#pragma omp simd reduction(+ : s00, s01, s02, s03, s10, s11, s12, s13, s20, s21, s22, s23, s30, s31, s32, s33)
      for (std::size_t p = 0; p < k; ++p) {
        const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
        const double y0 = b0[p], y1 = b1[p], y2 = b2[p], y3 = b3[p];
        s00 += x0 * y0, s01 += x0 * y1, s02 += x0 * y2, s03 += x0 * y3;
        s10 += x1 * y0, s11 += x1 * y1, s12 += x1 * y2, s13 += x1 * y3;
        s20 += x2 * y0, s21 += x2 * y1, s22 += x2 * y2, s23 += x2 * y3;
        s30 += x3 * y0, s31 += x3 * y1, s32 += x3 * y2, s33 += x3 * y3;
      }
      double* c0 = c + i * n + j;
      c0[0] += s00, c0[1] += s01, c0[2] += s02, c0[3] += s03;
      c0 += n;
      c0[0] += s10, c0[1] += s11, c0[2] += s12, c0[3] += s13;
      c0 += n;
      c0[0] += s20, c0[1] += s21, c0[2] += s22, c0[3] += s23;
      c0 += n;
      c0[0] += s30, c0[1] += s31, c0[2] += s32, c0[3] += s33;
    }
    for (; j < n; ++j) {
      const double* bj = b + j * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (std::size_t p = 0; p < k; ++p) s0 += a0[p] * bj[p], s1 += a1[p] * bj[p], s2 += a2[p] * bj[p], s3 += a3[p] * bj[p];
      c[i * n + j] += s0, c[(i + 1) * n + j] += s1, c[(i + 2) * n + j] += s2, c[(i + 3) * n + j] += s3;
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
  constexpr std::size_t tile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += tile)
    for (std::size_t c0 = 0; c0 < cols; c0 += tile)
      for (std::size_t r = r0; r < std::min(rows, r0 + tile); ++r)
        for (std::size_t c = c0; c < std::min(cols, c0 + tile); ++c) dst[c * rows + r] = src[r * cols + c];
}

// Output columns x whose input column x*stride + kx - pad lies inside the image.
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kx) {
  const auto pad = static_cast<long>(g.pad), w = static_cast<long>(g.width), s = static_cast<long>(g.stride);
  const long first = pad - static_cast<long>(kx);
  const long lo = first <= 0 ? 0 : (first + s - 1) / s;
  const long last = w - 1 + pad - static_cast<long>(kx);  // largest x*s allowed
  const long hi = last < 0 ? 0 : last / s + 1;
  const auto ow = static_cast<long>(g.out_w());
  const long clamped_hi = std::min(hi, ow);
  return {static_cast<std::size_t>(std::min(lo, clamped_hi)), static_cast<std::size_t>(clamped_hi)};
}

// cols[patch_size, oh*ow] for one image.
void im2col(const ConvGeometry& g, const double* image, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const auto pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    const double* plane = image + ci * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        double* row = cols + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ky) - pad;
          double* out = row + y * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, 0.0);
            continue;
          }
          const double* src = plane + iy * w;
          const auto [x_lo, x_hi] = valid_columns(g, kx);
          std::fill(out, out + x_lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + static_cast<long>(x_lo + kx) - pad, src + static_cast<long>(x_hi + kx) - pad, out + x_lo);
          } else {
            for (std::size_t x = x_lo; x < x_hi; ++x) out[x] = src[static_cast<long>(x * g.stride + kx) - pad];
          }
          std::fill(out + x_hi, out + ow, 0.0);
        }
      }
  }
}

// Adjoint of im2col: scatter-add cols back onto one image.
void col2im_add(const ConvGeometry& g, const double* cols, double* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const auto pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
    double* plane = image + ci * g.height * g.width;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const double* row = cols + ((ci * g.kernel_h + ky) * g.kernel_w + kx) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long iy = static_cast<long>(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= h) continue;
          const double* in = row + y * ow;
          double* dst = plane + iy * w;
          for (std::size_t x = 0; x < ow; ++x) {
            const long ix = static_cast<long>(x * g.stride + kx) - pad;
            if (ix >= 0 && ix < w) dst[ix] += in[x];
          }
        }
      }
  }
}

}  // namespace

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  // Each thread owns a contiguous run of row quads, so every c element is
  // produced by exactly one thread in a fixed order.
  const std::size_t quads = (m + 3) / 4;
  const bool wide = m * n * k >= kMinParallelWork;
#pragma omp parallel if (wide)
  {
    const auto threads = static_cast<std::size_t>(omp_get_num_threads());
    const auto t = static_cast<std::size_t>(omp_get_thread_num());
    const std::size_t q0 = t * quads / threads, q1 = (t + 1) * quads / threads;
    if (q0 < q1) gemm_rows(q0 * 4, std::min(m, q1 * 4), n, k, a.data(), b.data(), c.data(), accumulate);
  }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output) {
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t in_image = g.in_channels * g.height * g.width;
  const std::size_t out_image = g.out_channels * spatial;
#pragma omp parallel if (g.batch > 1)
  {
    std::vector<double> cols(g.patch_size() * spatial);
#pragma omp for schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      im2col(g, input.data() + b * in_image, cols.data());
      double* out = output.data() + b * out_image;
      gemm_serial(g.out_channels, spatial, g.patch_size(), kernel.data(), cols.data(), out, false);
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        double* plane = out + co * spatial;
        const double bc = bias[co];
        for (std::size_t i = 0; i < spatial; ++i) plane[i] += bc;
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> kernel,
                           std::span<const double> grad_output, std::span<double> grad_input) {
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t in_image = g.in_channels * g.height * g.width;
  const std::size_t out_image = g.out_channels * spatial;
  if (g.stride == 1 && g.kernel_h == g.kernel_w && g.pad < g.kernel_h) {
    // A stride-1 convolution's input gradient is itself a stride-1
    // convolution of grad_output with the flipped, channel-swapped kernel.
    const ConvGeometry t{g.batch, g.out_channels, g.out_h(), g.out_w(), g.in_channels,
                         g.kernel_h, g.kernel_w, 1, g.kernel_h - 1 - g.pad};
    const std::size_t taps = g.kernel_h * g.kernel_w;
    std::vector<double> flipped(g.kernel_size());
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t ci = 0; ci < g.in_channels; ++ci)
        for (std::size_t q = 0; q < taps; ++q)
          flipped[(ci * g.out_channels + co) * taps + q] = kernel[(co * g.in_channels + ci) * taps + taps - 1 - q];
    const std::size_t t_spatial = t.out_h() * t.out_w();
#pragma omp parallel if (g.batch > 1)
    {
      std::vector<double> cols(t.patch_size() * t_spatial);
#pragma omp for schedule(static)
      for (std::size_t b = 0; b < g.batch; ++b) {
        im2col(t, grad_output.data() + b * out_image, cols.data());
        gemm_serial(g.in_channels, t_spatial, t.patch_size(), flipped.data(), cols.data(),
                    grad_input.data() + b * in_image, true);
      }
    }
    return;
  }
  std::vector<double> kernel_t(g.kernel_size());
  transpose(g.out_channels, g.patch_size(), kernel.data(), kernel_t.data());
#pragma omp parallel if (g.batch > 1)
  {
    std::vector<double> cols(g.patch_size() * spatial);
#pragma omp for schedule(static)
    for (std::size_t b = 0; b < g.batch; ++b) {
      gemm_serial(g.patch_size(), spatial, g.out_channels, kernel_t.data(), grad_output.data() + b * out_image,
                  cols.data(), false);
      col2im_add(g, cols.data(), grad_input.data() + b * in_image);
    }
  }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  const std::size_t spatial = g.out_h() * g.out_w();
  const std::size_t in_image = g.in_channels * g.height * g.width;
  const std::size_t out_image = g.out_channels * spatial;
  const std::size_t chunks = std::min(g.batch, kReductionChunks);

  if (!grad_bias.empty())
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        const double* plane = grad_output.data() + b * out_image + co * spatial;
        double s = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) s += plane[i];
        grad_bias[co] += s;
      }
  if (grad_kernel.empty()) return;

  std::vector<double> partial(chunks * g.kernel_size(), 0.0);
#pragma omp parallel if (chunks > 1)
  {
    std::vector<double> cols(g.patch_size() * spatial);
#pragma omp for schedule(static)
    for (std::size_t c = 0; c < chunks; ++c) {
      const std::size_t begin = c * g.batch / chunks, end = (c + 1) * g.batch / chunks;
      for (std::size_t b = begin; b < end; ++b) {
        im2col(g, input.data() + b * in_image, cols.data());
        gemm_abt(g.out_channels, g.patch_size(), spatial, grad_output.data() + b * out_image, cols.data(),
                 partial.data() + c * g.kernel_size());
      }
    }
  }
  for (std::size_t c = 0; c < chunks; ++c)
    for (std::size_t i = 0; i < g.kernel_size(); ++i) grad_kernel[i] += partial[c * g.kernel_size() + i];
}

void upsample2x_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> input,
                        std::span<double> output) {
#pragma omp parallel for schedule(static) if (planes * h * w >= kMinParallelWork)
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = input.data() + (p * h + y) * w;
      double* r0 = output.data() + (p * 2 * h + 2 * y) * 2 * w;
      double* r1 = r0 + 2 * w;
      for (std::size_t x = 0; x < w; ++x) {
        r0[2 * x] = r0[2 * x + 1] = src[x];
        r1[2 * x] = r1[2 * x + 1] = src[x];
      }
    }
}

void upsample2x_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> grad_output,
                         std::span<double> grad_input) {
#pragma omp parallel for schedule(static) if (planes * h * w >= kMinParallelWork)
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y) {
      double* dst = grad_input.data() + (p * h + y) * w;
      const double* r0 = grad_output.data() + (p * 2 * h + 2 * y) * 2 * w;
      const double* r1 = r0 + 2 * w;
      for (std::size_t x = 0; x < w; ++x) dst[x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
    }
}

void affine_forward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> output) {
  gemm(rows, out_dim, in_dim, input, weight, output, false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = 0; e < out_dim; ++e) output[r * out_dim + e] += bias[e];
}

void affine_backward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight, std::span<double> grad_bias) {
  if (!grad_bias.empty())
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t e = 0; e < out_dim; ++e) grad_bias[e] += grad_output[r * out_dim + e];
  if (!grad_input.empty()) {
    // grad_input = grad_output * weight^T; row chunks of the output per thread.
    const bool wide = rows * in_dim * out_dim >= kMinParallelWork;
#pragma omp parallel if (wide)
    {
      const auto threads = static_cast<std::size_t>(omp_get_num_threads());
      const auto t = static_cast<std::size_t>(omp_get_thread_num());
      const std::size_t c0 = t * in_dim / threads, c1 = (t + 1) * in_dim / threads;
      for (std::size_t r = 0; r < rows; r += 4) {
        const std::size_t rr = std::min<std::size_t>(4, rows - r);
        std::vector<double> block(rr * (c1 - c0), 0.0);
        gemm_abt(rr, c1 - c0, out_dim, grad_output.data() + r * out_dim, weight.data() + c0 * out_dim, block.data());
        for (std::size_t q = 0; q < rr; ++q)
          for (std::size_t c = c0; c < c1; ++c) grad_input[(r + q) * in_dim + c] += block[q * (c1 - c0) + c - c0];
      }
    }
  }
  if (!grad_weight.empty()) {
    std::vector<double> input_t(rows * in_dim);
    transpose(rows, in_dim, input.data(), input_t.data());
    gemm(in_dim, out_dim, rows, input_t, grad_output, grad_weight, true);
  }
}

}  // namespace rls::kernels::parallel
