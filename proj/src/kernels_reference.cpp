#include "rls/kernels.hpp"

#include <algorithm>

namespace rls::kernels::reference {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double s = bias[co];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                s += input[((b * g.in_channels + ci) * g.height + iy) * g.width + ix] *
                     kernel[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
              }
          output[((b * g.out_channels + co) * oh + y) * ow + x] = s;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> kernel,
                           std::span<const double> grad_output, std::span<double> grad_input) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double go = grad_output[((b * g.out_channels + co) * oh + y) * ow + x];
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                grad_input[((b * g.in_channels + ci) * g.height + iy) * g.width + ix] +=
                    go * kernel[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx];
              }
        }
}

void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_channels; ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const double go = grad_output[((b * g.out_channels + co) * oh + y) * ow + x];
          if (!grad_bias.empty()) grad_bias[co] += go;
          if (grad_kernel.empty()) continue;
          for (std::size_t ci = 0; ci < g.in_channels; ++ci)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(y * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(x * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                grad_kernel[((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx] +=
                    go * input[((b * g.in_channels + ci) * g.height + iy) * g.width + ix];
              }
        }
}

void upsample2x_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> input,
                        std::span<double> output) {
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x)
        output[(p * 2 * h + y) * 2 * w + x] = input[(p * h + y / 2) * w + x / 2];
}

void upsample2x_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> grad_output,
                         std::span<double> grad_input) {
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x)
        grad_input[(p * h + y / 2) * w + x / 2] += grad_output[(p * 2 * h + y) * 2 * w + x];
}

void affine_forward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> output) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = 0; e < out_dim; ++e) {
      double s = bias[e];
      for (std::size_t d = 0; d < in_dim; ++d) s += input[r * in_dim + d] * weight[d * out_dim + e];
      output[r * out_dim + e] = s;
    }
}

void affine_backward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight, std::span<double> grad_bias) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t e = 0; e < out_dim; ++e) {
      const double go = grad_output[r * out_dim + e];
      if (!grad_bias.empty()) grad_bias[e] += go;
      for (std::size_t d = 0; d < in_dim; ++d) {
        if (!grad_input.empty()) grad_input[r * in_dim + d] += go * weight[d * out_dim + e];
        if (!grad_weight.empty()) grad_weight[d * out_dim + e] += go * input[r * in_dim + d];
      }
    }
}

}  // namespace rls::kernels::reference
