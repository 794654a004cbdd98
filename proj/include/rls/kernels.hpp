#pragma once

// Numeric kernels behind the autodiff ops. Two implementations share each
// signature: `reference` holds plain serial loops written for readability and
// used as the test oracle; `parallel` holds the im2col/GEMM versions with
// OpenMP that the graph actually calls. Parallel kernels assign every output
// element to exactly one thread and reduce over fixed partitions, so results
// are bitwise independent of the thread count.
//
// All buffers are row-major. Functions named *_backward_* accumulate (+=)
// into their gradient outputs; forward functions overwrite.

#include <cstddef>
#include <span>

namespace rls::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (height + 2 * pad - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * pad - kernel_w) / stride + 1; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t kernel_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  // Rows of the im2col matrix.
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
};

namespace reference {

// c[m,n] (+)= a[m,k] * b[k,n]
void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> kernel,
                           std::span<const double> grad_output, std::span<double> grad_input);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias);

void upsample2x_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> input,
                        std::span<double> output);
void upsample2x_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> grad_output,
                         std::span<double> grad_input);

void affine_forward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> output);
void affine_backward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace reference

namespace parallel {

void gemm(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a,
          std::span<const double> b, std::span<double> c, bool accumulate);

void conv2d_forward(const ConvGeometry& g, std::span<const double> input, std::span<const double> kernel,
                    std::span<const double> bias, std::span<double> output);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> kernel,
                           std::span<const double> grad_output, std::span<double> grad_input);
void conv2d_backward_params(const ConvGeometry& g, std::span<const double> input,
                            std::span<const double> grad_output, std::span<double> grad_kernel,
                            std::span<double> grad_bias);

void upsample2x_forward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> input,
                        std::span<double> output);
void upsample2x_backward(std::size_t planes, std::size_t h, std::size_t w, std::span<const double> grad_output,
                         std::span<double> grad_input);

// Any of grad_input / grad_weight / grad_bias may be empty to skip it.
void affine_forward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias, std::span<double> output);
void affine_backward(std::size_t rows, std::size_t in_dim, std::size_t out_dim, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> grad_output,
                     std::span<double> grad_input, std::span<double> grad_weight, std::span<double> grad_bias);

}  // namespace parallel

}  // namespace rls::kernels
