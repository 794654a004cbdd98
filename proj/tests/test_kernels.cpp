#include <omp.h>

#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rls/kernels.hpp"
#include "rls/rng.hpp"

namespace k = rls::kernels;
using rls::Rng;

namespace {

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> naive_gemm(std::size_t m, std::size_t n, std::size_t kk, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < kk; ++p) c[i * n + j] += a[i * kk + p] * b[p * n + j];
  return c;
}

std::vector<double> direct_conv(const k::ConvGeometry& g, const std::vector<double>& x, const std::vector<double>& w,
                                const std::vector<double>& b) {
  std::vector<double> y(g.output_size());
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < g.out_h(); ++oy)
        for (std::size_t ox = 0; ox < g.out_w(); ++ox) {
          double s = b[o];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel_h; ++ky)
              for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
                const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
                if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                s += x[((n * g.in_channels + c) * g.height + static_cast<std::size_t>(iy)) * g.width +
                       static_cast<std::size_t>(ix)] *
                     w[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
              }
          y[((n * g.out_channels + o) * g.out_h() + oy) * g.out_w() + ox] = s;
        }
  return y;
}

k::ConvGeometry random_geometry(Rng& rng) {
  k::ConvGeometry g;
  g.batch = 1 + rng.below(3);
  g.in_channels = 1 + rng.below(5);
  g.out_channels = 1 + rng.below(6);
  g.kernel_h = g.kernel_w = std::array<std::size_t, 5>{1, 2, 3, 4, 5}[rng.below(5)];
  g.stride = 1 + rng.below(3);
  g.pad = rng.below(4);
  const std::size_t lo = g.kernel_h > 2 * g.pad ? g.kernel_h - 2 * g.pad : 1;
  g.height = lo + rng.below(14);
  g.width = lo + rng.below(14);
  return g;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("gemm: both implementations match a triple loop") {
    Rng rng(1);
    for (const auto& [m, n, kk] : std::vector<std::array<std::size_t, 3>>{
             {1, 1, 1}, {3, 5, 7}, {4, 16, 8}, {17, 33, 9}, {64, 300, 257}, {5, 513, 3}, {130, 17, 600}}) {
      const auto a = rand_vec(m * kk, rng), b = rand_vec(kk * n, rng);
      const auto expect = naive_gemm(m, n, kk, a, b);
      std::vector<double> ref(m * n, 9.0), par(m * n, 9.0);
      k::reference::gemm(m, n, kk, a, b, ref, false);
      k::parallel::gemm(m, n, kk, a, b, par, false);
      CHECK(max_diff(ref, expect) < 1e-12);
      CHECK(max_diff(par, expect) < 1e-12);

      // accumulate adds onto existing contents
      std::vector<double> acc(m * n, 1.0);
      k::parallel::gemm(m, n, kk, a, b, acc, true);
      for (std::size_t i = 0; i < acc.size(); ++i) REQUIRE(std::abs(acc[i] - 1.0 - expect[i]) < 1e-12);
    }
  }

  TEST_CASE("conv2d forward: parallel and reference against the direct sum") {
    Rng rng(2);
    for (int c = 0; c < 150; ++c) {
      const auto g = random_geometry(rng);
      const auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.kernel_size(), rng), b = rand_vec(g.out_channels, rng);
      const auto expect = direct_conv(g, x, w, b);
      std::vector<double> ref(g.output_size()), par(g.output_size());
      k::reference::conv2d_forward(g, x, w, b, ref);
      k::parallel::conv2d_forward(g, x, w, b, par);
      REQUIRE(max_diff(ref, expect) < 1e-12);
      REQUIRE(max_diff(par, expect) < 1e-12);
    }
  }

  TEST_CASE("conv2d backward is the adjoint of forward") {
    // <conv(x), gy> = <x, conv^T(gy)> and, with zero bias,
    // <conv(x; w), gy> = <w, dW(x, gy)>, sum(gy per channel) = db.
    Rng rng(3);
    for (int c = 0; c < 150; ++c) {
      const auto g = random_geometry(rng);
      const auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.kernel_size(), rng);
      const std::vector<double> zero_bias(g.out_channels, 0.0);
      const auto gy = rand_vec(g.output_size(), rng);
      const double lhs = dot(direct_conv(g, x, w, zero_bias), gy);

      for (bool parallel : {false, true}) {
        CAPTURE(parallel);
        std::vector<double> gx(g.input_size(), 0.0), gw(g.kernel_size(), 0.0), gb(g.out_channels, 0.0);
        if (parallel) {
          k::parallel::conv2d_backward_input(g, w, gy, gx);
          k::parallel::conv2d_backward_params(g, x, gy, gw, gb);
        } else {
          k::reference::conv2d_backward_input(g, w, gy, gx);
          k::reference::conv2d_backward_params(g, x, gy, gw, gb);
        }
        const double scale = 1.0 + std::abs(lhs);
        REQUIRE(std::abs(dot(x, gx) - lhs) < 1e-11 * scale);
        REQUIRE(std::abs(dot(w, gw) - lhs) < 1e-11 * scale);
        const std::size_t plane = g.out_h() * g.out_w();
        for (std::size_t o = 0; o < g.out_channels; ++o) {
          double s = 0.0;
          for (std::size_t n = 0; n < g.batch; ++n)
            for (std::size_t i = 0; i < plane; ++i) s += gy[(n * g.out_channels + o) * plane + i];
          REQUIRE(std::abs(gb[o] - s) < 1e-11 * (1.0 + std::abs(s)));
        }
      }
    }
  }

  TEST_CASE("conv2d: parallel matches reference on the network's layer shapes") {
    // Stride-1 same-padding and stride-2 layers as used by the encoder and decoder.
    Rng rng(4);
    for (const auto& [cin, cout, hw, kk, stride, pad] : std::vector<std::array<std::size_t, 6>>{
             {1, 16, 64, 5, 2, 2}, {16, 32, 32, 5, 2, 2}, {32, 16, 32, 5, 1, 2}, {16, 1, 64, 5, 1, 2}, {3, 4, 9, 3, 1, 1}}) {
      k::ConvGeometry g{2, cin, hw, hw, cout, kk, kk, stride, pad};
      const auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.kernel_size(), rng), b = rand_vec(cout, rng);
      const auto gy = rand_vec(g.output_size(), rng);
      std::vector<double> y0(g.output_size()), y1(g.output_size());
      k::reference::conv2d_forward(g, x, w, b, y0);
      k::parallel::conv2d_forward(g, x, w, b, y1);
      CHECK(max_diff(y0, y1) < 1e-11);
      std::vector<double> gx0(g.input_size(), 0.5), gx1(g.input_size(), 0.5);
      k::reference::conv2d_backward_input(g, w, gy, gx0);
      k::parallel::conv2d_backward_input(g, w, gy, gx1);
      CHECK(max_diff(gx0, gx1) < 1e-11);
      std::vector<double> gw0(g.kernel_size(), 0.25), gw1(g.kernel_size(), 0.25), gb0(cout, 0.0), gb1(cout, 0.0);
      k::reference::conv2d_backward_params(g, x, gy, gw0, gb0);
      k::parallel::conv2d_backward_params(g, x, gy, gw1, gb1);
      CHECK(max_diff(gw0, gw1) < 1e-10);
      CHECK(max_diff(gb0, gb1) < 1e-10);
    }
  }

  TEST_CASE("upsample2x copies each value into a 2x2 block and its backward sums them") {
    const std::vector<double> in{1, 2, 3, 4, 5, 6};
    for (bool parallel : {false, true}) {
      std::vector<double> out(24);
      if (parallel) k::parallel::upsample2x_forward(1, 2, 3, in, out);
      else k::reference::upsample2x_forward(1, 2, 3, in, out);
      const std::vector<double> row0{1, 1, 2, 2, 3, 3};
      for (std::size_t x = 0; x < 6; ++x) {
        CHECK(out[x] == row0[x]);
        CHECK(out[6 + x] == row0[x]);
        CHECK(out[18 + x] == row0[x] + 3);
      }
      std::vector<double> g(6, 0.0), ones(24, 1.0);
      if (parallel) k::parallel::upsample2x_backward(1, 2, 3, ones, g);
      else k::reference::upsample2x_backward(1, 2, 3, ones, g);
      for (double v : g) CHECK(v == 4.0);
    }
  }

  TEST_CASE("affine: forward and backward against explicit sums") {
    Rng rng(5);
    for (const auto& [rows, in, out] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 7, 5}, {16, 4096, 288}, {9, 33, 120}}) {
      const auto x = rand_vec(rows * in, rng), w = rand_vec(in * out, rng), b = rand_vec(out, rng);
      const auto gy = rand_vec(rows * out, rng);
      auto expect = naive_gemm(rows, out, in, x, w);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) expect[r * out + j] += b[j];
      std::vector<double> gx_e(rows * in, 0.0), gw_e(in * out, 0.0), gb_e(out, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out; ++j) {
          gb_e[j] += gy[r * out + j];
          for (std::size_t i = 0; i < in; ++i) {
            gx_e[r * in + i] += gy[r * out + j] * w[i * out + j];
            gw_e[i * out + j] += x[r * in + i] * gy[r * out + j];
          }
        }
      for (bool parallel : {false, true}) {
        std::vector<double> y(rows * out), gx(rows * in, 0.0), gw(in * out, 0.0), gb(out, 0.0);
        if (parallel) {
          k::parallel::affine_forward(rows, in, out, x, w, b, y);
          k::parallel::affine_backward(rows, in, out, x, w, gy, gx, gw, gb);
        } else {
          k::reference::affine_forward(rows, in, out, x, w, b, y);
          k::reference::affine_backward(rows, in, out, x, w, gy, gx, gw, gb);
        }
        CHECK(max_diff(y, expect) < 1e-10);
        CHECK(max_diff(gx, gx_e) < 1e-10);
        CHECK(max_diff(gw, gw_e) < 1e-10);
        CHECK(max_diff(gb, gb_e) < 1e-10);
      }
    }
  }

  TEST_CASE("parallel affine backward may skip outputs") {
    Rng rng(6);
    const auto x = rand_vec(6, rng), w = rand_vec(6, rng), gy = rand_vec(4, rng);
    std::vector<double> gw(6, 0.0);
    k::parallel::affine_backward(2, 3, 2, x, w, gy, {}, gw, {});
    std::vector<double> gw_ref(6, 0.0), gx_ref(6, 0.0), gb_ref(2, 0.0);
    k::reference::affine_backward(2, 3, 2, x, w, gy, gx_ref, gw_ref, gb_ref);
    CHECK(max_diff(gw, gw_ref) < 1e-14);
  }

  TEST_CASE("parallel kernels are bitwise independent of the thread count") {
    Rng rng(7);
    k::ConvGeometry g{4, 16, 32, 32, 32, 5, 5, 2, 2};
    const auto x = rand_vec(g.input_size(), rng), w = rand_vec(g.kernel_size(), rng), b = rand_vec(32, rng);
    const auto gy = rand_vec(g.output_size(), rng);
    const auto a = rand_vec(200 * 150, rng), bb = rand_vec(150 * 300, rng);
    auto run = [&](int threads) {
      omp_set_num_threads(threads);
      std::vector<double> y(g.output_size()), gx(g.input_size(), 0.0), gw(g.kernel_size(), 0.0), gb(32, 0.0);
      k::parallel::conv2d_forward(g, x, w, b, y);
      k::parallel::conv2d_backward_input(g, w, gy, gx);
      k::parallel::conv2d_backward_params(g, x, gy, gw, gb);
      std::vector<double> c(200 * 300, 0.0);
      k::parallel::gemm(200, 300, 150, a, bb, c, false);
      return std::array<std::vector<double>, 5>{y, gx, gw, gb, c};
    };
    const int saved = omp_get_max_threads();
    const auto one = run(1), four = run(4), seven = run(7);
    omp_set_num_threads(saved);
    for (std::size_t i = 0; i < one.size(); ++i) {
      CHECK(one[i] == four[i]);
      CHECK(one[i] == seven[i]);
    }
  }
}
