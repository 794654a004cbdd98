#pragma once

// Rollable latent space.
//
// A latent code is K sub-vectors of N bins each, stored sub-vector-contiguous
// (flat index k*N + n). Bin n stands for the viewing direction n*360/N
// degrees. Rolling by s shifts every sub-vector cyclically toward higher bin
// indices: out[k][(n + s) mod N] = in[k][n].

#include <cstddef>
#include <span>
#include <vector>

#include "rls/autodiff.hpp"
#include "rls/tensor.hpp"

namespace rls::latent {

class LatentCode {
 public:
  // K >= 1, N >= 2.
  LatentCode(std::size_t sub_vectors, std::size_t bins);
  LatentCode(std::size_t sub_vectors, std::size_t bins, std::vector<double> values);

  std::size_t sub_vectors() const { return k_; }
  std::size_t bins() const { return n_; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }
  std::span<const double> sub_vector(std::size_t k) const { return std::span(values_).subspan(k * n_, n_); }
  double& at(std::size_t k, std::size_t n) { return values_[k * n_ + n]; }
  double at(std::size_t k, std::size_t n) const { return values_[k * n_ + n]; }
  double norm() const;

  friend bool operator==(const LatentCode&, const LatentCode&) = default;

 private:
  std::size_t k_;
  std::size_t n_;
  std::vector<double> values_;
};

// Reduces any integer shift to [0, bins).
std::size_t wrap_shift(long shift, std::size_t bins);

LatentCode roll_integer(const LatentCode& z, long shift);

// Circular linear blend of the two neighbouring integer rolls. Integer
// shifts reproduce roll_integer exactly.
LatentCode roll_interpolative(const LatentCode& z, double shift);

// Explicit R^shift as an N x N 0/1 matrix, with (R^s v)[i] = v[(i - s) mod N].
// Used as the oracle for roll_integer.
Tensor permutation_matrix(std::size_t bins, long shift);

// Maps azimuth (degrees, any real) onto latent bin shifts.
class AzimuthMapping {
 public:
  explicit AzimuthMapping(std::size_t bins);

  std::size_t bins() const { return n_; }
  double bin_width_deg() const { return 360.0 / static_cast<double>(n_); }
  // (theta mod 360) * N / 360, in [0, N).
  double continuous(double theta_deg) const;
  // round(continuous(theta)) mod N.
  std::size_t nearest(double theta_deg) const;

 private:
  std::size_t n_;
};

Tensor flatten(const LatentCode& z);
LatentCode unflatten(const Tensor& flat, std::size_t sub_vectors, std::size_t bins);

// Differentiable roll of a batch of flattened codes z[B, K*N], row b shifted
// by shifts[b]. N = 1 is accepted and is the identity.
ad::Var roll_batch(ad::Var z, std::span<const long> shifts, std::size_t sub_vectors, std::size_t bins);

// Roll applied row-wise to a plain [B, K*N] tensor.
Tensor roll_batch(const Tensor& z, std::span<const long> shifts, std::size_t sub_vectors, std::size_t bins);

}  // namespace rls::latent
