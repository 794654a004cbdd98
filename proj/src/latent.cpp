#include "rls/latent.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rls::latent {

LatentCode::LatentCode(std::size_t sub_vectors, std::size_t bins)
    : LatentCode(sub_vectors, bins, std::vector<double>(sub_vectors * bins, 0.0)) {}

LatentCode::LatentCode(std::size_t sub_vectors, std::size_t bins, std::vector<double> values)
    : k_(sub_vectors), n_(bins), values_(std::move(values)) {
  if (k_ < 1 || n_ < 2)
    throw std::invalid_argument("latent code needs K >= 1 and N >= 2, got K=" + std::to_string(k_) +
                                " N=" + std::to_string(n_));
  if (values_.size() != k_ * n_)
    throw ShapeError("latent code K=" + std::to_string(k_) + " N=" + std::to_string(n_) + " given " +
                     std::to_string(values_.size()) + " values");
}

double LatentCode::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

std::size_t wrap_shift(long shift, std::size_t bins) {
  const auto n = static_cast<long>(bins);
  return static_cast<std::size_t>(((shift % n) + n) % n);
}

LatentCode roll_integer(const LatentCode& z, long shift) {
  const std::size_t n = z.bins();
  const std::size_t s = wrap_shift(shift, n);
  LatentCode out(z.sub_vectors(), n);
  for (std::size_t k = 0; k < z.sub_vectors(); ++k)
    for (std::size_t i = 0; i < n; ++i) out.at(k, (i + s) % n) = z.at(k, i);
  return out;
}

LatentCode roll_interpolative(const LatentCode& z, double shift) {
  const auto n = static_cast<double>(z.bins());
  double s = std::fmod(shift, n);
  if (s < 0.0) s += n;
  const double lo = std::floor(s);
  const double frac = s - lo;
  const auto base = static_cast<long>(lo);
  if (frac == 0.0) return roll_integer(z, base);

  const LatentCode a = roll_integer(z, base);
  const LatentCode b = roll_integer(z, base + 1);
  LatentCode out(z.sub_vectors(), z.bins());
  for (std::size_t i = 0; i < out.values().size(); ++i)
    out.values()[i] = (1.0 - frac) * a.values()[i] + frac * b.values()[i];
  return out;
}

Tensor permutation_matrix(std::size_t bins, long shift) {
  if (bins < 2) throw std::invalid_argument("permutation_matrix needs N >= 2");
  const std::size_t s = wrap_shift(shift, bins);
  Tensor r({bins, bins});
  for (std::size_t i = 0; i < bins; ++i) r[i * bins + (i + bins - s) % bins] = 1.0;
  return r;
}

AzimuthMapping::AzimuthMapping(std::size_t bins) : n_(bins) {
  if (bins < 2) throw std::invalid_argument("azimuth mapping needs N >= 2");
}

double AzimuthMapping::continuous(double theta_deg) const {
  double t = std::fmod(theta_deg, 360.0);
  if (t < 0.0) t += 360.0;
  const double s = t * static_cast<double>(n_) / 360.0;
  // fmod of a tiny negative angle can round up to exactly 360.
  return s >= static_cast<double>(n_) ? 0.0 : s;
}

std::size_t AzimuthMapping::nearest(double theta_deg) const {
  return static_cast<std::size_t>(std::llround(continuous(theta_deg))) % n_;
}

Tensor flatten(const LatentCode& z) {
  return Tensor({z.values().size()}, std::vector<double>(z.values().begin(), z.values().end()));
}

LatentCode unflatten(const Tensor& flat, std::size_t sub_vectors, std::size_t bins) {
  if (flat.size() != sub_vectors * bins)
    throw ShapeError("unflatten: " + to_string(flat.shape()) + " does not hold K=" + std::to_string(sub_vectors) +
                     " x N=" + std::to_string(bins));
  return LatentCode(sub_vectors, bins, std::vector<double>(flat.data().begin(), flat.data().end()));
}

namespace {

void check_batch(const Shape& shape, std::span<const long> shifts, std::size_t sub_vectors, std::size_t bins) {
  if (bins == 0 || sub_vectors == 0) throw std::invalid_argument("roll_batch: K and N must be positive");
  if (shape.size() != 2 || shape[1] != sub_vectors * bins)
    throw ShapeError("roll_batch: expected [B," + std::to_string(sub_vectors * bins) + "], got " + to_string(shape));
  if (shifts.size() != shape[0])
    throw ShapeError("roll_batch: " + std::to_string(shifts.size()) + " shifts for " + std::to_string(shape[0]) +
                     " rows");
}

// dst[row, k, (n + s) mod N] = src[row, k, n]; sign = -1 applies the inverse.
void roll_rows(std::span<const double> src, std::span<double> dst, std::span<const long> shifts,
               std::size_t sub_vectors, std::size_t bins, int sign, bool accumulate) {
  const std::size_t width = sub_vectors * bins;
  for (std::size_t r = 0; r < shifts.size(); ++r) {
    const std::size_t s = wrap_shift(sign * shifts[r], bins);
    for (std::size_t k = 0; k < sub_vectors; ++k) {
      const double* in = src.data() + r * width + k * bins;
      double* out = dst.data() + r * width + k * bins;
      for (std::size_t n = 0; n < bins; ++n) {
        const std::size_t to = (n + s) % bins;
        out[to] = accumulate ? out[to] + in[n] : in[n];
      }
    }
  }
}

}  // namespace

Tensor roll_batch(const Tensor& z, std::span<const long> shifts, std::size_t sub_vectors, std::size_t bins) {
  check_batch(z.shape(), shifts, sub_vectors, bins);
  Tensor out(z.shape());
  roll_rows(z.data(), out.data(), shifts, sub_vectors, bins, 1, false);
  return out;
}

ad::Var roll_batch(ad::Var z, std::span<const long> shifts, std::size_t sub_vectors, std::size_t bins) {
  check_batch(z.shape(), shifts, sub_vectors, bins);
  Tensor out(z.shape());
  roll_rows(z.value().data(), out.data(), shifts, sub_vectors, bins, 1, false);
  std::vector<long> saved(shifts.begin(), shifts.end());
  return z.graph().record(std::move(out), {z}, [saved = std::move(saved), sub_vectors, bins](ad::BackwardContext& c) {
    roll_rows(c.grad_out(), c.grad_in(0), saved, sub_vectors, bins, -1, true);
  });
}

}  // namespace rls::latent
