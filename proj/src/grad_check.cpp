#include "rls/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace rls::ad {
namespace {

double evaluate(const ScalarFn& f, const Tensor& point) {
  Graph g;
  const Var out = f(g, g.reference(point));
  if (out.value().size() != 1) throw ShapeError("grad_check: function is not scalar, got " + to_string(out.shape()));
  return out.value()[0];
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  const double err = std::abs(analytic - numeric) / denom;
  return std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
}

GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double step, double tol,
                           std::span<const std::size_t> coordinates) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  Tensor x = point;
  x.set_requires_grad(true);
  {
    Graph g;
    const Var out = f(g, g.leaf(x));
    if (out.value().size() != 1)
      throw ShapeError("grad_check: function is not scalar, got " + to_string(out.shape()));
    g.backward(out);
  }

  GradCheckReport report;
  if (coordinates.empty()) {
    report.coordinates.resize(x.size());
    std::iota(report.coordinates.begin(), report.coordinates.end(), std::size_t{0});
  } else {
    report.coordinates.assign(coordinates.begin(), coordinates.end());
  }

  Tensor probe = point;
  for (const auto i : report.coordinates) {
    if (i >= probe.size()) throw std::out_of_range("grad_check: coordinate out of range");
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = evaluate(f, probe);
    probe[i] = orig - step;
    const double down = evaluate(f, probe);
    probe[i] = orig;

    const double numeric = (up - down) / (2.0 * step);
    const double analytic = x.grad()[i];
    const double err = relative_error(analytic, numeric);
    report.analytic.push_back(analytic);
    report.numeric.push_back(numeric);
    report.relative_error.push_back(err);
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  report.passed = report.max_relative_error < tol;
  return report;
}

}  // namespace rls::ad
