#include "rlab/spline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rlab {

void SplineSpec::validate() const {
  if (grid_size < 1) throw std::invalid_argument("spline: grid_size must be >= 1");
  if (order < 0) throw std::invalid_argument("spline: order must be >= 0");
  if (order > kMaxSplineOrder)
    throw std::invalid_argument("spline: order above " + std::to_string(kMaxSplineOrder) + " unsupported");
  if (!(domain.lo < domain.hi)) throw std::invalid_argument("spline: empty domain");
}

BasisWindow basis_window(double u, const SplineSpec& spec) {
  const int k = spec.order;
  const double h = spec.step();
  int interval = static_cast<int>(std::floor((u - spec.domain.lo) / h));
  if (interval < 0) interval = 0;
  if (interval > spec.grid_size - 1) interval = spec.grid_size - 1;
  // Knot span index: u in [t_m, t_{m+1}).
  const int m = interval + k;

  std::array<double, kMaxSplineOrder + 1> left{}, right{};
  std::array<double, kMaxSplineOrder + 1> n{};
  std::array<double, kMaxSplineOrder + 1> lower{};  // degree k-1 values
  n[0] = 1.0;
  for (int j = 1; j <= k; ++j) {
    if (j == k) lower = n;
    left[j] = u - spec.knot(m + 1 - j);
    right[j] = spec.knot(m + j) - u;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }

  BasisWindow w;
  w.first = m - k;
  w.count = k + 1;
  w.values = n;
  if (k > 0) {
    // Uniform knots: d/du B_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / h.
    for (int r = 0; r <= k; ++r) {
      const double a = r >= 1 ? lower[r - 1] : 0.0;
      const double b = r <= k - 1 ? lower[r] : 0.0;
      w.derivs[r] = (a - b) / h;
    }
  }
  return w;
}

std::vector<double> bspline_basis(double u, const SplineSpec& spec) {
  spec.validate();
  if (!std::isfinite(u)) throw std::invalid_argument("bspline_basis: non-finite input");
  if (!spec.domain.contains(u)) throw std::invalid_argument("bspline_basis: input outside the spline domain");
  std::vector<double> out(static_cast<std::size_t>(spec.num_basis()), 0.0);
  const BasisWindow w = basis_window(u, spec);
  for (int r = 0; r < w.count; ++r) out[static_cast<std::size_t>(w.first + r)] = w.values[r];
  return out;
}

std::vector<double> monomial_coefficients(const SplineSpec& spec, int power) {
  spec.validate();
  const int k = spec.order;
  if (power < 0 || power > k) throw std::invalid_argument("monomial_coefficients: power must lie in [0, order]");
  // Polar form of u^p in k arguments: e_p(t_1..t_k) / C(k, p).
  double binom = 1.0;
  for (int i = 1; i <= power; ++i) binom = binom * (k - power + i) / i;

  std::vector<double> coef(static_cast<std::size_t>(spec.num_basis()));
  for (int i = 0; i < spec.num_basis(); ++i) {
    std::array<double, kMaxSplineOrder + 1> e{};
    e[0] = 1.0;
    for (int a = 1; a <= k; ++a) {
      const double t = spec.knot(i + a);
      for (int p = std::min(a, power); p >= 1; --p) e[p] += t * e[p - 1];
    }
    coef[static_cast<std::size_t>(i)] = e[power] / binom;
  }
  return coef;
}

}  // namespace rlab
