#pragma once

#include <array>
#include <vector>

namespace rlab {

struct Interval {
  double lo = -1.0;
  double hi = 1.0;

  double clamp(double u) const { return u < lo ? lo : (u > hi ? hi : u); }
  bool contains(double u) const { return u >= lo && u <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Uniform B-spline space of degree `order` with `grid_size` intervals on
/// `domain`. The knot vector is extended past both ends by `order` knots at
/// the interior spacing (not clamped), giving grid_size + order basis
/// functions:
///
///   t_j = lo + (j - order) * h,   j = 0 .. grid_size + 2*order
struct SplineSpec {
  int grid_size = 5;
  int order = 3;
  Interval domain{};

  int num_basis() const { return grid_size + order; }
  double step() const { return (domain.hi - domain.lo) / grid_size; }
  double knot(int j) const { return domain.lo + (j - order) * step(); }

  /// Throws std::invalid_argument unless G >= 1, k >= 0 and lo < hi.
  void validate() const;
  friend bool operator==(const SplineSpec&, const SplineSpec&) = default;
};

inline constexpr int kMaxSplineOrder = 7;

/// The (order + 1) basis functions that can be nonzero at a point.
/// values[r] and derivs[r] belong to basis index first + r.
struct BasisWindow {
  int first = 0;
  int count = 0;
  std::array<double, kMaxSplineOrder + 1> values{};
  std::array<double, kMaxSplineOrder + 1> derivs{};
};

/// Evaluates the nonzero basis functions (and their derivatives in u) at u by
/// the triangular Cox-de Boor recursion. u must lie inside the domain; the
/// right endpoint belongs to the last interval, so derivatives there are the
/// interior one-sided ones.
BasisWindow basis_window(double u, const SplineSpec& spec);

/// All grid_size + order basis values at u (zeros outside the window).
/// Throws std::invalid_argument if u is non-finite or outside the domain.
std::vector<double> bspline_basis(double u, const SplineSpec& spec);

/// Spline coefficients reproducing the monomial u^power exactly, for
/// power <= order, via the polar form (blossom) evaluated at each basis
/// function's interior knots.
std::vector<double> monomial_coefficients(const SplineSpec& spec, int power);

}  // namespace rlab
