#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlab/dynamics.hpp"
#include "rlab/hybridcell.hpp"
#include "rlab/netcore.hpp"
#include "rlab/spline.hpp"

namespace rlab {

/// Inclusive uniform grid; row r has v = v_at(r), column c has x = x_at(c).
struct GridSpec {
  Interval x{-2.5, 2.5};
  Interval v{-2.5, 2.5};
  std::size_t nx = 100;
  std::size_t nv = 100;

  double x_at(std::size_t c) const;
  double v_at(std::size_t r) const;
  std::size_t nodes() const { return nx * nv; }
  void validate() const;
};

/// Row-major predicted and analytical residual surfaces over a grid.
struct SurfaceSample {
  GridSpec grid;
  std::vector<double> values;
  std::vector<double> truth;
  std::size_t nonfinite_nodes = 0;

  bool finite() const { return nonfinite_nodes == 0; }
  double value(std::size_t r, std::size_t c) const { return values[r * grid.nx + c]; }
};

SurfaceSample sample_surface(const ResidualBranch& branch, const OscillatorSpec& spec, const GridSpec& grid,
                             double scale);

/// 1 - SS_res / SS_tot against the truth surface. -infinity if the surface
/// has non-finite nodes; throws std::domain_error on a constant truth.
double discovery_r2(const SurfaceSample& s);

/// Coefficient of determination of `predicted` against `target`. A constant
/// target gives 1 for an exact match and 0 otherwise.
double r2_score(std::span<const double> target, std::span<const double> predicted);

/// Mean squared one-step (teacher-forced) error over held-out transitions;
/// +infinity if any step diverges.
double test_mse(const HybridSystem& system, const std::vector<Trajectory>& test);

/// Mean squared error of free rollouts from each test trajectory's first
/// state; +infinity on divergence.
double rollout_mse(const HybridSystem& system, const std::vector<Trajectory>& test);

/// Monomials x^px v^pv of total degree <= max_degree, ordered by degree and
/// then by descending power of x: 1, x, v, x^2, x*v, v^2, x^3, ...
class CandidateDictionary {
 public:
  struct Term {
    std::string name;
    int px = 0;
    int pv = 0;
  };

  static CandidateDictionary monomials(int max_degree = 3);

  std::size_t size() const { return terms_.size(); }
  const Term& term(std::size_t i) const { return terms_[i]; }
  const std::vector<Term>& terms() const { return terms_; }
  double evaluate(std::size_t i, double x, double v) const;

 private:
  std::vector<Term> terms_;
};

struct SymbolicFit {
  std::vector<std::string> names;
  std::vector<double> coefficients;  // inactive terms are exactly 0
  double r2 = 0.0;
  std::size_t iterations = 0;

  std::vector<std::pair<std::string, double>> active() const;
  /// Name of the active term with the largest |coefficient|.
  std::optional<std::string> top_term() const;
  /// "name:coef;name:coef" with %.6g coefficients, "0" for the empty fit.
  std::string describe() const;
};

/// Sequentially thresholded least squares of the surface's predicted values
/// on the dictionary evaluated at the grid nodes (raw x, v).
SymbolicFit stlsq_fit(const SurfaceSample& s, const CandidateDictionary& dict, double threshold = 0.05,
                      std::size_t max_iters = 10);

struct ConfidenceInterval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double half_width() const { return 0.5 * (hi - lo); }
};

/// Percentile bootstrap of the mean (linear interpolation between order
/// statistics). `mean` is the plain sample mean.
ConfidenceInterval bootstrap_ci(std::span<const double> values, std::size_t n_resamples = 10000,
                                double level = 0.95, std::uint64_t seed = 0);

/// Linear blue-white-red map: t = (value - lo) / (hi - lo); t = 0 is
/// (0, 0, 255), t = 0.5 is white, t = 1 is (255, 0, 0). lo == hi maps to white.
std::array<unsigned char, 3> colormap(double value, double lo, double hi);

struct SurfaceExport {
  std::filesystem::path csv;
  std::filesystem::path predicted_ppm;
  std::filesystem::path truth_ppm;
  std::filesystem::path sidecar;
  double predicted_min = 0.0, predicted_max = 0.0;
  double truth_min = 0.0, truth_max = 0.0;
};

/// Writes surface.csv (x,v,predicted,truth), predicted.ppm and truth.ppm
/// (plain P3, top image row = largest v) and colormap.txt with each panel's
/// own min/max.
SurfaceExport export_surface(const SurfaceSample& s, const std::filesystem::path& dir);
SurfaceSample read_surface_csv(const std::filesystem::path& path);

}  // namespace rlab
