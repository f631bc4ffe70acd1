#include "rlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "rlab/rng.hpp"

namespace rlab {

double GridSpec::x_at(std::size_t c) const {
  return x.lo + (x.hi - x.lo) * static_cast<double>(c) / static_cast<double>(nx - 1);
}

double GridSpec::v_at(std::size_t r) const {
  return v.lo + (v.hi - v.lo) * static_cast<double>(r) / static_cast<double>(nv - 1);
}

void GridSpec::validate() const {
  if (nx < 2 || nv < 2) throw std::invalid_argument("grid: need at least 2 nodes per axis");
  if (!(x.lo < x.hi) || !(v.lo < v.hi)) throw std::invalid_argument("grid: degenerate range");
}

SurfaceSample sample_surface(const ResidualBranch& branch, const OscillatorSpec& spec, const GridSpec& grid,
                             double scale) {
  grid.validate();
  SurfaceSample s;
  s.grid = grid;
  s.values.resize(grid.nodes());
  s.truth.resize(grid.nodes());
  BranchCache cache;
  for (std::size_t r = 0; r < grid.nv; ++r) {
    const double v = grid.v_at(r);
    for (std::size_t c = 0; c < grid.nx; ++c) {
      const double x = grid.x_at(c);
      const std::size_t i = r * grid.nx + c;
      s.values[i] = residual_forward(branch, scale, {x, v}, cache);
      s.truth[i] = spec.true_residual(x, v);
      if (!std::isfinite(s.values[i])) ++s.nonfinite_nodes;
    }
  }
  return s;
}

double discovery_r2(const SurfaceSample& s) {
  if (!s.finite()) return -std::numeric_limits<double>::infinity();
  double mean = 0.0;
  for (double t : s.truth) mean += t;
  mean /= static_cast<double>(s.truth.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < s.truth.size(); ++i) {
    const double r = s.values[i] - s.truth[i];
    const double d = s.truth[i] - mean;
    ss_res += r * r;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) throw std::domain_error("discovery_r2: truth surface has zero variance");
  return 1.0 - ss_res / ss_tot;
}

double r2_score(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size() || target.empty()) throw std::invalid_argument("r2_score: size mismatch");
  double mean = 0.0;
  for (double t : target) mean += t;
  mean /= static_cast<double>(target.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double r = predicted[i] - target[i];
    const double d = target[i] - mean;
    ss_res += r * r;
    ss_tot += d * d;
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

double test_mse(const HybridSystem& system, const std::vector<Trajectory>& test) {
  if (test.empty()) throw std::invalid_argument("test_mse: empty test set");
  double sum = 0.0;
  std::size_t n = 0;
  StepTape tape;
  for (const auto& traj : test) {
    for (std::size_t i = 0; i + 1 < traj.states.size(); ++i) {
      try {
        sum += squared_norm(hybrid_step(system, traj.states[i], tape) - traj.states[i + 1]);
      } catch (const DivergenceError&) {
        return std::numeric_limits<double>::infinity();
      }
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("test_mse: no transitions");
  return sum / static_cast<double>(n);
}

double rollout_mse(const HybridSystem& system, const std::vector<Trajectory>& test) {
  if (test.empty()) throw std::invalid_argument("rollout_mse: empty test set");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& traj : test) {
    if (traj.states.size() < 2) continue;
    Trajectory pred;
    try {
      pred = rollout(system, traj.states.front(), traj.states.size() - 1);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    }
    for (std::size_t i = 1; i < traj.states.size(); ++i) sum += squared_norm(pred.states[i] - traj.states[i]);
    n += traj.states.size() - 1;
  }
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------- STLSQ

CandidateDictionary CandidateDictionary::monomials(int max_degree) {
  if (max_degree < 0) throw std::invalid_argument("dictionary: negative degree");
  auto power = [](const char* var, int p) -> std::string {
    if (p == 0) return "";
    return p == 1 ? std::string(var) : std::string(var) + "^" + std::to_string(p);
  };
  CandidateDictionary d;
  for (int deg = 0; deg <= max_degree; ++deg) {
    for (int pv = 0; pv <= deg; ++pv) {
      const int px = deg - pv;
      std::string name;
      if (deg == 0) {
        name = "1";
      } else {
        name = power("x", px);
        if (pv > 0) name += (name.empty() ? "" : "*") + power("v", pv);
      }
      d.terms_.push_back({name, px, pv});
    }
  }
  return d;
}

double CandidateDictionary::evaluate(std::size_t i, double x, double v) const {
  const Term& t = terms_.at(i);
  double out = 1.0;
  for (int k = 0; k < t.px; ++k) out *= x;
  for (int k = 0; k < t.pv; ++k) out *= v;
  return out;
}

std::vector<std::pair<std::string, double>> SymbolicFit::active() const {
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < coefficients.size(); ++i)
    if (coefficients[i] != 0.0) out.emplace_back(names[i], coefficients[i]);
  return out;
}

std::optional<std::string> SymbolicFit::top_term() const {
  std::optional<std::string> best;
  double best_abs = 0.0;
  for (std::size_t i = 0; i < coefficients.size(); ++i) {
    if (std::abs(coefficients[i]) > best_abs) {
      best_abs = std::abs(coefficients[i]);
      best = names[i];
    }
  }
  return best;
}

std::string SymbolicFit::describe() const {
  const auto terms = active();
  if (terms.empty()) return "0";
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < terms.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g", terms[i].second);
    if (i) out += ';';
    out += terms[i].first + ":" + buf;
  }
  return out;
}

SymbolicFit stlsq_fit(const SurfaceSample& s, const CandidateDictionary& dict, double threshold,
                      std::size_t max_iters) {
  if (!(threshold >= 0.0)) throw std::invalid_argument("stlsq_fit: threshold must be nonnegative");
  if (!s.finite()) throw std::invalid_argument("stlsq_fit: surface has non-finite nodes");
  const std::size_t n = s.grid.nodes();
  const std::size_t m = dict.size();

  Eigen::MatrixXd theta(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < s.grid.nv; ++r)
    for (std::size_t c = 0; c < s.grid.nx; ++c)
      for (std::size_t j = 0; j < m; ++j)
        theta(static_cast<Eigen::Index>(r * s.grid.nx + c), static_cast<Eigen::Index>(j)) =
            dict.evaluate(j, s.grid.x_at(c), s.grid.v_at(r));
  const Eigen::Map<const Eigen::VectorXd> y(s.values.data(), static_cast<Eigen::Index>(n));

  auto solve_on = [&](const std::vector<std::size_t>& support) {
    Eigen::MatrixXd sub(theta.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t k = 0; k < support.size(); ++k)
      sub.col(static_cast<Eigen::Index>(k)) = theta.col(static_cast<Eigen::Index>(support[k]));
    const Eigen::VectorXd sol = sub.colPivHouseholderQr().solve(y);
    std::vector<double> coef(m, 0.0);
    for (std::size_t k = 0; k < support.size(); ++k) coef[support[k]] = sol(static_cast<Eigen::Index>(k));
    return coef;
  };

  SymbolicFit fit;
  for (const auto& t : dict.terms()) fit.names.push_back(t.name);

  std::vector<std::size_t> support(m);
  for (std::size_t j = 0; j < m; ++j) support[j] = j;
  std::vector<double> coef = solve_on(support);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<std::size_t> kept;
    for (std::size_t j : support)
      if (std::abs(coef[j]) >= threshold) kept.push_back(j);
    ++fit.iterations;
    if (kept.empty()) {
      coef.assign(m, 0.0);
      support.clear();
      break;
    }
    const bool unchanged = kept == support;
    support = std::move(kept);
    coef = solve_on(support);
    if (unchanged) break;
  }
  fit.coefficients = coef;

  std::vector<double> pred(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j : support) acc += coef[j] * theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    pred[i] = acc;
  }
  fit.r2 = r2_score(s.values, pred);
  return fit;
}

// ---------------------------------------------------------------- bootstrap

ConfidenceInterval bootstrap_ci(std::span<const double> values, std::size_t n_resamples, double level,
                                std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap_ci: no values");
  if (n_resamples < 1) throw std::invalid_argument("bootstrap_ci: need at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("bootstrap_ci: level must lie in (0, 1)");

  const std::size_t n = values.size();
  ConfidenceInterval ci;
  for (double v : values) ci.mean += v;
  ci.mean /= static_cast<double>(n);

  Rng rng(seed, Stream::Bootstrap);
  std::vector<double> means(n_resamples);
  for (auto& m : means) {
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) sum += values[rng.below(n)];
    m = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());

  auto quantile = [&](double p) {
    const double h = p * static_cast<double>(means.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, means.size() - 1);
    const double a = means[lo], b = means[hi];
    if (a == b) return a;
    return a + (h - static_cast<double>(lo)) * (b - a);
  };
  const double alpha = 0.5 * (1.0 - level);
  ci.lo = quantile(alpha);
  ci.hi = quantile(1.0 - alpha);
  return ci;
}

// ---------------------------------------------------------------- export

std::array<unsigned char, 3> colormap(double value, double lo, double hi) {
  double t = hi > lo ? (value - lo) / (hi - lo) : 0.5;
  t = std::clamp(t, 0.0, 1.0);
  auto level = [](double f) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(f, 0.0, 1.0))); };
  if (t <= 0.5) {
    const unsigned char w = level(2.0 * t);
    return {w, w, 255};
  }
  const unsigned char w = level(2.0 - 2.0 * t);
  return {255, w, w};
}

namespace {

void write_ppm(const std::filesystem::path& path, const GridSpec& grid, const std::vector<double>& values, double lo,
               double hi) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << "P3\n" << grid.nx << ' ' << grid.nv << "\n255\n";
  for (std::size_t rr = 0; rr < grid.nv; ++rr) {
    const std::size_t r = grid.nv - 1 - rr;
    for (std::size_t c = 0; c < grid.nx; ++c) {
      const auto rgb = colormap(values[r * grid.nx + c], lo, hi);
      os << static_cast<int>(rgb[0]) << ' ' << static_cast<int>(rgb[1]) << ' ' << static_cast<int>(rgb[2])
         << (c + 1 == grid.nx ? '\n' : ' ');
    }
  }
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

}  // namespace

SurfaceExport export_surface(const SurfaceSample& s, const std::filesystem::path& dir) {
  if (!s.finite()) throw std::invalid_argument("export_surface: surface has non-finite nodes");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create '" + dir.string() + "': " + ec.message());

  SurfaceExport out;
  out.csv = dir / "surface.csv";
  out.predicted_ppm = dir / "predicted.ppm";
  out.truth_ppm = dir / "truth.ppm";
  out.sidecar = dir / "colormap.txt";

  {
    std::ofstream os(out.csv);
    if (!os) throw std::runtime_error("cannot open '" + out.csv.string() + "' for writing");
    os << "x,v,predicted,truth\n";
    for (std::size_t r = 0; r < s.grid.nv; ++r)
      for (std::size_t c = 0; c < s.grid.nx; ++c) {
        const std::size_t i = r * s.grid.nx + c;
        os << format_double(s.grid.x_at(c)) << ',' << format_double(s.grid.v_at(r)) << ','
           << format_double(s.values[i]) << ',' << format_double(s.truth[i]) << '\n';
      }
    if (!os) throw std::runtime_error("write failed for '" + out.csv.string() + "'");
  }

  const auto [pmin, pmax] = std::minmax_element(s.values.begin(), s.values.end());
  const auto [tmin, tmax] = std::minmax_element(s.truth.begin(), s.truth.end());
  out.predicted_min = *pmin;
  out.predicted_max = *pmax;
  out.truth_min = *tmin;
  out.truth_max = *tmax;
  write_ppm(out.predicted_ppm, s.grid, s.values, out.predicted_min, out.predicted_max);
  write_ppm(out.truth_ppm, s.grid, s.truth, out.truth_min, out.truth_max);

  std::ofstream os(out.sidecar);
  if (!os) throw std::runtime_error("cannot open '" + out.sidecar.string() + "' for writing");
  os << "colormap linear blue-white-red; t = (value - min) / (max - min); t=0 -> 0 0 255, t=0.5 -> 255 255 255, "
        "t=1 -> 255 0 0; each panel uses its own min/max\n";
  os << "grid nx=" << s.grid.nx << " nv=" << s.grid.nv << " x=[" << format_double(s.grid.x.lo) << ','
     << format_double(s.grid.x.hi) << "] v=[" << format_double(s.grid.v.lo) << ',' << format_double(s.grid.v.hi)
     << "] top row = max v\n";
  os << "panel predicted min=" << format_double(out.predicted_min) << " max=" << format_double(out.predicted_max)
     << '\n';
  os << "panel truth min=" << format_double(out.truth_min) << " max=" << format_double(out.truth_max) << '\n';
  if (!os) throw std::runtime_error("write failed for '" + out.sidecar.string() + "'");
  return out;
}

SurfaceSample read_surface_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line) || line != "x,v,predicted,truth")
    throw std::invalid_argument("surface csv: unexpected header");

  std::vector<double> xs, vs;
  SurfaceSample s;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[4];
    for (auto& tok : f)
      if (!std::getline(ss, tok, ',')) throw std::invalid_argument("surface csv: malformed row '" + line + "'");
    xs.push_back(parse_double(f[0]));
    vs.push_back(parse_double(f[1]));
    s.values.push_back(parse_double(f[2]));
    s.truth.push_back(parse_double(f[3]));
  }
  if (xs.empty()) throw std::invalid_argument("surface csv: no rows");
  std::size_t nx = 1;
  while (nx < vs.size() && vs[nx] == vs[0]) ++nx;
  if (vs.size() % nx != 0) throw std::invalid_argument("surface csv: ragged grid");
  s.grid.nx = nx;
  s.grid.nv = vs.size() / nx;
  s.grid.x = {xs.front(), xs[nx - 1]};
  s.grid.v = {vs.front(), vs.back()};
  for (double v : s.values)
    if (!std::isfinite(v)) ++s.nonfinite_nodes;
  return s;
}

}  // namespace rlab
