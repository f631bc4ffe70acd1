#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "rlab/evaluation.hpp"
#include "rlab/rng.hpp"

using namespace rlab;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("rlab_eval_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

SurfaceSample surface_from(const GridSpec& grid, double (*f)(double, double)) {
  SurfaceSample s;
  s.grid = grid;
  for (std::size_t r = 0; r < grid.nv; ++r)
    for (std::size_t c = 0; c < grid.nx; ++c) {
      s.values.push_back(f(grid.x_at(c), grid.v_at(r)));
      s.truth.push_back(f(grid.x_at(c), grid.v_at(r)));
    }
  return s;
}

double coef_of(const SymbolicFit& fit, const std::string& name) {
  for (std::size_t i = 0; i < fit.names.size(); ++i)
    if (fit.names[i] == name) return fit.coefficients[i];
  throw std::out_of_range(name);
}

std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("oracle surface reproduces the analytical residual") {
  for (auto kind : {OscillatorKind::Duffing, OscillatorKind::VanDerPol}) {
    const OscillatorSpec spec(kind);
    const SurfaceSample s = sample_surface(ResidualBranch::oracle(kind), spec, GridSpec{}, kStateScale);
    REQUIRE(s.values.size() == 10000);
    for (std::size_t i = 0; i < s.values.size(); ++i) REQUIRE(std::abs(s.values[i] - s.truth[i]) < 1e-12);
    CHECK(discovery_r2(s) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("grid corners and Duffing truth at the edge") {
  const GridSpec g;
  CHECK(g.x_at(0) == -2.5);
  CHECK(g.x_at(99) == 2.5);
  CHECK(g.v_at(99) == 2.5);
  const SurfaceSample s =
      sample_surface(ResidualBranch::oracle(OscillatorKind::Duffing), OscillatorSpec(OscillatorKind::Duffing), g, kStateScale);
  CHECK(s.truth[99] == doctest::Approx(-4.6875));
  GridSpec bad;
  bad.nx = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero branch gives a zero surface and zero discovery score") {
  const SurfaceSample s = sample_surface(ResidualBranch::zeros(find_arch("mlp-small").arch),
                                         OscillatorSpec(OscillatorKind::Duffing), GridSpec{}, kStateScale);
  for (double v : s.values) REQUIRE(v == 0.0);
  // Truth is odd over a symmetric grid, so its mean is zero and R2 = 1 - SS/SS = 0.
  CHECK(std::abs(discovery_r2(s)) < 1e-12);
}

TEST_CASE("discovery score conventions") {
  GridSpec g;
  g.nx = 20;
  g.nv = 15;
  SurfaceSample s = surface_from(g, [](double x, double v) { return x * x * v - 0.5 * x; });
  CHECK(discovery_r2(s) == 1.0);

  double mean = 0.0;
  for (double t : s.truth) mean += t;
  mean /= static_cast<double>(s.truth.size());
  SurfaceSample m = s;
  for (double& v : m.values) v = mean;
  CHECK(std::abs(discovery_r2(m)) < 1e-12);

  SurfaceSample shifted = s;
  for (double& v : shifted.values) v += 0.3;
  CHECK(discovery_r2(shifted) < 1.0);

  SurfaceSample reordered = shifted;
  std::reverse(reordered.values.begin(), reordered.values.end());
  std::reverse(reordered.truth.begin(), reordered.truth.end());
  CHECK(discovery_r2(reordered) == doctest::Approx(discovery_r2(shifted)).epsilon(1e-12));

  SurfaceSample broken = s;
  broken.values[3] = std::numeric_limits<double>::quiet_NaN();
  broken.nonfinite_nodes = 1;
  CHECK(discovery_r2(broken) == -std::numeric_limits<double>::infinity());

  SurfaceSample flat = s;
  for (double& t : flat.truth) t = 2.0;
  CHECK_THROWS_AS(discovery_r2(flat), std::domain_error);
}

TEST_CASE("r2 score on a constant target") {
  const std::vector<double> t{1.0, 1.0, 1.0};
  CHECK(r2_score(t, t) == 1.0);
  CHECK(r2_score(t, std::vector<double>{1.0, 2.0, 1.0}) == 0.0);
  CHECK_THROWS_AS(r2_score(t, std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("one-step test error of the oracle is at roundoff") {
  for (auto kind : {OscillatorKind::Duffing, OscillatorKind::VanDerPol}) {
    DataConfig cfg;
    cfg.n_steps = 200;
    const OscillatorSpec spec(kind);
    const Dataset d = generate_dataset(spec, cfg);
    HybridSystem h;
    h.spec = spec;
    h.branch = ResidualBranch::oracle(kind);
    CHECK(test_mse(h, d.test) < 1e-16);
    CHECK(rollout_mse(h, d.test) < 1e-16);

    cfg.dt = 0.005;
    const Dataset fine = generate_dataset(spec, cfg);
    h.dt = 0.005;
    CHECK(test_mse(h, fine.test) < 1e-16);
  }
}

TEST_CASE("one-step test error of a zero VdP branch is positive") {
  DataConfig cfg;
  cfg.n_steps = 200;
  const OscillatorSpec spec(OscillatorKind::VanDerPol);
  const Dataset d = generate_dataset(spec, cfg);
  HybridSystem h;
  h.spec = spec;
  h.branch = ResidualBranch::zeros(find_arch("mlp-small").arch);
  CHECK(test_mse(h, d.test) > 0.0);
  CHECK_THROWS_AS(test_mse(h, {}), std::invalid_argument);
}

TEST_CASE("dictionary ordering and evaluation") {
  const CandidateDictionary d = CandidateDictionary::monomials(3);
  REQUIRE(d.size() == 10);
  const std::vector<std::string> want{"1", "x", "v", "x^2", "x*v", "v^2", "x^3", "x^2*v", "x*v^2", "v^3"};
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.term(i).name == want[i]);
  CHECK(d.evaluate(7, 2.0, 3.0) == 12.0);
  CHECK(d.evaluate(0, 2.0, 3.0) == 1.0);
}

TEST_CASE("stlsq recovers the Duffing cubic") {
  GridSpec g;
  g.nx = 50;
  g.nv = 50;
  const SurfaceSample s = surface_from(g, [](double x, double) { return -0.234 * x * x * x; });
  const SymbolicFit fit = stlsq_fit(s, CandidateDictionary::monomials(3));
  REQUIRE(fit.active().size() == 1);
  CHECK(coef_of(fit, "x^3") == doctest::Approx(-0.234).epsilon(1e-10));
  CHECK(fit.top_term() == "x^3");
  CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("stlsq recovers the VdP damping") {
  GridSpec g;
  g.nx = 40;
  g.nv = 40;
  const SurfaceSample s = surface_from(g, [](double x, double v) { return (1.0 - x * x) * v; });
  const SymbolicFit fit = stlsq_fit(s, CandidateDictionary::monomials(3));
  REQUIRE(fit.active().size() == 2);
  CHECK(coef_of(fit, "v") == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(coef_of(fit, "x^2*v") == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("stlsq of a zero surface is the empty fit") {
  GridSpec g;
  g.nx = 10;
  g.nv = 10;
  const SurfaceSample s = surface_from(g, [](double, double) { return 0.0; });
  const SymbolicFit fit = stlsq_fit(s, CandidateDictionary::monomials(3));
  CHECK(fit.active().empty());
  CHECK_FALSE(fit.top_term().has_value());
  CHECK(fit.describe() == "0");
  CHECK(fit.r2 == 1.0);
}

TEST_CASE("stlsq with zero threshold is ordinary least squares") {
  GridSpec g;
  g.nx = 12;
  g.nv = 9;
  const SurfaceSample s = surface_from(g, [](double x, double v) { return std::sin(x) * std::cos(0.7 * v) + 0.1 * v; });
  const CandidateDictionary d = CandidateDictionary::monomials(3);
  const SymbolicFit fit = stlsq_fit(s, d, 0.0, 1);

  Eigen::MatrixXd a(static_cast<Eigen::Index>(g.nodes()), static_cast<Eigen::Index>(d.size()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(g.nodes()));
  for (std::size_t r = 0; r < g.nv; ++r)
    for (std::size_t c = 0; c < g.nx; ++c) {
      const auto i = static_cast<Eigen::Index>(r * g.nx + c);
      const double x = g.x_at(c), v = g.v_at(r);
      for (std::size_t j = 0; j < d.size(); ++j)
        a(i, static_cast<Eigen::Index>(j)) = std::pow(x, d.term(j).px) * std::pow(v, d.term(j).pv);
      y(i) = s.values[static_cast<std::size_t>(i)];
    }
  const Eigen::VectorXd ols = (a.transpose() * a).ldlt().solve(a.transpose() * y);
  for (std::size_t j = 0; j < d.size(); ++j)
    CHECK(fit.coefficients[j] == doctest::Approx(ols(static_cast<Eigen::Index>(j))).epsilon(1e-8));
  CHECK(fit.r2 < 1.0);
  CHECK_THROWS_AS(stlsq_fit(s, d, -1.0), std::invalid_argument);
}

TEST_CASE("stlsq recovers random sparse polynomials") {
  Rng rng(5);
  GridSpec g;
  g.nx = 30;
  g.nv = 30;
  const CandidateDictionary d = CandidateDictionary::monomials(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> truth(d.size(), 0.0);
    for (int k = 0; k < 3; ++k) {
      const double mag = rng.uniform(0.2, 2.0);
      truth[rng.below(d.size())] = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
    }
    SurfaceSample s;
    s.grid = g;
    for (std::size_t r = 0; r < g.nv; ++r)
      for (std::size_t c = 0; c < g.nx; ++c) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) acc += truth[j] * d.evaluate(j, g.x_at(c), g.v_at(r));
        s.values.push_back(acc);
        s.truth.push_back(acc);
      }
    const SymbolicFit fit = stlsq_fit(s, d);
    for (std::size_t j = 0; j < d.size(); ++j) CHECK(std::abs(fit.coefficients[j] - truth[j]) < 1e-8);
  }
}

TEST_CASE("bootstrap interval conventions") {
  const std::vector<double> flat(7, 0.42);
  const ConfidenceInterval c = bootstrap_ci(flat);
  CHECK(c.mean == doctest::Approx(0.42));
  CHECK(c.lo == doctest::Approx(0.42));
  CHECK(c.hi == doctest::Approx(0.42));

  const std::vector<double> coin{0.0, 1.0};
  const ConfidenceInterval b = bootstrap_ci(coin);
  CHECK(b.mean == 0.5);
  CHECK(b.lo == 0.0);
  CHECK(b.hi == 1.0);

  CHECK_THROWS_AS(bootstrap_ci(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_ci(coin, 100, 1.5), std::invalid_argument);
}

TEST_CASE("bootstrap interval is ordered, deterministic and shrinks with sample size") {
  Rng rng(8);
  std::vector<double> small, large;
  for (int i = 0; i < 10; ++i) small.push_back(rng.normal());
  for (int i = 0; i < 1000; ++i) large.push_back(rng.normal());
  const ConfidenceInterval a = bootstrap_ci(small);
  const ConfidenceInterval b = bootstrap_ci(large);
  CHECK(a.lo <= a.mean);
  CHECK(a.mean <= a.hi);
  CHECK(b.half_width() < a.half_width());
  const ConfidenceInterval again = bootstrap_ci(small);
  CHECK(again.lo == a.lo);
  CHECK(again.hi == a.hi);
}

TEST_CASE("colormap endpoints") {
  using Rgb = std::array<unsigned char, 3>;
  CHECK(colormap(0.0, 0.0, 1.0) == Rgb{0, 0, 255});
  CHECK(colormap(0.5, 0.0, 1.0) == Rgb{255, 255, 255});
  CHECK(colormap(1.0, 0.0, 1.0) == Rgb{255, 0, 0});
  CHECK(colormap(3.0, 2.0, 2.0) == Rgb{255, 255, 255});
  CHECK(colormap(-5.0, 0.0, 1.0) == Rgb{0, 0, 255});
}

TEST_CASE("surface export round-trips a small grid") {
  GridSpec g;
  g.nx = 2;
  g.nv = 2;
  g.x = {-1.0, 1.0};
  g.v = {0.0, 2.0};
  SurfaceSample s;
  s.grid = g;
  s.values = {0.1, 0.2, 0.3, 0.4};
  s.truth = {-1.0, 0.0, 1.0, 2.0};
  const auto dir = fresh_dir("small");
  const SurfaceExport e = export_surface(s, dir);
  const auto csv = read_lines(e.csv);
  REQUIRE(csv.size() == 5);
  CHECK(csv[0] == "x,v,predicted,truth");
  const SurfaceSample back = read_surface_csv(e.csv);
  CHECK(back.grid.nx == 2);
  CHECK(back.grid.nv == 2);
  CHECK(back.grid.x.lo == -1.0);
  CHECK(back.grid.v.hi == 2.0);
  CHECK(back.values == s.values);
  CHECK(back.truth == s.truth);

  const auto ppm = read_lines(e.truth_ppm);
  REQUIRE(ppm.size() == 5);
  CHECK(ppm[0] == "P3");
  CHECK(ppm[1] == "2 2");
  CHECK(ppm[3] == "255 170 170 255 0 0");  // top row is the largest v
  CHECK(ppm[4] == "0 0 255 170 170 255");
  std::filesystem::remove_all(dir);
}

TEST_CASE("constant surface renders white") {
  GridSpec g;
  g.nx = 3;
  g.nv = 2;
  SurfaceSample s;
  s.grid = g;
  s.values.assign(6, 1.25);
  s.truth = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0};
  const auto dir = fresh_dir("flat");
  const SurfaceExport e = export_surface(s, dir);
  const auto ppm = read_lines(e.predicted_ppm);
  REQUIRE(ppm.size() == 5);
  CHECK(ppm[3] == "255 255 255 255 255 255 255 255 255");
  CHECK(ppm[4] == ppm[3]);
  CHECK(e.predicted_min == 1.25);
  CHECK(e.predicted_max == 1.25);
  std::filesystem::remove_all(dir);

  SurfaceSample broken = s;
  broken.values[0] = NAN;
  broken.nonfinite_nodes = 1;
  CHECK_THROWS_AS(export_surface(broken, fresh_dir("broken")), std::invalid_argument);
}

TEST_CASE("Duffing truth panel is bluest in the largest-x column") {
  const SurfaceSample s =
      sample_surface(ResidualBranch::oracle(OscillatorKind::Duffing), OscillatorSpec(OscillatorKind::Duffing), GridSpec{}, kStateScale);
  const auto dir = fresh_dir("duffing");
  const SurfaceExport e = export_surface(s, dir);
  CHECK(e.truth_min == doctest::Approx(-4.6875));
  CHECK(e.truth_max == doctest::Approx(4.6875));
  const auto ppm = read_lines(e.truth_ppm);
  REQUIRE(ppm.size() == 103);
  CHECK(ppm[3].substr(ppm[3].size() - 7) == "0 0 255");
  CHECK(ppm[3].rfind("255 0 0", 0) == 0);

  const auto side = read_lines(e.sidecar);
  REQUIRE(side.size() == 4);
  CHECK(side[3] == "panel truth min=" + format_double(e.truth_min) + " max=" + format_double(e.truth_max));
  const SurfaceSample back = read_surface_csv(e.csv);
  CHECK(back.grid.nx == 100);
  CHECK(back.grid.nv == 100);
  CHECK(back.truth == s.truth);
  CHECK(back.values == s.values);
  std::filesystem::remove_all(dir);
}
