#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "rlab/hybridcell.hpp"
#include "rlab/rng.hpp"
#include "rlab/trainer.hpp"

using namespace rlab;

namespace {

Dataset small_dataset(OscillatorKind kind, std::size_t n_steps = 100, std::uint64_t seed = 0) {
  DataConfig cfg;
  cfg.n_train = 4;
  cfg.n_test = 2;
  cfg.n_steps = n_steps;
  cfg.seed = seed;
  return generate_dataset(OscillatorSpec(kind), cfg);
}

HybridSystem system_with(OscillatorKind kind, ResidualBranch branch, Integrator integrator = Integrator::RK4) {
  HybridSystem h;
  h.spec = OscillatorSpec(kind);
  h.branch = std::move(branch);
  h.integrator = integrator;
  return h;
}

std::vector<double> fd_gradient(const HybridSystem& h, const std::function<double(const HybridSystem&)>& loss,
                                double eps = 1e-5) {
  HybridSystem probe = h;
  std::vector<double> p(h.branch.params().begin(), h.branch.params().end());
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + eps;
    probe.branch.set_params(p);
    const double up = loss(probe);
    p[i] = keep - eps;
    probe.branch.set_params(p);
    const double dn = loss(probe);
    p[i] = keep;
    g[i] = (up - dn) / (2 * eps);
  }
  return g;
}

double max_abs_diff(const std::vector<State>& a, const std::vector<State>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max({worst, std::abs(a[i].x - b[i].x), std::abs(a[i].v - b[i].v)});
  return worst;
}

}  // namespace

TEST_CASE("hybrid_step hand examples") {
  const Arch mlp = find_arch("mlp-small").arch;
  const HybridSystem euler = [&] {
    HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::zeros(mlp), Integrator::Euler);
    h.dt = 0.1;
    return h;
  }();
  const State out = hybrid_step(euler, {1.0, 0.0});
  CHECK(out.x == 1.0);
  CHECK(out.v == doctest::Approx(-0.1).epsilon(1e-15));
  for (auto integ : {Integrator::Euler, Integrator::RK4})
    CHECK(hybrid_step(system_with(OscillatorKind::VanDerPol, ResidualBranch::zeros(mlp), integ), {0.0, 0.0}) ==
          State{0.0, 0.0});
}

TEST_CASE("oracle rollout reproduces the reference integrator") {
  for (auto kind : {OscillatorKind::Duffing, OscillatorKind::VanDerPol}) {
    const HybridSystem h = system_with(kind, ResidualBranch::oracle(kind));
    const Trajectory ref = integrate(OscillatorSpec(kind), {1.0, 0.0}, 0.01, 1000);
    const Trajectory got = rollout(h, {1.0, 0.0}, 1000);
    REQUIRE(got.states.size() == 1001);
    CHECK(max_abs_diff(got.states, ref.states) < 1e-9);
    CHECK(max_abs_diff(got.states, ref.states) < 1e-8);
  }
}

TEST_CASE("rollout edge cases") {
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("kan-small").arch, 3));
  const Trajectory one = rollout(h, {0.4, -0.2}, 1);
  CHECK(one.states[1] == hybrid_step(h, {0.4, -0.2}));
  const HybridSystem zero_vdp = system_with(OscillatorKind::VanDerPol, ResidualBranch::zeros(find_arch("mlp-tiny").arch));
  const Trajectory orbit = rollout(zero_vdp, {2.0, 0.0}, 1000);
  for (const auto& s : orbit.states) {
    REQUIRE(s.finite());
    REQUIRE(std::sqrt(squared_norm(s)) <= 2.01);
  }
  CHECK(squared_norm(orbit.states.back()) < squared_norm(orbit.states.front()));
}

TEST_CASE("the branch never reaches the kinematic equation") {
  Rng rng(1);
  for (const auto& e : arch_registry()) {
    const HybridSystem h = system_with(OscillatorKind::VanDerPol, ResidualBranch::initialized(e.arch, 2));
    for (int n = 0; n < 25; ++n) {
      const State s{rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
      CHECK(effective_rhs(h, s).x == s.v);
    }
  }
}

TEST_CASE("runaway states raise divergence") {
  const Arch arch = find_arch("mlp-tiny").arch;
  std::vector<double> p(param_count(arch), 0.0);
  p.back() = 1e9;
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch(arch, p));
  CHECK_THROWS_AS(hybrid_step(h, {0.0, 0.0}), DivergenceError);
  try {
    rollout(system_with(OscillatorKind::Duffing, ResidualBranch(arch, std::vector<double>(p.size(), 0.0))), {0, 0}, 3);
    p.back() = 2e7;
    rollout(system_with(OscillatorKind::Duffing, ResidualBranch(arch, p)), {0.0, 0.0}, 50);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() > 0);
  }
  const Dataset d = small_dataset(OscillatorKind::Duffing);
  const auto windows = make_windows(d.train, 10);
  try {
    bptt_loss(h, windows);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.window().has_value());
  }
}

TEST_CASE("windows are non-overlapping and drop the remainder") {
  const Dataset d = small_dataset(OscillatorKind::Duffing, 100);
  const auto w = make_windows(d.train, 30);
  CHECK(w.size() == 4 * 3);
  CHECK(w[1].start == d.train[0].states[30]);
  CHECK(w[1].targets.size() == 30);
  CHECK(w[1].targets.back() == d.train[0].states[60]);
  CHECK(make_windows(d.train, 50).size() == 8);
}

TEST_CASE("oracle closure") {
  for (auto kind : {OscillatorKind::Duffing, OscillatorKind::VanDerPol}) {
    const Dataset d = small_dataset(kind, 1000);
    const HybridSystem h = system_with(kind, ResidualBranch::oracle(kind));
    CHECK(teacher_forcing_loss(h, d.train).loss < 1e-16);
    const auto windows = make_windows(d.train, 50);
    CHECK(bptt_loss(h, windows).loss < 1e-14);
  }
}

TEST_CASE("a zero branch is biased on Duffing") {
  const Dataset d = small_dataset(OscillatorKind::Duffing);
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::zeros(find_arch("mlp-small").arch));
  CHECK(teacher_forcing_loss(h, d.train).loss > 0.0);
}

TEST_CASE("teacher forcing loss is the mean squared one-step error") {
  const Dataset d = small_dataset(OscillatorKind::VanDerPol, 20);
  const HybridSystem h = system_with(OscillatorKind::VanDerPol, ResidualBranch::initialized(find_arch("mlp-tiny").arch, 4));
  const auto tr = collect_transitions(d.train);
  double want = 0.0;
  for (const auto& t : tr) want += squared_norm(hybrid_step(h, t.from) - t.to);
  want /= static_cast<double>(tr.size());
  CHECK(teacher_forcing_loss(h, std::span<const Transition>(tr), false).loss == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("K=1 BPTT coincides with teacher forcing") {
  const Dataset d = small_dataset(OscillatorKind::Duffing, 60);
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("kan-small").arch, 6));
  const auto windows = make_windows(d.train, 1);
  const auto tr = collect_transitions(d.train);
  REQUIRE(windows.size() == tr.size());
  const LossGrad a = bptt_loss(h, windows);
  const LossGrad b = teacher_forcing_loss(h, std::span<const Transition>(tr));
  CHECK(std::abs(a.loss - b.loss) < 1e-12);
  for (std::size_t i = 0; i < a.grads.size(); ++i) CHECK(std::abs(a.grads[i] - b.grads[i]) < 1e-12);
}

TEST_CASE("L1 term enters the loss and its gradient") {
  KanArch k = std::get<KanArch>(find_arch("kan-very-small").arch);
  const Dataset d = small_dataset(OscillatorKind::Duffing, 30);
  const auto params = init_params(k, 1);
  const HybridSystem plain = system_with(OscillatorKind::Duffing, ResidualBranch(k, params));
  k.l1_weight = 1e-2;
  const HybridSystem sparse = system_with(OscillatorKind::Duffing, ResidualBranch(k, params));
  const auto tr = collect_transitions(d.train);
  const double gap = teacher_forcing_loss(sparse, std::span<const Transition>(tr)).loss -
                     teacher_forcing_loss(plain, std::span<const Transition>(tr)).loss;
  CHECK(gap == doctest::Approx(l1_penalty(sparse.branch)).epsilon(1e-9));
}

TEST_CASE("teacher forcing gradient matches central differences") {
  const Dataset d = small_dataset(OscillatorKind::Duffing, 200, 3);
  KanArch k = std::get<KanArch>(find_arch("kan-very-small").arch);
  k.l1_weight = 1e-3;
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(k, 2));
  const auto all = collect_transitions(d.train);
  const std::vector<Transition> batch{all[5], all[230], all[611]};
  const auto span = std::span<const Transition>(batch);
  const auto analytic = teacher_forcing_loss(h, span).grads;
  const auto numeric = fd_gradient(h, [&](const HybridSystem& p) { return teacher_forcing_loss(p, span, false).loss; });
  CHECK(max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("BPTT gradient matches central differences") {
  for (auto kind : {OscillatorKind::Duffing, OscillatorKind::VanDerPol}) {
    const Dataset d = small_dataset(kind, 200, 5);
    const HybridSystem h = system_with(kind, ResidualBranch::initialized(find_arch("kan-small").arch, 1));
    const auto all = make_windows(d.train, 5);
    const std::vector<RolloutWindow> windows{all[3], all[77]};
    const auto span = std::span<const RolloutWindow>(windows);
    const auto analytic = bptt_loss(h, span).grads;
    const auto numeric =
        fd_gradient(h, [&](const HybridSystem& p) { return bptt_loss(p, span, {false, true}).loss; });
    CHECK(max_relative_error(analytic, numeric) < 1e-3);
  }
}

TEST_CASE("Euler reverse pass matches central differences") {
  const Dataset d = small_dataset(OscillatorKind::VanDerPol, 100, 2);
  const HybridSystem h =
      system_with(OscillatorKind::VanDerPol, ResidualBranch::initialized(find_arch("mlp-tiny").arch, 3), Integrator::Euler);
  const auto all = make_windows(d.train, 5);
  const std::vector<RolloutWindow> windows{all[1], all[9]};
  const auto span = std::span<const RolloutWindow>(windows);
  const auto numeric = fd_gradient(h, [&](const HybridSystem& p) { return bptt_loss(p, span, {false, true}).loss; });
  CHECK(max_relative_error(bptt_loss(h, span).grads, numeric) < 1e-3);
}

TEST_CASE("single-step reverse pass returns the input sensitivity") {
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("kan-small").arch, 8));
  const State s{0.7, -0.4}, g{0.3, -1.1};
  StepTape tape;
  hybrid_step(h, s, tape);
  std::vector<double> grads(h.branch.size(), 0.0);
  const State back = hybrid_step_backward(h, tape, g, grads);
  const double eps = 1e-6;
  auto dot = [&](State in) {
    const State o = hybrid_step(h, in);
    return g.x * o.x + g.v * o.v;
  };
  CHECK(back.x == doctest::Approx((dot({s.x + eps, s.v}) - dot({s.x - eps, s.v})) / (2 * eps)).epsilon(1e-7));
  CHECK(back.v == doctest::Approx((dot({s.x, s.v + eps}) - dot({s.x, s.v - eps})) / (2 * eps)).epsilon(1e-7));
}

TEST_CASE("dropping the branch input path changes the BPTT gradient") {
  const Dataset d = small_dataset(OscillatorKind::Duffing, 200, 1);
  HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("kan-small").arch, 4));
  TrainConfig cfg;
  cfg.paradigm = Paradigm::Bptt;
  cfg.horizon = 10;
  cfg.steps = 10;
  cfg.batch = 8;
  cfg.learning_rate = 3e-3;
  h.branch.set_params(train(h, d, cfg).params);
  const auto windows = make_windows(d.train, 10);
  const auto span = std::span<const RolloutWindow>(windows);
  const auto full = bptt_loss(h, span).grads;
  const auto cut = bptt_loss(h, span, {true, false}).grads;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    num += (full[i] - cut[i]) * (full[i] - cut[i]);
    den += full[i] * full[i];
  }
  CHECK(std::sqrt(num / den) > 1e-3);
}

TEST_CASE("integrator names") {
  CHECK(parse_integrator("rk4") == Integrator::RK4);
  CHECK(parse_integrator("euler") == Integrator::Euler);
  CHECK(to_string(Integrator::Euler) == "euler");
  CHECK_THROWS_AS(parse_integrator("leapfrog"), std::invalid_argument);
}
