#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "rlab/trainer.hpp"

using namespace rlab;

namespace {

Dataset duffing_data(std::size_t n_steps = 1000) {
  DataConfig cfg;
  cfg.n_steps = n_steps;
  return generate_dataset(OscillatorSpec(OscillatorKind::Duffing), cfg);
}

HybridSystem system_with(OscillatorKind kind, ResidualBranch branch) {
  HybridSystem h;
  h.spec = OscillatorSpec(kind);
  h.branch = std::move(branch);
  return h;
}

}  // namespace

TEST_CASE("adam first step moves by the learning rate") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  AdamState st;
  adam_step(p, g, st, 1, cfg);
  // m_hat = 1 and v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  CHECK(std::abs(p[0] - (-0.1 / (1.0 + 1e-8))) < 1e-15);
  CHECK(std::abs(p[0] - (-0.1)) < 1e-8);
}

TEST_CASE("adam with zero gradients decays the moments only") {
  TrainConfig cfg;
  std::vector<double> p{1.5, -2.0};
  AdamState st{{0.2, -0.4}, {0.01, 0.04}};
  adam_step(p, std::vector<double>{0.0, 0.0}, st, 3, cfg);
  CHECK(st.m[0] == doctest::Approx(0.9 * 0.2));
  CHECK(st.v[1] == doctest::Approx(0.999 * 0.04));
  AdamState fresh;
  std::vector<double> q{1.5, -2.0};
  adam_step(q, std::vector<double>{0.0, 0.0}, fresh, 1, cfg);
  CHECK(q == std::vector<double>{1.5, -2.0});
}

TEST_CASE("adam clips by global norm") {
  TrainConfig cfg;
  cfg.grad_clip = 1.0;
  const std::vector<double> big{6.0, 8.0};  // norm 10
  const std::vector<double> small{0.6, 0.8};
  std::vector<double> a{0.3, 0.3}, b{0.3, 0.3};
  AdamState sa, sb;
  for (std::size_t t = 1; t <= 3; ++t) {
    adam_step(a, big, sa, t, cfg);
    adam_step(b, small, sb, t, cfg);
  }
  CHECK(a == b);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(sa.m[i] == doctest::Approx(sb.m[i]).epsilon(1e-15));
    CHECK(sa.v[i] == doctest::Approx(sb.v[i]).epsilon(1e-15));
  }
}

TEST_CASE("adam respects the mask and rejects bad input") {
  TrainConfig cfg;
  std::vector<double> p{1.0, 1.0};
  const std::vector<unsigned char> mask{1, 0};
  AdamState st;
  adam_step(p, std::vector<double>{1.0, 1.0}, st, 1, cfg, mask);
  CHECK(p[0] < 1.0);
  CHECK(p[1] == 1.0);
  CHECK_THROWS_AS(adam_step(p, std::vector<double>{NAN, 0.0}, st, 2, cfg), std::domain_error);
  CHECK_THROWS_AS(adam_step(p, std::vector<double>{0.0}, st, 2, cfg), std::invalid_argument);
  CHECK_THROWS_AS(adam_step(p, std::vector<double>{0.0, 0.0}, st, 0, cfg), std::invalid_argument);
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.steps = 1;
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(parse_paradigm("bptt") == Paradigm::Bptt);
  CHECK(parse_paradigm("tf") == Paradigm::TeacherForcing);
  CHECK_THROWS_AS(parse_paradigm("rl"), std::invalid_argument);
}

TEST_CASE("one step of training records one loss") {
  const Dataset d = duffing_data(100);
  TrainConfig cfg;
  cfg.steps = 1;
  const TrainReport r = train(system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("mlp-small").arch, 0)), d, cfg);
  CHECK(r.loss_history.size() == 1);
  CHECK(r.status == TrainStatus::MaxSteps);
  CHECK_FALSE(r.checkpoint.has_value());
}

TEST_CASE("training is deterministic and reduces the loss") {
  const Dataset d = duffing_data();
  TrainConfig cfg;
  cfg.seed = 3;
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("mlp-small").arch, 3));
  const TrainReport a = train(h, d, cfg);
  const TrainReport b = train(h, d, cfg);
  CHECK(a.params == b.params);
  CHECK(a.loss_history == b.loss_history);
  REQUIRE(a.loss_history.size() == 2000);
  HybridSystem trained = h;
  trained.branch.set_params(a.params);
  CHECK(teacher_forcing_loss(trained, d.train, false).loss < teacher_forcing_loss(h, d.train, false).loss);
  CHECK(a.checkpoint.has_value());
  CHECK(a.checkpoint_step == 2000);
}

TEST_CASE("median final loss halves for the Small MLP") {
  const Dataset d = duffing_data();
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    const HybridSystem h =
        system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("mlp-small").arch, seed));
    const TrainReport r = train(h, d, cfg);
    HybridSystem trained = h;
    trained.branch.set_params(r.params);
    ratios.push_back(teacher_forcing_loss(trained, d.train, false).loss / teacher_forcing_loss(h, d.train, false).loss);
  }
  std::nth_element(ratios.begin(), ratios.begin() + 2, ratios.end());
  CHECK(ratios[2] < 0.5);
}

TEST_CASE("diverging training ends Unstable with the failing step") {
  const Dataset d = duffing_data(200);
  TrainConfig cfg;
  cfg.paradigm = Paradigm::Bptt;
  cfg.batch = 4;
  cfg.steps = 300;
  cfg.learning_rate = 100.0;
  cfg.checkpoint_every = 1;
  const HybridSystem h = system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("kan-deep").arch, 0));
  const TrainReport r = train(h, d, cfg);
  REQUIRE(r.status == TrainStatus::Unstable);
  REQUIRE(r.failed_step.has_value());
  CHECK(r.loss_history.size() == *r.failed_step - 1);
  REQUIRE(r.checkpoint.has_value());
  CHECK(r.checkpoint_step == *r.failed_step - 1);
  for (double p : *r.checkpoint) CHECK(std::isfinite(p));
}

TEST_CASE("frozen base scales stay at zero through training") {
  KanArch k = std::get<KanArch>(find_arch("kan-very-small").arch);
  k.base_blend = false;
  const Dataset d = duffing_data(200);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.learning_rate = 3e-3;
  const TrainReport r = train(system_with(OscillatorKind::Duffing, ResidualBranch::initialized(k, 1)), d, cfg);
  const int per = k.params_per_edge();
  for (std::size_t e = 0; e < r.params.size() / per; ++e) CHECK(r.params[e * per + per - 2] == 0.0);
}

TEST_CASE("converged status uses the loss threshold") {
  const Dataset d = duffing_data(100);
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.converged_loss = 1e300;
  const TrainReport r = train(system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("mlp-tiny").arch, 0)), d, cfg);
  CHECK(r.status == TrainStatus::Converged);
}

TEST_CASE("report json carries history, status and checkpoint reference") {
  TrainReport r;
  r.loss_history = {3.0, 2.0};
  r.status = TrainStatus::Unstable;
  r.failed_step = 3;
  std::ostringstream os;
  write_report_json(os, r, "run/checkpoint.ckpt");
  const auto j = nlohmann::json::parse(os.str());
  CHECK(j.at("status") == "Unstable");
  CHECK(j.at("loss_history").size() == 2);
  CHECK(j.at("failed_step") == 3);
  CHECK(j.at("checkpoint") == "run/checkpoint.ckpt");
  CHECK(j.at("last_finite_checkpoint_step").is_null());
}

TEST_CASE("relative error conventions") {
  CHECK(max_relative_error(std::vector<double>{0.0, 0.0}, std::vector<double>{0.0, 0.0}) == 0.0);
  std::size_t worst = 9;
  const double e = max_relative_error(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.2}, &worst);
  CHECK(e == doctest::Approx(0.2 / 2.2));
  CHECK(worst == 1);
  CHECK_THROWS_AS(max_relative_error(std::vector<double>{1.0}, std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("gradient verification") {
  const Dataset d = duffing_data(200);
  GradCheckOptions opts;
  SUBCASE("zero MLP gives zero error") {
    const GradCheckReport r =
        verify_gradients(system_with(OscillatorKind::Duffing, ResidualBranch::zeros(find_arch("mlp-small").arch)), d, opts);
    CHECK(r.tf_max_rel < 1e-6);
    CHECK(r.passed);
  }
  SUBCASE("Config A KAN") {
    const GradCheckReport r = verify_gradients(
        system_with(OscillatorKind::Duffing, ResidualBranch::initialized(find_arch("kan-very-small").arch, 0)), d, opts);
    CHECK(r.tf_max_rel < 1e-4);
    CHECK(r.bptt_max_rel < 1e-3);
  }
}
