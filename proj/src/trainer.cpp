#include "rlab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

#include "rlab/rng.hpp"

namespace rlab {

std::string_view to_string(Paradigm paradigm) {
  return paradigm == Paradigm::Bptt ? "bptt" : "tf";
}

Paradigm parse_paradigm(std::string_view name) {
  if (name == "tf" || name == "teacher-forcing" || name == "teacher_forcing") return Paradigm::TeacherForcing;
  if (name == "bptt") return Paradigm::Bptt;
  throw std::invalid_argument("unknown paradigm '" + std::string(name) + "'");
}

std::string_view to_string(TrainStatus status) {
  switch (status) {
    case TrainStatus::Converged:
      return "Converged";
    case TrainStatus::MaxSteps:
      return "MaxSteps";
    case TrainStatus::Unstable:
      return "Unstable";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0)) throw std::invalid_argument("train: beta1 must lie in (0, 1)");
  if (!(adam.beta2 > 0.0 && adam.beta2 < 1.0)) throw std::invalid_argument("train: beta2 must lie in (0, 1)");
  if (!(adam.eps > 0.0)) throw std::invalid_argument("train: adam eps must be positive");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("train: grad_clip must be positive");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (paradigm == Paradigm::Bptt && horizon < 1) throw std::invalid_argument("train: horizon must be >= 1");
  if (checkpoint_every < 1) throw std::invalid_argument("train: checkpoint_every must be >= 1");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::size_t t,
               const TrainConfig& cfg, std::span<const unsigned char> mask) {
  const std::size_t n = params.size();
  if (grads.size() != n) throw std::invalid_argument("adam_step: size mismatch");
  if (!mask.empty() && mask.size() != n) throw std::invalid_argument("adam_step: mask size mismatch");
  if (t < 1) throw std::invalid_argument("adam_step: t must be >= 1");
  if (state.m.size() != n) state.m.assign(n, 0.0);
  if (state.v.size() != n) state.v.assign(n, 0.0);

  double norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(grads[i])) throw std::domain_error("adam_step: non-finite gradient");
    if (mask.empty() || mask[i]) norm2 += grads[i] * grads[i];
  }
  const double norm = std::sqrt(norm2);
  const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;

  const auto& a = cfg.adam;
  const double td = static_cast<double>(t);
  const double c1 = 1.0 - std::pow(a.beta1, td);
  const double c2 = 1.0 - std::pow(a.beta2, td);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double g = grads[i] * clip;
    state.m[i] = a.beta1 * state.m[i] + (1.0 - a.beta1) * g;
    state.v[i] = a.beta2 * state.v[i] + (1.0 - a.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + a.eps);
  }
}

namespace {

bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainReport train(const HybridSystem& system, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty training set");
  const auto started = std::chrono::steady_clock::now();

  HybridSystem h = system;
  const auto transitions = collect_transitions(data.train);
  const auto windows = cfg.paradigm == Paradigm::Bptt ? make_windows(data.train, cfg.horizon)
                                                      : std::vector<RolloutWindow>{};
  if (cfg.paradigm == Paradigm::TeacherForcing && transitions.empty())
    throw std::invalid_argument("train: no transitions");
  if (cfg.paradigm == Paradigm::Bptt && windows.empty())
    throw std::invalid_argument("train: trajectories shorter than the BPTT horizon");

  Rng rng(cfg.seed, Stream::Batch);
  const auto mask = trainable_mask(h.branch);
  AdamState adam;
  std::vector<double> params(h.branch.params().begin(), h.branch.params().end());
  std::vector<Transition> tf_batch(cfg.paradigm == Paradigm::TeacherForcing ? cfg.batch : 0);
  std::vector<RolloutWindow> bptt_batch(cfg.paradigm == Paradigm::Bptt ? cfg.batch : 0);

  auto batch_loss = [&]() {
    if (cfg.paradigm == Paradigm::TeacherForcing) {
      for (auto& tr : tf_batch) tr = transitions[rng.below(transitions.size())];
      return teacher_forcing_loss(h, std::span<const Transition>(tf_batch));
    }
    for (auto& w : bptt_batch) w = windows[rng.below(windows.size())];
    return bptt_loss(h, std::span<const RolloutWindow>(bptt_batch));
  };

  TrainReport report;
  report.loss_history.reserve(cfg.steps);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    bool done = false;
    for (int attempt = 0; attempt < 2 && !done; ++attempt) {
      try {
        LossGrad lg = batch_loss();
        if (!std::isfinite(lg.loss) || !all_finite(lg.grads)) continue;
        std::vector<double> next = params;
        AdamState next_adam = adam;
        adam_step(next, lg.grads, next_adam, step, cfg, mask);
        if (!all_finite(next)) continue;
        params = std::move(next);
        adam = std::move(next_adam);
        h.branch.set_params(params);
        report.loss_history.push_back(lg.loss);
        done = true;
      } catch (const DivergenceError&) {
      } catch (const std::domain_error&) {
      }
    }
    if (!done) {
      report.status = TrainStatus::Unstable;
      report.failed_step = step;
      break;
    }
    if (step % cfg.checkpoint_every == 0) {
      report.checkpoint = params;
      report.checkpoint_step = step;
    }
  }

  report.params.assign(h.branch.params().begin(), h.branch.params().end());
  if (report.status != TrainStatus::Unstable) {
    report.status = !report.loss_history.empty() && report.loss_history.back() <= cfg.converged_loss
                        ? TrainStatus::Converged
                        : TrainStatus::MaxSteps;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

void write_report_json(std::ostream& os, const TrainReport& report, const std::string& checkpoint_path) {
  nlohmann::json j;
  j["status"] = std::string(to_string(report.status));
  j["loss_history"] = report.loss_history;
  j["failed_step"] = report.failed_step ? nlohmann::json(*report.failed_step) : nlohmann::json(nullptr);
  j["checkpoint"] = checkpoint_path;
  j["last_finite_checkpoint_step"] =
      report.checkpoint ? nlohmann::json(report.checkpoint_step) : nlohmann::json(nullptr);
  j["wall_seconds"] = report.wall_seconds;
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- gradient check

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          std::size_t* worst_index) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("max_relative_error: size mismatch");
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  const double floor = 1e-5 * scale;
  double worst = 0.0;
  std::size_t where = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    if (diff == 0.0) continue;
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double rel = diff / denom;
    if (rel > worst) {
      worst = rel;
      where = i;
    }
  }
  if (worst_index != nullptr) *worst_index = where;
  return worst;
}

namespace {

// Smallest kink margin over every branch evaluation the step performs.
double step_margin(const HybridSystem& h, State s) {
  if (h.branch.kind() == BranchKind::Oracle) return std::numeric_limits<double>::infinity();
  StepTape tape;
  hybrid_step(h, s, tape);
  double m = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tape.stages; ++i) {
    const State p = tape.points[static_cast<std::size_t>(i)];
    m = std::min(m, kink_margin(h.branch, p.x / h.scale, p.v / h.scale));
  }
  return m;
}

// Draws `want` candidates whose kink margin clears `threshold`; falls back to
// the least-kinky candidates seen (an all-zero MLP sits on every hinge).
template <class Draw, class Margin>
auto pick_smooth(std::size_t want, double threshold, Draw&& draw, Margin&& margin) {
  using Candidate = decltype(draw());
  std::vector<std::pair<double, Candidate>> pool;
  std::vector<Candidate> chosen;
  for (std::size_t attempt = 0; attempt < 2000 && chosen.size() < want; ++attempt) {
    Candidate c = draw();
    const double m = margin(c);
    if (m >= threshold) {
      chosen.push_back(std::move(c));
    } else {
      pool.emplace_back(m, std::move(c));
    }
  }
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; chosen.size() < want && i < pool.size(); ++i) chosen.push_back(pool[i].second);
  return chosen;
}

template <class LossFn>
std::vector<double> central_differences(const HybridSystem& h, double eps, LossFn&& loss) {
  HybridSystem probe = h;
  std::vector<double> p(h.branch.params().begin(), h.branch.params().end());
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + eps;
    probe.branch.set_params(p);
    const double up = loss(probe);
    p[i] = keep - eps;
    probe.branch.set_params(p);
    const double down = loss(probe);
    p[i] = keep;
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

}  // namespace

GradCheckReport verify_gradients(const HybridSystem& system, const Dataset& data, const GradCheckOptions& opts) {
  if (opts.n_points < 1) throw std::invalid_argument("verify_gradients: n_points must be >= 1");
  if (data.train.empty()) throw std::invalid_argument("verify_gradients: empty training set");
  for (const auto& t : data.train)
    if (t.states.size() <= opts.horizon) throw std::invalid_argument("verify_gradients: trajectories too short");

  GradCheckReport report;
  Rng rng(opts.seed, Stream::Check);
  auto draw_transition = [&] {
    const auto& traj = data.train[rng.below(data.train.size())];
    const std::size_t i = rng.below(traj.states.size() - 1);
    return Transition{traj.states[i], traj.states[i + 1]};
  };
  auto draw_window = [&] {
    const auto& traj = data.train[rng.below(data.train.size())];
    const std::size_t start = rng.below(traj.states.size() - opts.horizon);
    RolloutWindow w;
    w.start = traj.states[start];
    w.targets.assign(traj.states.begin() + static_cast<std::ptrdiff_t>(start + 1),
                     traj.states.begin() + static_cast<std::ptrdiff_t>(start + 1 + opts.horizon));
    return w;
  };

  const auto transitions = pick_smooth(opts.n_points, opts.kink_margin, draw_transition,
                                       [&](const Transition& t) { return step_margin(system, t.from); });
  const std::span<const Transition> tf_span(transitions);
  const auto tf = teacher_forcing_loss(system, tf_span);
  const auto tf_fd = central_differences(system, opts.epsilon, [&](const HybridSystem& h) {
    return teacher_forcing_loss(h, tf_span, false).loss;
  });
  report.tf_max_rel = max_relative_error(tf.grads, tf_fd, &report.tf_worst_index);

  const auto windows = pick_smooth(opts.n_points, opts.kink_margin, draw_window, [&](const RolloutWindow& w) {
        double m = std::numeric_limits<double>::infinity();
        State s = w.start;
        for (std::size_t k = 0; k < w.targets.size(); ++k) {
          m = std::min(m, step_margin(system, s));
          s = hybrid_step(system, s);
        }
        return m;
      });
  const std::span<const RolloutWindow> bptt_span(windows);
  const auto bptt = bptt_loss(system, bptt_span);
  const auto bptt_fd = central_differences(system, opts.epsilon, [&](const HybridSystem& h) {
    return bptt_loss(h, bptt_span, BpttOptions{false, true}).loss;
  });
  report.bptt_max_rel = max_relative_error(bptt.grads, bptt_fd, &report.bptt_worst_index);

  report.passed = report.tf_max_rel < opts.tf_tolerance && report.bptt_max_rel < opts.bptt_tolerance;
  return report;
}

}  // namespace rlab
