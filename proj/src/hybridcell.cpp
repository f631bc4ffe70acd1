#include "rlab/hybridcell.hpp"

#include <stdexcept>
#include <string>

namespace rlab {

std::string_view to_string(Integrator integrator) {
  return integrator == Integrator::RK4 ? "rk4" : "euler";
}

Integrator parse_integrator(std::string_view name) {
  if (name == "rk4" || name == "RK4") return Integrator::RK4;
  if (name == "euler" || name == "Euler") return Integrator::Euler;
  throw std::invalid_argument("unknown integrator '" + std::string(name) + "'");
}

State effective_rhs(const HybridSystem& h, State s) {
  return {s.v, h.spec.known_accel(s) + residual_value(h.branch, h.scale, s.x, s.v)};
}

State hybrid_step(const HybridSystem& h, State s) {
  StepTape tape;
  return hybrid_step(h, s, tape);
}

State hybrid_step(const HybridSystem& h, State s, StepTape& tape) {
  tape.stages = 0;
  auto rhs = [&](State p) {
    const int i = tape.stages++;
    tape.points[static_cast<std::size_t>(i)] = p;
    const double r = residual_forward(h.branch, h.scale, p, tape.caches[static_cast<std::size_t>(i)]);
    return State{p.v, h.spec.known_accel(p) + r};
  };

  State out;
  if (h.integrator == Integrator::RK4) {
    out = rk4_step(rhs, s, h.dt);
  } else {
    const State k1 = rhs(s);
    out = s + h.dt * k1;
  }
  if (!out.finite()) throw DivergenceError("hybrid_step: non-finite state", 0);
  if (out.max_abs() > kDivergenceBound) throw DivergenceError("hybrid_step: state left the divergence bound", 0);
  return out;
}

State hybrid_step_backward(const HybridSystem& h, const StepTape& tape, State g_out, std::span<double> grads,
                           bool through_branch_inputs) {
  // Pull a stage-slope gradient (d/dk) back to its evaluation point.
  auto stage_back = [&](int i, State gk) {
    const auto idx = static_cast<std::size_t>(i);
    const State p = tape.points[idx];
    const Partials known = h.spec.known_accel_partials(p);
    Partials branch = residual_backward(h.branch, h.scale, tape.caches[idx], gk.v, grads);
    if (!through_branch_inputs) branch = {};
    return State{gk.v * known.dx + branch.dx, gk.x + gk.v * known.dv + branch.dv};
  };

  const double dt = h.dt;
  if (h.integrator == Integrator::Euler) return g_out + stage_back(0, dt * g_out);

  const double half = 0.5 * dt;
  const double sixth = dt / 6.0;
  State gs = g_out;
  State gk1 = sixth * g_out;
  State gk2 = (2.0 * sixth) * g_out;
  State gk3 = (2.0 * sixth) * g_out;
  const State gk4 = sixth * g_out;

  const State gp4 = stage_back(3, gk4);
  gs = gs + gp4;
  gk3 = gk3 + dt * gp4;
  const State gp3 = stage_back(2, gk3);
  gs = gs + gp3;
  gk2 = gk2 + half * gp3;
  const State gp2 = stage_back(1, gk2);
  gs = gs + gp2;
  gk1 = gk1 + half * gp2;
  return gs + stage_back(0, gk1);
}

std::vector<Transition> collect_transitions(const std::vector<Trajectory>& trajectories) {
  std::vector<Transition> out;
  for (const auto& traj : trajectories)
    for (std::size_t i = 0; i + 1 < traj.states.size(); ++i) out.push_back({traj.states[i], traj.states[i + 1]});
  return out;
}

LossGrad teacher_forcing_loss(const HybridSystem& h, std::span<const Transition> batch, bool with_grads) {
  if (batch.empty()) throw std::invalid_argument("teacher_forcing_loss: empty training set");
  LossGrad out;
  if (with_grads) out.grads.assign(h.branch.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  StepTape tape;
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    State pred;
    try {
      pred = hybrid_step(h, batch[i].from, tape);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("teacher forcing: ") + e.what(), i);
    }
    const State err = pred - batch[i].to;
    sum += squared_norm(err);
    if (with_grads) hybrid_step_backward(h, tape, (2.0 * inv_n) * err, out.grads);
  }
  out.loss = sum * inv_n + l1_penalty(h.branch);
  if (with_grads) add_l1_gradient(h.branch, out.grads);
  return out;
}

LossGrad teacher_forcing_loss(const HybridSystem& h, const std::vector<Trajectory>& trajectories, bool with_grads) {
  const auto all = collect_transitions(trajectories);
  return teacher_forcing_loss(h, std::span<const Transition>(all), with_grads);
}

std::vector<RolloutWindow> make_windows(const std::vector<Trajectory>& trajectories, std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("make_windows: horizon must be >= 1");
  std::vector<RolloutWindow> out;
  for (const auto& traj : trajectories) {
    for (std::size_t start = 0; start + horizon < traj.states.size(); start += horizon) {
      RolloutWindow w;
      w.start = traj.states[start];
      w.targets.assign(traj.states.begin() + static_cast<std::ptrdiff_t>(start + 1),
                       traj.states.begin() + static_cast<std::ptrdiff_t>(start + 1 + horizon));
      out.push_back(std::move(w));
    }
  }
  return out;
}

LossGrad bptt_loss(const HybridSystem& h, std::span<const RolloutWindow> windows, BpttOptions options) {
  if (windows.empty()) throw std::invalid_argument("bptt_loss: no windows");
  std::size_t total = 0;
  for (const auto& w : windows) {
    if (w.targets.empty()) throw std::invalid_argument("bptt_loss: window with horizon 0");
    total += w.targets.size();
  }
  const double inv_n = 1.0 / static_cast<double>(total);

  LossGrad out;
  if (options.with_grads) out.grads.assign(h.branch.size(), 0.0);
  std::vector<StepTape> tapes;
  std::vector<State> preds;
  double sum = 0.0;
  for (std::size_t wi = 0; wi < windows.size(); ++wi) {
    const auto& w = windows[wi];
    const std::size_t k = w.targets.size();
    tapes.resize(k);
    preds.resize(k);
    State s = w.start;
    for (std::size_t t = 0; t < k; ++t) {
      try {
        s = hybrid_step(h, s, tapes[t]);
      } catch (const DivergenceError&) {
        throw DivergenceError("bptt: divergence in window " + std::to_string(wi) + " at step " + std::to_string(t),
                              t, wi);
      }
      preds[t] = s;
      sum += squared_norm(s - w.targets[t]);
    }
    if (!options.with_grads) continue;
    State g{};
    for (std::size_t t = k; t-- > 0;) {
      g = g + (2.0 * inv_n) * (preds[t] - w.targets[t]);
      g = hybrid_step_backward(h, tapes[t], g, out.grads, options.through_branch_inputs);
    }
  }
  out.loss = sum * inv_n + l1_penalty(h.branch);
  if (options.with_grads) add_l1_gradient(h.branch, out.grads);
  return out;
}

Trajectory rollout(const HybridSystem& h, State s0, std::size_t n) {
  if (n < 1) throw std::invalid_argument("rollout: need at least one step");
  Trajectory traj;
  traj.dt = h.dt;
  traj.states.reserve(n + 1);
  traj.states.push_back(s0);
  StepTape tape;
  State s = s0;
  for (std::size_t i = 0; i < n; ++i) {
    try {
      s = hybrid_step(h, s, tape);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("rollout: ") + e.what() + " at step " + std::to_string(i), i);
    }
    traj.states.push_back(s);
  }
  return traj;
}

}  // namespace rlab
