#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "rlab/dynamics.hpp"
#include "rlab/netcore.hpp"

namespace rlab {

enum class Integrator { Euler, RK4 };

std::string_view to_string(Integrator integrator);
Integrator parse_integrator(std::string_view name);

/// Any non-finite state, or one with |x| or |v| above this, counts as divergence.
inline constexpr double kDivergenceBound = 1e6;

/// Hard-constrained recurrent cell:
///
///   x' = v
///   v' = known_accel(x, v) + R(x / scale, v / scale)
///
/// integrated one step of size dt. The branch never touches x'.
struct HybridSystem {
  OscillatorSpec spec{OscillatorKind::Duffing};
  ResidualBranch branch = ResidualBranch::oracle(OscillatorKind::Duffing);
  double dt = 0.01;
  Integrator integrator = Integrator::RK4;
  double scale = kStateScale;
};

/// The right-hand side the integrator sees.
State effective_rhs(const HybridSystem& h, State s);

/// Everything one step needs for its reverse pass.
struct StepTape {
  int stages = 0;
  std::array<State, 4> points{};
  std::array<BranchCache, 4> caches{};
};

/// Throws DivergenceError (step 0) when the result is non-finite or runaway.
State hybrid_step(const HybridSystem& h, State s);
State hybrid_step(const HybridSystem& h, State s, StepTape& tape);

/// Reverse pass of one step: given dL/d(output), accumulates dL/dtheta into
/// `grads` and returns dL/d(input). With `through_branch_inputs` false the
/// branch's input partials are dropped from the state path.
State hybrid_step_backward(const HybridSystem& h, const StepTape& tape, State g_out, std::span<double> grads,
                           bool through_branch_inputs = true);

struct Transition {
  State from;
  State to;
};

std::vector<Transition> collect_transitions(const std::vector<Trajectory>& trajectories);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grads;
};

/// mean over transitions of |hybrid_step(from) - to|^2, plus the L1 term.
LossGrad teacher_forcing_loss(const HybridSystem& h, std::span<const Transition> batch, bool with_grads = true);
LossGrad teacher_forcing_loss(const HybridSystem& h, const std::vector<Trajectory>& trajectories,
                              bool with_grads = true);

struct RolloutWindow {
  State start;
  std::vector<State> targets;  // the K ground-truth states after start
};

/// Non-overlapping K-step windows cut from each trajectory; a trailing
/// remainder shorter than K is dropped.
std::vector<RolloutWindow> make_windows(const std::vector<Trajectory>& trajectories, std::size_t horizon);

struct BpttOptions {
  bool with_grads = true;
  bool through_branch_inputs = true;
};

/// Mean over windows and steps of |s_hat - s|^2 along free rollouts from each
/// window start, plus the L1 term. Divergence throws DivergenceError carrying
/// the window index and step.
LossGrad bptt_loss(const HybridSystem& h, std::span<const RolloutWindow> windows, BpttOptions options = {});

/// n hybrid steps from s0; the result holds n + 1 states. Divergence throws
/// with the failing step index.
Trajectory rollout(const HybridSystem& h, State s0, std::size_t n);

}  // namespace rlab
