#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rlab {

/// Raw (unnormalized) phase-space point.
struct State {
  double x = 0.0;
  double v = 0.0;

  bool finite() const { return std::isfinite(x) && std::isfinite(v); }
  double max_abs() const { return std::max(std::abs(x), std::abs(v)); }

  friend State operator+(State a, State b) { return {a.x + b.x, a.v + b.v}; }
  friend State operator-(State a, State b) { return {a.x - b.x, a.v - b.v}; }
  friend State operator*(double c, State s) { return {c * s.x, c * s.v}; }
  friend bool operator==(const State&, const State&) = default;
};

inline double squared_norm(State s) { return s.x * s.x + s.v * s.v; }

/// Raised when an integration produces a non-finite (or runaway) state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step,
                  std::optional<std::size_t> window = std::nullopt)
      : std::runtime_error(what), step_(step), window_(window) {}

  std::size_t step() const { return step_; }
  std::optional<std::size_t> window() const { return window_; }

 private:
  std::size_t step_;
  std::optional<std::size_t> window_;
};

enum class OscillatorKind { Duffing, VanDerPol };

std::string_view to_string(OscillatorKind kind);
/// Accepts "duffing", "vdp", "vanderpol", "van-der-pol" (case-insensitive).
OscillatorKind parse_oscillator(std::string_view name);

/// Partial derivatives of a scalar field over (x, v).
struct Partials {
  double dx = 0.0;
  double dv = 0.0;
};

/// A benchmark oscillator split into hard-coded known physics and the
/// residual the branch must learn. The residual only ever enters v-dot.
///
///   Duffing:     x' = v,  v' = -x - 0.3 x^3
///   Van der Pol: x' = v,  v' = -x + (1 - x^2) v
class OscillatorSpec {
 public:
  explicit OscillatorSpec(OscillatorKind kind) : kind_(kind) {}

  OscillatorKind kind() const { return kind_; }

  double known_accel(State s) const { return -s.x; }
  Partials known_accel_partials(State) const { return {-1.0, 0.0}; }

  State known_rhs(State s) const { return {s.v, known_accel(s)}; }

  double true_residual(double x, double v) const;
  Partials true_residual_partials(double x, double v) const;

 private:
  OscillatorKind kind_;
};

/// (x', v') of the complete system: known part plus analytical residual.
State full_rhs(const OscillatorSpec& spec, State s);

/// Classical RK4. `rhs` is any callable State -> State; it is invoked exactly
/// four times, at s, s + dt/2 k1, s + dt/2 k2, s + dt k3, in that order.
template <class Rhs>
State rk4_step(Rhs&& rhs, State s, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  const double half = 0.5 * dt;
  const State k1 = rhs(s);
  if (!k1.finite()) throw DivergenceError("rk4_step: non-finite stage 1", 0);
  const State k2 = rhs(s + half * k1);
  if (!k2.finite()) throw DivergenceError("rk4_step: non-finite stage 2", 0);
  const State k3 = rhs(s + half * k2);
  if (!k3.finite()) throw DivergenceError("rk4_step: non-finite stage 3", 0);
  const State k4 = rhs(s + dt * k3);
  if (!k4.finite()) throw DivergenceError("rk4_step: non-finite stage 4", 0);
  const State out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.finite()) throw DivergenceError("rk4_step: non-finite result", 0);
  return out;
}

struct Trajectory {
  double dt = 0.0;
  std::vector<State> states;

  double time(std::size_t i) const { return static_cast<double>(i) * dt; }
  std::size_t transitions() const { return states.empty() ? 0 : states.size() - 1; }
};

/// Integrates the full system `n_steps` times from `s0` with RK4.
Trajectory integrate(const OscillatorSpec& spec, State s0, double dt, std::size_t n_steps);

struct DataConfig {
  std::size_t n_train = 20;
  std::size_t n_test = 5;
  double dt = 0.01;
  std::size_t n_steps = 1000;
  std::uint64_t seed = 0;
  double ic_half_width = 2.0;  // ICs uniform on [-w, w]^2
  double noise_std = 0.0;      // additive Gaussian noise on stored states
};

struct Dataset {
  OscillatorKind system = OscillatorKind::Duffing;
  double dt = 0.0;
  double scale = 2.5;
  std::vector<Trajectory> train;
  std::vector<Trajectory> test;
};

inline constexpr double kStateScale = 2.5;
inline constexpr double kSanityBound = 10.0;
inline constexpr int kResampleCap = 100;

Dataset generate_dataset(const OscillatorSpec& spec, const DataConfig& cfg);

/// Line-oriented text format; floats use 17 significant digits.
///
///   <oscillator>,<dt>,<scale>,<n_train>,<n_test>
///   #traj train 0
///   t,x,v
///   ...
void write_dataset(std::ostream& os, const Dataset& data);
Dataset read_dataset(std::istream& is);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

/// Formats with 17 significant digits (round-trip exact for doubles).
std::string format_double(double value);
/// Strict parse of a full token; throws std::invalid_argument.
double parse_double(std::string_view token);

}  // namespace rlab
