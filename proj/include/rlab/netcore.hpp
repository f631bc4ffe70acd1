#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rlab/dynamics.hpp"
#include "rlab/spline.hpp"

namespace rlab {

/// Kolmogorov-Arnold network over the normalized state. Every edge (i -> j)
/// carries
///
///   phi_ij(u) = base_scale_ij * silu(u) + spline_scale_ij * sum_c coef_ijc * B_c(clamp(u))
///
/// and node j sums its incoming edges. Spline inputs are clamped to the layer
/// domain; the base term sees the raw value.
struct KanArch {
  std::vector<int> widths{2, 4, 1};
  SplineSpec spline{};
  /// When false the base term is frozen at zero ("spline-forced").
  bool base_blend = true;
  /// L1 weight on spline coefficients.
  double l1_weight = 0.0;
  /// Optional per-layer spline domain; empty means spline.domain everywhere.
  std::vector<Interval> layer_domains{};

  SplineSpec layer_spline(std::size_t layer) const;
  int params_per_edge() const { return spline.num_basis() + 2; }
  void validate() const;
};

/// Affine-ReLU stack with an identity output layer.
struct MlpArch {
  std::vector<int> widths{2, 16, 16, 1};
  void validate() const;
};

/// Stand-in that evaluates the analytical residual; has no parameters.
struct OracleArch {
  OscillatorKind system = OscillatorKind::Duffing;
  double scale = kStateScale;
};

using Arch = std::variant<KanArch, MlpArch, OracleArch>;

enum class BranchKind { Kan, Mlp, Oracle };

std::size_t param_count(const Arch& arch);

/// MLP: weights ~ N(0, 2/fan_in), zero biases.
/// KAN: coefficients ~ N(0, (0.1/(G+k))^2), base scales 1 (0 if base_blend is
/// off), spline scales 1. Deterministic per seed.
std::vector<double> init_params(const Arch& arch, std::uint64_t seed);

class ResidualBranch {
 public:
  /// Throws std::invalid_argument on a length mismatch or non-finite entry.
  ResidualBranch(Arch arch, std::vector<double> params);

  static ResidualBranch initialized(const Arch& arch, std::uint64_t seed);
  static ResidualBranch zeros(const Arch& arch);
  static ResidualBranch oracle(OscillatorKind system, double scale = kStateScale);

  BranchKind kind() const;
  const Arch& arch() const { return arch_; }
  const KanArch* kan() const { return std::get_if<KanArch>(&arch_); }
  const MlpArch* mlp() const { return std::get_if<MlpArch>(&arch_); }
  const OracleArch* oracle_arch() const { return std::get_if<OracleArch>(&arch_); }

  std::span<const double> params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  void set_params(std::vector<double> params);

 private:
  Arch arch_;
  std::vector<double> params_;
};

/// Activation record of one forward pass; reusable across calls.
struct BranchCache {
  double xn = 0.0;
  double vn = 0.0;
  std::vector<double> acts;  // layer inputs, concatenated, then the output
  std::vector<double> pre;   // MLP hidden pre-activations
  std::vector<BasisWindow> windows;
  std::vector<double> base;
  std::vector<double> dbase;
  std::vector<unsigned char> in_domain;
};

double branch_forward(const ResidualBranch& b, double xn, double vn, BranchCache& cache);
double branch_value(const ResidualBranch& b, double xn, double vn);

/// Accumulates upstream * dR/dtheta into `grads` and returns
/// (upstream * dR/dxn, upstream * dR/dvn).
Partials branch_backward(const ResidualBranch& b, const BranchCache& cache, double upstream,
                         std::span<double> grads);

struct BranchSample {
  double xn = 0.0;
  double vn = 0.0;
  double upstream = 1.0;
};

/// d(sum_batch upstream * R)/dtheta.
std::vector<double> branch_gradients(const ResidualBranch& b, std::span<const BranchSample> batch);

Partials branch_input_jacobian(const ResidualBranch& b, double xn, double vn);

/// Raw-coordinate residual: R(x/scale, v/scale) for learned branches, the
/// analytical residual evaluated directly on (x, v) for oracles.
double residual_forward(const ResidualBranch& b, double scale, State s, BranchCache& cache);
Partials residual_backward(const ResidualBranch& b, double scale, const BranchCache& cache, double upstream,
                           std::span<double> grads);
double residual_value(const ResidualBranch& b, double scale, double x, double v);

/// Hand-set [2, 2, 1] KAN computing xn * vn on [-1, 1]^2 through
/// xy = ((x + y)^2 - (x - y)^2) / 4. Requires order >= 2.
ResidualBranch product_construction(const SplineSpec& spec);

/// lambda * sum |spline coefficients|; zero for non-KAN branches.
double l1_penalty(const ResidualBranch& b);
void add_l1_gradient(const ResidualBranch& b, std::span<double> grads);

/// 1 where the optimizer may move the parameter.
std::vector<unsigned char> trainable_mask(const ResidualBranch& b);

/// Distance from the nearest non-smooth point of the forward map (ReLU hinge,
/// spline clamp bound, or knot for order <= 1) at this input.
double kink_margin(const ResidualBranch& b, double xn, double vn);

struct ArchEntry {
  std::string name;
  std::string label;
  Arch arch;
};

/// Parameter-scale architectures: KAN 120/240/480/880, MLP 105/337/1185/4417.
const std::vector<ArchEntry>& arch_registry();
const ArchEntry& find_arch(std::string_view name);

std::string_view family_name(const Arch& arch);
std::string widths_string(const Arch& arch);

/// Checkpoint text: one header line `kind,widths,G,k,lambda,seed` then one
/// parameter per line at 17 significant digits.
void write_checkpoint(std::ostream& os, const ResidualBranch& b, std::uint64_t seed);
struct Checkpoint {
  ResidualBranch branch;
  std::uint64_t seed = 0;
};
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::string& path, const ResidualBranch& b, std::uint64_t seed);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rlab
