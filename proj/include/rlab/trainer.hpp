#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/dynamics.hpp"
#include "rlab/hybridcell.hpp"

namespace rlab {

enum class Paradigm { TeacherForcing, Bptt };

std::string_view to_string(Paradigm paradigm);
/// "tf" / "teacher-forcing" or "bptt".
Paradigm parse_paradigm(std::string_view name);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  Paradigm paradigm = Paradigm::TeacherForcing;
  std::size_t horizon = 50;  // BPTT window length K
  std::size_t steps = 2000;
  double learning_rate = 1e-3;
  std::size_t batch = 256;  // transitions (TF) or windows (BPTT) per step
  AdamConfig adam{};
  double grad_clip = 10.0;
  std::uint64_t seed = 0;
  /// Parameters are snapshotted after every this-many successful steps.
  std::size_t checkpoint_every = 100;
  /// Status is Converged when the last recorded loss is at or below this.
  double converged_loss = 0.0;

  void validate() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
};

/// One bias-corrected Adam update, in place. Gradients are first rescaled so
/// their global norm is at most cfg.grad_clip. Entries whose mask is 0 are
/// left untouched (their moments included). Throws std::domain_error on a
/// non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, std::size_t t,
               const TrainConfig& cfg, std::span<const unsigned char> mask = {});

enum class TrainStatus { Converged, MaxSteps, Unstable };

std::string_view to_string(TrainStatus status);

struct TrainReport {
  std::vector<double> params;        // parameters when training stopped
  std::vector<double> loss_history;  // batch loss of every completed step
  TrainStatus status = TrainStatus::MaxSteps;
  std::optional<std::size_t> failed_step;  // 1-based step that diverged
  std::optional<std::vector<double>> checkpoint;
  std::size_t checkpoint_step = 0;
  double wall_seconds = 0.0;
};

/// Seeded Adam training of the system's branch on data.train. A step that
/// diverges (or yields non-finite gradients) is retried once with a freshly
/// sampled batch; a second failure ends training with status Unstable.
TrainReport train(const HybridSystem& system, const Dataset& data, const TrainConfig& cfg);

/// Structured text: loss history array, status, failure step, checkpoint path.
void write_report_json(std::ostream& os, const TrainReport& report, const std::string& checkpoint_path);

struct GradCheckOptions {
  std::size_t n_points = 3;   // transitions (TF) and windows (BPTT)
  std::size_t horizon = 5;
  double epsilon = 1e-4;
  double tf_tolerance = 1e-4;
  double bptt_tolerance = 1e-3;
  double kink_margin = 1e-3;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double tf_max_rel = 0.0;
  double bptt_max_rel = 0.0;
  std::size_t tf_worst_index = 0;
  std::size_t bptt_worst_index = 0;
  bool passed = true;
};

/// Relative error |a - n| / max(|a|, |n|, floor) with floor = 1e-5 * the
/// largest gradient magnitude in the vector; 0/0 counts as 0.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          std::size_t* worst_index = nullptr);

/// Analytic vs central-difference gradients of both loss paths on points
/// drawn from data.train that stay clear of non-smooth points.
GradCheckReport verify_gradients(const HybridSystem& system, const Dataset& data, const GradCheckOptions& opts);

}  // namespace rlab
