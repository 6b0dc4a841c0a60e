#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "lrm/stream.hpp"

namespace lrm {

struct StepRecord;

enum class NoiseKind {
  kNone,
  kGaussian,     // U = scale·ζ
  kStateScaled,  // U = scale·min(1, cap/‖x‖)·ζ
};

std::string to_string(NoiseKind kind);

// Additive gradient noise U = ∇̃f − ∇f. Every kind is a martingale
// difference sequence: ζ is drawn fresh from the stream at each evaluation.
struct NoiseModel {
  NoiseKind kind = NoiseKind::kNone;
  double scale = 0.0;
  double cap = 1.0;

  static NoiseModel none() { return {}; }
  static NoiseModel gaussian(double scale);
  static NoiseModel state_scaled(double scale, double cap);

  bool is_zero() const { return kind == NoiseKind::kNone || scale == 0.0; }
  // Uniform bound on E‖U‖² in dimension `dim`.
  double second_moment_bound(int dim) const { return is_zero() ? 0.0 : scale * scale * dim; }
  // Multiplier applied to the standard normal ζ at the evaluation point x.
  double factor(const Eigen::VectorXd& x) const;
  // out = U given the standard normal ζ.
  void apply(const Eigen::VectorXd& x, const Eigen::VectorXd& zeta,
             Eigen::VectorXd& out) const;
};

// One zero-mean draw at x; a pure function of (model, x, stream, k).
Eigen::VectorXd sample_noise(const NoiseModel& model, const Eigen::VectorXd& x,
                             const StreamKey& stream, long k);

struct MdsCheck {
  double max_abs_running_mean = 0.0;
  double threshold = 0.0;  // 4·σ̂/√window
  double sigma_hat = 0.0;  // per-component RMS of U
  int windows = 0;
  bool pass = false;
};

// Martingale-difference diagnostic on the recorded noise_U: means over
// consecutive windows of `window` records must stay within 4σ̂/√window,
// where σ̂ is the largest per-component RMS of U. Throws
// std::invalid_argument when records are empty or window is zero.
MdsCheck mds_check(const std::vector<StepRecord>& records, int window);
MdsCheck mds_check(const std::vector<Eigen::VectorXd>& noise, int window);

}  // namespace lrm
