#pragma once

#include <string>
#include <vector>

#include "lrm/model.hpp"
#include "lrm/sampler.hpp"
#include "lrm/stream.hpp"

namespace lrm {

// Replica states at one checkpoint, one sample per row.
class Ensemble {
 public:
  // Throws std::invalid_argument unless every entry is finite and n ≥ 2.
  Ensemble(Matrix samples, long checkpoint_k = 0, double tau = 0.0);
  static Ensemble from_states(const std::vector<Vector>& states, long checkpoint_k = 0,
                              double tau = 0.0);

  const Matrix& samples() const { return samples_; }
  long checkpoint_k() const { return k_; }
  double tau() const { return tau_; }
  Eigen::Index size() const { return samples_.rows(); }
  Eigen::Index dim() const { return samples_.cols(); }

  Vector mean() const;
  Matrix covariance() const;  // unbiased (n − 1)
  double mean_sq_norm() const;

 private:
  Matrix samples_;
  long k_;
  double tau_;
};

enum class W2Method { kGaussianClosedForm, kQuantile1d, kAssignment, kSliced };

struct W2Report {
  W2Method method = W2Method::kSliced;
  double value = 0.0;
  Eigen::Index n_used = 0;
  int projections = 0;  // sliced only
  double order = 2.0;   // the estimator's p; the decay theorem covers p < 2

  // "gaussian", "quantile_1d", "assignment" or "sliced(P)".
  std::string method_name() const;
};

std::string to_string(W2Method method);

// Bures formula √(‖m1−m2‖² + tr(C1 + C2 − 2(C1^{1/2} C2 C1^{1/2})^{1/2})).
// Throws std::invalid_argument unless C1 and C2 are SPD.
double w2_gaussian(const Vector& m1, const Matrix& C1, const Vector& m2, const Matrix& C2);

// Quantile coupling of two 1-D samples (n × 1 matrices or vectors). Unequal
// sizes are matched by a deterministic stride subsample of the larger sorted
// set at ranks ⌊(i + ½)·N/n⌋. Throws std::invalid_argument on empty input or
// d ≠ 1.
double w2_1d(const Matrix& a, const Matrix& b, double p = 2.0);
double w2_1d(const Vector& a, const Vector& b, double p = 2.0);
W2Report w2_1d_report(const Matrix& a, const Matrix& b, double p = 2.0);

// Exact empirical W_p by minimum-cost perfect matching (Hungarian algorithm,
// O(n³)) on |·|^p costs. Throws std::invalid_argument on size mismatch,
// dimension mismatch or n > cap.
double w2_assignment(const Matrix& a, const Matrix& b, Eigen::Index cap = 512, double p = 2.0);
W2Report w2_assignment_report(const Matrix& a, const Matrix& b, Eigen::Index cap = 512,
                              double p = 2.0);

// Root-mean of squared 1-D quantile distances over `projections` uniform
// random unit directions drawn from the stream's METRIC substream (direction
// j at counter j). Deterministic given the stream. Throws
// std::invalid_argument when projections < 32 or dimensions differ.
double sliced_w2(const Matrix& a, const Matrix& b, int projections, const StreamKey& stream,
                 double p = 2.0);
W2Report sliced_w2_report(const Matrix& a, const Matrix& b, int projections,
                          const StreamKey& stream, double p = 2.0);

// Per-checkpoint mean squared norm with running max. Stabilized when the max
// over the second half of the checkpoints is within 10% of the max over the
// first half.
struct MomentTrack {
  std::vector<long> k;
  std::vector<double> mean_sq_norm;
  std::vector<double> running_max;
  double first_half_max = 0.0;
  double second_half_max = 0.0;
  bool stabilized = false;
};

MomentTrack moment_track(const std::vector<Ensemble>& ensembles);
MomentTrack moment_track(const std::vector<long>& k, const std::vector<double>& mean_sq_norm);

// Bias-scaling fit. Per iteration k, ratio_k = Ê‖b_{k+1}‖² / (γ²Ê‖v(x_k)‖² + γ)
// with the expectations averaged over replicas; c_hat = max_k ratio_k and
// trend_slope is the least-squares slope of ratio_k against k.
struct BiasFit {
  double c_hat = 0.0;
  double trend_slope = 0.0;
  double slope_stderr = 0.0;
  double median_ratio = 0.0;
  std::vector<long> k;
  std::vector<double> ratio;

  // No upward trend beyond two standard errors.
  bool trend_ok() const { return trend_slope <= 2.0 * slope_stderr; }
};

// `traces[r]` holds replica r's per-iteration samples, aligned by k. Throws
// std::invalid_argument on empty or misaligned traces and when γ = 0.
BiasFit bias_scaling_fit(const std::vector<std::vector<BiasSample>>& traces);
BiasFit bias_scaling_fit(const std::vector<Trajectory>& trajectories);

// Largest per-record ‖b‖² / (γ²‖v‖² + γ²‖U'‖² + γ‖ξ'‖² + γ‖ξ‖²), the constant
// of the extra-noise form of the bias bound. Records without ξ' or U'
// contribute zero for those terms.
double bias_noise_constant(const std::vector<StepRecord>& records);

}  // namespace lrm
