#pragma once

#include <optional>
#include <string>
#include <vector>

namespace lrm {

enum class ScheduleKind {
  kConstant,  // γ_k = gamma
  kPoly,      // γ_k = c·k^{−p}
  kSqrtLog,   // γ_k = c / (√k · log(k+1))
};

std::string to_string(ScheduleKind kind);

struct ScheduleReport {
  bool rm_divergent = false;        // Σγ_k = ∞
  bool rm_square_summable = false;  // Σγ_k² < ∞
  // Smallest k₀ from which γ_{k+1}/γ_k + P·γ_k·γ_{k+1} < 1 − γ_k holds for
  // every checked k ≥ k₀; empty means NEVER.
  std::optional<long> strange_condition_first_index;
  // Largest checked k violating the condition, if any.
  std::optional<long> strange_condition_last_violation;
  long checked_up_to = 0;
  double P_used = 0.0;
};

// Step sizes γ_1..γ_max_k with cached prefix sums τ_k.
class StepSchedule {
 public:
  static StepSchedule constant(double gamma, long max_k);
  static StepSchedule poly(double c, double p, long max_k);
  static StepSchedule sqrt_log(double c, long max_k);

  ScheduleKind kind() const { return kind_; }
  double c() const { return c_; }
  double p() const { return p_; }
  long max_k() const { return max_k_; }

  // Throws std::out_of_range unless 1 ≤ k ≤ max_k.
  double gamma(long k) const;
  // τ_k = Σ_{n≤k} γ_n. Throws std::out_of_range unless 0 ≤ k ≤ max_k.
  double tau(long k) const;
  // Largest k with τ_k ≤ t (clamped to max_k).
  long index_at_time(double t) const;

  const std::optional<ScheduleReport>& validity() const { return validity_; }
  StepSchedule with_validity(ScheduleReport report) const;

  // Formula evaluation without range checks, for k ≥ 1.
  double formula(long k) const;

 private:
  StepSchedule(ScheduleKind kind, double c, double p, long max_k);

  ScheduleKind kind_;
  double c_;
  double p_;
  long max_k_;
  std::vector<double> tau_;
  std::optional<ScheduleReport> validity_;
};

// P = 2L² + 4C_b + 2√(2C_b). Throws std::invalid_argument on negative input.
double compute_P(double L, double C_b);

// Analytic Robbins-Monro verdicts per family plus a numeric scan of the
// strange step-size condition over 1 ≤ k < max_k. Requires max_k ≥ 10.
ScheduleReport validate(const StepSchedule& schedule, double P);

// Direct check of the strange step-size inequality at one index.
bool strange_condition_holds(const StepSchedule& schedule, double P, long k);

}  // namespace lrm
