#include "lrm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lrm {

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kPoly: return "poly";
    case ScheduleKind::kSqrtLog: return "sqrtlog";
  }
  return "unknown";
}

StepSchedule::StepSchedule(ScheduleKind kind, double c, double p, long max_k)
    : kind_(kind), c_(c), p_(p), max_k_(max_k) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw std::invalid_argument("StepSchedule: step constant must be positive");
  }
  if (max_k < 1) throw std::invalid_argument("StepSchedule: max_k must be positive");
  tau_.resize(static_cast<std::size_t>(max_k) + 1);
  tau_[0] = 0.0;
  for (long k = 1; k <= max_k; ++k) {
    tau_[static_cast<std::size_t>(k)] = tau_[static_cast<std::size_t>(k - 1)] + formula(k);
  }
}

StepSchedule StepSchedule::constant(double gamma, long max_k) {
  return StepSchedule(ScheduleKind::kConstant, gamma, 0.0, max_k);
}

StepSchedule StepSchedule::poly(double c, double p, long max_k) {
  // p outside (0.5, 1] is representable so that the validator can reject it.
  if (!(p > 0.0)) throw std::invalid_argument("StepSchedule::poly: p must be positive");
  return StepSchedule(ScheduleKind::kPoly, c, p, max_k);
}

StepSchedule StepSchedule::sqrt_log(double c, long max_k) {
  return StepSchedule(ScheduleKind::kSqrtLog, c, 0.0, max_k);
}

double StepSchedule::formula(long k) const {
  const double kd = static_cast<double>(k);
  switch (kind_) {
    case ScheduleKind::kConstant: return c_;
    case ScheduleKind::kPoly: return c_ * std::pow(kd, -p_);
    case ScheduleKind::kSqrtLog: return c_ / (std::sqrt(kd) * std::log(kd + 1.0));
  }
  return 0.0;
}

double StepSchedule::gamma(long k) const {
  if (k < 1 || k > max_k_) {
    throw std::out_of_range("StepSchedule::gamma: k=" + std::to_string(k) +
                            " outside [1, " + std::to_string(max_k_) + "]");
  }
  return formula(k);
}

double StepSchedule::tau(long k) const {
  if (k < 0 || k > max_k_) {
    throw std::out_of_range("StepSchedule::tau: k=" + std::to_string(k) +
                            " outside [0, " + std::to_string(max_k_) + "]");
  }
  return tau_[static_cast<std::size_t>(k)];
}

long StepSchedule::index_at_time(double t) const {
  const auto it = std::upper_bound(tau_.begin(), tau_.end(), t);
  return static_cast<long>(it - tau_.begin()) - 1;
}

StepSchedule StepSchedule::with_validity(ScheduleReport report) const {
  StepSchedule s = *this;
  s.validity_ = report;
  return s;
}

double compute_P(double L, double C_b) {
  if (L < 0.0 || C_b < 0.0) throw std::invalid_argument("compute_P: negative constant");
  return 2.0 * L * L + 4.0 * C_b + 2.0 * std::sqrt(2.0 * C_b);
}

bool strange_condition_holds(const StepSchedule& schedule, double P, long k) {
  const double g = schedule.formula(k);
  const double g_next = schedule.formula(k + 1);
  return g_next / g + P * g * g_next < 1.0 - g;
}

ScheduleReport validate(const StepSchedule& schedule, double P) {
  if (schedule.max_k() < 10) throw std::invalid_argument("validate: max_k must be at least 10");
  ScheduleReport report;
  report.P_used = P;
  switch (schedule.kind()) {
    case ScheduleKind::kConstant:
      report.rm_divergent = true;
      report.rm_square_summable = false;
      break;
    case ScheduleKind::kPoly:
      report.rm_divergent = schedule.p() <= 1.0;
      report.rm_square_summable = schedule.p() > 0.5;
      break;
    case ScheduleKind::kSqrtLog:
      report.rm_divergent = true;
      report.rm_square_summable = true;
      break;
  }

  // γ_{k+1} must lie inside the schedule, so k runs to max_k − 1.
  const long last = schedule.max_k() - 1;
  report.checked_up_to = last;
  long last_violation = 0;
  for (long k = last; k >= 1; --k) {
    if (!strange_condition_holds(schedule, P, k)) {
      last_violation = k;
      break;
    }
  }
  if (last_violation > 0) report.strange_condition_last_violation = last_violation;
  if (last_violation < last) report.strange_condition_first_index = last_violation + 1;
  return report;
}

}  // namespace lrm
