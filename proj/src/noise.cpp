#include "lrm/noise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lrm/sampler.hpp"

namespace lrm {

std::string to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kNone: return "none";
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kStateScaled: return "state_scaled";
  }
  return "unknown";
}

NoiseModel NoiseModel::gaussian(double scale) {
  if (!(scale >= 0.0)) throw std::invalid_argument("NoiseModel: scale must be nonnegative");
  return {NoiseKind::kGaussian, scale, 1.0};
}

NoiseModel NoiseModel::state_scaled(double scale, double cap) {
  if (!(scale >= 0.0)) throw std::invalid_argument("NoiseModel: scale must be nonnegative");
  if (!(cap > 0.0)) throw std::invalid_argument("NoiseModel: cap must be positive");
  return {NoiseKind::kStateScaled, scale, cap};
}

double NoiseModel::factor(const Eigen::VectorXd& x) const {
  switch (kind) {
    case NoiseKind::kNone: return 0.0;
    case NoiseKind::kGaussian: return scale;
    case NoiseKind::kStateScaled: {
      const double n = x.norm();
      return n > cap ? scale * cap / n : scale;
    }
  }
  return 0.0;
}

void NoiseModel::apply(const Eigen::VectorXd& x, const Eigen::VectorXd& zeta,
                       Eigen::VectorXd& out) const {
  if (is_zero()) {
    out.setZero(x.size());
    return;
  }
  out = factor(x) * zeta;
}

Eigen::VectorXd sample_noise(const NoiseModel& model, const Eigen::VectorXd& x,
                             const StreamKey& stream, long k) {
  Eigen::VectorXd out(x.size());
  if (model.is_zero()) {
    out.setZero();
    return out;
  }
  CounterRng rng(stream, static_cast<std::uint64_t>(k));
  model.apply(x, rng.normals(x.size()), out);
  return out;
}

MdsCheck mds_check(const std::vector<Eigen::VectorXd>& noise, int window) {
  if (noise.empty()) throw std::invalid_argument("mds_check: no records");
  if (window <= 0) throw std::invalid_argument("mds_check: window must be positive");
  const Eigen::Index dim = noise.front().size();

  Eigen::ArrayXd second(Eigen::ArrayXd::Zero(dim));
  for (const auto& u : noise) second += u.array().square();
  second /= static_cast<double>(noise.size());

  MdsCheck out;
  out.sigma_hat = std::sqrt(second.maxCoeff());
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(window), noise.size());
  for (std::size_t start = 0; start + w <= noise.size(); start += w) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = start; i < start + w; ++i) mean += noise[i];
    mean /= static_cast<double>(w);
    out.max_abs_running_mean = std::max(out.max_abs_running_mean, mean.cwiseAbs().maxCoeff());
    ++out.windows;
  }
  out.threshold = 4.0 * out.sigma_hat / std::sqrt(static_cast<double>(w));
  out.pass = out.max_abs_running_mean <= out.threshold;
  return out;
}

MdsCheck mds_check(const std::vector<StepRecord>& records, int window) {
  std::vector<Eigen::VectorXd> noise;
  noise.reserve(records.size());
  for (const auto& r : records) noise.push_back(r.noise_U);
  return mds_check(noise, window);
}

}  // namespace lrm
