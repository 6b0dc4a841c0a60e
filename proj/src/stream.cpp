#include "lrm/stream.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lrm {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;
constexpr std::uint32_t kMaxBlocks = 1u << 24;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::string_view to_string(Substream s) {
  switch (s) {
    case Substream::kSchemeXi: return "SCHEME_XI";
    case Substream::kSchemeXiPrime: return "SCHEME_XI_PRIME";
    case Substream::kNoiseU: return "NOISE_U";
    case Substream::kNoiseUPrime: return "NOISE_U_PRIME";
    case Substream::kAlpha: return "ALPHA";
    case Substream::kBridge: return "BRIDGE";
    case Substream::kMetric: return "METRIC";
  }
  return "UNKNOWN";
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, c[0], hi0, lo0);
    mulhilo(kPhiloxM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kPhiloxW0;
    k[1] += kPhiloxW1;
  }
  return c;
}

CounterRng::CounterRng(const StreamKey& key, std::uint64_t counter)
    : key_{static_cast<std::uint32_t>(key.seed),
           static_cast<std::uint32_t>(key.seed >> 32)},
      counter_(counter),
      replica_(key.replica),
      substream_(static_cast<std::uint32_t>(key.substream)) {}

void CounterRng::refill() {
  if (block_ >= kMaxBlocks) {
    throw std::length_error("CounterRng: draw budget per counter exhausted");
  }
  buffer_ = philox4x32({static_cast<std::uint32_t>(counter_),
                        static_cast<std::uint32_t>(counter_ >> 32), replica_,
                        (substream_ << 24) | block_},
                       key_);
  ++block_;
  position_ = 0;
}

std::uint32_t CounterRng::next_word() {
  if (position_ >= 4) refill();
  return buffer_[position_++];
}

double CounterRng::uniform() {
  const std::uint64_t a = next_word() >> 5;  // 27 bits
  const std::uint64_t b = next_word() >> 6;  // 26 bits
  const std::uint64_t bits = (a << 26) | b;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

void CounterRng::normals(Eigen::Ref<Eigen::VectorXd> out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal();
}

Eigen::VectorXd CounterRng::normals(Eigen::Index n) {
  Eigen::VectorXd out(n);
  normals(out);
  return out;
}

}  // namespace lrm
