#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include <Eigen/Core>

namespace lrm {

// Independent random substreams consumed by one replica.
enum class Substream : std::uint32_t {
  kSchemeXi = 0,
  kSchemeXiPrime = 1,
  kNoiseU = 2,
  kNoiseUPrime = 3,
  kAlpha = 4,
  kBridge = 5,
  kMetric = 6,
};

std::string_view to_string(Substream s);

struct StreamKey {
  std::uint64_t seed = 0;
  std::uint32_t replica = 0;
  Substream substream = Substream::kSchemeXi;

  StreamKey with(Substream s) const { return {seed, replica, s}; }
  StreamKey for_replica(std::uint32_t r) const { return {seed, r, substream}; }

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

// Philox4x32-10 block function. Exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// Counter-based generator. The draws are a pure function of
// (seed, replica, substream, counter, draw index): the seed is the Philox
// key and the remaining fields are packed into the 128-bit counter, so
// distinct tuples never share a block.
class CounterRng {
 public:
  CounterRng(const StreamKey& key, std::uint64_t counter);

  // Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform();
  // Standard normal via Box-Muller.
  double normal();
  void normals(Eigen::Ref<Eigen::VectorXd> out);
  Eigen::VectorXd normals(Eigen::Index n);

 private:
  void refill();
  std::uint32_t next_word();

  std::array<std::uint32_t, 2> key_;
  std::uint64_t counter_;
  std::uint32_t replica_;
  std::uint32_t substream_;
  std::uint32_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int position_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lrm
