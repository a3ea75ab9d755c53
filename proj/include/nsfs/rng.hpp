#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace nsfs {

/// Purpose tags folded into the counter so unrelated consumers of the same
/// master seed never share a stream.
enum class Stream : std::uint32_t {
  brownian = 1,
  follmer_mc = 2,
  data_batch = 3,
  weight_init = 4,
  sgld_noise = 5,
  dataset = 6,
  chain_init = 7,
  training = 8,
  sampling = 9,
};

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based generator keyed by (seed, stream, a, b).
///
/// Every (a, b) pair indexes an independent stream, so path/step draws do not
/// depend on the order in which paths are simulated.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, Stream stream, std::uint32_t a = 0, std::uint32_t b = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  void fill_normal(std::span<double> out);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Mixes a 64-bit value into a derived seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace nsfs
