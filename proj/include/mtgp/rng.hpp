#ifndef MTGP_RNG_HPP
#define MTGP_RNG_HPP

#include <cstdint>
#include <limits>

namespace mtgp {

/// Counter-based generator: output k of stream (seed, stream) is a pure function of
/// (seed, stream, k), so draws never depend on thread scheduling.
///
/// Distribution samplers are written out here rather than taken from <random> so that
/// draws are identical across standard library implementations.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::uint64_t stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()();

  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double gamma(double shape);
  std::uint64_t poisson(double mean);
  /// Uniform integer in [lo, hi].
  long uniform_int(long lo, long hi);

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes two words into a stream key; used to derive substreams (chain, draw, panel, ...).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mtgp

#endif  // MTGP_RNG_HPP
