#pragma once

#include <cstdint>

namespace propfly {

// Stream tags for the counter-based generator. Every random quantity in the
// pipeline is drawn from a stream keyed by (global seed, purpose, index), so
// any single draw can be reproduced without replaying the others.
enum class Purpose : std::uint64_t {
  kStyleLibrary = 1,
  kContentBase,
  kContentMotion,
  kAppearanceNoise,
  kDataset,
  kTime,
  kNoise,
  kDropout,
  kRspf,
  kInitBackbone,
  kInitAdapter,
  kEval,
  kAblation,
  kTest,
};

// SplitMix64-based counter generator. The key fixes the stream; the counter
// advances by one per 64-bit draw.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed = 0);
  CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t index = 0);

  // Child stream keyed off this stream's key (not its counter).
  CounterRng split(Purpose purpose, std::uint64_t index = 0) const;
  CounterRng split(std::uint64_t tag) const;

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // N(0, 1), Box-Muller
  std::uint64_t below(std::uint64_t n);    // uniform in [0, n)
  bool bernoulli(double p);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  CounterRng(std::uint64_t key, std::uint64_t counter, int);

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace propfly
