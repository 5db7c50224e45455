#include "propfly/rng.hpp"

#include <cmath>
#include <numbers>

namespace propfly {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {
std::uint64_t derive(std::uint64_t parent, std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(parent ^ mix64(a)) ^ (b * 0xd1b54a32d192ed03ULL));
}
}  // namespace

CounterRng::CounterRng(std::uint64_t seed) : key_(mix64(seed)) {}

CounterRng::CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t index)
    : key_(derive(mix64(seed), static_cast<std::uint64_t>(purpose), index)) {}

CounterRng::CounterRng(std::uint64_t key, std::uint64_t counter, int)
    : key_(key), counter_(counter) {}

CounterRng CounterRng::split(Purpose purpose, std::uint64_t index) const {
  return CounterRng(derive(key_, static_cast<std::uint64_t>(purpose), index), 0, 0);
}

CounterRng CounterRng::split(std::uint64_t tag) const {
  return CounterRng(derive(key_, 0xa5a5a5a5ULL, tag), 0, 0);
}

std::uint64_t CounterRng::next_u64() {
  return mix64(key_ + 0x9e3779b97f4a7c15ULL * (++counter_));
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double CounterRng::normal() {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return r % n;
}

bool CounterRng::bernoulli(double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return uniform() < p;
}

}  // namespace propfly
