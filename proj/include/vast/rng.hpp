#pragma once

// Deterministic random number generation with a fixed algorithm
// (xoshiro256++ seeded via splitmix64, Box-Muller normals) so that streams
// are reproducible across platforms and standard library versions.

#include <array>
#include <cstdint>
#include <string>

namespace vast {

uint64_t splitmix64(uint64_t& state);

// Stable stream derivation: mixes a base seed with stream labels so that
// per-clip / per-phase generators are independent and order-insensitive.
uint64_t derive_seed(uint64_t base, uint64_t stream);
uint64_t derive_seed(uint64_t base, uint64_t stream_a, uint64_t stream_b);

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n); n > 0.
  int uniform_int(int n);
  bool bernoulli(double p);
  // Standard normal via Box-Muller; caches the second variate.
  double normal();

  // Child generator with an independent stream; deterministic in (state-
  // independent of) how much the parent has been consumed at fork time is
  // NOT guaranteed, so fork from fresh generators keyed by derive_seed.
  Rng fork(uint64_t stream);

  // State round-trip for resumable training (hex string of 4 words plus the
  // Box-Muller cache).
  std::string save_state() const;
  static Rng restore_state(const std::string& text);

 private:
  std::array<uint64_t, 4> s_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a 64-bit hash, used for dataset and weight fingerprints.
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 14695981039346656037ull);
uint64_t fnv1a64_str(const std::string& s, uint64_t seed = 14695981039346656037ull);
std::string hash_hex(uint64_t h);

}  // namespace vast
