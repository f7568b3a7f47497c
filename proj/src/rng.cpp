#include "vast/rng.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace vast {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t s = base;
  splitmix64(s);
  s ^= 0x632be59bd9b4e019ull * (stream + 1);
  return splitmix64(s);
}

uint64_t derive_seed(uint64_t base, uint64_t stream_a, uint64_t stream_b) {
  return derive_seed(derive_seed(base, stream_a), stream_b);
}

namespace {
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
  // 128-bit multiply-shift; bias below 2^-32 for the ranges used here.
  return static_cast<int>(
      (static_cast<unsigned __int128>(next_u64() >> 32) * static_cast<uint64_t>(n)) >> 32);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::fork(uint64_t stream) { return Rng(derive_seed(next_u64(), stream)); }

std::string Rng::save_state() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%016llx %016llx %016llx %016llx %d %a",
                static_cast<unsigned long long>(s_[0]),
                static_cast<unsigned long long>(s_[1]),
                static_cast<unsigned long long>(s_[2]),
                static_cast<unsigned long long>(s_[3]),
                have_spare_ ? 1 : 0, spare_);
  return buf;
}

Rng Rng::restore_state(const std::string& text) {
  Rng r;
  unsigned long long w[4];
  int spare_flag = 0;
  double spare = 0.0;
  if (std::sscanf(text.c_str(), "%llx %llx %llx %llx %d %la", &w[0], &w[1],
                  &w[2], &w[3], &spare_flag, &spare) != 6)
    throw std::runtime_error("bad rng state string");
  for (int i = 0; i < 4; ++i) r.s_[i] = w[i];
  r.have_spare_ = spare_flag != 0;
  r.spare_ = spare;
  return r;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64_str(const std::string& s, uint64_t seed) {
  return fnv1a64(s.data(), s.size(), seed);
}

std::string hash_hex(uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace vast
