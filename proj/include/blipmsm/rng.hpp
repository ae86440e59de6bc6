#pragma once

#include <cstdint>
#include <random>

namespace blipmsm {

// Named sub-streams hung off a master seed. Streams are derived, never
// sequential, so replicate-level parallelism cannot change any draw.
enum class stream : std::uint64_t {
  data = 1,
  analysis = 2,
  truth = 3,
  null_outcome = 4,
  folds = 5,
  learner = 6,
};

// SplitMix64 step (Steele, Lea & Flood 2014); used only to derive seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream derivation rule: seed -> splitmix64 walk over (seed, id, tag).
// Identical (seed, id, tag) triples give identical streams on every platform.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id, stream tag) {
  std::uint64_t s = master;
  splitmix64(s);
  s ^= 0x6a09e667f3bcc909ULL + id;
  splitmix64(s);
  s ^= static_cast<std::uint64_t>(tag) * 0xd6e8feb86659fd93ULL;
  return splitmix64(s);
}

inline std::mt19937_64 make_rng(std::uint64_t master, std::uint64_t id, stream tag) {
  return std::mt19937_64(derive_seed(master, id, tag));
}

}  // namespace blipmsm
