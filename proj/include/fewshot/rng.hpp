#pragma once

#include <cstdint>
#include <random>

namespace fewshot {

using Rng = std::mt19937_64;

// Every consumer of randomness draws from its own stream, derived from the
// run's single top-level seed and a fixed stream tag. Adding a consumer never
// shifts the numbers another consumer sees.
namespace streams {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kNuisance = 2;
inline constexpr std::uint64_t kHoldout = 3;
inline constexpr std::uint64_t kAmplitude = 4;
inline constexpr std::uint64_t kExtractorInit = 10;
inline constexpr std::uint64_t kClassifierInit = 11;
inline constexpr std::uint64_t kStage1Batches = 20;
inline constexpr std::uint64_t kStage1Dropout = 21;
inline constexpr std::uint64_t kStage2Episodes = 30;
inline constexpr std::uint64_t kStage2Dropout = 31;
inline constexpr std::uint64_t kEvalTasks = 40;
inline constexpr std::uint64_t kGradCheck = 50;
}  // namespace streams

// splitmix64 finalizer; used to spread (seed, stream, index) into 64 bits.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

}  // namespace fewshot
