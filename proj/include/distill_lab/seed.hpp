#pragma once

#include <array>
#include <cstdint>
#include <random>

namespace distill_lab {

/// Independent sub-stream seed for (seed, salt). Every consumer of randomness
/// (each layer init, the connector, the batch shuffler, data draws) gets its
/// own salt, so enabling one component never perturbs another's draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (std::uint64_t{words[0]} << 32) | words[1];
}

namespace salt {
inline constexpr std::uint64_t classifier = 1000;
inline constexpr std::uint64_t connector = 2000;
inline constexpr std::uint64_t shuffle = 3000;
inline constexpr std::uint64_t joint_classifier = 4000;
inline constexpr std::uint64_t train_split = 5000;
inline constexpr std::uint64_t test_split = 6000;
inline constexpr std::uint64_t adapter = 7000;
}  // namespace salt

}  // namespace distill_lab
