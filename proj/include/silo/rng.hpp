#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace silo {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Derives a child seed from a base seed and a tuple of coordinates
/// (round, client index, cell index, ...). Order of coordinates matters.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> coords) noexcept;

/// Seed of the minibatch stream owned by client `k` in a run seeded with `seed`.
/// The pooled baseline uses stream 0.
std::uint64_t client_stream_seed(std::uint64_t seed, std::size_t k) noexcept;

/// FNV-1a over the raw bytes of a double array.
std::uint64_t hash_doubles(std::span<const double> values) noexcept;

}  // namespace silo
