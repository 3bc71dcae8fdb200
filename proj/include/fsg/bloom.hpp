#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsg/graph.hpp"
#include "fsg/walks.hpp"

namespace fsg {

class BloomError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BloomParams {
  double fp_rate = 0.01;                      ///< compound target P
  std::uint64_t initial_capacity = 1'000'000; ///< c0, elements in the first stage
  std::uint32_t growth_factor = 2;            ///< capacity multiplier per stage
  double tightening_ratio = 0.5;              ///< FP budget multiplier per stage

  void validate() const;
};

/// Elements a bloom filter of `bits` bits holds at false-positive rate
/// `fp_rate`: M (ln 2)^2 / |ln P|, rounded to the nearest integer.
std::uint64_t capacity_for(std::uint64_t bits, double fp_rate);

/// Seeded 64-bit hash of a byte string.
std::uint64_t hash_bytes(std::span<const std::byte> key, std::uint64_t seed);

/// One fixed-size stage. The bit array is split into `hashes` slices of
/// `slice_bits` bits; hash function i only addresses slice i.
struct BloomStage {
  std::uint64_t capacity = 0;
  double fp_budget = 0.0;
  std::uint32_t hashes = 0;
  std::uint64_t slice_bits = 0;
  std::uint64_t seed_a = 0;
  std::uint64_t seed_b = 0;
  std::uint64_t fill = 0;
  std::vector<std::uint64_t> words;

  std::uint64_t total_bits() const { return slice_bits * hashes; }
  bool full() const { return fill >= capacity; }
  void set(std::span<const std::byte> key);
  bool test(std::span<const std::byte> key) const;
};

/// Scalable bloom filter: stages grow geometrically in capacity while their
/// FP budgets shrink geometrically, so the compound rate stays below P.
class ScalableBloomFilter {
 public:
  explicit ScalableBloomFilter(BloomParams params = {}, std::uint64_t seed = 0x5eed);

  void insert(std::span<const std::byte> key);
  bool maybe_contains(std::span<const std::byte> key) const;

  const BloomParams& params() const { return params_; }
  const std::vector<BloomStage>& stages() const { return stages_; }
  std::uint64_t total_inserted() const { return total_inserted_; }
  std::uint64_t seed() const { return seed_; }
  /// Upper bound on the compound FP rate of the stages opened so far.
  double compound_fp_bound() const;

  // Serialization access.
  static ScalableBloomFilter restore(BloomParams params, std::uint64_t seed,
                                     std::uint64_t total_inserted, std::vector<BloomStage> stages);

 private:
  void open_stage();

  BloomParams params_;
  std::uint64_t seed_;
  std::uint64_t total_inserted_ = 0;
  std::vector<BloomStage> stages_;
};

/// Bloom filter over p-node walk windows. Keys are the p ids as
/// little-endian u32s.
class NeighborhoodFilter {
 public:
  NeighborhoodFilter(std::size_t window, BloomParams params, std::uint64_t seed = 0x5eed);

  std::size_t window() const { return window_; }
  void insert_window(std::span<const NodeId> window);
  bool maybe_contains(std::span<const NodeId> window) const;
  const ScalableBloomFilter& filter() const { return filter_; }

  void save(const std::filesystem::path& path) const;
  static NeighborhoodFilter load(const std::filesystem::path& path);

  /// Size in bytes of the serialized form.
  std::size_t serialized_size() const;

 private:
  NeighborhoodFilter(std::size_t window, ScalableBloomFilter filter)
      : window_(window), filter_(std::move(filter)) {}
  std::span<const std::byte> key_bytes(std::span<const NodeId> window) const;

  std::size_t window_;
  ScalableBloomFilter filter_;
};

/// Inserts every length-p window of every walk (m * (k - p + 1) inserts).
/// When params.initial_capacity is 0 it is set to that insert count.
NeighborhoodFilter build_neighborhood_filter(const WalkMatrix& corpus, std::size_t p,
                                             BloomParams params);

}  // namespace fsg
