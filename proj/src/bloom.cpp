#include "fsg/bloom.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "fsg/blob_file.hpp"
#include "fsg/rng.hpp"
#include "json.hpp"

namespace fsg {

namespace {

constexpr std::string_view kBloomMagic = "FSGB";
constexpr int kBloomFormatVersion = 1;
const double kLn2Squared = std::numbers::ln2 * std::numbers::ln2;

std::uint64_t fmix64(std::uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

}  // namespace

void BloomParams::validate() const {
  if (!(fp_rate > 0.0) || fp_rate >= 0.99) {
    throw BloomError("false-positive rate must lie in (0, 0.99)");
  }
  if (initial_capacity == 0) throw BloomError("initial capacity must be positive");
  if (growth_factor < 2) throw BloomError("growth factor must be at least 2");
  if (!(tightening_ratio > 0.0 && tightening_ratio < 1.0)) {
    throw BloomError("tightening ratio must lie in (0,1)");
  }
}

std::uint64_t capacity_for(std::uint64_t bits, double fp_rate) {
  if (bits < 1) throw BloomError("capacity_for: need at least one bit");
  if (!(fp_rate > 0.0) || fp_rate >= 0.99) {
    throw BloomError("capacity_for: false-positive rate must lie in (0, 0.99)");
  }
  return static_cast<std::uint64_t>(
      std::llround(static_cast<double>(bits) * kLn2Squared / std::abs(std::log(fp_rate))));
}

std::uint64_t hash_bytes(std::span<const std::byte> key, std::uint64_t seed) {
  constexpr std::uint64_t c1 = 0x87c37b91114253d5ULL;
  constexpr std::uint64_t c2 = 0x4cf5ad432745937fULL;
  std::uint64_t h = seed ^ (key.size() * 0x9e3779b97f4a7c15ULL);
  std::size_t i = 0;
  for (; i + 8 <= key.size(); i += 8) {
    std::uint64_t w;
    std::memcpy(&w, key.data() + i, 8);
    w *= c1;
    w = std::rotl(w, 31);
    w *= c2;
    h ^= w;
    h = std::rotl(h, 27) * 5 + 0x52dce729;
  }
  if (i < key.size()) {
    std::uint64_t w = 0;
    std::memcpy(&w, key.data() + i, key.size() - i);
    w *= c2;
    w = std::rotl(w, 33);
    w *= c1;
    h ^= w;
  }
  return fmix64(h ^ key.size());
}

void BloomStage::set(std::span<const std::byte> key) {
  const std::uint64_t a = hash_bytes(key, seed_a) % slice_bits;
  const std::uint64_t b = hash_bytes(key, seed_b) % slice_bits;
  for (std::uint32_t i = 0; i < hashes; ++i) {
    const std::uint64_t bit = i * slice_bits + (a + i * b) % slice_bits;
    words[bit >> 6] |= std::uint64_t{1} << (bit & 63);
  }
}

bool BloomStage::test(std::span<const std::byte> key) const {
  const std::uint64_t a = hash_bytes(key, seed_a) % slice_bits;
  const std::uint64_t b = hash_bytes(key, seed_b) % slice_bits;
  for (std::uint32_t i = 0; i < hashes; ++i) {
    const std::uint64_t bit = i * slice_bits + (a + i * b) % slice_bits;
    if (!(words[bit >> 6] & (std::uint64_t{1} << (bit & 63)))) return false;
  }
  return true;
}

ScalableBloomFilter::ScalableBloomFilter(BloomParams params, std::uint64_t seed)
    : params_(params), seed_(seed) {
  params_.validate();
  open_stage();
}

void ScalableBloomFilter::open_stage() {
  const auto index = static_cast<std::uint64_t>(stages_.size());
  BloomStage stage;
  stage.capacity = params_.initial_capacity;
  for (std::uint64_t i = 0; i < index; ++i) stage.capacity *= params_.growth_factor;
  stage.fp_budget = params_.fp_rate * (1.0 - params_.tightening_ratio) *
                    std::pow(params_.tightening_ratio, static_cast<double>(index));
  stage.hashes = static_cast<std::uint32_t>(
      std::max(1.0, std::ceil(std::log2(1.0 / stage.fp_budget))));
  const double bits_needed =
      std::ceil(static_cast<double>(stage.capacity) * std::abs(std::log(stage.fp_budget)) /
                kLn2Squared);
  stage.slice_bits = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::ceil(bits_needed / stage.hashes)));
  stage.seed_a = stream_seed(seed_, 2 * index);
  stage.seed_b = stream_seed(seed_, 2 * index + 1);
  stage.words.assign((stage.total_bits() + 63) / 64, 0);
  stages_.push_back(std::move(stage));
}

void ScalableBloomFilter::insert(std::span<const std::byte> key) {
  ++total_inserted_;
  if (maybe_contains(key)) return;
  if (stages_.back().full()) open_stage();
  BloomStage& active = stages_.back();
  active.set(key);
  ++active.fill;
}

bool ScalableBloomFilter::maybe_contains(std::span<const std::byte> key) const {
  for (const auto& stage : stages_) {
    if (stage.test(key)) return true;
  }
  return false;
}

double ScalableBloomFilter::compound_fp_bound() const {
  double survive = 1.0;
  for (const auto& stage : stages_) survive *= 1.0 - stage.fp_budget;
  return 1.0 - survive;
}

ScalableBloomFilter ScalableBloomFilter::restore(BloomParams params, std::uint64_t seed,
                                                 std::uint64_t total_inserted,
                                                 std::vector<BloomStage> stages) {
  ScalableBloomFilter f(params, seed);
  if (stages.empty()) throw BloomError("bloom filter without stages");
  f.stages_ = std::move(stages);
  f.total_inserted_ = total_inserted;
  return f;
}

NeighborhoodFilter::NeighborhoodFilter(std::size_t window, BloomParams params, std::uint64_t seed)
    : window_(window), filter_(params, seed) {
  if (window == 0) throw BloomError("window size must be positive");
}

std::span<const std::byte> NeighborhoodFilter::key_bytes(std::span<const NodeId> window) const {
  if (window.size() != window_) {
    throw BloomError("window of size " + std::to_string(window.size()) + ", filter expects " +
                     std::to_string(window_));
  }
  // NodeId is u32 and the host is little-endian, so the ids are the key bytes.
  return std::as_bytes(window);
}

void NeighborhoodFilter::insert_window(std::span<const NodeId> window) {
  filter_.insert(key_bytes(window));
}

bool NeighborhoodFilter::maybe_contains(std::span<const NodeId> window) const {
  return filter_.maybe_contains(key_bytes(window));
}

namespace {

nlohmann::ordered_json bloom_header(const ScalableBloomFilter& f, std::size_t window) {
  nlohmann::ordered_json h;
  h["version"] = kBloomFormatVersion;
  h["fp_rate"] = f.params().fp_rate;
  h["window"] = window;
  h["initial_capacity"] = f.params().initial_capacity;
  h["growth_factor"] = f.params().growth_factor;
  h["tightening_ratio"] = f.params().tightening_ratio;
  h["seed"] = f.seed();
  h["total_inserted"] = f.total_inserted();
  auto& stages = h["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : f.stages()) {
    stages.push_back({{"bits", s.total_bits()},
                      {"hashes", s.hashes},
                      {"slice_bits", s.slice_bits},
                      {"capacity", s.capacity},
                      {"fp_budget", s.fp_budget},
                      {"seed_a", s.seed_a},
                      {"seed_b", s.seed_b},
                      {"fill", s.fill}});
  }
  return h;
}

}  // namespace

void NeighborhoodFilter::save(const std::filesystem::path& path) const {
  std::string payload;
  for (const auto& s : filter_.stages()) io::append_span(payload, std::span(s.words));
  io::write_blob_file(path, kBloomMagic, bloom_header(filter_, window_), payload);
}

std::size_t NeighborhoodFilter::serialized_size() const {
  std::size_t bytes = 16 + bloom_header(filter_, window_).dump().size();
  for (const auto& s : filter_.stages()) bytes += s.words.size() * sizeof(std::uint64_t);
  return bytes;
}

NeighborhoodFilter NeighborhoodFilter::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw BloomError("bloom filter not found: " + path.string());
  const auto blob = io::read_blob_file(path, kBloomMagic);
  const auto& h = blob.header;
  if (h.at("version").get<int>() != kBloomFormatVersion) {
    throw BloomError(path.string() + ": unsupported bloom format version");
  }
  BloomParams params;
  params.fp_rate = h.at("fp_rate").get<double>();
  params.initial_capacity = h.at("initial_capacity").get<std::uint64_t>();
  params.growth_factor = h.at("growth_factor").get<std::uint32_t>();
  params.tightening_ratio = h.at("tightening_ratio").get<double>();
  io::ByteReader reader(blob.payload);
  std::vector<BloomStage> stages;
  for (const auto& sj : h.at("stages")) {
    BloomStage s;
    s.hashes = sj.at("hashes").get<std::uint32_t>();
    s.slice_bits = sj.at("slice_bits").get<std::uint64_t>();
    s.capacity = sj.at("capacity").get<std::uint64_t>();
    s.fp_budget = sj.at("fp_budget").get<double>();
    s.seed_a = sj.at("seed_a").get<std::uint64_t>();
    s.seed_b = sj.at("seed_b").get<std::uint64_t>();
    s.fill = sj.at("fill").get<std::uint64_t>();
    if (sj.at("bits").get<std::uint64_t>() != s.total_bits()) {
      throw BloomError(path.string() + ": stage bit count disagrees with slices");
    }
    s.words.resize((s.total_bits() + 63) / 64);
    reader.read_into(std::span(s.words));
    stages.push_back(std::move(s));
  }
  if (reader.remaining() != 0) throw BloomError(path.string() + ": trailing bytes after stages");
  auto filter = ScalableBloomFilter::restore(params, h.at("seed").get<std::uint64_t>(),
                                             h.at("total_inserted").get<std::uint64_t>(),
                                             std::move(stages));
  return NeighborhoodFilter(h.at("window").get<std::size_t>(), std::move(filter));
}

NeighborhoodFilter build_neighborhood_filter(const WalkMatrix& corpus, std::size_t p,
                                             BloomParams params) {
  const std::size_t k = corpus.walk_length();
  if (p == 0 || p > k) {
    throw BloomError("window size " + std::to_string(p) + " exceeds walk length " +
                     std::to_string(k));
  }
  const std::uint64_t windows = corpus.num_walks() * (k - p + 1);
  if (params.initial_capacity == 0) params.initial_capacity = std::max<std::uint64_t>(1, windows);
  NeighborhoodFilter filter(p, params);
  for (std::size_t i = 0; i < corpus.num_walks(); ++i) {
    const auto row = corpus.row(i);
    for (std::size_t j = 0; j + p <= k; ++j) filter.insert_window(row.subspan(j, p));
  }
  return filter;
}

}  // namespace fsg
