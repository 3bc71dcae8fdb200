#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsg/bloom.hpp"
#include "fsg/model.hpp"
#include "json.hpp"

namespace fsg {

/// EX[t]: percentage of sampled walks whose window ending at position t was
/// never seen in training. Positions before the first full window are 0.
struct ExplorationCurve {
  std::vector<double> ex;
  std::size_t n_walks = 0;
  std::size_t window = 0;
  std::string tag;
};

/// Exploration curve plus per-position mean entropy (nats) of the
/// distribution each node was drawn from, measured on the same walks.
struct CurveMeasurement {
  ExplorationCurve exploration;
  std::vector<double> entropy;
};

/// Scores already generated walks against the filter.
ExplorationCurve exploration_of(const WalkMatrix& walks, const NeighborhoodFilter& filter,
                                std::string tag = {});

CurveMeasurement measure_curves(const NextNodeModel& model, const NeighborhoodFilter& filter,
                                std::size_t n_walks, std::size_t l, std::uint64_t seed,
                                std::string tag = {}, unsigned workers = 1);

ExplorationCurve exploration_curve(const NextNodeModel& model, const NeighborhoodFilter& filter,
                                   std::size_t n_walks, std::size_t l, std::uint64_t seed,
                                   std::string tag = {}, unsigned workers = 1);

/// Diagnostic only; never used to pick the handover.
std::vector<double> entropy_curve(const NextNodeModel& model, std::size_t n_walks, std::size_t l,
                                  std::uint64_t seed, unsigned workers = 1);

class KneeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Kneedle on an increasing onset curve. The curve is min-max normalized
/// against x = i/(L-1); the difference curve is x - y. A local maximum of
/// the difference curve marks the last flat point before the rise; it counts
/// when the difference later falls below d_max - sensitivity/(L-1) before
/// the next local maximum. Returns the point right after the first such
/// maximum (the first step of the rise). Without one, returns the index of
/// the largest first difference y[i] - y[i-1], ties to the smallest index.
std::size_t find_knee(std::span<const double> curve, double sensitivity = 1.0);

enum class HandoverMethod { knee, fixed };

struct HandoverPoint {
  std::size_t j = 0;
  HandoverMethod method = HandoverMethod::knee;
  std::string source;
  double sensitivity = 1.0;
};

nlohmann::ordered_json to_json(const HandoverPoint& h);
HandoverPoint handover_from_json(const nlohmann::json& j);

/// Knee of the SLOW curve over the positions where exploration is defined.
HandoverPoint handover_point(const ExplorationCurve& fast, const ExplorationCurve& slow,
                             double sensitivity = 1.0);
HandoverPoint fixed_handover(std::size_t j, std::size_t l);

/// Walk i starts at start_nodes[i]; positions 1..j-1 come from FAST, the
/// rest from SLOW, which reads the j-node prefix in one pass and then decodes
/// token by token. Both models draw from the walk's single RNG stream, so the
/// first j positions equal FAST-only sampling with the same seed.
WalkMatrix generate_fast_slow(const NextNodeModel& fast, const NextNodeModel& slow, std::size_t j,
                              std::span<const NodeId> start_nodes, std::size_t l,
                              double temperature, std::uint64_t seed, unsigned workers = 1);

/// As above with the first node also drawn from FAST.
WalkMatrix generate_fast_slow(const NextNodeModel& fast, const NextNodeModel& slow, std::size_t j,
                              std::size_t n, std::size_t l, double temperature, std::uint64_t seed,
                              unsigned workers = 1);

/// step,ex_fast,ex_slow,entropy_fast,entropy_slow
void save_curves_csv(const std::filesystem::path& path, const CurveMeasurement& fast,
                     const CurveMeasurement& slow);

}  // namespace fsg
