#include "fsg/switching.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fsg/blob_file.hpp"

namespace fsg {

ExplorationCurve exploration_of(const WalkMatrix& walks, const NeighborhoodFilter& filter,
                                std::string tag) {
  const std::size_t p = filter.window();
  const std::size_t l = walks.walk_length();
  if (l < p) {
    throw std::invalid_argument("walk length " + std::to_string(l) + " is shorter than window " +
                                std::to_string(p));
  }
  ExplorationCurve curve;
  curve.ex.assign(l, 0.0);
  curve.n_walks = walks.num_walks();
  curve.window = p;
  curve.tag = std::move(tag);
  if (walks.num_walks() == 0) return curve;
  std::vector<std::uint64_t> exploring(l, 0);
  for (std::size_t i = 0; i < walks.num_walks(); ++i) {
    const auto walk = walks.row(i);
    for (std::size_t t = p - 1; t < l; ++t) {
      if (!filter.maybe_contains(walk.subspan(t + 1 - p, p))) ++exploring[t];
    }
  }
  for (std::size_t t = 0; t < l; ++t) {
    curve.ex[t] = 100.0 * static_cast<double>(exploring[t]) / static_cast<double>(walks.num_walks());
  }
  return curve;
}

CurveMeasurement measure_curves(const NextNodeModel& model, const NeighborhoodFilter& filter,
                                std::size_t n_walks, std::size_t l, std::uint64_t seed,
                                std::string tag, unsigned workers) {
  if (l < filter.window()) throw std::invalid_argument("curve length is shorter than the window");
  if (l > model.context_len() + 1) throw ModelError("curve length exceeds model context");
  WalkMatrix walks(n_walks, l, model.num_nodes());
  std::vector<double> per_walk(n_walks * l, 0.0);
  parallel_blocks(n_walks, workers, [&](std::size_t begin, std::size_t end) {
    auto state = model.new_state();
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = generation_rng(seed, i);
      extend_walk(model, *state, walks.row(i), 0, 1.0, rng,
                  std::span<double>(per_walk.data() + i * l, l));
    }
  });
  CurveMeasurement out;
  out.exploration = exploration_of(walks, filter, std::move(tag));
  out.entropy.assign(l, 0.0);
  for (std::size_t i = 0; i < n_walks; ++i) {
    for (std::size_t t = 0; t < l; ++t) out.entropy[t] += per_walk[i * l + t];
  }
  if (n_walks > 0) {
    for (double& e : out.entropy) e /= static_cast<double>(n_walks);
  }
  return out;
}

ExplorationCurve exploration_curve(const NextNodeModel& model, const NeighborhoodFilter& filter,
                                   std::size_t n_walks, std::size_t l, std::uint64_t seed,
                                   std::string tag, unsigned workers) {
  if (l < filter.window()) throw std::invalid_argument("curve length is shorter than the window");
  WalkMatrix walks = generate_walks(model, n_walks, l, 1.0, seed, workers);
  return exploration_of(walks, filter, std::move(tag));
}

std::vector<double> entropy_curve(const NextNodeModel& model, std::size_t n_walks, std::size_t l,
                                  std::uint64_t seed, unsigned workers) {
  if (l == 0 || l > model.context_len() + 1) throw ModelError("invalid curve length");
  std::vector<double> per_walk(n_walks * l, 0.0);
  parallel_blocks(n_walks, workers, [&](std::size_t begin, std::size_t end) {
    auto state = model.new_state();
    std::vector<NodeId> walk(l);
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = generation_rng(seed, i);
      extend_walk(model, *state, walk, 0, 1.0, rng, std::span<double>(per_walk.data() + i * l, l));
    }
  });
  std::vector<double> out(l, 0.0);
  for (std::size_t i = 0; i < n_walks; ++i) {
    for (std::size_t t = 0; t < l; ++t) out[t] += per_walk[i * l + t];
  }
  if (n_walks > 0) {
    for (double& e : out) e /= static_cast<double>(n_walks);
  }
  return out;
}

std::size_t find_knee(std::span<const double> curve, double sensitivity) {
  const std::size_t n = curve.size();
  if (n < 3) throw KneeError("knee search needs at least 3 points");
  if (!(sensitivity >= 0.0) || !std::isfinite(sensitivity)) {
    throw KneeError("sensitivity must be finite and >= 0");
  }
  const auto [lo, hi] = std::minmax_element(curve.begin(), curve.end());
  if (!std::isfinite(*lo) || !std::isfinite(*hi)) throw KneeError("curve has non-finite values");
  if (*hi == *lo) throw KneeError("no knee: curve is constant");
  const double range = *hi - *lo;
  const double span = static_cast<double>(n - 1);
  // i / span rather than i * (1 / span): one rounding, so exact ties stay ties
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = static_cast<double>(i) / span - (curve[i] - *lo) / range;
  }
  std::vector<std::size_t> maxima;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (d[i] > d[i - 1] && d[i] >= d[i + 1]) maxima.push_back(i);
  }
  for (std::size_t m = 0; m < maxima.size(); ++m) {
    const std::size_t i = maxima[m];
    const double threshold = d[i] - sensitivity / span;
    const std::size_t stop = m + 1 < maxima.size() ? maxima[m + 1] : n;
    for (std::size_t k = i + 1; k < stop; ++k) {
      if (d[k] < threshold) return i + 1;
    }
  }
  std::size_t best = 1;
  for (std::size_t i = 2; i < n; ++i) {
    if (curve[i] - curve[i - 1] > curve[best] - curve[best - 1]) best = i;
  }
  return best;
}

nlohmann::ordered_json to_json(const HandoverPoint& h) {
  return {{"j", h.j},
          {"method", h.method == HandoverMethod::knee ? "knee" : "fixed"},
          {"source", h.source},
          {"sensitivity", h.sensitivity}};
}

HandoverPoint handover_from_json(const nlohmann::json& j) {
  HandoverPoint h;
  h.j = j.at("j").get<std::size_t>();
  const auto method = j.at("method").get<std::string>();
  if (method == "knee") {
    h.method = HandoverMethod::knee;
  } else if (method == "fixed") {
    h.method = HandoverMethod::fixed;
  } else {
    throw std::invalid_argument("unknown handover method '" + method + "'");
  }
  h.source = j.value("source", "");
  h.sensitivity = j.value("sensitivity", 1.0);
  return h;
}

HandoverPoint handover_point(const ExplorationCurve& fast, const ExplorationCurve& slow,
                             double sensitivity) {
  if (fast.ex.size() != slow.ex.size()) {
    throw std::invalid_argument("handover_point: curves differ in length");
  }
  const std::size_t p = std::max<std::size_t>(slow.window, 1);
  if (slow.ex.size() < p + 2) throw KneeError("curve too short for the window");
  const std::span<const double> defined(slow.ex.data() + (p - 1), slow.ex.size() - (p - 1));
  HandoverPoint h;
  h.j = find_knee(defined, sensitivity) + (p - 1);
  h.method = HandoverMethod::knee;
  h.source = slow.tag.empty() ? "slow" : slow.tag;
  h.sensitivity = sensitivity;
  return h;
}

HandoverPoint fixed_handover(std::size_t j, std::size_t l) {
  if (j == 0 || j >= l) {
    throw std::invalid_argument("handover step " + std::to_string(j) + " must lie in (0, " +
                                std::to_string(l) + ")");
  }
  HandoverPoint h;
  h.j = j;
  h.method = HandoverMethod::fixed;
  h.source = "fixed";
  return h;
}

namespace {

void check_cascade(const NextNodeModel& fast, const NextNodeModel& slow, std::size_t j,
                   std::size_t l) {
  if (fast.vocab_size() != slow.vocab_size()) {
    throw ModelError("FAST and SLOW vocabularies differ (" + std::to_string(fast.vocab_size()) +
                     " vs " + std::to_string(slow.vocab_size()) + ")");
  }
  if (j == 0 || j >= l) {
    throw std::invalid_argument("handover step " + std::to_string(j) + " must lie in (0, " +
                                std::to_string(l) + ")");
  }
  if (j > fast.context_len() + 1 || l > slow.context_len() + 1) {
    throw ModelError("walk length exceeds model context");
  }
}

}  // namespace

WalkMatrix generate_fast_slow(const NextNodeModel& fast, const NextNodeModel& slow, std::size_t j,
                              std::span<const NodeId> start_nodes, std::size_t l,
                              double temperature, std::uint64_t seed, unsigned workers) {
  check_cascade(fast, slow, j, l);
  for (NodeId s : start_nodes) {
    if (s >= fast.num_nodes()) throw ModelError("start node out of range");
  }
  WalkMatrix out(start_nodes.size(), l, fast.num_nodes());
  parallel_blocks(start_nodes.size(), workers, [&](std::size_t begin, std::size_t end) {
    auto fast_state = fast.new_state();
    auto slow_state = slow.new_state();
    for (std::size_t i = begin; i < end; ++i) {
      auto walk = out.row(i);
      walk[0] = start_nodes[i];
      Rng rng = generation_rng(seed, i);
      extend_walk(fast, *fast_state, walk.first(j), 1, temperature, rng);
      extend_walk(slow, *slow_state, walk, j, temperature, rng);
    }
  });
  return out;
}

WalkMatrix generate_fast_slow(const NextNodeModel& fast, const NextNodeModel& slow, std::size_t j,
                              std::size_t n, std::size_t l, double temperature, std::uint64_t seed,
                              unsigned workers) {
  check_cascade(fast, slow, j, l);
  WalkMatrix out(n, l, fast.num_nodes());
  parallel_blocks(n, workers, [&](std::size_t begin, std::size_t end) {
    auto fast_state = fast.new_state();
    auto slow_state = slow.new_state();
    for (std::size_t i = begin; i < end; ++i) {
      auto walk = out.row(i);
      Rng rng = generation_rng(seed, i);
      extend_walk(fast, *fast_state, walk.first(j), 0, temperature, rng);
      extend_walk(slow, *slow_state, walk, j, temperature, rng);
    }
  });
  return out;
}

void save_curves_csv(const std::filesystem::path& path, const CurveMeasurement& fast,
                     const CurveMeasurement& slow) {
  const std::size_t l = fast.exploration.ex.size();
  if (slow.exploration.ex.size() != l || fast.entropy.size() != l || slow.entropy.size() != l) {
    throw std::invalid_argument("curves differ in length");
  }
  std::ostringstream out;
  out << "step,ex_fast,ex_slow,entropy_fast,entropy_slow\n";
  out.precision(10);
  for (std::size_t t = 0; t < l; ++t) {
    out << t << ',' << fast.exploration.ex[t] << ',' << slow.exploration.ex[t] << ','
        << fast.entropy[t] << ',' << slow.entropy[t] << '\n';
  }
  io::write_file_atomic(path, out.str());
}

}  // namespace fsg
