#include "fsg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <vector>

#include "fsg/walks.hpp"

namespace fsg {

namespace {

void require_nonempty(std::span<const double> pos, std::span<const double> neg, const char* what) {
  if (pos.empty() || neg.empty()) {
    throw MetricError(std::string(what) + ": positive and negative score lists must be nonempty");
  }
}

}  // namespace

double auc(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  require_nonempty(pos_scores, neg_scores, "auc");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(pos_scores.size() + neg_scores.size());
  for (double s : pos_scores) items.push_back({s, true});
  for (double s : neg_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Mann-Whitney U with mid-ranks for ties.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < items.size() && items[j].score == items[i].score) {
      pos_in_group += items[j].positive ? 1 : 0;
      ++j;
    }
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += mid_rank * static_cast<double>(pos_in_group);
    i = j;
  }
  const auto np = static_cast<double>(pos_scores.size());
  const auto nn = static_cast<double>(neg_scores.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double average_precision(std::span<const double> pos_scores, std::span<const double> neg_scores) {
  require_nonempty(pos_scores, neg_scores, "average_precision");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> items;
  items.reserve(pos_scores.size() + neg_scores.size());
  for (double s : pos_scores) items.push_back({s, true});
  for (double s : neg_scores) items.push_back({s, false});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    return !a.positive && b.positive;
  });
  double sum = 0.0;
  std::size_t seen = 0;
  std::size_t hits = 0;
  for (const auto& item : items) {
    ++seen;
    if (item.positive) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(seen);
    }
  }
  return sum / static_cast<double>(pos_scores.size());
}

LinkPrediction link_prediction_eval(const EdgeScores& scores, std::span<const Edge> heldout,
                                    std::span<const Edge> negatives) {
  std::vector<double> pos;
  std::vector<double> neg;
  pos.reserve(heldout.size());
  neg.reserve(negatives.size());
  for (const Edge& e : heldout) pos.push_back(scores.score(e.u, e.v));
  for (const Edge& e : negatives) neg.push_back(scores.score(e.u, e.v));
  LinkPrediction out;
  out.auc = auc(pos, neg);
  out.average_precision = average_precision(pos, neg);
  out.positives = pos.size();
  out.negatives = neg.size();
  return out;
}

std::optional<double> degree_assortativity(const Graph& g) {
  if (g.num_edges() == 0) return std::nullopt;
  // Each edge contributes (du, dv) and (dv, du), so both marginals coincide.
  double sx = 0.0, sxx = 0.0, sxy = 0.0;
  for (const Edge& e : g.edges()) {
    const auto du = static_cast<double>(g.degree(e.u));
    const auto dv = static_cast<double>(g.degree(e.v));
    sx += du + dv;
    sxx += du * du + dv * dv;
    sxy += 2.0 * du * dv;
  }
  const double count = 2.0 * static_cast<double>(g.num_edges());
  const double mean = sx / count;
  const double var = sxx / count - mean * mean;
  if (var <= 1e-12 * std::max(1.0, mean * mean)) return std::nullopt;
  const double cov = sxy / count - mean * mean;
  return cov / var;
}

std::uint64_t triangle_count(const Graph& g, unsigned workers) {
  std::vector<std::uint64_t> per_node(g.num_nodes(), 0);
  parallel_for(g.num_nodes(), workers, [&](std::size_t ui) {
    const auto u = static_cast<NodeId>(ui);
    const auto nu = g.neighbors(u);
    std::uint64_t local = 0;
    for (NodeId v : nu) {
      if (v <= u) continue;
      const auto nv = g.neighbors(v);
      // Count w > v adjacent to both.
      auto a = std::upper_bound(nu.begin(), nu.end(), v);
      auto b = std::upper_bound(nv.begin(), nv.end(), v);
      while (a != nu.end() && b != nv.end()) {
        if (*a < *b) {
          ++a;
        } else if (*b < *a) {
          ++b;
        } else {
          ++local;
          ++a;
          ++b;
        }
      }
    }
    per_node[ui] = local;
  });
  return std::accumulate(per_node.begin(), per_node.end(), std::uint64_t{0});
}

double power_law_exponent(const Graph& g) {
  constexpr double d_min = 1.0;
  double log_sum = 0.0;
  std::size_t count = 0;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const auto d = static_cast<double>(g.degree(v));
    if (d < d_min) continue;
    log_sum += std::log(d / (d_min - 0.5));
    ++count;
  }
  if (count == 0) throw MetricError("power-law exponent needs at least one node with degree >= 1");
  return 1.0 + static_cast<double>(count) / log_sum;
}

double clustering_coefficient(const Graph& g) {
  if (g.num_nodes() == 0) return 0.0;
  double total = 0.0;
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    const auto nv = g.neighbors(v);
    const std::size_t d = nv.size();
    if (d < 2) continue;
    std::size_t links = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const auto ni = g.neighbors(nv[i]);
      // Neighbors of nv[i] that are also neighbors of v with a larger index.
      auto a = nv.begin() + static_cast<std::ptrdiff_t>(i) + 1;
      auto b = std::upper_bound(ni.begin(), ni.end(), nv[i]);
      while (a != nv.end() && b != ni.end()) {
        if (*a < *b) {
          ++a;
        } else if (*b < *a) {
          ++b;
        } else {
          ++links;
          ++a;
          ++b;
        }
      }
    }
    total += static_cast<double>(links) / (static_cast<double>(d) * static_cast<double>(d - 1) / 2.0);
  }
  return total / static_cast<double>(g.num_nodes());
}

double characteristic_path_length(const Graph& g, unsigned workers) {
  if (g.empty()) throw MetricError("path length of an empty graph");
  const Graph core = lcc(g);
  const NodeId n = core.num_nodes();
  if (n < 2) return 0.0;
  std::vector<std::uint64_t> sums(n, 0);
  parallel_for(n, workers, [&](std::size_t s) {
    std::vector<std::uint32_t> dist(n, std::numeric_limits<std::uint32_t>::max());
    std::vector<NodeId> queue{static_cast<NodeId>(s)};
    dist[s] = 0;
    std::uint64_t sum = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const NodeId x = queue[head];
      sum += dist[x];
      for (NodeId y : core.neighbors(x)) {
        if (dist[y] == std::numeric_limits<std::uint32_t>::max()) {
          dist[y] = dist[x] + 1;
          queue.push_back(y);
        }
      }
    }
    sums[s] = sum;
  });
  const auto total = std::accumulate(sums.begin(), sums.end(), std::uint64_t{0});
  return static_cast<double>(total) / (static_cast<double>(n) * static_cast<double>(n - 1));
}

StructuralMetrics structural_report(const Graph& g,
                                    std::optional<std::span<const std::uint32_t>> communities,
                                    unsigned workers) {
  if (g.empty()) throw MetricError("structural report of an empty graph");
  StructuralMetrics m;
  for (NodeId v = 0; v < g.num_nodes(); ++v) m.max_degree = std::max(m.max_degree, g.degree(v));
  m.assortativity = degree_assortativity(g);
  m.triangle_count = triangle_count(g, workers);
  m.power_law_exponent = g.num_edges() ? power_law_exponent(g) : 0.0;
  m.clustering_coefficient = clustering_coefficient(g);
  m.characteristic_path_length = characteristic_path_length(g, workers);

  if (communities) {
    const auto labels = *communities;
    if (labels.size() != g.num_nodes()) throw MetricError("community labels do not match graph");
    std::vector<std::uint64_t> sizes;
    for (auto c : labels) {
      if (c >= sizes.size()) sizes.resize(c + 1, 0);
      ++sizes[c];
    }
    double within_pairs = 0.0;
    for (auto s : sizes) within_pairs += static_cast<double>(s) * static_cast<double>(s - (s ? 1 : 0)) / 2.0;
    const double n = g.num_nodes();
    const double cross_pairs = n * (n - 1.0) / 2.0 - within_pairs;
    std::uint64_t within = 0;
    for (const Edge& e : g.edges()) within += labels[e.u] == labels[e.v] ? 1 : 0;
    const std::uint64_t cross = g.num_edges() - within;
    if (within_pairs > 0) m.intra_community_density = static_cast<double>(within) / within_pairs;
    if (cross_pairs > 0) m.inter_community_density = static_cast<double>(cross) / cross_pairs;
  }
  return m;
}

namespace {

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json("undefined");
}

std::optional<double> optional_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  return std::nullopt;
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string csv_optional(const std::optional<double>& v) { return v ? csv_number(*v) : "undefined"; }

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["label"] = r.label;
  j["auc"] = r.auc;
  j["average_precision"] = r.average_precision;
  j["score_orientation"] = r.score_orientation;
  j["wall_clock_generation_seconds"] = r.wall_clock_generation_seconds;
  const auto& s = r.structural;
  j["structural"] = {{"max_degree", s.max_degree},
                     {"assortativity", optional_json(s.assortativity)},
                     {"triangle_count", s.triangle_count},
                     {"power_law_exponent", s.power_law_exponent},
                     {"intra_community_density", optional_json(s.intra_community_density)},
                     {"inter_community_density", optional_json(s.inter_community_density)},
                     {"clustering_coefficient", s.clustering_coefficient},
                     {"characteristic_path_length", s.characteristic_path_length}};
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.label = j.at("label").get<std::string>();
  r.auc = j.at("auc").get<double>();
  r.average_precision = j.at("average_precision").get<double>();
  r.score_orientation = j.at("score_orientation").get<std::string>();
  r.wall_clock_generation_seconds = j.at("wall_clock_generation_seconds").get<double>();
  const auto& s = j.at("structural");
  r.structural.max_degree = s.at("max_degree").get<std::size_t>();
  r.structural.assortativity = optional_from_json(s.at("assortativity"));
  r.structural.triangle_count = s.at("triangle_count").get<std::uint64_t>();
  r.structural.power_law_exponent = s.at("power_law_exponent").get<double>();
  r.structural.intra_community_density = optional_from_json(s.at("intra_community_density"));
  r.structural.inter_community_density = optional_from_json(s.at("inter_community_density"));
  r.structural.clustering_coefficient = s.at("clustering_coefficient").get<double>();
  r.structural.characteristic_path_length = s.at("characteristic_path_length").get<double>();
  return r;
}

std::string eval_csv_header() {
  return "label,auc,average_precision,generation_seconds,max_degree,assortativity,"
         "triangle_count,power_law_exponent,intra_community_density,inter_community_density,"
         "clustering_coefficient,characteristic_path_length";
}

std::string eval_csv_row(const EvalReport& r) {
  const auto& s = r.structural;
  return r.label + ',' + csv_number(r.auc) + ',' + csv_number(r.average_precision) + ',' +
         csv_number(r.wall_clock_generation_seconds) + ',' + std::to_string(s.max_degree) + ',' +
         csv_optional(s.assortativity) + ',' + std::to_string(s.triangle_count) + ',' +
         csv_number(s.power_law_exponent) + ',' + csv_optional(s.intra_community_density) + ',' +
         csv_optional(s.inter_community_density) + ',' + csv_number(s.clustering_coefficient) +
         ',' + csv_number(s.characteristic_path_length);
}

}  // namespace fsg
