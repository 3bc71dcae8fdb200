#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

#include "fsg/assembly.hpp"
#include "fsg/graph.hpp"
#include "json.hpp"

namespace fsg {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Probability that a random positive outscores a random negative; ties
/// count one half.
double auc(std::span<const double> pos_scores, std::span<const double> neg_scores);

/// Mean precision at the rank of each positive. Within a group of tied
/// scores negatives are ranked first (pessimistic).
double average_precision(std::span<const double> pos_scores, std::span<const double> neg_scores);

struct LinkPrediction {
  double auc = 0.0;
  double average_precision = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Scores held-out edges (positives) against sampled non-edges using the
/// symmetric score max(p_ij, p_ji); unobserved pairs score 0.
LinkPrediction link_prediction_eval(const EdgeScores& scores, std::span<const Edge> heldout,
                                    std::span<const Edge> negatives);

struct StructuralMetrics {
  std::size_t max_degree = 0;
  std::optional<double> assortativity;  ///< undefined when a degree variance is 0
  std::uint64_t triangle_count = 0;
  double power_law_exponent = 0.0;
  std::optional<double> intra_community_density;
  std::optional<double> inter_community_density;
  double clustering_coefficient = 0.0;
  double characteristic_path_length = 0.0;
};

std::optional<double> degree_assortativity(const Graph& g);
std::uint64_t triangle_count(const Graph& g, unsigned workers = 1);
/// Discrete MLE with d_min = 1: 1 + n (sum ln(d / (d_min - 1/2)))^-1.
double power_law_exponent(const Graph& g);
/// Mean local clustering; nodes of degree < 2 contribute 0.
double clustering_coefficient(const Graph& g);
/// Mean shortest-path length over ordered pairs of the largest component.
double characteristic_path_length(const Graph& g, unsigned workers = 1);

StructuralMetrics structural_report(const Graph& g,
                                    std::optional<std::span<const std::uint32_t>> communities = {},
                                    unsigned workers = 1);

struct EvalReport {
  std::string label;
  double auc = 0.0;
  double average_precision = 0.0;
  double wall_clock_generation_seconds = 0.0;
  StructuralMetrics structural;
  std::string score_orientation = "max(p_ij,p_ji)";
};

nlohmann::ordered_json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& report);

}  // namespace fsg
