#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rebalancer/costgraph.hpp"
#include "rebalancer/pathfinder.hpp"

namespace rebalancer::evaluation {

struct PortfolioPosition {
  std::vector<std::string> tickers;
  std::vector<double> weights;     // fractions, sum to 1
  std::vector<double> prices;      // currency units, > 0
  std::vector<double> unit_costs;  // currency per unit, >= 0
};

// C = sum_i w_i * P_i * T_i
double total_transaction_cost(const PortfolioPosition& position);

// 1 - SS_res / SS_tot over pooled observations.
double r_squared(const std::vector<double>& predicted, const std::vector<double>& actual);

struct PairReduction {
  std::string source;
  std::string target;
  double direct_cost = 0.0;
  double min_cost = 0.0;
  double reduction_pct = 0.0;
  bool zero_direct_cost = false;  // reduction defined as 0 for zero-cost direct edges
  PathResult path;
};

struct CostReductionSummary {
  std::vector<PairReduction> per_pair;
  double average_pct = 0.0;
};

// reduction = 100 * (1 - C_min / direct). Never negative: the direct edge is
// always a feasible path.
CostReductionSummary cost_reduction(const AssetGraph& g,
                                    const std::vector<std::pair<std::string, std::string>>& pairs);

struct PathEfficiency {
  double average_steps = 0.0;
  std::map<int, int> histogram;  // step count -> occurrences
};

PathEfficiency path_efficiency(const std::vector<PathResult>& results);

struct StageRuntimes {
  double train_epoch_seconds = 0.0;
  double dijkstra_seconds = 0.0;
  double end_to_end_seconds = 0.0;
};

struct MetricsReport {
  double mse_normalized = 0.0;
  double mse_currency = 0.0;
  double r2 = 0.0;
  double avg_cost_reduction_pct = 0.0;
  double avg_path_steps = 0.0;
  StageRuntimes runtimes;
  // Context the averages were taken over.
  std::vector<std::string> pair_labels;
  std::string period_start;
  std::string period_end;
  std::map<std::string, double> per_pair_reduction_pct;
  std::map<int, int> steps_histogram;
};

struct SeriesPoint {
  std::string date;
  std::string pair;  // "AAA-BBB", lexicographic
  double actual = 0.0;
  double predicted = 0.0;
};

// Writes report.json and the plot-ready series CSV (`date,pair,actual,
// predicted`). Identical inputs reproduce identical bytes.
void emit_report(const MetricsReport& metrics, const std::vector<SeriesPoint>& series,
                 const std::filesystem::path& report_path,
                 const std::filesystem::path& series_path);

}  // namespace rebalancer::evaluation
