#include "rebalancer/evaluation.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "rebalancer/errors.hpp"
#include "rebalancer/io_util.hpp"

namespace rebalancer::evaluation {

double total_transaction_cost(const PortfolioPosition& position) {
  const std::size_t n = position.tickers.size();
  if (n == 0 || position.weights.size() != n || position.prices.size() != n ||
      position.unit_costs.size() != n) {
    throw Error(ErrorCode::InvalidPosition, "field lengths disagree");
  }
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (position.weights[i] < 0.0) {
      throw Error(ErrorCode::InvalidPosition, "negative weight for " + position.tickers[i]);
    }
    if (position.prices[i] <= 0.0) {
      throw Error(ErrorCode::InvalidPosition, "non-positive price for " + position.tickers[i]);
    }
    if (position.unit_costs[i] < 0.0) {
      throw Error(ErrorCode::InvalidPosition, "negative unit cost for " + position.tickers[i]);
    }
    weight_sum += position.weights[i];
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::InvalidPosition,
                "weights sum to " + format_double(weight_sum) + ", expected 1");
  }
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cost += position.weights[i] * position.prices[i] * position.unit_costs[i];
  }
  return cost;
}

double r_squared(const std::vector<double>& predicted, const std::vector<double>& actual) {
  if (predicted.size() != actual.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(predicted.size()) + " vs " +
                                               std::to_string(actual.size()));
  }
  if (actual.size() < 2) {
    throw Error(ErrorCode::LengthMismatch, "need at least 2 observations");
  }
  double mean = 0.0;
  for (const double a : actual) mean += a;
  mean /= static_cast<double>(actual.size());

  double ss_tot = 0.0;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    ss_tot += (actual[i] - mean) * (actual[i] - mean);
    ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
  }
  if (ss_tot == 0.0) {
    throw Error(ErrorCode::ZeroVariance, "actual series is constant");
  }
  return 1.0 - ss_res / ss_tot;
}

CostReductionSummary cost_reduction(
    const AssetGraph& g, const std::vector<std::pair<std::string, std::string>>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no pairs given");
  CostReductionSummary summary;
  summary.per_pair.reserve(pairs.size());
  double total_pct = 0.0;
  for (const auto& [source, target] : pairs) {
    if (source == target) {
      throw std::invalid_argument("cost_reduction pair with identical endpoints: " + source);
    }
    const Eigen::Index si = g.index_of(source);
    const Eigen::Index ti = g.index_of(target);
    if (si < 0) throw Error(ErrorCode::UnknownTicker, source);
    if (ti < 0) throw Error(ErrorCode::UnknownTicker, target);

    PairReduction entry;
    entry.source = source;
    entry.target = target;
    entry.direct_cost = g.weights(si, ti);
    entry.path = dijkstra(g, source, target);
    entry.min_cost = entry.path.total_cost;
    if (entry.direct_cost == 0.0) {
      entry.zero_direct_cost = true;
      entry.reduction_pct = 0.0;
    } else {
      entry.reduction_pct = 100.0 * (1.0 - entry.min_cost / entry.direct_cost);
    }
    total_pct += entry.reduction_pct;
    summary.per_pair.push_back(std::move(entry));
  }
  summary.average_pct = total_pct / static_cast<double>(summary.per_pair.size());
  return summary;
}

PathEfficiency path_efficiency(const std::vector<PathResult>& results) {
  if (results.empty()) throw Error(ErrorCode::EmptyInput, "no path results");
  PathEfficiency eff;
  double total = 0.0;
  for (const PathResult& r : results) {
    total += r.steps;
    eff.histogram[r.steps] += 1;
  }
  eff.average_steps = total / static_cast<double>(results.size());
  return eff;
}

void emit_report(const MetricsReport& metrics, const std::vector<SeriesPoint>& series,
                 const std::filesystem::path& report_path,
                 const std::filesystem::path& series_path) {
  nlohmann::json j;
  j["mse_normalized"] = metrics.mse_normalized;
  j["mse_currency"] = metrics.mse_currency;
  j["r2"] = metrics.r2;
  j["avg_cost_reduction_pct"] = metrics.avg_cost_reduction_pct;
  j["avg_path_steps"] = metrics.avg_path_steps;
  j["runtimes"] = {{"train_epoch_seconds", metrics.runtimes.train_epoch_seconds},
                   {"dijkstra_seconds", metrics.runtimes.dijkstra_seconds},
                   {"end_to_end_seconds", metrics.runtimes.end_to_end_seconds}};
  j["pairs"] = metrics.pair_labels;
  j["period"] = {{"start", metrics.period_start}, {"end", metrics.period_end}};
  nlohmann::json reductions = nlohmann::json::object();
  for (const auto& [pair, pct] : metrics.per_pair_reduction_pct) reductions[pair] = pct;
  j["per_pair_reduction_pct"] = std::move(reductions);
  nlohmann::json histogram = nlohmann::json::object();
  for (const auto& [steps, count] : metrics.steps_histogram) {
    histogram[std::to_string(steps)] = count;
  }
  j["path_steps_histogram"] = std::move(histogram);
  write_text_atomic(report_path, j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "date,pair,actual,predicted\n";
  for (const SeriesPoint& point : series) {
    csv << point.date << ',' << point.pair << ',' << format_double(point.actual, 12) << ','
        << format_double(point.predicted, 12) << '\n';
  }
  write_text_atomic(series_path, csv.str());
}

}  // namespace rebalancer::evaluation
