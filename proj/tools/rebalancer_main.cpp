// Pipeline front end: ingest -> build-graph -> train -> predict -> route ->
// evaluate, plus a gradcheck verification entry point. Exit codes: 0 ok,
// 2 input/usage, 3 validation, 4 verification failure.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rebalancer/errors.hpp"
#include "rebalancer/evaluation.hpp"
#include "rebalancer/gnn.hpp"
#include "rebalancer/io_util.hpp"
#include "rebalancer/marketdata.hpp"
#include "rebalancer/pathfinder.hpp"
#include "rebalancer/run_config.hpp"

namespace fs = std::filesystem;
using namespace rebalancer;

namespace {

struct Paths {
  fs::path out;

  fs::path panel() const { return out / "panel.csv"; }
  fs::path diffs() const { return out / "diffs.csv"; }
  fs::path diffs_norm() const { return out / "diffs_normalized.csv"; }
  fs::path normalization() const { return out / "normalization.json"; }
  fs::path graph_csv() const { return out / "graph.csv"; }
  fs::path graph_dot() const { return out / "graph.dot"; }
  fs::path model() const { return out / "model.json"; }
  fs::path train_log() const { return out / "training_log.csv"; }
  fs::path predicted_csv() const { return out / "predicted_graph.csv"; }
  fs::path predicted_dot() const { return out / "predicted_graph.dot"; }
  fs::path route_json() const { return out / "route.json"; }
  fs::path route_dot() const { return out / "route.dot"; }
  fs::path report() const { return out / "report.json"; }
  fs::path series() const { return out / "series.csv"; }
  fs::path timings() const { return out / "timings.json"; }
};

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::UnknownTicker:
    case ErrorCode::UnknownPathNode:
    case ErrorCode::DuplicateEdge:
    case ErrorCode::AsymmetricInput:
    case ErrorCode::TickerMismatch:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NoPath:
    case ErrorCode::GraphTooLarge:
    case ErrorCode::InvalidPosition:
    case ErrorCode::ZeroVariance:
    case ErrorCode::LengthMismatch:
      return 3;
    default:
      return 2;
  }
}

class StageTimer {
 public:
  StageTimer(const Paths& paths, std::string stage)
      : paths_(paths), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  // Volatile sidecar; not covered by the byte-identity guarantees.
  void record() const {
    nlohmann::json j = nlohmann::json::object();
    if (fs::exists(paths_.timings())) {
      try {
        j = nlohmann::json::parse(read_text_file(paths_.timings()));
      } catch (const std::exception&) {
        j = nlohmann::json::object();
      }
    }
    j[stage_] = elapsed();
    write_text_atomic(paths_.timings(), j.dump(2) + "\n");
  }

 private:
  const Paths& paths_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::IoFailure,
                "missing artifact " + path.string() + " (run `" + producer + "` first)");
  }
}

std::vector<TrainingSample> build_samples(const RunConfig& rc, const Paths& paths) {
  const PricePanel panel = read_panel_csv(paths.panel());
  const DiffPanel normalized = read_diff_csv(paths.diffs_norm());
  return make_feature_windows(normalized, panel, rc.window, rc.horizon, rc.mode);
}

int cmd_ingest(const RunConfig& rc, const Paths& paths) {
  StageTimer timer(paths, "ingest_seconds");
  if (rc.csv_path.empty()) {
    std::cerr << "error: no input CSV given (--csv or config `csv`)\n";
    return 2;
  }
  const PricePanel raw = parse_price_csv(rc.csv_path, rc.tickers);
  const PricePanel panel = fill_missing(raw);
  const DiffPanel diffs = compute_abs_diffs(panel);
  const Eigen::Index fit_end =
      train_fit_boundary(diffs.rows(), rc.window, rc.horizon, rc.train_frac, rc.val_frac) + 1;
  const auto [normalized, params] = zscore_fit_apply(diffs, RowRange{0, fit_end});

  fs::create_directories(paths.out);
  write_panel_csv(panel, paths.panel());
  write_diff_csv(diffs, paths.diffs());
  write_diff_csv(normalized, paths.diffs_norm());
  write_normalization_json(params, diffs.tickers, paths.normalization());
  timer.record();

  std::cout << "ingested " << panel.rows() << " rows x " << panel.cols() << " tickers ("
            << panel.dates.front() << " .. " << panel.dates.back() << "), z-score fit on diff rows [0, "
            << fit_end << ")\n";
  return 0;
}

int cmd_build_graph(const RunConfig& rc, const Paths& paths) {
  StageTimer timer(paths, "build_graph_seconds");
  require_artifact(paths.panel(), "ingest");
  const PricePanel panel = read_panel_csv(paths.panel());
  const AssetGraph graph = build_adjacency(panel, rc.mode);
  const GraphValidation check = validate_graph(graph);
  if (!check.ok()) {
    std::cerr << "error: built graph failed validation: " << check.summary() << "\n";
    return 3;
  }
  write_edge_list(graph, paths.graph_csv());
  write_text_atomic(paths.graph_dot(), to_dot(graph));
  timer.record();
  std::cout << "built " << to_string(rc.mode) << " graph: " << graph.size() << " nodes, "
            << graph.size() * (graph.size() - 1) / 2 << " edges\n";
  return 0;
}

int cmd_train(const RunConfig& rc, const Paths& paths) {
  StageTimer timer(paths, "train_seconds");
  require_artifact(paths.panel(), "ingest");
  require_artifact(paths.diffs_norm(), "ingest");
  const std::vector<TrainingSample> samples = build_samples(rc, paths);
  const SampleSplit split = chronological_split(samples, rc.train_frac, rc.val_frac);
  const gnn::TrainResult result = gnn::train(split.train, split.val, rc.train);
  gnn::save_model(result.model, paths.model());
  gnn::write_training_log(result.log, paths.train_log());
  timer.record();
  std::cout << "trained on " << split.train.size() << "/" << split.val.size() << "/"
            << split.test.size() << " samples; best epoch " << result.best_epoch << " val mse "
            << format_double(result.best_val_mse, 6) << " (" << result.log.size() << " epochs)\n";
  return 0;
}

int cmd_predict(const RunConfig&, const Paths& paths) {
  StageTimer timer(paths, "predict_seconds");
  require_artifact(paths.model(), "train");
  require_artifact(paths.diffs_norm(), "ingest");
  const gnn::GnnModel model = gnn::load_model(paths.model());
  const DiffPanel normalized = read_diff_csv(paths.diffs_norm());
  if (normalized.tickers != model.tickers) {
    throw Error(ErrorCode::TickerMismatch, "model tickers do not match ingested data");
  }
  const Eigen::Index window = model.feature_dim();
  if (normalized.rows() < window) {
    throw Error(ErrorCode::InsufficientHistory,
                "need " + std::to_string(window) + " diff rows, have " +
                    std::to_string(normalized.rows()));
  }
  FeatureWindow latest;
  latest.as_of_index = normalized.rows() - 1;
  latest.features =
      normalized.abs_diffs.middleRows(normalized.rows() - window, window).transpose();
  const AssetGraph predicted = gnn::predict_edge_costs(model, latest);
  const GraphValidation check = validate_graph(predicted);
  if (!check.ok()) {
    std::cerr << "error: predicted graph failed validation: " << check.summary() << "\n";
    return 3;
  }
  write_edge_list(predicted, paths.predicted_csv());
  write_text_atomic(paths.predicted_dot(), to_dot(predicted));
  timer.record();
  std::cout << "predicted costs as of " << normalized.dates.back() << " for " << predicted.size()
            << " assets\n";
  return 0;
}

int cmd_route(const Paths& paths, const std::string& from, const std::string& to) {
  StageTimer timer(paths, "route_seconds");
  require_artifact(paths.predicted_csv(), "predict");
  const AssetGraph graph = read_edge_list(paths.predicted_csv());
  const PathResult route = dijkstra(graph, from, to);
  const std::string json = to_json_string(route);
  write_text_atomic(paths.route_json(), json + "\n");
  write_text_atomic(paths.route_dot(), to_dot(graph, &route));
  timer.record();
  std::cout << json << "\n";
  return 0;
}

double mean_epoch_seconds(const fs::path& log_path) {
  const std::vector<std::string> lines = split_lines(read_text_file(log_path));
  double total = 0.0;
  int count = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cells = split_csv_line(lines[i]);
    double seconds = 0.0;
    if (cells.size() == 4 && try_parse_double(cells[3], seconds)) {
      total += seconds;
      ++count;
    }
  }
  return count > 0 ? total / count : 0.0;
}

int cmd_evaluate(const RunConfig& rc, const Paths& paths) {
  StageTimer timer(paths, "evaluate_seconds");
  require_artifact(paths.model(), "train");
  require_artifact(paths.panel(), "ingest");
  require_artifact(paths.diffs_norm(), "ingest");
  require_artifact(paths.predicted_csv(), "predict");
  require_artifact(paths.train_log(), "train");

  const gnn::GnnModel model = gnn::load_model(paths.model());
  const std::vector<TrainingSample> samples = build_samples(rc, paths);
  const SampleSplit split = chronological_split(samples, rc.train_frac, rc.val_frac);

  std::vector<evaluation::SeriesPoint> series;
  std::vector<double> predicted_pool;
  std::vector<double> actual_pool;
  double mse_sum = 0.0;
  for (const TrainingSample& sample : split.test) {
    const AssetGraph predicted = gnn::predict_edge_costs(model, sample.window);
    mse_sum += gnn::mse_loss(predicted, sample.target);
    const Eigen::Index n = predicted.size();
    std::vector<evaluation::SeriesPoint> day_points;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const std::string& a = predicted.tickers[static_cast<std::size_t>(i)];
        const std::string& b = predicted.tickers[static_cast<std::size_t>(j)];
        evaluation::SeriesPoint point;
        point.date = sample.as_of_date;
        point.pair = std::min(a, b) + "-" + std::max(a, b);
        point.actual = sample.target.weights(i, j);
        point.predicted = predicted.weights(i, j);
        day_points.push_back(std::move(point));
      }
    }
    std::sort(day_points.begin(), day_points.end(),
              [](const auto& x, const auto& y) { return x.pair < y.pair; });
    for (auto& point : day_points) {
      predicted_pool.push_back(point.predicted);
      actual_pool.push_back(point.actual);
      series.push_back(std::move(point));
    }
  }

  evaluation::MetricsReport metrics;
  metrics.mse_currency = split.test.empty() ? 0.0 : mse_sum / static_cast<double>(split.test.size());
  metrics.mse_normalized = metrics.mse_currency / (model.target_scale * model.target_scale);
  metrics.r2 = evaluation::r_squared(predicted_pool, actual_pool);

  const AssetGraph predicted_graph = read_edge_list(paths.predicted_csv());
  std::vector<std::pair<std::string, std::string>> pairs;
  for (Eigen::Index i = 0; i < predicted_graph.size(); ++i) {
    for (Eigen::Index j = i + 1; j < predicted_graph.size(); ++j) {
      pairs.emplace_back(predicted_graph.tickers[static_cast<std::size_t>(i)],
                         predicted_graph.tickers[static_cast<std::size_t>(j)]);
    }
  }

  StageTimer dijkstra_timer(paths, "dijkstra_seconds");
  const AllPairsCosts all_pairs = all_pairs_costs(predicted_graph);
  const double dijkstra_seconds = dijkstra_timer.elapsed();

  const evaluation::CostReductionSummary reduction =
      evaluation::cost_reduction(predicted_graph, pairs);
  std::vector<PathResult> pair_paths;
  for (const auto& [source, target] : pairs) {
    const Eigen::Index i = predicted_graph.index_of(source);
    const Eigen::Index j = predicted_graph.index_of(target);
    pair_paths.push_back(all_pairs.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
  }
  const evaluation::PathEfficiency efficiency = evaluation::path_efficiency(pair_paths);

  metrics.avg_cost_reduction_pct = reduction.average_pct;
  metrics.avg_path_steps = efficiency.average_steps;
  metrics.steps_histogram = efficiency.histogram;
  for (const evaluation::PairReduction& entry : reduction.per_pair) {
    metrics.per_pair_reduction_pct[entry.source + "-" + entry.target] = entry.reduction_pct;
    metrics.pair_labels.push_back(entry.source + "-" + entry.target);
  }
  if (!split.test.empty()) {
    metrics.period_start = split.test.front().as_of_date;
    metrics.period_end = split.test.back().as_of_date;
  }

  metrics.runtimes.train_epoch_seconds = mean_epoch_seconds(paths.train_log());
  metrics.runtimes.dijkstra_seconds = dijkstra_seconds;
  double end_to_end = timer.elapsed();
  if (fs::exists(paths.timings())) {
    try {
      const nlohmann::json j = nlohmann::json::parse(read_text_file(paths.timings()));
      for (const auto& [key, value] : j.items()) {
        if (key != "evaluate_seconds" && key != "dijkstra_seconds" && value.is_number()) {
          end_to_end += value.get<double>();
        }
      }
    } catch (const std::exception&) {
    }
  }
  metrics.runtimes.end_to_end_seconds = end_to_end;

  evaluation::emit_report(metrics, series, paths.report(), paths.series());
  timer.record();
  std::cout << "evaluated " << split.test.size() << " test samples: r2 "
            << format_double(metrics.r2, 6) << ", mse " << format_double(metrics.mse_currency, 6)
            << ", avg reduction " << format_double(metrics.avg_cost_reduction_pct, 6) << "%\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int trials, double inject) {
  gnn::GradCheckConfig cfg;
  cfg.trials = trials;
  cfg.seed = seed;
  cfg.inject = inject;
  const gnn::GradCheckReport report = gnn::run_gradient_checks(cfg);
  std::cout << "gradcheck: " << report.trials << " trials, max relative error "
            << format_double(report.max_rel_error, 6) << " (tolerance "
            << format_double(cfg.tolerance, 6) << ")\n";
  if (!report.passed(cfg.tolerance)) {
    std::cerr << "worst offender: trial " << report.worst.trial << " " << report.worst.param
              << "[" << report.worst.index << "] analytic "
              << format_double(report.worst.analytic) << " vs numeric "
              << format_double(report.worst.numeric) << "\n";
    return 4;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise transaction-cost prediction and minimum-cost rebalancing paths"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Flat key=value config file");

  RunConfig rc;
  std::string tickers_csv = "AAPL,MSFT,GOOGL,AMZN,TSLA";
  std::string mode_name = "level-diff";
  std::string agg_name = "sum";

  app.add_option("--csv", rc.csv_path, "Input close-price CSV (wide or date,ticker,close)");
  app.add_option("--tickers", tickers_csv, "Comma-separated ticker list");
  app.add_option("--mode", mode_name, "Cost mode")
      ->check(CLI::IsMember({"level-diff", "per-asset-change"}));
  app.add_option("--window", rc.window, "Feature window length W (days)")
      ->check(CLI::PositiveNumber);
  app.add_option("--horizon", rc.horizon, "Target horizon H (days)")->check(CLI::PositiveNumber);
  app.add_option("--train-frac", rc.train_frac, "Training fraction");
  app.add_option("--val-frac", rc.val_frac, "Validation fraction");
  app.add_option("--out", rc.out_dir, "Artifact directory");
  app.add_option("--seed", rc.train.seed, "RNG seed");
  app.add_option("--lr", rc.train.learning_rate, "Learning rate")->check(CLI::PositiveNumber);
  app.add_option("--epochs", rc.train.max_epochs, "Max training epochs")
      ->check(CLI::PositiveNumber);
  app.add_option("--patience", rc.train.patience, "Early-stopping patience")
      ->check(CLI::PositiveNumber);
  app.add_option("--hidden", rc.train.hidden_dim, "Hidden dimension")->check(CLI::PositiveNumber);
  app.add_option("--layers", rc.train.num_layers, "Message-passing layers")
      ->check(CLI::PositiveNumber);
  app.add_option("--batch", rc.train.batch_size, "Mini-batch size (engages above 1024 samples)")
      ->check(CLI::PositiveNumber);
  app.add_option("--agg", agg_name, "Neighbor aggregation")->check(CLI::IsMember({"sum", "mean"}));

  CLI::App* ingest = app.add_subcommand("ingest", "Parse, repair and normalize price data");
  CLI::App* build_graph = app.add_subcommand("build-graph", "Build the historical cost graph");
  CLI::App* train = app.add_subcommand("train", "Train the cost predictor");
  CLI::App* predict = app.add_subcommand("predict", "Predict the forward cost graph");

  CLI::App* route = app.add_subcommand("route", "Find the cheapest reallocation path");
  std::string route_from;
  std::string route_to;
  route->add_option("--from", route_from, "Source ticker")->required();
  route->add_option("--to", route_to, "Target ticker")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "Compute metrics and emit reports");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  int gc_trials = 100;
  double gc_inject = 0.0;
  gradcheck->add_option("--trials", gc_trials, "Number of randomized trials")
      ->check(CLI::PositiveNumber);
  gradcheck->add_option("--inject-gradient-bug", gc_inject, "Test hook")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  rc.tickers = split_csv_line(tickers_csv);
  rc.mode = parse_cost_mode(mode_name).value_or(CostMode::LevelDiff);
  rc.train.aggregation = agg_name == "mean" ? gnn::Aggregation::Mean : gnn::Aggregation::Sum;
  const Paths paths{fs::path(rc.out_dir)};

  try {
    if (*ingest) return cmd_ingest(rc, paths);
    if (*build_graph) return cmd_build_graph(rc, paths);
    if (*train) return cmd_train(rc, paths);
    if (*predict) return cmd_predict(rc, paths);
    if (*route) return cmd_route(paths, route_from, route_to);
    if (*evaluate) return cmd_evaluate(rc, paths);
    if (*gradcheck) return cmd_gradcheck(rc.train.seed, gc_trials, gc_inject);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
