#pragma once

#include <string>
#include <vector>

#include "rebalancer/costgraph.hpp"
#include "rebalancer/gnn.hpp"

namespace rebalancer {

// Everything the pipeline commands need, loadable from a flat key=value
// config file with command-line overrides.
struct RunConfig {
  std::string csv_path;
  std::vector<std::string> tickers = {"AAPL", "MSFT", "GOOGL", "AMZN", "TSLA"};
  CostMode mode = CostMode::LevelDiff;
  int window = 20;
  int horizon = 5;
  double train_frac = 0.6;
  double val_frac = 0.2;
  std::string out_dir = "out";
  gnn::TrainConfig train;
};

}  // namespace rebalancer
