#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace rebalancer {

// Aligned date-by-ticker matrix of daily closing prices. Cells hold NaN as a
// missing-value marker until repaired with fill_missing; afterwards every
// cell is finite and positive.
struct PricePanel {
  std::vector<std::string> dates;  // ISO-8601, strictly increasing
  std::vector<std::string> tickers;
  Eigen::MatrixXd closes;  // [dates x tickers]

  Eigen::Index rows() const { return closes.rows(); }
  Eigen::Index cols() const { return closes.cols(); }
};

// Absolute day-over-day price changes; one row fewer than the source panel.
// Row t holds |P(t+1) - P(t)| and is dated by the later day of the pair.
struct DiffPanel {
  std::vector<std::string> dates;
  std::vector<std::string> tickers;
  Eigen::MatrixXd abs_diffs;

  Eigen::Index rows() const { return abs_diffs.rows(); }
  Eigen::Index cols() const { return abs_diffs.cols(); }
};

// Per-column statistics used for z-scoring. Stored stds are already floored
// at epsilon, so applying and inverting never divides by zero.
struct NormalizationParams {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;
  double epsilon = 1e-8;
};

// One model input: the trailing window of normalized diffs, one row per
// ticker. as_of_index is the DiffPanel row the window ends on.
struct FeatureWindow {
  Eigen::Index as_of_index = 0;
  Eigen::MatrixXd features;  // [tickers x window]

  Eigen::Index window_len() const { return features.cols(); }
};

// Half-open row interval [begin, end).
struct RowRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;

  Eigen::Index length() const { return end - begin; }
};

}  // namespace rebalancer
