#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rebalancer/costgraph.hpp"
#include "rebalancer/panels.hpp"

namespace rebalancer {

// One supervised example: trailing window of normalized diffs paired with the
// forward-looking cost graph it should predict, in currency units.
struct TrainingSample {
  FeatureWindow window;
  AssetGraph target;
  std::string as_of_date;
};

struct SampleSplit {
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> val;
  std::vector<TrainingSample> test;
};

// Reads a close-price CSV in either wide layout (`date` plus one column per
// ticker) or long layout (`date,ticker,close`). Rows come back sorted by
// date. Cells that are empty, literal NaN, non-numeric, or non-positive
// become missing markers for fill_missing to repair. An empty `tickers` list
// selects every column in the file.
PricePanel parse_price_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& tickers);

// Linear interpolation for interior gaps; leading/trailing gaps take the
// nearest observed value. Idempotent.
PricePanel fill_missing(const PricePanel& panel);

DiffPanel compute_abs_diffs(const PricePanel& panel);

// Fits per-column mean/std (population) on fit_range rows only and applies
// them to every row. Columns whose std falls below epsilon are mapped to
// zero, with the stored std floored at epsilon.
std::pair<DiffPanel, NormalizationParams> zscore_fit_apply(const DiffPanel& diffs,
                                                           RowRange fit_range,
                                                           double epsilon = 1e-8);

DiffPanel zscore_invert(const DiffPanel& normalized, const NormalizationParams& params);

// Builds one sample per valid as-of row d: features are the W trailing
// normalized diff rows (transposed per ticker), the target is the adjacency
// over the horizon days that follow the as-of day. `prices` must be the
// gap-free panel the diffs were derived from.
std::vector<TrainingSample> make_feature_windows(const DiffPanel& normalized,
                                                 const PricePanel& prices, int window,
                                                 int horizon, CostMode mode);

// Contiguous chronological slices; no shuffling. Train gets
// floor(n*train_frac) samples, train+val gets floor(n*(train_frac+val_frac)),
// the remainder is test.
SampleSplit chronological_split(const std::vector<TrainingSample>& samples, double train_frac,
                                double val_frac);

// Index of the last diff row whose features belong to the training slice,
// i.e. the row normalization statistics may legitimately see.
Eigen::Index train_fit_boundary(Eigen::Index num_diff_rows, int window, int horizon,
                                double train_frac, double val_frac);

void write_panel_csv(const PricePanel& panel, const std::filesystem::path& path);
PricePanel read_panel_csv(const std::filesystem::path& path);
void write_diff_csv(const DiffPanel& diffs, const std::filesystem::path& path);
DiffPanel read_diff_csv(const std::filesystem::path& path);

void write_normalization_json(const NormalizationParams& params,
                              const std::vector<std::string>& tickers,
                              const std::filesystem::path& path);
std::pair<NormalizationParams, std::vector<std::string>> read_normalization_json(
    const std::filesystem::path& path);

}  // namespace rebalancer
