#include "rebalancer/marketdata.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rebalancer/errors.hpp"
#include "rebalancer/io_util.hpp"

namespace rebalancer {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Empty, literal NaN, non-numeric, and (for prices) non-positive cells all
// become missing markers.
double parse_cell(const std::string& cell, bool positive_only) {
  if (cell.empty() || lowercase(cell) == "nan") return kNaN;
  double value = 0.0;
  if (!try_parse_double(cell, value)) return kNaN;
  if (!std::isfinite(value)) return kNaN;
  if (positive_only && value <= 0.0) return kNaN;
  return value;
}

struct Table {
  std::vector<std::string> dates;
  std::vector<std::string> tickers;
  Eigen::MatrixXd values;
};

Table read_wide_or_long(const std::filesystem::path& path, const std::vector<std::string>& wanted,
                        bool positive_only) {
  const std::string text = read_text_file(path);
  std::vector<std::string> lines = split_lines(text);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::EmptyFile, path.string());

  const std::vector<std::string> header = split_csv_line(lines.front());
  std::vector<std::string> header_lower(header.size());
  std::transform(header.begin(), header.end(), header_lower.begin(), lowercase);

  const auto find_col = [&](const std::string& name) -> Eigen::Index {
    const auto it = std::find(header_lower.begin(), header_lower.end(), name);
    return it == header_lower.end() ? -1 : it - header_lower.begin();
  };

  const Eigen::Index date_col = find_col("date");
  const Eigen::Index ticker_col = find_col("ticker");
  const Eigen::Index close_col = find_col("close");
  if (date_col < 0) {
    throw Error(ErrorCode::MissingColumn, "no 'date' column in " + path.string());
  }

  Table table;
  if (ticker_col >= 0 && close_col >= 0) {
    // Long layout: one (date, ticker, close) triple per row.
    std::map<std::string, std::map<std::string, double>> cells;  // date -> ticker -> close
    std::set<std::string> seen_tickers;
    for (std::size_t row = 1; row < lines.size(); ++row) {
      if (lines[row].empty()) continue;
      const std::vector<std::string> parts = split_csv_line(lines[row]);
      const std::size_t needed =
          static_cast<std::size_t>(std::max({date_col, ticker_col, close_col})) + 1;
      if (parts.size() < needed) {
        throw Error(ErrorCode::UnparseableDate, "row " + std::to_string(row + 1) + " is short");
      }
      const std::string& date = parts[static_cast<std::size_t>(date_col)];
      if (!is_iso_date(date)) {
        throw Error(ErrorCode::UnparseableDate,
                    "row " + std::to_string(row + 1) + ": '" + date + "'");
      }
      const std::string& ticker = parts[static_cast<std::size_t>(ticker_col)];
      seen_tickers.insert(ticker);
      cells[date][ticker] = parse_cell(parts[static_cast<std::size_t>(close_col)], positive_only);
    }
    if (cells.empty()) throw Error(ErrorCode::EmptyFile, path.string());

    table.tickers = wanted;
    if (table.tickers.empty()) {
      table.tickers.assign(seen_tickers.begin(), seen_tickers.end());
    } else {
      for (const std::string& t : table.tickers) {
        if (!seen_tickers.count(t)) throw Error(ErrorCode::MissingColumn, t);
      }
    }
    table.dates.reserve(cells.size());
    for (const auto& [date, _] : cells) table.dates.push_back(date);
    table.values.setConstant(static_cast<Eigen::Index>(table.dates.size()),
                             static_cast<Eigen::Index>(table.tickers.size()), kNaN);
    for (Eigen::Index r = 0; r < table.values.rows(); ++r) {
      const auto& by_ticker = cells.at(table.dates[static_cast<std::size_t>(r)]);
      for (Eigen::Index c = 0; c < table.values.cols(); ++c) {
        const auto it = by_ticker.find(table.tickers[static_cast<std::size_t>(c)]);
        if (it != by_ticker.end()) table.values(r, c) = it->second;
      }
    }
    return table;
  }

  // Wide layout: `date` plus one column per ticker.
  std::vector<Eigen::Index> columns;
  if (wanted.empty()) {
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(header.size()); ++c) {
      if (c == date_col) continue;
      table.tickers.push_back(header[static_cast<std::size_t>(c)]);
      columns.push_back(c);
    }
  } else {
    table.tickers = wanted;
    for (const std::string& t : wanted) {
      const auto it = std::find(header.begin(), header.end(), t);
      if (it == header.end()) throw Error(ErrorCode::MissingColumn, t);
      columns.push_back(it - header.begin());
    }
  }

  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const std::vector<std::string> parts = split_csv_line(lines[row]);
    if (static_cast<Eigen::Index>(parts.size()) <= date_col) {
      throw Error(ErrorCode::UnparseableDate, "row " + std::to_string(row + 1) + " is short");
    }
    const std::string& date = parts[static_cast<std::size_t>(date_col)];
    if (!is_iso_date(date)) {
      throw Error(ErrorCode::UnparseableDate,
                  "row " + std::to_string(row + 1) + ": '" + date + "'");
    }
    std::vector<double> values;
    values.reserve(columns.size());
    for (const Eigen::Index c : columns) {
      const std::size_t idx = static_cast<std::size_t>(c);
      values.push_back(idx < parts.size() ? parse_cell(parts[idx], positive_only) : kNaN);
    }
    rows.emplace_back(date, std::move(values));
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyFile, path.string());

  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].first == rows[r - 1].first) {
      throw Error(ErrorCode::UnparseableDate, "duplicate date '" + rows[r].first + "'");
    }
  }

  table.dates.reserve(rows.size());
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    table.dates.push_back(rows[r].first);
    for (std::size_t c = 0; c < rows[r].second.size(); ++c) {
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].second[c];
    }
  }
  return table;
}

void write_wide_table(const std::vector<std::string>& dates,
                      const std::vector<std::string>& tickers, const Eigen::MatrixXd& values,
                      const std::filesystem::path& path) {
  std::ostringstream out;
  out << "date";
  for (const std::string& t : tickers) out << ',' << t;
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out << dates[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out << ',' << format_double(values(r, c));
    }
    out << '\n';
  }
  write_text_atomic(path, out.str());
}

}  // namespace

PricePanel parse_price_csv(const std::filesystem::path& path,
                           const std::vector<std::string>& tickers) {
  Table table = read_wide_or_long(path, tickers, /*positive_only=*/true);
  return PricePanel{std::move(table.dates), std::move(table.tickers), std::move(table.values)};
}

PricePanel fill_missing(const PricePanel& panel) {
  PricePanel filled = panel;
  for (Eigen::Index c = 0; c < filled.cols(); ++c) {
    std::vector<Eigen::Index> observed;
    for (Eigen::Index r = 0; r < filled.rows(); ++r) {
      if (std::isfinite(filled.closes(r, c))) observed.push_back(r);
    }
    if (observed.empty()) {
      throw Error(ErrorCode::AllMissingColumn, panel.tickers[static_cast<std::size_t>(c)]);
    }
    // Leading and trailing gaps extend the nearest observation.
    for (Eigen::Index r = 0; r < observed.front(); ++r) {
      filled.closes(r, c) = filled.closes(observed.front(), c);
    }
    for (Eigen::Index r = observed.back() + 1; r < filled.rows(); ++r) {
      filled.closes(r, c) = filled.closes(observed.back(), c);
    }
    // Interior gaps: linear interpolation between the bracketing observations.
    for (std::size_t k = 0; k + 1 < observed.size(); ++k) {
      const Eigen::Index lo = observed[k];
      const Eigen::Index hi = observed[k + 1];
      const double span = static_cast<double>(hi - lo);
      for (Eigen::Index r = lo + 1; r < hi; ++r) {
        const double t = static_cast<double>(r - lo) / span;
        filled.closes(r, c) = filled.closes(lo, c) * (1.0 - t) + filled.closes(hi, c) * t;
      }
    }
  }
  return filled;
}

DiffPanel compute_abs_diffs(const PricePanel& panel) {
  const Eigen::Index rows = panel.rows();
  if (rows < 2) {
    throw Error(ErrorCode::TooFewRows, "need at least 2 rows, got " + std::to_string(rows));
  }
  DiffPanel diffs;
  diffs.tickers = panel.tickers;
  diffs.dates.assign(panel.dates.begin() + 1, panel.dates.end());
  diffs.abs_diffs =
      (panel.closes.bottomRows(rows - 1) - panel.closes.topRows(rows - 1)).cwiseAbs();
  return diffs;
}

std::pair<DiffPanel, NormalizationParams> zscore_fit_apply(const DiffPanel& diffs,
                                                           RowRange fit_range, double epsilon) {
  if (fit_range.begin < 0 || fit_range.end > diffs.rows() || fit_range.length() < 1) {
    throw Error(ErrorCode::EmptyFitRange,
                "[" + std::to_string(fit_range.begin) + ", " + std::to_string(fit_range.end) +
                    ") over " + std::to_string(diffs.rows()) + " rows");
  }
  const auto fit = diffs.abs_diffs.middleRows(fit_range.begin, fit_range.length());
  const double n = static_cast<double>(fit.rows());

  NormalizationParams params;
  params.epsilon = epsilon;
  params.means = (fit.colwise().sum() / n).transpose();
  params.stds.resize(diffs.cols());

  DiffPanel normalized = diffs;
  for (Eigen::Index c = 0; c < diffs.cols(); ++c) {
    const double var = (fit.col(c).array() - params.means(c)).square().sum() / n;
    const double std = std::sqrt(var);
    if (std <= epsilon) {
      // Degenerate column: map to zero rather than amplifying rounding noise.
      params.stds(c) = epsilon;
      normalized.abs_diffs.col(c).setZero();
    } else {
      params.stds(c) = std;
      normalized.abs_diffs.col(c) = (diffs.abs_diffs.col(c).array() - params.means(c)) / std;
    }
  }
  return {std::move(normalized), std::move(params)};
}

DiffPanel zscore_invert(const DiffPanel& normalized, const NormalizationParams& params) {
  if (params.means.size() != normalized.cols() || params.stds.size() != normalized.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "normalization params do not match panel columns");
  }
  DiffPanel raw = normalized;
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    raw.abs_diffs.col(c) =
        normalized.abs_diffs.col(c).array() * params.stds(c) + params.means(c);
  }
  return raw;
}

std::vector<TrainingSample> make_feature_windows(const DiffPanel& normalized,
                                                 const PricePanel& prices, int window,
                                                 int horizon, CostMode mode) {
  if (prices.tickers != normalized.tickers || prices.rows() != normalized.rows() + 1) {
    throw Error(ErrorCode::ShapeMismatch, "diff panel does not align with price panel");
  }
  if (window < 1 || horizon < 1) {
    throw Error(ErrorCode::InsufficientHistory, "window and horizon must be >= 1");
  }
  const Eigen::Index diff_rows = normalized.rows();
  if (diff_rows < window + horizon) {
    throw Error(ErrorCode::InsufficientHistory,
                std::to_string(diff_rows) + " diff rows < window " + std::to_string(window) +
                    " + horizon " + std::to_string(horizon));
  }

  std::vector<TrainingSample> samples;
  samples.reserve(static_cast<std::size_t>(diff_rows - window - horizon + 1));
  for (Eigen::Index d = window - 1; d <= diff_rows - 1 - horizon; ++d) {
    TrainingSample sample;
    sample.window.as_of_index = d;
    sample.window.features = normalized.abs_diffs.middleRows(d - window + 1, window).transpose();
    sample.as_of_date = normalized.dates[static_cast<std::size_t>(d)];
    // Diff row d is dated by price row d+1, the as-of day. The target covers
    // the horizon days after it: the level formula uses the next `horizon`
    // price rows, the per-asset mode the next `horizon` daily changes.
    if (mode == CostMode::LevelDiff) {
      sample.target = build_adjacency(prices.closes.middleRows(d + 2, horizon), prices.tickers,
                                      mode);
    } else {
      sample.target = build_adjacency(prices.closes.middleRows(d + 1, horizon + 1),
                                      prices.tickers, mode);
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

namespace {

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
};

SplitSizes split_sizes(std::size_t n, double train_frac, double val_frac) {
  if (train_frac <= 0.0 || val_frac <= 0.0 || train_frac + val_frac >= 1.0) {
    throw std::invalid_argument("split fractions must be positive with train+val < 1");
  }
  const auto train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_frac));
  const auto train_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * (train_frac + val_frac)));
  SplitSizes sizes;
  sizes.train = train;
  sizes.val = train_val - train;
  sizes.test = n - train_val;
  if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0) {
    throw Error(ErrorCode::TooFewSamples,
                std::to_string(n) + " samples split into " + std::to_string(sizes.train) + "/" +
                    std::to_string(sizes.val) + "/" + std::to_string(sizes.test));
  }
  return sizes;
}

}  // namespace

SampleSplit chronological_split(const std::vector<TrainingSample>& samples, double train_frac,
                                double val_frac) {
  const SplitSizes sizes = split_sizes(samples.size(), train_frac, val_frac);
  SampleSplit split;
  split.train.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(sizes.train));
  split.val.assign(samples.begin() + static_cast<std::ptrdiff_t>(sizes.train),
                   samples.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val));
  split.test.assign(samples.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.val),
                    samples.end());
  return split;
}

Eigen::Index train_fit_boundary(Eigen::Index num_diff_rows, int window, int horizon,
                                double train_frac, double val_frac) {
  if (num_diff_rows < window + horizon) {
    throw Error(ErrorCode::InsufficientHistory,
                std::to_string(num_diff_rows) + " diff rows < window + horizon");
  }
  const auto num_samples = static_cast<std::size_t>(num_diff_rows - window - horizon + 1);
  const SplitSizes sizes = split_sizes(num_samples, train_frac, val_frac);
  return window - 1 + static_cast<Eigen::Index>(sizes.train) - 1;
}

void write_panel_csv(const PricePanel& panel, const std::filesystem::path& path) {
  write_wide_table(panel.dates, panel.tickers, panel.closes, path);
}

PricePanel read_panel_csv(const std::filesystem::path& path) {
  return parse_price_csv(path, {});
}

void write_diff_csv(const DiffPanel& diffs, const std::filesystem::path& path) {
  write_wide_table(diffs.dates, diffs.tickers, diffs.abs_diffs, path);
}

DiffPanel read_diff_csv(const std::filesystem::path& path) {
  Table table = read_wide_or_long(path, {}, /*positive_only=*/false);
  if (!table.values.allFinite()) {
    throw Error(ErrorCode::CorruptFile, "diff table " + path.string() + " has missing cells");
  }
  return DiffPanel{std::move(table.dates), std::move(table.tickers), std::move(table.values)};
}

void write_normalization_json(const NormalizationParams& params,
                              const std::vector<std::string>& tickers,
                              const std::filesystem::path& path) {
  nlohmann::json j;
  j["epsilon"] = params.epsilon;
  j["tickers"] = tickers;
  j["means"] = std::vector<double>(params.means.data(), params.means.data() + params.means.size());
  j["stds"] = std::vector<double>(params.stds.data(), params.stds.data() + params.stds.size());
  write_text_atomic(path, j.dump(2) + "\n");
}

std::pair<NormalizationParams, std::vector<std::string>> read_normalization_json(
    const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    NormalizationParams params;
    params.epsilon = j.at("epsilon").get<double>();
    const auto means = j.at("means").get<std::vector<double>>();
    const auto stds = j.at("stds").get<std::vector<double>>();
    auto tickers = j.at("tickers").get<std::vector<std::string>>();
    if (means.size() != stds.size() || means.size() != tickers.size()) {
      throw Error(ErrorCode::CorruptFile, "inconsistent lengths in " + path.string());
    }
    params.means = Eigen::Map<const Eigen::VectorXd>(means.data(),
                                                     static_cast<Eigen::Index>(means.size()));
    params.stds =
        Eigen::Map<const Eigen::VectorXd>(stds.data(), static_cast<Eigen::Index>(stds.size()));
    return {std::move(params), std::move(tickers)};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
}

}  // namespace rebalancer
