#include <cmath>
#include <set>

#include "doctest.h"
#include "rebalancer/errors.hpp"
#include "rebalancer/io_util.hpp"
#include "rebalancer/marketdata.hpp"
#include "rebalancer/rng.hpp"
#include "test_util.hpp"

using namespace rebalancer;

namespace {

PricePanel make_panel(std::vector<std::string> tickers, const Eigen::MatrixXd& closes) {
  PricePanel panel;
  panel.tickers = std::move(tickers);
  panel.closes = closes;
  for (Eigen::Index r = 0; r < closes.rows(); ++r) {
    char date[16];
    std::snprintf(date, sizeof(date), "2023-01-%02d", static_cast<int>(r + 1));
    panel.dates.emplace_back(date);
  }
  return panel;
}

PricePanel random_panel(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd closes(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) closes(r, c) = rng.uniform(10.0, 500.0);
  }
  std::vector<std::string> tickers;
  for (Eigen::Index c = 0; c < cols; ++c) tickers.push_back("T" + std::to_string(c));
  PricePanel panel = make_panel(std::move(tickers), closes);
  for (std::size_t r = 0; r < panel.dates.size(); ++r) {
    char date[16];
    std::snprintf(date, sizeof(date), "2023-%02d-%02d", static_cast<int>(r / 28 + 1),
                  static_cast<int>(r % 28 + 1));
    panel.dates[r] = date;
  }
  return panel;
}

}  // namespace

TEST_CASE("parse_price_csv wide layout") {
  TempDir dir("parse_wide");
  const auto path = write_file(dir, "prices.csv",
                               "date,AAA,BBB\n"
                               "2023-01-03,10.5,20.25\n"
                               "2023-01-02,10.0,20.0\n"
                               "2023-01-04,11.0,21.0\n");
  const PricePanel panel = parse_price_csv(path, {"AAA", "BBB"});
  CHECK(panel.rows() == 3);
  CHECK(panel.cols() == 2);
  // Rows sorted ascending by date regardless of file order.
  CHECK(panel.dates.front() == "2023-01-02");
  CHECK(panel.closes(0, 0) == 10.0);
  CHECK(panel.closes(2, 1) == 21.0);

  SUBCASE("column subset") {
    const PricePanel only_b = parse_price_csv(path, {"BBB"});
    CHECK(only_b.cols() == 1);
    CHECK(only_b.closes(1, 0) == 20.25);
  }
}

TEST_CASE("parse_price_csv accepts the five-ticker universe") {
  TempDir dir("parse_five");
  std::string text = "date,AAPL,MSFT,GOOGL,AMZN,TSLA\n";
  text += "2023-01-02,130,240,89,85,108\n2023-01-03,131,241,90,86,109\n";
  const auto path = write_file(dir, "prices.csv", text);
  const PricePanel panel = parse_price_csv(path, {"AAPL", "MSFT", "GOOGL", "AMZN", "TSLA"});
  CHECK(panel.cols() == 5);
  CHECK(panel.tickers[4] == "TSLA");
}

TEST_CASE("parse_price_csv long layout matches wide") {
  TempDir dir("parse_long");
  const auto long_path = write_file(dir, "long.csv",
                                    "date,ticker,close\n"
                                    "2023-01-02,AAA,10\n"
                                    "2023-01-02,BBB,20\n"
                                    "2023-01-03,AAA,11\n"
                                    "2023-01-03,BBB,22\n");
  const PricePanel panel = parse_price_csv(long_path, {"AAA", "BBB"});
  CHECK(panel.rows() == 2);
  CHECK(panel.closes(1, 1) == 22.0);
}

TEST_CASE("parse_price_csv error cases") {
  TempDir dir("parse_errors");
  SUBCASE("missing requested ticker") {
    const auto path = write_file(dir, "a.csv", "date,AAA\n2023-01-02,10\n");
    try {
      parse_price_csv(path, {"NVDA"});
      FAIL("expected MissingColumn");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingColumn);
      CHECK(std::string(e.what()).find("NVDA") != std::string::npos);
    }
  }
  SUBCASE("empty file") {
    const auto path = write_file(dir, "b.csv", "");
    try {
      parse_price_csv(path, {"AAA"});
      FAIL("expected EmptyFile");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyFile);
    }
  }
  SUBCASE("header only counts as empty") {
    const auto path = write_file(dir, "c.csv", "date,AAA\n");
    try {
      parse_price_csv(path, {"AAA"});
      FAIL("expected EmptyFile");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyFile);
    }
  }
  SUBCASE("unparseable date") {
    const auto path = write_file(dir, "d.csv", "date,AAA\n01/02/2023,10\n");
    try {
      parse_price_csv(path, {"AAA"});
      FAIL("expected UnparseableDate");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnparseableDate);
    }
  }
  SUBCASE("duplicate date") {
    const auto path = write_file(dir, "e.csv", "date,AAA\n2023-01-02,10\n2023-01-02,11\n");
    try {
      parse_price_csv(path, {"AAA"});
      FAIL("expected UnparseableDate");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnparseableDate);
    }
  }
  SUBCASE("bad cells become missing markers") {
    const auto path = write_file(dir, "f.csv",
                                 "date,AAA\n2023-01-02,oops\n2023-01-03,NaN\n2023-01-04,-4\n"
                                 "2023-01-05,10\n");
    const PricePanel panel = parse_price_csv(path, {"AAA"});
    CHECK(std::isnan(panel.closes(0, 0)));
    CHECK(std::isnan(panel.closes(1, 0)));
    CHECK(std::isnan(panel.closes(2, 0)));
    CHECK(panel.closes(3, 0) == 10.0);
  }
}

TEST_CASE("fill_missing repairs gaps") {
  const double nan = std::nan("");

  SUBCASE("interior gap interpolates") {
    Eigen::MatrixXd closes(3, 1);
    closes << 100.0, nan, 104.0;
    const PricePanel filled = fill_missing(make_panel({"AAA"}, closes));
    CHECK(filled.closes(1, 0) == doctest::Approx(102.0).epsilon(1e-12));
  }
  SUBCASE("no gaps is the identity") {
    Eigen::MatrixXd closes(3, 2);
    closes << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
    const PricePanel panel = make_panel({"A", "B"}, closes);
    const PricePanel filled = fill_missing(panel);
    CHECK(eigen_equal(filled.closes, panel.closes));
  }
  SUBCASE("leading gap extends first observation") {
    Eigen::MatrixXd closes(3, 1);
    closes << nan, 50.0, 51.0;
    const PricePanel filled = fill_missing(make_panel({"AAA"}, closes));
    CHECK(filled.closes(0, 0) == 50.0);
    CHECK(filled.closes(1, 0) == 50.0);
    CHECK(filled.closes(2, 0) == 51.0);
  }
  SUBCASE("trailing gap extends last observation") {
    Eigen::MatrixXd closes(3, 1);
    closes << 50.0, 51.0, nan;
    const PricePanel filled = fill_missing(make_panel({"AAA"}, closes));
    CHECK(filled.closes(2, 0) == 51.0);
  }
  SUBCASE("all-missing column fails") {
    Eigen::MatrixXd closes(2, 1);
    closes << nan, nan;
    try {
      fill_missing(make_panel({"AAA"}, closes));
      FAIL("expected AllMissingColumn");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::AllMissingColumn);
      CHECK(std::string(e.what()).find("AAA") != std::string::npos);
    }
  }
  SUBCASE("idempotent on random gappy panels") {
    Rng rng(7);
    for (int round = 0; round < 20; ++round) {
      PricePanel panel = random_panel(rng, 40, 4);
      for (int k = 0; k < 25; ++k) {
        panel.closes(rng.uniform_int(0, 39), rng.uniform_int(0, 3)) = nan;
      }
      bool has_all_missing_column = false;
      for (Eigen::Index c = 0; c < panel.cols(); ++c) {
        if (panel.closes.col(c).array().isNaN().all()) has_all_missing_column = true;
      }
      if (has_all_missing_column) continue;
      const PricePanel once = fill_missing(panel);
      const PricePanel twice = fill_missing(once);
      CHECK(eigen_equal(once.closes, twice.closes));
      CHECK(once.closes.allFinite());
      CHECK((once.closes.array() > 0.0).all());
    }
  }
}

TEST_CASE("compute_abs_diffs") {
  SUBCASE("hand arithmetic") {
    Eigen::MatrixXd closes(3, 1);
    closes << 10.0, 12.0, 11.0;
    const DiffPanel diffs = compute_abs_diffs(make_panel({"AAA"}, closes));
    CHECK(diffs.rows() == 2);
    CHECK(diffs.abs_diffs(0, 0) == 2.0);
    CHECK(diffs.abs_diffs(1, 0) == 1.0);
    CHECK(diffs.dates == std::vector<std::string>{"2023-01-02", "2023-01-03"});
  }
  SUBCASE("constant column gives zeros") {
    Eigen::MatrixXd closes(3, 1);
    closes << 5.0, 5.0, 5.0;
    const DiffPanel diffs = compute_abs_diffs(make_panel({"AAA"}, closes));
    CHECK(diffs.abs_diffs.isZero(0.0));
  }
  SUBCASE("single row fails") {
    Eigen::MatrixXd closes(1, 1);
    closes << 5.0;
    try {
      compute_abs_diffs(make_panel({"AAA"}, closes));
      FAIL("expected TooFewRows");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TooFewRows);
    }
  }
  SUBCASE("invariant under constant column shifts") {
    Rng rng(11);
    PricePanel panel = random_panel(rng, 30, 3);
    const DiffPanel base = compute_abs_diffs(panel);
    panel.closes.col(1).array() += 250.0;
    const DiffPanel shifted = compute_abs_diffs(panel);
    CHECK((base.abs_diffs - shifted.abs_diffs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("zscore_fit_apply") {
  SUBCASE("hand oracle, population std") {
    Eigen::MatrixXd values(2, 1);
    values << 2.0, 4.0;
    DiffPanel diffs;
    diffs.tickers = {"AAA"};
    diffs.dates = {"2023-01-02", "2023-01-03"};
    diffs.abs_diffs = values;
    const auto [normalized, params] = zscore_fit_apply(diffs, RowRange{0, 2});
    CHECK(params.means(0) == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(params.stds(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(normalized.abs_diffs(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(normalized.abs_diffs(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("constant column floors std and maps to zero") {
    DiffPanel diffs;
    diffs.tickers = {"AAA"};
    diffs.dates = {"a", "b", "c"};
    diffs.abs_diffs = Eigen::MatrixXd::Constant(3, 1, 7.25);
    const auto [normalized, params] = zscore_fit_apply(diffs, RowRange{0, 3});
    CHECK(params.stds(0) == 1e-8);
    CHECK(normalized.abs_diffs.isZero(0.0));
  }
  SUBCASE("empty fit range") {
    DiffPanel diffs;
    diffs.tickers = {"AAA"};
    diffs.dates = {"a"};
    diffs.abs_diffs = Eigen::MatrixXd::Constant(1, 1, 1.0);
    try {
      zscore_fit_apply(diffs, RowRange{0, 0});
      FAIL("expected EmptyFitRange");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptyFitRange);
    }
  }
  SUBCASE("fit rows come out standardized; inversion recovers inputs") {
    Rng rng(23);
    DiffPanel diffs;
    diffs.tickers = {"A", "B", "C"};
    diffs.abs_diffs.resize(60, 3);
    for (Eigen::Index r = 0; r < 60; ++r) {
      diffs.dates.push_back("d" + std::to_string(r));
      for (Eigen::Index c = 0; c < 3; ++c) {
        diffs.abs_diffs(r, c) = std::abs(rng.normal(3.0 * static_cast<double>(c + 1), 2.0));
      }
    }
    const RowRange fit{0, 40};
    const auto [normalized, params] = zscore_fit_apply(diffs, fit);

    const auto block = normalized.abs_diffs.topRows(40);
    for (Eigen::Index c = 0; c < 3; ++c) {
      const double mean = block.col(c).mean();
      const double var = (block.col(c).array() - mean).square().sum() / 40.0;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }

    const DiffPanel recovered = zscore_invert(normalized, params);
    CHECK((recovered.abs_diffs - diffs.abs_diffs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("make_feature_windows") {
  Rng rng(31);
  const int n = 3;
  const PricePanel prices = random_panel(rng, 11, n);  // 10 diff rows
  const DiffPanel diffs = compute_abs_diffs(prices);
  const auto [normalized, params] = zscore_fit_apply(diffs, RowRange{0, diffs.rows()});

  SUBCASE("sample count and indices") {
    const auto samples = make_feature_windows(normalized, prices, 4, 2, CostMode::LevelDiff);
    REQUIRE(samples.size() == 5);
    for (std::size_t k = 0; k < samples.size(); ++k) {
      CHECK(samples[k].window.as_of_index == static_cast<Eigen::Index>(k + 3));
      CHECK(samples[k].window.features.rows() == n);
      CHECK(samples[k].window.features.cols() == 4);
      CHECK(samples[k].as_of_date == normalized.dates[k + 3]);
    }
  }
  SUBCASE("boundary gives exactly one sample") {
    const auto samples = make_feature_windows(normalized, prices, 8, 2, CostMode::LevelDiff);
    CHECK(samples.size() == 1);
  }
  SUBCASE("insufficient history") {
    try {
      make_feature_windows(normalized, prices, 9, 2, CostMode::LevelDiff);
      FAIL("expected InsufficientHistory");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InsufficientHistory);
    }
  }
  SUBCASE("targets match an independent recomputation") {
    const int window = 4;
    const int horizon = 2;
    for (const CostMode mode : {CostMode::LevelDiff, CostMode::PerAssetChange}) {
      const auto samples = make_feature_windows(normalized, prices, window, horizon, mode);
      for (const TrainingSample& sample : samples) {
        const Eigen::Index d = sample.window.as_of_index;
        // Forward window: the horizon days after the as-of day d+1.
        Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
          for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            if (mode == CostMode::LevelDiff) {
              double acc = 0.0;
              for (Eigen::Index t = d + 2; t <= d + 1 + horizon; ++t) {
                acc += std::abs(prices.closes(t, i) - prices.closes(t, j));
              }
              expected(i, j) = acc / horizon;
            } else {
              double mi = 0.0;
              double mj = 0.0;
              for (Eigen::Index t = d + 2; t <= d + 1 + horizon; ++t) {
                mi += std::abs(prices.closes(t, i) - prices.closes(t - 1, i));
                mj += std::abs(prices.closes(t, j) - prices.closes(t - 1, j));
              }
              expected(i, j) = 0.5 * (mi + mj) / horizon;
            }
          }
        }
        CHECK((sample.target.weights - expected).cwiseAbs().maxCoeff() < 1e-12);
        // Features are the trailing W normalized rows, one row per ticker.
        for (int w = 0; w < window; ++w) {
          for (Eigen::Index i = 0; i < n; ++i) {
            CHECK(sample.window.features(i, w) == normalized.abs_diffs(d - window + 1 + w, i));
          }
        }
      }
    }
  }
}

TEST_CASE("chronological_split") {
  const auto make_samples = [](int count) {
    std::vector<TrainingSample> samples(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      samples[static_cast<std::size_t>(i)].as_of_date = "d" + std::to_string(i);
    }
    return samples;
  };

  SUBCASE("10 samples at 0.6/0.2") {
    const SampleSplit split = chronological_split(make_samples(10), 0.6, 0.2);
    CHECK(split.train.size() == 6);
    CHECK(split.val.size() == 2);
    CHECK(split.test.size() == 2);
  }
  SUBCASE("3 samples at 0.34/0.33") {
    const SampleSplit split = chronological_split(make_samples(3), 0.34, 0.33);
    CHECK(split.train.size() == 1);
    CHECK(split.val.size() == 1);
    CHECK(split.test.size() == 1);
  }
  SUBCASE("too few samples") {
    try {
      chronological_split(make_samples(2), 0.6, 0.2);
      FAIL("expected TooFewSamples");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::TooFewSamples);
    }
  }
  SUBCASE("slices are ordered, disjoint, and cover the input") {
    const auto samples = make_samples(23);
    const SampleSplit split = chronological_split(samples, 0.57, 0.21);
    std::vector<std::string> reassembled;
    for (const auto& s : split.train) reassembled.push_back(s.as_of_date);
    for (const auto& s : split.val) reassembled.push_back(s.as_of_date);
    for (const auto& s : split.test) reassembled.push_back(s.as_of_date);
    std::vector<std::string> expected;
    for (const auto& s : samples) expected.push_back(s.as_of_date);
    CHECK(reassembled == expected);
  }
}

TEST_CASE("panel and diff CSV round trips") {
  TempDir dir("roundtrip");
  Rng rng(41);
  const PricePanel panel = random_panel(rng, 25, 4);

  write_panel_csv(panel, dir.file("panel.csv"));
  const PricePanel back = read_panel_csv(dir.file("panel.csv"));
  CHECK(back.dates == panel.dates);
  CHECK(back.tickers == panel.tickers);
  CHECK(eigen_equal(back.closes, panel.closes));  // bit-exact

  const DiffPanel diffs = compute_abs_diffs(panel);
  const auto [normalized, params] = zscore_fit_apply(diffs, RowRange{0, 10});
  write_diff_csv(normalized, dir.file("diffs.csv"));
  const DiffPanel diffs_back = read_diff_csv(dir.file("diffs.csv"));
  CHECK(eigen_equal(diffs_back.abs_diffs, normalized.abs_diffs));

  write_normalization_json(params, diffs.tickers, dir.file("norm.json"));
  const auto [params_back, tickers_back] = read_normalization_json(dir.file("norm.json"));
  CHECK(tickers_back == diffs.tickers);
  CHECK(eigen_equal(params_back.means, params.means));
  CHECK(eigen_equal(params_back.stds, params.stds));
  CHECK(params_back.epsilon == params.epsilon);
}
