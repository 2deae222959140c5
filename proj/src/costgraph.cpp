#include "rebalancer/costgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "rebalancer/errors.hpp"
#include "rebalancer/io_util.hpp"
#include "rebalancer/pathfinder.hpp"

namespace rebalancer {

const char* to_string(CostMode mode) {
  return mode == CostMode::LevelDiff ? "level-diff" : "per-asset-change";
}

std::optional<CostMode> parse_cost_mode(std::string_view name) {
  if (name == "level-diff") return CostMode::LevelDiff;
  if (name == "per-asset-change") return CostMode::PerAssetChange;
  return std::nullopt;
}

Eigen::Index AssetGraph::index_of(const std::string& ticker) const {
  const auto it = std::find(tickers.begin(), tickers.end(), ticker);
  return it == tickers.end() ? -1 : it - tickers.begin();
}

AssetGraph make_symmetric_graph(std::vector<std::string> tickers, const Eigen::MatrixXd& scores) {
  const auto n = static_cast<Eigen::Index>(tickers.size());
  if (scores.rows() != n || scores.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "score matrix does not match ticker count");
  }
  AssetGraph g;
  g.tickers = std::move(tickers);
  g.weights = 0.5 * (scores + scores.transpose());
  g.weights.diagonal().setZero();
  return g;
}

AssetGraph build_adjacency(const Eigen::Ref<const Eigen::MatrixXd>& closes,
                           std::vector<std::string> tickers, CostMode mode) {
  const auto n = static_cast<Eigen::Index>(tickers.size());
  if (n < 2) throw Error(ErrorCode::TooFewAssets, "need at least 2 assets");
  if (closes.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "price columns do not match ticker count");
  }
  const Eigen::Index rows = closes.rows();
  if (rows < 1 || (mode == CostMode::PerAssetChange && rows < 2)) {
    throw Error(ErrorCode::TooFewRows, "not enough price rows for " +
                                           std::string(to_string(mode)));
  }

  AssetGraph g;
  g.tickers = std::move(tickers);
  g.weights = Eigen::MatrixXd::Zero(n, n);
  if (mode == CostMode::LevelDiff) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double cost = (closes.col(i) - closes.col(j)).cwiseAbs().mean();
        g.weights(i, j) = cost;
        g.weights(j, i) = cost;
      }
    }
  } else {
    Eigen::VectorXd mean_change(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mean_change(i) =
          (closes.col(i).tail(rows - 1) - closes.col(i).head(rows - 1)).cwiseAbs().mean();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double cost = 0.5 * (mean_change(i) + mean_change(j));
        g.weights(i, j) = cost;
        g.weights(j, i) = cost;
      }
    }
  }
  return g;
}

AssetGraph build_adjacency(const PricePanel& panel, CostMode mode) {
  return build_adjacency(panel.closes, panel.tickers, mode);
}

GraphValidation validate_graph(const AssetGraph& g) {
  GraphValidation report;
  const Eigen::Index n = g.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double diag = g.weights(i, i);
    if (!std::isfinite(diag)) {
      report.nonfinite_entries.emplace_back(i, i);
    } else if (diag != 0.0) {
      report.nonzero_diagonal.push_back(i);
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = g.weights(i, j);
      if (!std::isfinite(w)) {
        report.nonfinite_entries.emplace_back(i, j);
        continue;
      }
      if (w < 0.0) report.negative_entries.emplace_back(i, j);
      if (j > i && std::isfinite(g.weights(j, i))) {
        report.max_asymmetry = std::max(report.max_asymmetry, std::abs(w - g.weights(j, i)));
      }
    }
  }
  return report;
}

std::string GraphValidation::summary() const {
  if (ok()) return "valid";
  std::ostringstream out;
  if (max_asymmetry > 0.0) {
    out << "asymmetric (max |A_ij - A_ji| = " << format_double(max_asymmetry) << "); ";
  }
  if (!nonzero_diagonal.empty()) {
    out << nonzero_diagonal.size() << " nonzero diagonal entries; ";
  }
  if (!negative_entries.empty()) {
    out << negative_entries.size() << " negative entries; ";
  }
  if (!nonfinite_entries.empty()) {
    out << nonfinite_entries.size() << " non-finite entries; ";
  }
  return out.str();
}

std::string to_dot(const AssetGraph& g, const PathResult* highlighted) {
  std::set<std::pair<Eigen::Index, Eigen::Index>> highlight;
  if (highlighted != nullptr) {
    for (std::size_t k = 0; k + 1 < highlighted->nodes.size(); ++k) {
      const Eigen::Index a = g.index_of(highlighted->nodes[k]);
      const Eigen::Index b = g.index_of(highlighted->nodes[k + 1]);
      if (a < 0 || b < 0) {
        throw Error(ErrorCode::UnknownPathNode,
                    a < 0 ? highlighted->nodes[k] : highlighted->nodes[k + 1]);
      }
      highlight.emplace(std::min(a, b), std::max(a, b));
    }
    if (highlighted->nodes.size() == 1 && g.index_of(highlighted->nodes[0]) < 0) {
      throw Error(ErrorCode::UnknownPathNode, highlighted->nodes[0]);
    }
  }

  std::ostringstream out;
  out << "graph costs {\n";
  out << "  node [shape=circle];\n";
  const Eigen::Index n = g.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      char label[32];
      std::snprintf(label, sizeof(label), "%.4f", g.weights(i, j));
      out << "  \"" << g.tickers[static_cast<std::size_t>(i)] << "\" -- \""
          << g.tickers[static_cast<std::size_t>(j)] << "\" [label=\"" << label << '"';
      if (highlight.count({i, j})) {
        out << ", color=\"red\", penwidth=2.0";
      }
      out << "];\n";
    }
  }
  out << "}\n";
  return out.str();
}

std::vector<EdgeRecord> to_edge_records(const AssetGraph& g) {
  std::vector<EdgeRecord> records;
  const Eigen::Index n = g.size();
  records.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const std::string& a = g.tickers[static_cast<std::size_t>(i)];
      const std::string& b = g.tickers[static_cast<std::size_t>(j)];
      EdgeRecord record;
      record.from = std::min(a, b);
      record.to = std::max(a, b);
      record.cost = g.weights(i, j);
      records.push_back(std::move(record));
    }
  }
  std::sort(records.begin(), records.end(), [](const EdgeRecord& x, const EdgeRecord& y) {
    return std::tie(x.from, x.to) < std::tie(y.from, y.to);
  });
  return records;
}

void write_edge_list(const AssetGraph& g, const std::filesystem::path& path) {
  const GraphValidation check = validate_graph(g);
  if (!check.ok()) {
    throw std::invalid_argument("refusing to write invalid graph: " + check.summary());
  }
  std::ostringstream out;
  out << "from,to,cost\n";
  for (const EdgeRecord& e : to_edge_records(g)) {
    out << e.from << ',' << e.to << ',' << format_double(e.cost) << '\n';
  }
  write_text_atomic(path, out.str());
}

AssetGraph read_edge_list(const std::filesystem::path& path,
                          const std::vector<std::string>& expected_tickers) {
  const std::string text = read_text_file(path);
  std::vector<std::string> lines = split_lines(text);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::EmptyFile, path.string());
  if (split_csv_line(lines.front()) != std::vector<std::string>{"from", "to", "cost"}) {
    throw Error(ErrorCode::CorruptFile, "expected 'from,to,cost' header in " + path.string());
  }

  std::map<std::pair<std::string, std::string>, double> edges;
  std::set<std::string> seen;
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty()) continue;
    const std::vector<std::string> parts = split_csv_line(lines[row]);
    if (parts.size() != 3) {
      throw Error(ErrorCode::CorruptFile, "row " + std::to_string(row + 1) + " in " +
                                              path.string());
    }
    if (parts[0] == parts[1]) {
      throw Error(ErrorCode::DuplicateEdge, "self-loop on '" + parts[0] + "'");
    }
    double cost = 0.0;
    if (!try_parse_double(parts[2], cost)) {
      throw Error(ErrorCode::CorruptFile,
                  "bad cost '" + parts[2] + "' at row " + std::to_string(row + 1));
    }
    const std::pair<std::string, std::string> key{std::min(parts[0], parts[1]),
                                                  std::max(parts[0], parts[1])};
    const auto it = edges.find(key);
    if (it != edges.end()) {
      if (it->second != cost) {
        throw Error(ErrorCode::AsymmetricInput,
                    key.first + "-" + key.second + ": " + format_double(it->second) + " vs " +
                        format_double(cost));
      }
      throw Error(ErrorCode::DuplicateEdge, key.first + "-" + key.second);
    }
    edges.emplace(key, cost);
    seen.insert(parts[0]);
    seen.insert(parts[1]);
  }

  AssetGraph g;
  if (expected_tickers.empty()) {
    g.tickers.assign(seen.begin(), seen.end());
  } else {
    for (const std::string& t : seen) {
      if (std::find(expected_tickers.begin(), expected_tickers.end(), t) ==
          expected_tickers.end()) {
        throw Error(ErrorCode::UnknownTicker, t);
      }
    }
    g.tickers = expected_tickers;
  }
  const auto n = static_cast<Eigen::Index>(g.tickers.size());
  // Pairs absent from the file stay +infinity: no edge.
  g.weights.setConstant(n, n, std::numeric_limits<double>::infinity());
  g.weights.diagonal().setZero();
  for (const auto& [key, cost] : edges) {
    const Eigen::Index i = g.index_of(key.first);
    const Eigen::Index j = g.index_of(key.second);
    g.weights(i, j) = cost;
    g.weights(j, i) = cost;
  }
  return g;
}

}  // namespace rebalancer
