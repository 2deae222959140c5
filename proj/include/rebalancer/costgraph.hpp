#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rebalancer/panels.hpp"

namespace rebalancer {

struct PathResult;  // pathfinder.hpp

// How pairwise costs are derived from a price panel.
//   LevelDiff      : A_ij = mean_t |P_i(t) - P_j(t)|
//   PerAssetChange : A_ij = (mean_t |dP_i| + mean_t |dP_j|) / 2
enum class CostMode { LevelDiff, PerAssetChange };

const char* to_string(CostMode mode);
std::optional<CostMode> parse_cost_mode(std::string_view name);

// Fully connected asset graph. Weights are symmetric, nonnegative costs with
// a zero diagonal; +infinity marks an absent edge on graphs read from partial
// edge lists (such graphs fail validate_graph but remain routable).
struct AssetGraph {
  std::vector<std::string> tickers;
  Eigen::MatrixXd weights;  // [n x n]

  Eigen::Index size() const { return weights.rows(); }

  // -1 when the ticker is absent.
  Eigen::Index index_of(const std::string& ticker) const;
};

struct EdgeRecord {
  std::string from;
  std::string to;
  double cost = 0.0;
};

struct GraphValidation {
  double max_asymmetry = 0.0;
  std::vector<Eigen::Index> nonzero_diagonal;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> negative_entries;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> nonfinite_entries;

  bool ok() const {
    return max_asymmetry == 0.0 && nonzero_diagonal.empty() && negative_entries.empty() &&
           nonfinite_entries.empty();
  }
  std::string summary() const;
};

// Symmetrizes scores as (A + A^T)/2 and zeroes the diagonal. This is the
// canonical constructor for numerically produced weight matrices.
AssetGraph make_symmetric_graph(std::vector<std::string> tickers, const Eigen::MatrixXd& scores);

AssetGraph build_adjacency(const Eigen::Ref<const Eigen::MatrixXd>& closes,
                           std::vector<std::string> tickers, CostMode mode);
AssetGraph build_adjacency(const PricePanel& panel, CostMode mode);

GraphValidation validate_graph(const AssetGraph& g);

// Undirected Graphviz text; edge labels carry costs with four decimals. When
// a path is given its edges get a highlight attribute.
std::string to_dot(const AssetGraph& g, const PathResult* highlighted = nullptr);

// Canonical undirected edge enumeration: lexicographically smaller ticker
// first, records sorted by (from, to).
std::vector<EdgeRecord> to_edge_records(const AssetGraph& g);

// CSV `from,to,cost` in canonical order; costs keep full precision so a
// write-then-read round trip is bit-exact. read_edge_list returns nodes in
// lexicographic order; pass expected_tickers to pin the node set.
void write_edge_list(const AssetGraph& g, const std::filesystem::path& path);
AssetGraph read_edge_list(const std::filesystem::path& path,
                          const std::vector<std::string>& expected_tickers = {});

}  // namespace rebalancer
