#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "rebalancer/costgraph.hpp"

namespace rebalancer {

struct PathResult {
  std::vector<std::string> nodes;  // source first, target last, no repeats
  double total_cost = 0.0;
  int steps = 0;  // nodes.size() - 1
};

// Minimum-cost path under exact `<` comparison; ties broken by the
// lexicographically smallest node sequence. Lazy-deletion binary heap.
// Edges with +infinity weight are treated as absent; an unreachable target
// raises NoPath.
PathResult dijkstra(const AssetGraph& g, const std::string& source, const std::string& target);

// Exhaustive enumeration of simple paths with the same tie-break rule.
// Verification oracle; refuses graphs with more than 8 nodes.
PathResult brute_force_shortest(const AssetGraph& g, const std::string& source,
                                const std::string& target);

struct AllPairsCosts {
  Eigen::MatrixXd min_costs;                  // symmetric, zero diagonal
  std::vector<std::vector<PathResult>> paths;  // [i][j]; empty nodes on diagonal i == j
};

AllPairsCosts all_pairs_costs(const AssetGraph& g);

// {"path": [...], "total_cost": x, "steps": k}
std::string to_json_string(const PathResult& result);

}  // namespace rebalancer
