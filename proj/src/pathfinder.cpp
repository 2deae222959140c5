#include "rebalancer/pathfinder.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <vector>

#include "json.hpp"
#include "rebalancer/errors.hpp"

namespace rebalancer {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using NodePath = std::vector<Eigen::Index>;

bool path_lex_less(const NodePath& a, const NodePath& b, const std::vector<std::string>& names) {
  return std::lexicographical_compare(
      a.begin(), a.end(), b.begin(), b.end(),
      [&](Eigen::Index x, Eigen::Index y) {
        return names[static_cast<std::size_t>(x)] < names[static_cast<std::size_t>(y)];
      });
}

PathResult to_result(const NodePath& path, double cost, const AssetGraph& g) {
  PathResult result;
  result.nodes.reserve(path.size());
  for (const Eigen::Index v : path) result.nodes.push_back(g.tickers[static_cast<std::size_t>(v)]);
  result.total_cost = cost;
  result.steps = static_cast<int>(path.size()) - 1;
  return result;
}

Eigen::Index require_node(const AssetGraph& g, const std::string& ticker) {
  const Eigen::Index idx = g.index_of(ticker);
  if (idx < 0) throw Error(ErrorCode::UnknownTicker, ticker);
  return idx;
}

}  // namespace

PathResult dijkstra(const AssetGraph& g, const std::string& source, const std::string& target) {
  const Eigen::Index s = require_node(g, source);
  const Eigen::Index t = require_node(g, target);
  const Eigen::Index n = g.size();
  if (s == t) return PathResult{{source}, 0.0, 0};

  struct Best {
    double dist = kInf;
    NodePath path;
  };
  std::vector<Best> best(static_cast<std::size_t>(n));
  std::vector<bool> settled(static_cast<std::size_t>(n), false);
  best[static_cast<std::size_t>(s)] = {0.0, {s}};

  struct QueueItem {
    double dist;
    NodePath path;
    Eigen::Index node;
  };
  const auto worse = [&](const QueueItem& a, const QueueItem& b) {
    if (a.dist != b.dist) return a.dist > b.dist;
    return path_lex_less(b.path, a.path, g.tickers);
  };
  std::priority_queue<QueueItem, std::vector<QueueItem>, decltype(worse)> queue(worse);
  queue.push({0.0, {s}, s});

  while (!queue.empty()) {
    QueueItem item = queue.top();
    queue.pop();
    auto& current = best[static_cast<std::size_t>(item.node)];
    if (settled[static_cast<std::size_t>(item.node)]) continue;
    if (item.dist != current.dist || item.path != current.path) continue;  // stale entry
    settled[static_cast<std::size_t>(item.node)] = true;
    if (item.node == t) break;

    for (Eigen::Index v = 0; v < n; ++v) {
      if (v == item.node || settled[static_cast<std::size_t>(v)]) continue;
      const double w = g.weights(item.node, v);
      if (!(w < kInf)) continue;  // absent edge
      const double cand_dist = item.dist + w;
      auto& entry = best[static_cast<std::size_t>(v)];
      if (cand_dist > entry.dist) continue;
      NodePath cand_path = item.path;
      cand_path.push_back(v);
      if (cand_dist == entry.dist && !path_lex_less(cand_path, entry.path, g.tickers)) continue;
      entry.dist = cand_dist;
      entry.path = cand_path;
      queue.push({cand_dist, std::move(cand_path), v});
    }
  }

  const auto& answer = best[static_cast<std::size_t>(t)];
  if (!(answer.dist < kInf)) {
    throw Error(ErrorCode::NoPath, source + " -> " + target);
  }
  return to_result(answer.path, answer.dist, g);
}

PathResult brute_force_shortest(const AssetGraph& g, const std::string& source,
                                const std::string& target) {
  const Eigen::Index n = g.size();
  if (n > 8) {
    throw Error(ErrorCode::GraphTooLarge,
                std::to_string(n) + " nodes exceeds the enumeration bound of 8");
  }
  const Eigen::Index s = require_node(g, source);
  const Eigen::Index t = require_node(g, target);
  if (s == t) return PathResult{{source}, 0.0, 0};

  double best_cost = kInf;
  NodePath best_path;
  NodePath current{s};
  std::vector<bool> visited(static_cast<std::size_t>(n), false);
  visited[static_cast<std::size_t>(s)] = true;

  const std::function<void(Eigen::Index, double)> explore = [&](Eigen::Index u, double cost) {
    if (u == t) {
      if (cost < best_cost ||
          (cost == best_cost && path_lex_less(current, best_path, g.tickers))) {
        best_cost = cost;
        best_path = current;
      }
      return;
    }
    for (Eigen::Index v = 0; v < n; ++v) {
      if (visited[static_cast<std::size_t>(v)]) continue;
      const double w = g.weights(u, v);
      if (!(w < kInf)) continue;
      const double next_cost = cost + w;
      if (next_cost > best_cost) continue;  // keep equal-cost paths for the tie-break
      visited[static_cast<std::size_t>(v)] = true;
      current.push_back(v);
      explore(v, next_cost);
      current.pop_back();
      visited[static_cast<std::size_t>(v)] = false;
    }
  };
  explore(s, 0.0);

  if (!(best_cost < kInf)) {
    throw Error(ErrorCode::NoPath, source + " -> " + target);
  }
  return to_result(best_path, best_cost, g);
}

AllPairsCosts all_pairs_costs(const AssetGraph& g) {
  const Eigen::Index n = g.size();
  AllPairsCosts result;
  result.min_costs = Eigen::MatrixXd::Zero(n, n);
  result.paths.assign(static_cast<std::size_t>(n),
                      std::vector<PathResult>(static_cast<std::size_t>(n)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const std::string& a = g.tickers[static_cast<std::size_t>(i)];
      const std::string& b = g.tickers[static_cast<std::size_t>(j)];
      PathResult forward = dijkstra(g, a, b);
      // One cost for both orientations keeps the matrix exactly symmetric.
      result.min_costs(i, j) = forward.total_cost;
      result.min_costs(j, i) = forward.total_cost;
      result.paths[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = dijkstra(g, b, a);
      result.paths[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = std::move(forward);
    }
  }
  return result;
}

std::string to_json_string(const PathResult& result) {
  nlohmann::json j;
  j["path"] = result.nodes;
  j["total_cost"] = result.total_cost;
  j["steps"] = result.steps;
  return j.dump();
}

}  // namespace rebalancer
