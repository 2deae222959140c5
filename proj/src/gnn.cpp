#include "rebalancer/gnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "rebalancer/errors.hpp"
#include "rebalancer/io_util.hpp"
#include "rebalancer/rng.hpp"

namespace rebalancer::gnn {

namespace {

constexpr int kModelFormatVersion = 1;

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

Eigen::MatrixXd relu_mask(const Eigen::MatrixXd& z) {
  return (z.array() > 0.0).cast<double>().matrix();
}

// Ordered node pairs (i, j), i != j, in fixed enumeration order.
std::vector<std::pair<Eigen::Index, Eigen::Index>> ordered_pairs(Eigen::Index n) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n - 1)));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j) pairs.emplace_back(i, j);
    }
  }
  return pairs;
}

// Neighbor aggregation over the fully connected graph: sum (or mean) of every
// other node's embedding, computed as column totals minus self.
Eigen::MatrixXd aggregate_neighbors(const Eigen::MatrixXd& h, Aggregation agg) {
  const Eigen::Index n = h.rows();
  const Eigen::RowVectorXd total = h.colwise().sum();
  Eigen::MatrixXd out = (-h).rowwise() + total;
  if (agg == Aggregation::Mean) {
    if (n > 1) {
      out /= static_cast<double>(n - 1);
    } else {
      out.setZero();
    }
  }
  return out;
}

struct Trace {
  std::vector<Eigen::MatrixXd> h;    // h[0] = input features, h[k] post-activation
  std::vector<Eigen::MatrixXd> z;    // pre-activations per layer
  std::vector<Eigen::MatrixXd> agg;  // aggregated neighbor inputs per layer
  std::vector<Eigen::MatrixXd> head_in;   // activation entering each head layer
  std::vector<Eigen::MatrixXd> head_pre;  // pre-activation of each head layer
  Eigen::MatrixXd raw;    // n x n raw pair scores, zero diagonal
  Eigen::MatrixXd score;  // symmetrized (raw + raw^T)/2
  Eigen::MatrixXd pred;   // softplus(score), zero diagonal
};

void check_features(const GnnModel& model, const Eigen::MatrixXd& features) {
  if (model.layers.empty() || model.edge_head.layers.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "model has no layers");
  }
  if (features.rows() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "feature matrix has no rows");
  }
  if (features.cols() != model.feature_dim()) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature width " + std::to_string(features.cols()) + " != model input " +
                    std::to_string(model.feature_dim()));
  }
  if (!model.tickers.empty() &&
      features.rows() != static_cast<Eigen::Index>(model.tickers.size())) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature rows " + std::to_string(features.rows()) + " != model nodes " +
                    std::to_string(model.tickers.size()));
  }
}

Trace run_forward(const GnnModel& model, const Eigen::MatrixXd& features) {
  check_features(model, features);
  const Eigen::Index n = features.rows();

  Trace trace;
  trace.h.reserve(model.layers.size() + 1);
  trace.h.push_back(features);
  for (const GnnLayerParams& layer : model.layers) {
    const Eigen::MatrixXd& hin = trace.h.back();
    Eigen::MatrixXd agg = aggregate_neighbors(hin, model.aggregation);
    Eigen::MatrixXd z = agg * layer.w_msg.transpose() + hin * layer.w_self.transpose();
    trace.h.push_back(relu(z));
    trace.agg.push_back(std::move(agg));
    trace.z.push_back(std::move(z));
  }

  const Eigen::MatrixXd& hk = trace.h.back();
  const Eigen::Index d = hk.cols();
  const auto pairs = ordered_pairs(n);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pairs.size()), 2 * d);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)).head(d) = hk.row(pairs[r].first);
    x.row(static_cast<Eigen::Index>(r)).tail(d) = hk.row(pairs[r].second);
  }

  const std::size_t depth = model.edge_head.layers.size();
  Eigen::MatrixXd activation = std::move(x);
  for (std::size_t l = 0; l < depth; ++l) {
    const DenseLayer& layer = model.edge_head.layers[l];
    trace.head_in.push_back(activation);
    Eigen::MatrixXd pre = activation * layer.w.transpose();
    pre.rowwise() += layer.b.transpose();
    activation = (l + 1 < depth) ? relu(pre) : pre;
    trace.head_pre.push_back(std::move(pre));
  }

  trace.raw = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    trace.raw(pairs[r].first, pairs[r].second) =
        trace.head_pre.back()(static_cast<Eigen::Index>(r), 0);
  }
  trace.score = 0.5 * (trace.raw + trace.raw.transpose());
  trace.pred = trace.score.unaryExpr([](double s) { return softplus(s); });
  trace.pred.diagonal().setZero();
  return trace;
}

struct BackpropResult {
  double loss = 0.0;
  GnnGradients grads;
};

BackpropResult backprop(const GnnModel& model, const Eigen::MatrixXd& features,
                        const Eigen::MatrixXd& target) {
  const Trace trace = run_forward(model, features);
  const Eigen::Index n = features.rows();
  if (target.rows() != n || target.cols() != n) {
    throw Error(ErrorCode::ShapeMismatch, "target matrix does not match node count");
  }

  BackpropResult result;
  result.grads = make_zero_gradients(model);
  result.loss = pair_mse(trace.pred, target);
  const Eigen::Index num_pairs = n * (n - 1) / 2;
  if (num_pairs == 0) return result;

  // d loss / d raw_ij, identical for both orientations of a pair: the loss
  // term is (softplus(s) - y)^2 with s = (raw_ij + raw_ji)/2.
  Eigen::MatrixXd d_raw = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d_pred =
          2.0 * (trace.pred(i, j) - target(i, j)) / static_cast<double>(num_pairs);
      const double value = d_pred * sigmoid(trace.score(i, j)) * 0.5;
      d_raw(i, j) = value;
      d_raw(j, i) = value;
    }
  }

  const auto pairs = ordered_pairs(n);
  const std::size_t depth = model.edge_head.layers.size();
  Eigen::MatrixXd d_pre(static_cast<Eigen::Index>(pairs.size()), 1);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    d_pre(static_cast<Eigen::Index>(r), 0) = d_raw(pairs[r].first, pairs[r].second);
  }

  Eigen::MatrixXd d_input;
  for (std::size_t l = depth; l-- > 0;) {
    const DenseLayer& layer = model.edge_head.layers[l];
    DenseLayer& grad = result.grads.edge_head.layers[l];
    grad.w = d_pre.transpose() * trace.head_in[l];
    grad.b = d_pre.colwise().sum().transpose();
    d_input = d_pre * layer.w;
    if (l > 0) {
      d_pre = d_input.cwiseProduct(relu_mask(trace.head_pre[l - 1]));
    }
  }

  const Eigen::Index d = trace.h.back().cols();
  Eigen::MatrixXd d_h = Eigen::MatrixXd::Zero(n, d);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    d_h.row(pairs[r].first) += d_input.row(static_cast<Eigen::Index>(r)).head(d);
    d_h.row(pairs[r].second) += d_input.row(static_cast<Eigen::Index>(r)).tail(d);
  }

  for (std::size_t k = model.layers.size(); k-- > 0;) {
    const GnnLayerParams& layer = model.layers[k];
    GnnLayerParams& grad = result.grads.layers[k];
    const Eigen::MatrixXd d_z = d_h.cwiseProduct(relu_mask(trace.z[k]));
    grad.w_msg = d_z.transpose() * trace.agg[k];
    grad.w_self = d_z.transpose() * trace.h[k];

    Eigen::MatrixXd d_agg = d_z * layer.w_msg;
    Eigen::MatrixXd d_hin = d_z * layer.w_self;
    if (model.aggregation == Aggregation::Mean && n > 1) {
      d_agg /= static_cast<double>(n - 1);
    }
    if (n > 1 || model.aggregation == Aggregation::Sum) {
      // Every node u feeds the aggregate of every other node v:
      // d_hin[u] += sum_{v != u} d_agg[v].
      const Eigen::RowVectorXd total = d_agg.colwise().sum();
      d_hin += (-d_agg).rowwise() + total;
    }
    d_h = std::move(d_hin);
  }
  return result;
}

void fill_glorot(Eigen::MatrixXd& m, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = rng.uniform(-bound, bound);
    }
  }
}

void accumulate(GnnGradients& into, const GnnGradients& from) {
  for (std::size_t k = 0; k < into.layers.size(); ++k) {
    into.layers[k].w_msg += from.layers[k].w_msg;
    into.layers[k].w_self += from.layers[k].w_self;
  }
  for (std::size_t l = 0; l < into.edge_head.layers.size(); ++l) {
    into.edge_head.layers[l].w += from.edge_head.layers[l].w;
    into.edge_head.layers[l].b += from.edge_head.layers[l].b;
  }
}

void scale(GnnGradients& grads, double factor) {
  for (GnnLayerParams& layer : grads.layers) {
    layer.w_msg *= factor;
    layer.w_self *= factor;
  }
  for (DenseLayer& layer : grads.edge_head.layers) {
    layer.w *= factor;
    layer.b *= factor;
  }
}

}  // namespace

const char* to_string(Aggregation agg) { return agg == Aggregation::Sum ? "sum" : "mean"; }

std::vector<ParamSpan> parameter_spans(GnnModel& model) {
  std::vector<ParamSpan> spans;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const std::string prefix = "layer" + std::to_string(k);
    spans.push_back({prefix + ".w_msg", model.layers[k].w_msg.data(),
                     model.layers[k].w_msg.size()});
    spans.push_back({prefix + ".w_self", model.layers[k].w_self.data(),
                     model.layers[k].w_self.size()});
  }
  for (std::size_t l = 0; l < model.edge_head.layers.size(); ++l) {
    const std::string prefix = "head" + std::to_string(l);
    spans.push_back({prefix + ".w", model.edge_head.layers[l].w.data(),
                     model.edge_head.layers[l].w.size()});
    spans.push_back({prefix + ".b", model.edge_head.layers[l].b.data(),
                     model.edge_head.layers[l].b.size()});
  }
  return spans;
}

std::vector<ConstParamSpan> parameter_spans(const GnnModel& model) {
  std::vector<ConstParamSpan> spans;
  for (const ParamSpan& s : parameter_spans(const_cast<GnnModel&>(model))) {
    spans.push_back({s.name, s.data, s.size});
  }
  return spans;
}

std::vector<ConstParamSpan> gradient_spans(const GnnGradients& grads) {
  std::vector<ConstParamSpan> spans;
  for (std::size_t k = 0; k < grads.layers.size(); ++k) {
    const std::string prefix = "layer" + std::to_string(k);
    spans.push_back({prefix + ".w_msg", grads.layers[k].w_msg.data(),
                     grads.layers[k].w_msg.size()});
    spans.push_back({prefix + ".w_self", grads.layers[k].w_self.data(),
                     grads.layers[k].w_self.size()});
  }
  for (std::size_t l = 0; l < grads.edge_head.layers.size(); ++l) {
    const std::string prefix = "head" + std::to_string(l);
    spans.push_back({prefix + ".w", grads.edge_head.layers[l].w.data(),
                     grads.edge_head.layers[l].w.size()});
    spans.push_back({prefix + ".b", grads.edge_head.layers[l].b.data(),
                     grads.edge_head.layers[l].b.size()});
  }
  return spans;
}

GnnModel init_model(const TrainConfig& cfg, int feature_dim, int num_nodes) {
  if (cfg.hidden_dim < 1 || cfg.num_layers < 1 || feature_dim < 1 || num_nodes < 1) {
    throw Error(ErrorCode::ShapeMismatch, "model dimensions must be positive");
  }
  Rng rng(cfg.seed);
  GnnModel model;
  model.aggregation = cfg.aggregation;
  model.config = cfg;
  model.target_scale = 1.0;
  model.tickers.reserve(static_cast<std::size_t>(num_nodes));
  for (int i = 0; i < num_nodes; ++i) model.tickers.push_back("N" + std::to_string(i));

  int in_dim = feature_dim;
  for (int k = 0; k < cfg.num_layers; ++k) {
    GnnLayerParams layer;
    layer.w_msg.resize(cfg.hidden_dim, in_dim);
    layer.w_self.resize(cfg.hidden_dim, in_dim);
    fill_glorot(layer.w_msg, rng);
    fill_glorot(layer.w_self, rng);
    model.layers.push_back(std::move(layer));
    in_dim = cfg.hidden_dim;
  }

  DenseLayer hidden;
  hidden.w.resize(cfg.hidden_dim, 2 * cfg.hidden_dim);
  hidden.b = Eigen::VectorXd::Zero(cfg.hidden_dim);
  fill_glorot(hidden.w, rng);
  DenseLayer out;
  out.w.resize(1, cfg.hidden_dim);
  out.b = Eigen::VectorXd::Zero(1);
  fill_glorot(out.w, rng);
  model.edge_head.layers = {std::move(hidden), std::move(out)};
  return model;
}

Eigen::MatrixXd forward_embeddings(const GnnModel& model, const FeatureWindow& features) {
  return run_forward(model, features.features).h.back();
}

Eigen::MatrixXd predict_normalized(const GnnModel& model, const Eigen::MatrixXd& features) {
  return run_forward(model, features).pred;
}

AssetGraph predict_edge_costs(const GnnModel& model, const FeatureWindow& features) {
  AssetGraph g;
  g.tickers = model.tickers;
  g.weights = predict_normalized(model, features.features) * model.target_scale;
  g.weights.diagonal().setZero();
  return g;
}

double pair_mse(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target) {
  if (predicted.rows() != target.rows() || predicted.cols() != target.cols() ||
      predicted.rows() != predicted.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "pair matrices must be square and equal-sized");
  }
  const Eigen::Index n = predicted.rows();
  const Eigen::Index num_pairs = n * (n - 1) / 2;
  if (num_pairs == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double err = predicted(i, j) - target(i, j);
      sum += err * err;
    }
  }
  return sum / static_cast<double>(num_pairs);
}

double mse_loss(const AssetGraph& predicted, const AssetGraph& target) {
  if (predicted.tickers != target.tickers) {
    throw Error(ErrorCode::TickerMismatch, "predicted and target graphs differ");
  }
  return pair_mse(predicted.weights, target.weights);
}

double forward_loss(const GnnModel& model, const Eigen::MatrixXd& features,
                    const Eigen::MatrixXd& target_normalized) {
  return pair_mse(run_forward(model, features).pred, target_normalized);
}

GnnGradients backward(const GnnModel& model, const Eigen::MatrixXd& features,
                      const Eigen::MatrixXd& target_normalized) {
  return backprop(model, features, target_normalized).grads;
}

GnnGradients make_zero_gradients(const GnnModel& model) {
  GnnGradients grads;
  for (const GnnLayerParams& layer : model.layers) {
    grads.layers.push_back({Eigen::MatrixXd::Zero(layer.w_msg.rows(), layer.w_msg.cols()),
                            Eigen::MatrixXd::Zero(layer.w_self.rows(), layer.w_self.cols())});
  }
  for (const DenseLayer& layer : model.edge_head.layers) {
    grads.edge_head.layers.push_back({Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols()),
                                      Eigen::VectorXd::Zero(layer.b.size())});
  }
  return grads;
}

void adam_step(GnnModel& model, const GnnGradients& grads, AdamState& state,
               const TrainConfig& cfg) {
  const std::vector<ParamSpan> params = parameter_spans(model);
  const std::vector<ConstParamSpan> gradients = gradient_spans(grads);
  if (params.size() != gradients.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient structure does not match model");
  }
  if (state.m.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const ParamSpan& p : params) {
      state.m.push_back(Eigen::VectorXd::Zero(p.size));
      state.v.push_back(Eigen::VectorXd::Zero(p.size));
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "adam state does not match model");
  }

  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].size != gradients[p].size || params[p].size != state.m[p].size()) {
      throw Error(ErrorCode::ShapeMismatch, "parameter " + params[p].name + " shape changed");
    }
    double* theta = params[p].data;
    const double* g = gradients[p].data;
    Eigen::VectorXd& m = state.m[p];
    Eigen::VectorXd& v = state.v[p];
    for (Eigen::Index i = 0; i < params[p].size; ++i) {
      m(i) = cfg.adam_beta1 * m(i) + (1.0 - cfg.adam_beta1) * g[i];
      v(i) = cfg.adam_beta2 * v(i) + (1.0 - cfg.adam_beta2) * g[i] * g[i];
      const double m_hat = m(i) / bc1;
      const double v_hat = v(i) / bc2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }
}

TrainResult train(const std::vector<TrainingSample>& train_samples,
                  const std::vector<TrainingSample>& val_samples, const TrainConfig& cfg) {
  if (train_samples.empty() || val_samples.empty()) {
    throw Error(ErrorCode::EmptySplit, "train and validation splits must be non-empty");
  }
  const Eigen::Index n = train_samples.front().window.features.rows();
  const Eigen::Index width = train_samples.front().window.features.cols();
  const auto check_sample = [&](const TrainingSample& s) {
    if (s.window.features.rows() != n || s.window.features.cols() != width ||
        s.target.size() != n) {
      throw Error(ErrorCode::ShapeMismatch, "inconsistent sample shapes");
    }
  };
  for (const TrainingSample& s : train_samples) check_sample(s);
  for (const TrainingSample& s : val_samples) check_sample(s);

  GnnModel model = init_model(cfg, static_cast<int>(width), static_cast<int>(n));
  model.tickers = train_samples.front().target.tickers;

  // Scale-only target normalization: RMS over the unique training pairs.
  const Eigen::Index num_pairs = n * (n - 1) / 2;
  double sum_sq = 0.0;
  for (const TrainingSample& s : train_samples) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        sum_sq += s.target.weights(i, j) * s.target.weights(i, j);
      }
    }
  }
  const double denom = static_cast<double>(train_samples.size()) *
                       static_cast<double>(std::max<Eigen::Index>(num_pairs, 1));
  model.target_scale = std::max(std::sqrt(sum_sq / denom), 1e-8);

  std::vector<Eigen::MatrixXd> train_targets;
  train_targets.reserve(train_samples.size());
  for (const TrainingSample& s : train_samples) {
    train_targets.push_back(s.target.weights / model.target_scale);
  }
  std::vector<Eigen::MatrixXd> val_targets;
  val_targets.reserve(val_samples.size());
  for (const TrainingSample& s : val_samples) {
    val_targets.push_back(s.target.weights / model.target_scale);
  }

  const std::size_t num_train = train_samples.size();
  const bool minibatch = static_cast<int>(num_train) > cfg.full_batch_threshold;
  const std::size_t batch_size =
      minibatch ? static_cast<std::size_t>(std::max(cfg.batch_size, 1)) : num_train;
  Rng shuffler(cfg.seed + 1);

  AdamState state;
  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  GnnModel best_model = model;
  int strikes = 0;

  std::vector<std::size_t> order(num_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    if (minibatch) shuffler.shuffle(order);

    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < num_train; begin += batch_size) {
      const std::size_t end = std::min(begin + batch_size, num_train);
      GnnGradients batch_grads = make_zero_gradients(model);
      for (std::size_t k = begin; k < end; ++k) {
        const std::size_t idx = order[k];
        BackpropResult bp =
            backprop(model, train_samples[idx].window.features, train_targets[idx]);
        loss_sum += bp.loss;
        accumulate(batch_grads, bp.grads);
      }
      scale(batch_grads, 1.0 / static_cast<double>(end - begin));
      adam_step(model, batch_grads, state, cfg);
    }
    const double train_mse = loss_sum / static_cast<double>(num_train);

    double val_sum = 0.0;
    for (std::size_t k = 0; k < val_samples.size(); ++k) {
      val_sum += forward_loss(model, val_samples[k].window.features, val_targets[k]);
    }
    const double val_mse = val_sum / static_cast<double>(val_samples.size());

    if (!std::isfinite(train_mse) || !std::isfinite(val_mse)) {
      throw Error(ErrorCode::DivergedLoss, "non-finite loss at epoch " + std::to_string(epoch));
    }

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back({epoch, train_mse, val_mse, seconds});

    if (val_mse < best_val) {
      best_val = val_mse;
      best_model = model;
      result.best_epoch = epoch;
      strikes = 0;
    } else {
      ++strikes;
      if (strikes >= cfg.patience) break;
    }
  }

  result.model = std::move(best_model);
  result.best_val_mse = best_val;
  return result;
}

void write_training_log(const std::vector<EpochStats>& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "epoch,train_mse,val_mse,seconds\n";
  for (const EpochStats& row : log) {
    char seconds[32];
    std::snprintf(seconds, sizeof(seconds), "%.6f", row.seconds);
    out << row.epoch << ',' << format_double(row.train_mse) << ',' << format_double(row.val_mse)
        << ',' << seconds << '\n';
  }
  write_text_atomic(path, out.str());
}

namespace {

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::CorruptFile, "bad matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::CorruptFile, "ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c));
  }
  return m;
}

}  // namespace

void save_model(const GnnModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format_version"] = kModelFormatVersion;
  j["aggregation"] = to_string(model.aggregation);
  j["activation"] = "relu";
  j["output_transform"] = "softplus";
  j["target_scale"] = model.target_scale;
  j["tickers"] = model.tickers;
  j["config"] = {{"learning_rate", model.config.learning_rate},
                 {"max_epochs", model.config.max_epochs},
                 {"patience", model.config.patience},
                 {"seed", model.config.seed},
                 {"hidden_dim", model.config.hidden_dim},
                 {"num_layers", model.config.num_layers},
                 {"adam_beta1", model.config.adam_beta1},
                 {"adam_beta2", model.config.adam_beta2},
                 {"adam_epsilon", model.config.adam_epsilon},
                 {"batch_size", model.config.batch_size},
                 {"full_batch_threshold", model.config.full_batch_threshold},
                 {"aggregation", to_string(model.config.aggregation)}};
  nlohmann::json layers = nlohmann::json::array();
  for (const GnnLayerParams& layer : model.layers) {
    layers.push_back(
        {{"w_msg", matrix_to_json(layer.w_msg)}, {"w_self", matrix_to_json(layer.w_self)}});
  }
  j["layers"] = std::move(layers);
  nlohmann::json head = nlohmann::json::array();
  for (const DenseLayer& layer : model.edge_head.layers) {
    head.push_back({{"w", matrix_to_json(layer.w)},
                    {"b", std::vector<double>(layer.b.data(), layer.b.data() + layer.b.size())}});
  }
  j["edge_head"] = std::move(head);
  write_text_atomic(path, j.dump(2) + "\n");
}

GnnModel load_model(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("format_version")) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": no format_version");
  }
  int version = -1;
  try {
    version = j.at("format_version").get<int>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": bad format_version");
  }
  if (version != kModelFormatVersion) {
    throw Error(ErrorCode::VersionMismatch,
                "model format " + std::to_string(version) + ", expected " +
                    std::to_string(kModelFormatVersion));
  }

  try {
    GnnModel model;
    const std::string agg = j.at("aggregation").get<std::string>();
    model.aggregation = agg == "mean" ? Aggregation::Mean : Aggregation::Sum;
    model.target_scale = j.at("target_scale").get<double>();
    model.tickers = j.at("tickers").get<std::vector<std::string>>();
    const nlohmann::json& cfg = j.at("config");
    model.config.learning_rate = cfg.at("learning_rate").get<double>();
    model.config.max_epochs = cfg.at("max_epochs").get<int>();
    model.config.patience = cfg.at("patience").get<int>();
    model.config.seed = cfg.at("seed").get<std::uint64_t>();
    model.config.hidden_dim = cfg.at("hidden_dim").get<int>();
    model.config.num_layers = cfg.at("num_layers").get<int>();
    model.config.adam_beta1 = cfg.at("adam_beta1").get<double>();
    model.config.adam_beta2 = cfg.at("adam_beta2").get<double>();
    model.config.adam_epsilon = cfg.at("adam_epsilon").get<double>();
    model.config.batch_size = cfg.at("batch_size").get<int>();
    model.config.full_batch_threshold = cfg.at("full_batch_threshold").get<int>();
    model.config.aggregation =
        cfg.at("aggregation").get<std::string>() == "mean" ? Aggregation::Mean : Aggregation::Sum;

    for (const nlohmann::json& layer : j.at("layers")) {
      model.layers.push_back(
          {matrix_from_json(layer.at("w_msg")), matrix_from_json(layer.at("w_self"))});
    }
    for (const nlohmann::json& layer : j.at("edge_head")) {
      const auto b = layer.at("b").get<std::vector<double>>();
      DenseLayer dense;
      dense.w = matrix_from_json(layer.at("w"));
      dense.b = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
      model.edge_head.layers.push_back(std::move(dense));
    }

    if (model.layers.empty() || model.edge_head.layers.empty()) {
      throw Error(ErrorCode::CorruptFile, path.string() + ": empty layer stack");
    }
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      const auto& layer = model.layers[k];
      if (layer.w_msg.rows() != layer.w_self.rows() ||
          layer.w_msg.cols() != layer.w_self.cols()) {
        throw Error(ErrorCode::CorruptFile, path.string() + ": layer shape mismatch");
      }
      if (k > 0 && layer.w_msg.cols() != model.layers[k - 1].w_msg.rows()) {
        throw Error(ErrorCode::CorruptFile, path.string() + ": layer dims do not compose");
      }
    }
    const Eigen::Index d = model.layers.back().w_msg.rows();
    if (model.edge_head.layers.front().w.cols() != 2 * d ||
        model.edge_head.layers.back().w.rows() != 1) {
      throw Error(ErrorCode::CorruptFile, path.string() + ": edge head dims do not compose");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, path.string() + ": " + e.what());
  }
}

GradCheckReport run_gradient_checks(const GradCheckConfig& cfg) {
  GradCheckReport report;
  report.trials = cfg.trials;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    Rng rng(cfg.seed + static_cast<std::uint64_t>(trial));
    TrainConfig tc;
    tc.hidden_dim = rng.uniform_int(2, 8);
    tc.num_layers = rng.uniform_int(1, 2);
    tc.seed = rng.next_u64();
    const int n = rng.uniform_int(2, 5);
    const int width = rng.uniform_int(1, 8);

    GnnModel model = init_model(tc, width, n);
    Eigen::MatrixXd features(n, width);
    for (Eigen::Index r = 0; r < features.rows(); ++r) {
      for (Eigen::Index c = 0; c < features.cols(); ++c) {
        features(r, c) = rng.uniform(-1.0, 1.0);
      }
    }
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double y = rng.uniform(0.0, 2.0);
        target(i, j) = y;
        target(j, i) = y;
      }
    }

    const GnnGradients analytic = backward(model, features, target);
    std::vector<ConstParamSpan> analytic_spans = gradient_spans(analytic);
    if (cfg.inject != 0.0 && !analytic_spans.empty() && analytic_spans.front().size > 0) {
      // Test hook: report against a deliberately wrong analytic value.
      const_cast<double*>(analytic_spans.front().data)[0] += cfg.inject;
    }

    std::vector<ParamSpan> params = parameter_spans(model);
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (Eigen::Index i = 0; i < params[p].size; ++i) {
        double& theta = params[p].data[i];
        const double original = theta;
        theta = original + cfg.step;
        const double loss_plus = forward_loss(model, features, target);
        theta = original - cfg.step;
        const double loss_minus = forward_loss(model, features, target);
        theta = original;

        const double numeric = (loss_plus - loss_minus) / (2.0 * cfg.step);
        const double analytic_value = analytic_spans[p].data[i];
        const double rel = std::abs(analytic_value - numeric) /
                           std::max({1.0, std::abs(analytic_value), std::abs(numeric)});
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst = {trial, params[p].name, i, analytic_value, numeric, rel};
        }
      }
    }
  }
  return report;
}

}  // namespace rebalancer::gnn
