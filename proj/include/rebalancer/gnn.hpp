#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rebalancer/costgraph.hpp"
#include "rebalancer/marketdata.hpp"

namespace rebalancer::gnn {

enum class Aggregation { Sum, Mean };

const char* to_string(Aggregation agg);

// One message-passing layer: h_v <- relu(sum_{u != v} W_msg h_u + W_self h_v)
// over the fully connected graph. No biases inside the passing layers.
struct GnnLayerParams {
  Eigen::MatrixXd w_msg;   // [d_out x d_in]
  Eigen::MatrixXd w_self;  // [d_out x d_in]
};

struct DenseLayer {
  Eigen::MatrixXd w;  // [d_out x d_in]
  Eigen::VectorXd b;  // [d_out]
};

// Small MLP mapping the concatenated pair embedding [h_i | h_j] to one raw
// score; relu between layers, linear output.
struct EdgeHeadParams {
  std::vector<DenseLayer> layers;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 42;
  int hidden_dim = 16;
  int num_layers = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Full-batch below the threshold; above it, seeded shuffling into
  // mini-batches of batch_size.
  int batch_size = 32;
  int full_batch_threshold = 1024;
  Aggregation aggregation = Aggregation::Sum;
};

struct GnnModel {
  std::vector<GnnLayerParams> layers;
  EdgeHeadParams edge_head;
  Aggregation aggregation = Aggregation::Sum;
  // Targets are trained divided by this scale; predictions multiply back to
  // currency units. Scale-only so the softplus image covers the target range.
  double target_scale = 1.0;
  std::vector<std::string> tickers;
  TrainConfig config;  // echoed into the model file

  Eigen::Index feature_dim() const { return layers.empty() ? 0 : layers.front().w_msg.cols(); }
  Eigen::Index embedding_dim() const { return layers.empty() ? 0 : layers.back().w_msg.rows(); }
};

// Gradients with the same shapes as the corresponding model parameters.
struct GnnGradients {
  std::vector<GnnLayerParams> layers;
  EdgeHeadParams edge_head;
};

// Flat view over every learnable parameter, in a fixed traversal order (per
// layer w_msg then w_self, then per head layer w then b).
struct ParamSpan {
  std::string name;
  double* data = nullptr;
  Eigen::Index size = 0;
};
struct ConstParamSpan {
  std::string name;
  const double* data = nullptr;
  Eigen::Index size = 0;
};

std::vector<ParamSpan> parameter_spans(GnnModel& model);
std::vector<ConstParamSpan> parameter_spans(const GnnModel& model);
std::vector<ConstParamSpan> gradient_spans(const GnnGradients& grads);

struct AdamState {
  std::vector<Eigen::VectorXd> m;
  std::vector<Eigen::VectorXd> v;
  long step = 0;
};

// Glorot-uniform weights from the seeded generator, zero biases. Identical
// seeds produce bit-identical models. Tickers default to N0..N{n-1} until
// train() overwrites them.
GnnModel init_model(const TrainConfig& cfg, int feature_dim, int num_nodes);

// Node embeddings after all message-passing layers. [n x d_K]
Eigen::MatrixXd forward_embeddings(const GnnModel& model, const FeatureWindow& features);

// Symmetric softplus pair scores in normalized target space, zero diagonal.
Eigen::MatrixXd predict_normalized(const GnnModel& model, const Eigen::MatrixXd& features);

// Predicted cost graph in currency units; satisfies every AssetGraph
// invariant by construction.
AssetGraph predict_edge_costs(const GnnModel& model, const FeatureWindow& features);

// Mean over the n(n-1)/2 unique off-diagonal pairs of squared error.
double mse_loss(const AssetGraph& predicted, const AssetGraph& target);
double pair_mse(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& target);

// Loss of a forward pass against a normalized-space target matrix.
double forward_loss(const GnnModel& model, const Eigen::MatrixXd& features,
                    const Eigen::MatrixXd& target_normalized);

// Exact analytic gradients of forward_loss with respect to every parameter.
GnnGradients backward(const GnnModel& model, const Eigen::MatrixXd& features,
                      const Eigen::MatrixXd& target_normalized);

GnnGradients make_zero_gradients(const GnnModel& model);

// Standard Adam update with bias correction; lazily initializes the state.
void adam_step(GnnModel& model, const GnnGradients& grads, AdamState& state,
               const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  GnnModel model;  // parameters of the best validation epoch
  std::vector<EpochStats> log;
  int best_epoch = 0;
  double best_val_mse = 0.0;
};

TrainResult train(const std::vector<TrainingSample>& train_samples,
                  const std::vector<TrainingSample>& val_samples, const TrainConfig& cfg);

void write_training_log(const std::vector<EpochStats>& log, const std::filesystem::path& path);

// JSON container with a format version, config echo, target scaling and full
// precision parameters; round trip is bit-exact.
void save_model(const GnnModel& model, const std::filesystem::path& path);
GnnModel load_model(const std::filesystem::path& path);

struct GradCheckConfig {
  int trials = 100;
  std::uint64_t seed = 1234;
  double step = 1e-6;
  double tolerance = 1e-4;
  // Test hook: offset added to one analytic gradient entry to force failure.
  double inject = 0.0;
};

struct GradCheckWorst {
  int trial = -1;
  std::string param;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  int trials = 0;
  double max_rel_error = 0.0;
  GradCheckWorst worst;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

// Central finite differences against backward() on randomized small models
// (n <= 5, W <= 8, hidden <= 8). Relative error uses
// |a - n| / max(1, |a|, |n|).
GradCheckReport run_gradient_checks(const GradCheckConfig& cfg);

}  // namespace rebalancer::gnn
