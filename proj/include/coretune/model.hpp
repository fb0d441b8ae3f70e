// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coretune/dataio.hpp"

namespace coretune {

/// Fully-connected ReLU network with a softmax cross-entropy head.
struct MlpModel {
  std::vector<int> layer_dims;            // [d, h1, ..., C]
  std::vector<Eigen::MatrixXd> weights;   // weights[l]: dims[l] x dims[l+1]
  std::vector<Eigen::VectorXd> biases;    // biases[l]: dims[l+1]

  int n_layers() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return layer_dims.front(); }
  int n_classes() const { return layer_dims.back(); }
  long parameter_count() const;
  bool all_finite() const;
};

/// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
/// Deterministic per seed.
MlpModel init_mlp(const std::vector<int>& layer_dims, std::uint64_t seed);

struct LossReport {
  double mean_loss = 0.0;  // nats
  double accuracy = 0.0;
};

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  static Gradients zeros_like(const MlpModel& model);
  bool all_finite() const;
};

/// Tracks the cost proxies: sample-gradient evaluations for training,
/// forward-only evaluations, and selection overhead in forward-equivalent
/// units. Virtual time and speedups are derived from these.
struct CostMeter {
  std::uint64_t sample_gradients = 0;
  std::uint64_t eval_forwards = 0;
  std::uint64_t selection_units = 0;

  std::uint64_t billable() const { return sample_gradients + selection_units; }
};

/// Weighted mini-batch loss: sum_j w_j CE_j / sum_j w_j, with the gradient of
/// exactly that expression. Weight count must match the batch; weights must
/// be nonnegative with positive sum.
LossReport loss_and_grad(const MlpModel& model, const Dataset& ds, std::span<const int> batch,
                         std::span<const double> sample_weights, Gradients& out, CostMeter* meter = nullptr);

/// Unweighted mean loss and top-1 accuracy; argmax ties resolve to the lowest
/// class index.
LossReport evaluate(const MlpModel& model, const Dataset& ds, CostMeter* meter = nullptr);

struct OptimizerConfig {
  enum class Kind { sgd, adam };
  enum class Schedule { none, cosine, step };

  Kind kind = Kind::sgd;
  double lr = 0.01;
  double momentum = 0.9;
  bool nesterov = false;
  double weight_decay = 0.0;
  Schedule schedule = Schedule::none;
  double gamma = 0.1;     // step schedule decay factor, in (0,1)
  int step_period = 20;   // epochs between step decays
  int total_epochs = 1;   // cosine horizon T

  void validate() const;
};

/// Schedule-adjusted learning rate at epoch t:
///   none:   lr
///   cosine: lr * (1 + cos(pi t / T)) / 2
///   step:   lr * gamma^floor(t / period)
double scheduled_lr(const OptimizerConfig& cfg, int epoch);

/// SGD(+momentum/Nesterov) and Adam with persistent state. Throws on a
/// non-finite gradient, naming the offending layer.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  void step(MlpModel& model, const Gradients& grads, int epoch);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::optional<Gradients> momentum_;
  std::optional<Gradients> adam_m_;
  std::optional<Gradients> adam_v_;
  long step_count_ = 0;
};

/// Batch-summed gradients of the final linear layer (weights flattened
/// column-major, then biases), one column per mini-batch. `full` is the sum
/// over the whole training set and equals the elementwise sum of columns.
struct LastLayerGradients {
  Eigen::MatrixXd per_batch;  // (h_last+1)*C x b_N
  Eigen::VectorXd full;       // (h_last+1)*C
};

LastLayerGradients per_batch_last_layer_gradients(const MlpModel& model, const Dataset& ds, const BatchPlan& plan);

// Checkpoint: JSON shape header + flat little-endian float64 parameters.
void save_checkpoint(const MlpModel& model, const std::string& path);
MlpModel load_checkpoint(const std::string& path);

}  // namespace coretune
