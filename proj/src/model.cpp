// SPDX-License-Identifier: Apache-2.0
#include "coretune/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace coretune {

long MlpModel::parameter_count() const {
  long count = 0;
  for (int l = 0; l < n_layers(); ++l) count += weights[l].size() + biases[l].size();
  return count;
}

bool MlpModel::all_finite() const {
  for (int l = 0; l < n_layers(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

MlpModel init_mlp(const std::vector<int>& layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least input and output sizes");
  for (const int d : layer_dims) {
    if (d < 1) throw ConfigError("layer dimensions must be >= 1");
  }
  MlpModel model;
  model.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    Rng rng(derive_seed(seed, "mlp-layer", l));
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer_dims[l]));
    Eigen::MatrixXd w(layer_dims[l], layer_dims[l + 1]);
    for (long i = 0; i < w.rows(); ++i) {
      for (long j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(Eigen::VectorXd::Zero(layer_dims[l + 1]));
  }
  return model;
}

Gradients Gradients::zeros_like(const MlpModel& model) {
  Gradients g;
  for (int l = 0; l < model.n_layers(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(model.biases[l].size()));
  }
  return g;
}

bool Gradients::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

namespace {

struct ForwardPass {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] = input, back() = logits
  std::vector<Eigen::MatrixXd> preacts;      // hidden pre-activations only
};

ForwardPass forward(const MlpModel& model, const Eigen::MatrixXd& x) {
  ForwardPass fp;
  fp.activations.push_back(x);
  for (int l = 0; l < model.n_layers(); ++l) {
    Eigen::MatrixXd z = (fp.activations.back() * model.weights[l]).rowwise() + model.biases[l].transpose();
    if (l + 1 < model.n_layers()) {
      fp.preacts.push_back(z);
      fp.activations.push_back(z.cwiseMax(0.0));
    } else {
      fp.activations.push_back(std::move(z));
    }
  }
  return fp;
}

Eigen::MatrixXd gather_rows(const Dataset& ds, std::span<const int> idx) {
  Eigen::MatrixXd x(static_cast<long>(idx.size()), ds.dim());
  for (std::size_t i = 0; i < idx.size(); ++i) x.row(static_cast<long>(i)) = ds.features.row(idx[i]);
  return x;
}

// Per-row log-sum-exp and softmax probabilities, numerically stable.
void softmax_stats(const Eigen::MatrixXd& logits, Eigen::MatrixXd& probs, Eigen::VectorXd& lse) {
  const Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
  probs = (logits.colwise() - rowmax).array().exp();
  const Eigen::VectorXd sums = probs.rowwise().sum();
  lse = rowmax.array() + sums.array().log();
  probs.array().colwise() /= sums.array();
}

int argmax_row(const Eigen::MatrixXd& m, long row) {
  // Strict > keeps the first (lowest-index) maximum on ties.
  int best = 0;
  double best_v = m(row, 0);
  for (long j = 1; j < m.cols(); ++j) {
    if (m(row, j) > best_v) {
      best_v = m(row, j);
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

LossReport loss_and_grad(const MlpModel& model, const Dataset& ds, std::span<const int> batch,
                         std::span<const double> sample_weights, Gradients& out, CostMeter* meter) {
  if (batch.empty()) throw ConfigError("empty batch");
  if (sample_weights.size() != batch.size()) throw ConfigError("weight count does not match batch size");
  double weight_sum = 0.0;
  for (const double w : sample_weights) {
    if (w < 0.0) throw ConfigError("sample weights must be nonnegative");
    weight_sum += w;
  }
  if (weight_sum <= 0.0) throw ConfigError("sample weights must have positive sum");

  const Eigen::MatrixXd x = gather_rows(ds, batch);
  const ForwardPass fp = forward(model, x);
  const Eigen::MatrixXd& logits = fp.activations.back();

  Eigen::MatrixXd probs;
  Eigen::VectorXd lse;
  softmax_stats(logits, probs, lse);

  const long n = static_cast<long>(batch.size());
  double loss = 0.0;
  Eigen::MatrixXd delta = probs;  // dL/dlogits, scaled per sample below
  for (long i = 0; i < n; ++i) {
    const int y = ds.labels[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])];
    const double w = sample_weights[static_cast<std::size_t>(i)] / weight_sum;
    loss += w * (lse(i) - logits(i, y));
    delta(i, y) -= 1.0;
    delta.row(i) *= w;
  }

  if (out.weights.size() != static_cast<std::size_t>(model.n_layers())) out = Gradients::zeros_like(model);
  for (int l = model.n_layers() - 1; l >= 0; --l) {
    out.weights[static_cast<std::size_t>(l)] = fp.activations[static_cast<std::size_t>(l)].transpose() * delta;
    out.biases[static_cast<std::size_t>(l)] = delta.colwise().sum();
    if (l > 0) {
      delta = (delta * model.weights[static_cast<std::size_t>(l)].transpose()).array() *
              (fp.preacts[static_cast<std::size_t>(l - 1)].array() > 0.0).cast<double>();
    }
  }

  long correct = 0;
  for (long i = 0; i < n; ++i) {
    const int y = ds.labels[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])];
    if (argmax_row(logits, i) == y) ++correct;
  }
  if (meter != nullptr) meter->sample_gradients += static_cast<std::uint64_t>(n);
  return LossReport{loss, static_cast<double>(correct) / static_cast<double>(n)};
}

LossReport evaluate(const MlpModel& model, const Dataset& ds, CostMeter* meter) {
  if (ds.n() == 0) throw ConfigError("cannot evaluate on an empty dataset");
  const ForwardPass fp = forward(model, ds.features);
  const Eigen::MatrixXd& logits = fp.activations.back();
  Eigen::MatrixXd probs;
  Eigen::VectorXd lse;
  softmax_stats(logits, probs, lse);

  double loss = 0.0;
  long correct = 0;
  for (long i = 0; i < ds.n(); ++i) {
    const int y = ds.labels[static_cast<std::size_t>(i)];
    loss += lse(i) - logits(i, y);
    if (argmax_row(logits, i) == y) ++correct;
  }
  if (meter != nullptr) meter->eval_forwards += static_cast<std::uint64_t>(ds.n());
  return LossReport{loss / static_cast<double>(ds.n()), static_cast<double>(correct) / static_cast<double>(ds.n())};
}

void OptimizerConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (schedule == Schedule::step && !(gamma > 0.0 && gamma < 1.0)) {
    throw ConfigError("step schedule gamma must lie in (0,1)");
  }
  if (schedule == Schedule::step && step_period < 1) throw ConfigError("step period must be >= 1");
  if (schedule == Schedule::cosine && total_epochs < 1) throw ConfigError("cosine schedule needs total_epochs >= 1");
}

double scheduled_lr(const OptimizerConfig& cfg, int epoch) {
  switch (cfg.schedule) {
    case OptimizerConfig::Schedule::none:
      return cfg.lr;
    case OptimizerConfig::Schedule::cosine:
      return cfg.lr * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(cfg.total_epochs))) / 2.0;
    case OptimizerConfig::Schedule::step:
      return cfg.lr * std::pow(cfg.gamma, static_cast<double>(epoch / cfg.step_period));
  }
  return cfg.lr;
}

Optimizer::Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Optimizer::step(MlpModel& model, const Gradients& grads, int epoch) {
  if (grads.weights.size() != static_cast<std::size_t>(model.n_layers())) {
    throw ConfigError("gradient shape does not match model");
  }
  for (int l = 0; l < model.n_layers(); ++l) {
    if (!grads.weights[static_cast<std::size_t>(l)].allFinite() || !grads.biases[static_cast<std::size_t>(l)].allFinite()) {
      throw ConfigError("non-finite gradient in layer " + std::to_string(l));
    }
  }
  const double lr = scheduled_lr(cfg_, epoch);

  if (cfg_.kind == OptimizerConfig::Kind::sgd) {
    if (!momentum_) momentum_ = Gradients::zeros_like(model);
    const auto update = [&](auto& param, const auto& grad, auto& buf) {
      const auto g = (grad + cfg_.weight_decay * param).eval();
      buf = cfg_.momentum * buf + g;
      if (cfg_.nesterov) {
        param -= lr * (g + cfg_.momentum * buf);
      } else {
        param -= lr * buf;
      }
    };
    for (int l = 0; l < model.n_layers(); ++l) {
      const auto li = static_cast<std::size_t>(l);
      update(model.weights[li], grads.weights[li], momentum_->weights[li]);
      update(model.biases[li], grads.biases[li], momentum_->biases[li]);
    }
  } else {
    if (!adam_m_) {
      adam_m_ = Gradients::zeros_like(model);
      adam_v_ = Gradients::zeros_like(model);
    }
    ++step_count_;
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    const auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
      const auto g = (grad + cfg_.weight_decay * param).eval();
      m = beta1 * m + (1.0 - beta1) * g;
      v = (beta2 * v.array() + (1.0 - beta2) * g.array().square()).matrix();
      param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    };
    for (int l = 0; l < model.n_layers(); ++l) {
      const auto li = static_cast<std::size_t>(l);
      update(model.weights[li], grads.weights[li], adam_m_->weights[li], adam_v_->weights[li]);
      update(model.biases[li], grads.biases[li], adam_m_->biases[li], adam_v_->biases[li]);
    }
  }
}

LastLayerGradients per_batch_last_layer_gradients(const MlpModel& model, const Dataset& ds, const BatchPlan& plan) {
  const int last = model.n_layers() - 1;
  const long h = model.weights[static_cast<std::size_t>(last)].rows();
  const long c = model.weights[static_cast<std::size_t>(last)].cols();
  const long dim = (h + 1) * c;

  LastLayerGradients out;
  out.per_batch.resize(dim, plan.batch_count());
  out.full = Eigen::VectorXd::Zero(dim);

  for (int b = 0; b < plan.batch_count(); ++b) {
    const auto& batch = plan.batches[static_cast<std::size_t>(b)];
    const Eigen::MatrixXd x = gather_rows(ds, batch);
    const ForwardPass fp = forward(model, x);
    const Eigen::MatrixXd& logits = fp.activations.back();
    Eigen::MatrixXd probs;
    Eigen::VectorXd lse;
    softmax_stats(logits, probs, lse);

    Eigen::MatrixXd delta = probs;  // sum convention: no per-sample normalization
    for (long i = 0; i < static_cast<long>(batch.size()); ++i) {
      delta(i, ds.labels[static_cast<std::size_t>(batch[static_cast<std::size_t>(i)])]) -= 1.0;
    }
    const Eigen::MatrixXd gw = fp.activations[static_cast<std::size_t>(last)].transpose() * delta;  // h x c
    const Eigen::VectorXd gb = delta.colwise().sum();

    Eigen::VectorXd col(dim);
    col.head(h * c) = Eigen::Map<const Eigen::VectorXd>(gw.data(), h * c);
    col.tail(c) = gb;
    out.per_batch.col(b) = col;
    out.full += col;
  }
  return out;
}

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'T', 'M', 'D', '0', '0', '0', '1'};
}

void save_checkpoint(const MlpModel& model, const std::string& path) {
  nlohmann::json header{{"layer_dims", model.layer_dims}};
  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (int l = 0; l < model.n_layers(); ++l) {
    const auto& w = model.weights[static_cast<std::size_t>(l)];
    const auto& b = model.biases[static_cast<std::size_t>(l)];
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
  }
  if (!out) throw ParseError("failed writing checkpoint: " + path);
}

MlpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw ParseError("bad checkpoint magic: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_text(len, '\0');
  in.read(header_text.data(), len);
  if (!in) throw ParseError("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(header_text);
  const auto dims = header.at("layer_dims").get<std::vector<int>>();

  MlpModel model;
  model.layer_dims = dims;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Eigen::MatrixXd w(dims[l], dims[l + 1]);
    Eigen::VectorXd b(dims[l + 1]);
    in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  if (!in) throw ParseError("truncated checkpoint payload: " + path);
  return model;
}

}  // namespace coretune
