#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "chexkit/csv.hpp"
#include "chexkit/error.hpp"
#include "chexkit/io.hpp"
#include "chexkit/labels.hpp"
#include "chexkit/metrics.hpp"
#include "chexkit/rng.hpp"

namespace chexkit::head {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

inline constexpr int kDefaultInDim = 1408;
inline constexpr int kDefaultHiddenDim = 512;
inline constexpr int kDefaultOutDim = 5;

inline constexpr double kBceEpsilon = 1e-7;

// FC(in->hidden) -> batch norm -> FC(hidden->out) -> sigmoid.
struct HeadParams {
  MatrixXd w1;       // hidden x in
  VectorXd b1;       // hidden
  VectorXd bn_gamma; // hidden
  VectorXd bn_beta;  // hidden
  VectorXd bn_mean;  // hidden, running statistic
  VectorXd bn_var;   // hidden, running statistic
  MatrixXd w2;       // out x hidden
  VectorXd b2;       // out
  std::uint64_t bn_updates = 0;  // infer mode needs at least one stat update

  int in_dim() const { return static_cast<int>(w1.cols()); }
  int hidden_dim() const { return static_cast<int>(w1.rows()); }
  int out_dim() const { return static_cast<int>(w2.rows()); }

  // Symmetric uniform init in +-sqrt(6/(fan_in+fan_out)), seeded; entries are
  // filled row-major so the result is identical everywhere.
  static HeadParams init(int in, int hidden, int out, std::uint64_t seed) {
    if (in < 1 || hidden < 1 || out < 1) {
      fail(errc::bad_config, "head dimensions must be positive");
    }
    HeadParams p;
    Rng rng(seed);
    auto glorot = [&rng](MatrixXd& m, int fan_in, int fan_out) {
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          m(r, c) = rng.uniform(-a, a);
        }
      }
    };
    p.w1.resize(hidden, in);
    glorot(p.w1, in, hidden);
    p.b1 = VectorXd::Zero(hidden);
    p.bn_gamma = VectorXd::Ones(hidden);
    p.bn_beta = VectorXd::Zero(hidden);
    p.bn_mean = VectorXd::Zero(hidden);
    p.bn_var = VectorXd::Ones(hidden);
    p.w2.resize(out, hidden);
    glorot(p.w2, hidden, out);
    p.b2 = VectorXd::Zero(out);
    return p;
  }

  void set_running_stats(VectorXd mean, VectorXd var) {
    if (mean.size() != bn_mean.size() || var.size() != bn_var.size()) {
      fail(errc::shape_mismatch, "running statistics shape mismatch");
    }
    bn_mean = std::move(mean);
    bn_var = std::move(var);
    bn_updates = 1;
  }
};

struct BnConfig {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

inline MatrixXd sigmoid(const MatrixXd& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

struct ForwardCache {
  MatrixXd x;        // batch inputs, n x in
  MatrixXd h;        // pre-BN activations
  MatrixXd h_hat;    // normalized activations
  MatrixXd bn_out;   // gamma * h_hat + beta
  MatrixXd z;        // logits
  MatrixXd p;        // probabilities
  RowVectorXd mu;    // batch mean
  RowVectorXd var;   // biased batch variance
  RowVectorXd inv_std;
};

// Train-mode batch forward: normalizes with batch statistics and, unless
// told otherwise, folds them into the running statistics (running variance
// uses the unbiased estimate when the batch has more than one sample).
inline ForwardCache forward_train(HeadParams& params, const MatrixXd& x,
                                  const BnConfig& bn = {}, bool update_running = true) {
  if (x.cols() != params.in_dim()) {
    fail(errc::dimension_mismatch, "feature dim " + std::to_string(x.cols()) +
                                       " != head input dim " + std::to_string(params.in_dim()));
  }
  if (x.rows() < 1) fail(errc::empty_set, "empty batch");
  const double n = static_cast<double>(x.rows());

  ForwardCache cache;
  cache.x = x;
  cache.h = (x * params.w1.transpose()).rowwise() + params.b1.transpose();
  cache.mu = cache.h.colwise().mean();
  MatrixXd centered = cache.h.rowwise() - cache.mu;
  cache.var = centered.array().square().colwise().sum() / n;
  cache.inv_std = (cache.var.array() + bn.epsilon).rsqrt();
  cache.h_hat = centered.array().rowwise() * cache.inv_std.array();
  cache.bn_out = (cache.h_hat.array().rowwise() * params.bn_gamma.transpose().array())
                     .rowwise() +
                 params.bn_beta.transpose().array();
  cache.z = (cache.bn_out * params.w2.transpose()).rowwise() + params.b2.transpose();
  cache.p = sigmoid(cache.z);

  if (update_running) {
    const double m = bn.momentum;
    RowVectorXd var_est = cache.var;
    if (x.rows() > 1) var_est *= n / (n - 1.0);
    params.bn_mean = (1.0 - m) * params.bn_mean + m * cache.mu.transpose();
    params.bn_var = (1.0 - m) * params.bn_var + m * var_est.transpose();
    ++params.bn_updates;
  }
  return cache;
}

// Infer-mode forward normalizes with running statistics and mutates nothing.
inline MatrixXd forward_infer(const HeadParams& params, const MatrixXd& x,
                              const BnConfig& bn = {}) {
  if (x.cols() != params.in_dim()) {
    fail(errc::dimension_mismatch, "feature dim " + std::to_string(x.cols()) +
                                       " != head input dim " + std::to_string(params.in_dim()));
  }
  if (params.bn_updates == 0) {
    fail(errc::uninitialized_batch_norm,
         "running statistics unset; run a training step or set them explicitly");
  }
  MatrixXd h = (x * params.w1.transpose()).rowwise() + params.b1.transpose();
  const RowVectorXd inv_std = (params.bn_var.transpose().array() + bn.epsilon).rsqrt();
  MatrixXd h_hat = (h.rowwise() - params.bn_mean.transpose()).array().rowwise() *
                   inv_std.array();
  MatrixXd bn_out = (h_hat.array().rowwise() * params.bn_gamma.transpose().array())
                        .rowwise() +
                    params.bn_beta.transpose().array();
  MatrixXd z = (bn_out * params.w2.transpose()).rowwise() + params.b2.transpose();
  return sigmoid(z);
}

inline VectorXd forward_infer(const HeadParams& params, const VectorXd& x,
                              const BnConfig& bn = {}) {
  return forward_infer(params, MatrixXd(x.transpose()), bn).row(0).transpose();
}

// Masked mean BCE for one sample: -sum_masked[y ln p + (1-y) ln(1-p)] divided
// by the count of masked-in labels; a fully masked sample contributes 0.
// Probabilities are clamped to [1e-7, 1-1e-7] so the loss stays finite.
inline double bce_masked(const VectorXd& probs, const VectorXd& target,
                         const VectorXd& mask) {
  if (probs.size() != target.size() || probs.size() != mask.size()) {
    fail(errc::dimension_mismatch, "probability/target/mask lengths differ");
  }
  const double k = mask.sum();
  if (k == 0.0) return 0.0;
  const Eigen::ArrayXd p = probs.array().min(1.0 - kBceEpsilon).max(kBceEpsilon);
  const Eigen::ArrayXd ll =
      target.array() * p.log() + (1.0 - target.array()) * (1.0 - p).log();
  return -(mask.array() * ll).sum() / k;
}

// Batch loss: mean over samples of the per-sample masked mean.
inline double bce_masked_batch(const MatrixXd& probs, const MatrixXd& targets,
                               const MatrixXd& masks) {
  if (probs.rows() != targets.rows() || probs.cols() != targets.cols() ||
      probs.rows() != masks.rows() || probs.cols() != masks.cols()) {
    fail(errc::dimension_mismatch, "probability/target/mask shapes differ");
  }
  double total = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    total += bce_masked(probs.row(i).transpose(), targets.row(i).transpose(),
                        masks.row(i).transpose());
  }
  return total / static_cast<double>(probs.rows());
}

struct HeadGrads {
  MatrixXd w1;
  VectorXd b1;
  VectorXd bn_gamma;
  VectorXd bn_beta;
  MatrixXd w2;
  VectorXd b2;
};

// Analytic gradients of the batch loss w.r.t. every trainable field,
// including the batch-statistics path through batch norm.
inline HeadGrads backward(const HeadParams& params, const ForwardCache& cache,
                          const MatrixXd& targets, const MatrixXd& masks) {
  const Eigen::Index n = cache.p.rows();
  if (targets.rows() != n || targets.cols() != cache.p.cols() ||
      masks.rows() != n || masks.cols() != cache.p.cols()) {
    fail(errc::dimension_mismatch, "target/mask shapes do not match the batch");
  }

  // dL/dz = mask .* (p - y) / per-sample-mask-count / n
  MatrixXd dz = (cache.p - targets).cwiseProduct(masks);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double k = masks.row(i).sum();
    if (k > 0.0) dz.row(i) /= k;
    else dz.row(i).setZero();
  }
  dz /= static_cast<double>(n);

  HeadGrads g;
  g.w2 = dz.transpose() * cache.bn_out;
  g.b2 = dz.colwise().sum().transpose();

  const MatrixXd d_bn_out = dz * params.w2;
  g.bn_gamma = d_bn_out.cwiseProduct(cache.h_hat).colwise().sum().transpose();
  g.bn_beta = d_bn_out.colwise().sum().transpose();

  // Batch-norm backward with batch statistics:
  // dh = inv_std/n * (n*dxhat - sum(dxhat) - h_hat * sum(dxhat .* h_hat))
  const MatrixXd dxhat =
      d_bn_out.array().rowwise() * params.bn_gamma.transpose().array();
  const RowVectorXd sum_dxhat = dxhat.colwise().sum();
  const RowVectorXd sum_dxhat_hhat = dxhat.cwiseProduct(cache.h_hat).colwise().sum();
  MatrixXd dh = static_cast<double>(n) * dxhat;
  dh.rowwise() -= sum_dxhat;
  dh -= (cache.h_hat.array().rowwise() * sum_dxhat_hhat.array()).matrix();
  dh = (dh.array().rowwise() * (cache.inv_std.array() / static_cast<double>(n))).matrix();

  g.w1 = dh.transpose() * cache.x;
  g.b1 = dh.colwise().sum().transpose();
  return g;
}

struct BatchResult {
  double loss = 0;
  HeadGrads grads;
};

inline BatchResult loss_and_gradients(HeadParams& params, const MatrixXd& x,
                                      const MatrixXd& targets, const MatrixXd& masks,
                                      const BnConfig& bn = {}, bool update_running = true) {
  const ForwardCache cache = forward_train(params, x, bn, update_running);
  BatchResult out;
  out.loss = bce_masked_batch(cache.p, targets, masks);
  out.grads = backward(params, cache, targets, masks);
  return out;
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  HeadGrads m;  // first moments, zero-initialized
  HeadGrads v;  // second moments
  std::uint64_t step_count = 0;
  AdamConfig config;

  static AdamState init(const HeadParams& p, const AdamConfig& cfg = {}) {
    AdamState s;
    s.config = cfg;
    s.m.w1 = MatrixXd::Zero(p.w1.rows(), p.w1.cols());
    s.m.b1 = VectorXd::Zero(p.b1.size());
    s.m.bn_gamma = VectorXd::Zero(p.bn_gamma.size());
    s.m.bn_beta = VectorXd::Zero(p.bn_beta.size());
    s.m.w2 = MatrixXd::Zero(p.w2.rows(), p.w2.cols());
    s.m.b2 = VectorXd::Zero(p.b2.size());
    s.v = s.m;
    return s;
  }
};

namespace detail {

template <typename Mat>
inline void adam_update(Mat& theta, Mat& m, Mat& v, const Mat& g, double lr,
                        const AdamConfig& c, double bias1, double bias2) {
  if (theta.rows() != g.rows() || theta.cols() != g.cols()) {
    fail(errc::shape_mismatch, "gradient shape does not match parameters");
  }
  m = c.beta1 * m + (1.0 - c.beta1) * g;
  v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
  theta.array() -= lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + c.epsilon);
}

}  // namespace detail

// Standard bias-corrected Adam over the trainable fields (running BN
// statistics are not touched).
inline void adam_step(HeadParams& params, AdamState& state, const HeadGrads& grads,
                      double lr) {
  if (!(lr > 0.0)) fail(errc::bad_config, "learning rate must be positive");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(state.config.beta1, t);
  const double bias2 = 1.0 - std::pow(state.config.beta2, t);
  detail::adam_update(params.w1, state.m.w1, state.v.w1, grads.w1, lr, state.config, bias1, bias2);
  detail::adam_update(params.b1, state.m.b1, state.v.b1, grads.b1, lr, state.config, bias1, bias2);
  detail::adam_update(params.bn_gamma, state.m.bn_gamma, state.v.bn_gamma, grads.bn_gamma, lr,
                      state.config, bias1, bias2);
  detail::adam_update(params.bn_beta, state.m.bn_beta, state.v.bn_beta, grads.bn_beta, lr,
                      state.config, bias1, bias2);
  detail::adam_update(params.w2, state.m.w2, state.v.w2, grads.w2, lr, state.config, bias1, bias2);
  detail::adam_update(params.b2, state.m.b2, state.v.b2, grads.b2, lr, state.config, bias1, bias2);
}

enum class Schedule { step_halve, cosine };

struct TrainConfig {
  double lr0 = 0.003;
  Schedule schedule = Schedule::step_halve;
  int step_period = 10;        // halve every this many epochs
  int cosine_t_max = 100;
  double cosine_eta_min = 0.0;
  int batch_size = 128;
  int epochs = 100;
  int hidden_dim = kDefaultHiddenDim;
  BnConfig bn;
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.lr0 > 0.0)) fail(errc::bad_config, "lr0 must be positive");
  if (cfg.epochs < 1) fail(errc::bad_config, "epochs must be at least 1");
  if (cfg.batch_size < 1) fail(errc::bad_config, "batch size must be at least 1");
  if (cfg.step_period < 1) fail(errc::bad_config, "step period must be at least 1");
  if (cfg.cosine_t_max < 1) fail(errc::bad_config, "cosine t_max must be at least 1");
}

inline double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    fail(errc::epoch_out_of_range, "epoch " + std::to_string(epoch) + " not in [0, " +
                                       std::to_string(cfg.epochs) + ")");
  }
  switch (cfg.schedule) {
    case Schedule::step_halve:
      return cfg.lr0 * std::pow(0.5, epoch / cfg.step_period);
    case Schedule::cosine:
      return cfg.cosine_eta_min +
             0.5 * (cfg.lr0 - cfg.cosine_eta_min) *
                 (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                                 static_cast<double>(cfg.cosine_t_max)));
  }
  fail(errc::bad_config, "unknown schedule");
}

struct Dataset {
  MatrixXd features;  // n x d
  MatrixXd targets;   // n x L, 0/1
  MatrixXd masks;     // n x L, 1 = contributes to loss
  std::vector<std::string> paths;  // optional, n entries when present

  Eigen::Index size() const { return features.rows(); }
};

inline void validate(const Dataset& set) {
  if (set.features.rows() == 0) fail(errc::empty_set, "dataset has no samples");
  if (set.targets.rows() != set.features.rows() || set.masks.rows() != set.features.rows() ||
      set.targets.cols() != set.masks.cols()) {
    fail(errc::dimension_mismatch, "dataset feature/target/mask shapes disagree");
  }
  if (!set.paths.empty() && static_cast<Eigen::Index>(set.paths.size()) != set.features.rows()) {
    fail(errc::dimension_mismatch, "dataset path list length mismatch");
  }
}

struct Checkpoint {
  int epoch = 0;
  HeadParams params;
  double val_mean_auc = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_mean_auc = 0;
  double lr = 0;
  std::size_t steps = 0;
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<EpochLog> log;
};

struct MeanAucResult {
  double mean_auc = 0;
  std::size_t n_labels_used = 0;
};

// Mean AUC over labels, skipping per-label samples with mask 0 and labels
// that end up single-class. Fails only if no label is usable.
inline MeanAucResult masked_mean_auc(const MatrixXd& probs, const MatrixXd& targets,
                                     const MatrixXd& masks) {
  MeanAucResult out;
  double sum = 0;
  for (Eigen::Index j = 0; j < probs.cols(); ++j) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      if (masks(i, j) > 0.0) {
        scores.push_back(probs(i, j));
        labels.push_back(targets(i, j) > 0.5 ? 1 : 0);
      }
    }
    try {
      sum += metrics::auc(metrics::roc_curve(scores, labels));
      ++out.n_labels_used;
    } catch (const Error& e) {
      if (e.code() != errc::degenerate_labels) throw;
    }
  }
  if (out.n_labels_used == 0) {
    fail(errc::degenerate_labels, "no label has both classes in the validation set");
  }
  out.mean_auc = sum / static_cast<double>(out.n_labels_used);
  return out;
}

using EpochCallback = std::function<void(const Checkpoint&, const EpochLog&)>;

// Deterministic epoch loop: seeded shuffle, fixed batch order, Adam with the
// configured schedule, one checkpoint per epoch scored by validation mean
// AUC in infer mode.
inline TrainResult train(const Dataset& train_set, const Dataset& val_set,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr) {
  validate(cfg);
  validate(train_set);
  validate(val_set);
  if (train_set.features.cols() != val_set.features.cols()) {
    fail(errc::dimension_mismatch, "train/validation feature dims differ");
  }
  if (train_set.targets.cols() != val_set.targets.cols()) {
    fail(errc::dimension_mismatch, "train/validation label counts differ");
  }

  const auto n = train_set.size();
  const int in_dim = static_cast<int>(train_set.features.cols());
  const int out_dim = static_cast<int>(train_set.targets.cols());
  const int batch = cfg.batch_size;
  if (batch == 1 || n % batch == 1) {
    std::cerr << "warning: a batch of size 1 degenerates batch-norm variance to 0\n";
  }

  HeadParams params = HeadParams::init(in_dim, cfg.hidden_dim, out_dim,
                                       mix_seed(cfg.seed, "init"));
  AdamState state = AdamState::init(params);
  Rng shuffle_rng(mix_seed(cfg.seed, "shuffle"));

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  result.checkpoints.reserve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg, epoch);
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    std::size_t steps = 0;
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index count = std::min<Eigen::Index>(batch, n - start);
      MatrixXd x(count, in_dim), t(count, out_dim), m(count, out_dim);
      for (Eigen::Index i = 0; i < count; ++i) {
        const auto row = static_cast<Eigen::Index>(order[start + i]);
        x.row(i) = train_set.features.row(row);
        t.row(i) = train_set.targets.row(row);
        m.row(i) = train_set.masks.row(row);
      }
      const BatchResult batch_result = loss_and_gradients(params, x, t, m, cfg.bn, true);
      adam_step(params, state, batch_result.grads, lr);
      loss_sum += batch_result.loss * static_cast<double>(count);
      ++steps;
    }

    const MatrixXd val_probs = forward_infer(params, val_set.features, cfg.bn);
    const MeanAucResult val = masked_mean_auc(val_probs, val_set.targets, val_set.masks);

    result.checkpoints.push_back({epoch, params, val.mean_auc});
    result.log.push_back({epoch, loss_sum / static_cast<double>(n), val.mean_auc, lr, steps});
    if (on_epoch) on_epoch(result.checkpoints.back(), result.log.back());
  }
  return result;
}

// Highest validation mean AUC wins; ties go to the earliest epoch.
inline const Checkpoint& select_best(const std::vector<Checkpoint>& checkpoints) {
  if (checkpoints.empty()) fail(errc::empty_list, "no checkpoints to select from");
  const Checkpoint* best = &checkpoints.front();
  for (const auto& c : checkpoints) {
    if (c.val_mean_auc > best->val_mean_auc) best = &c;
  }
  return *best;
}

// Checkpoint file: magic "CXCK", u32 version, u32 in/hidden/out dims,
// u32 epoch, f64 validation mean AUC, u64 bn update count, then f64
// little-endian arrays in field order (w1, b1, bn_gamma, bn_beta, bn_mean,
// bn_var, w2, b2), matrices row-major.
inline constexpr std::uint8_t kCheckpointMagic[4] = {'C', 'X', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> out;
  const auto& p = ck.params;
  out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  wire::put_u32(out, kCheckpointVersion);
  wire::put_u32(out, static_cast<std::uint32_t>(p.in_dim()));
  wire::put_u32(out, static_cast<std::uint32_t>(p.hidden_dim()));
  wire::put_u32(out, static_cast<std::uint32_t>(p.out_dim()));
  wire::put_u32(out, static_cast<std::uint32_t>(ck.epoch));
  wire::put_f64(out, ck.val_mean_auc);
  wire::put_u64(out, p.bn_updates);
  auto put_matrix = [&out](const MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) wire::put_f64(out, m(r, c));
    }
  };
  auto put_vector = [&out](const VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) wire::put_f64(out, v(i));
  };
  put_matrix(p.w1);
  put_vector(p.b1);
  put_vector(p.bn_gamma);
  put_vector(p.bn_beta);
  put_vector(p.bn_mean);
  put_vector(p.bn_var);
  put_matrix(p.w2);
  put_vector(p.b2);
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  wire::Reader reader(bytes);
  if (bytes.size() < 36) fail(errc::io_error, "checkpoint file too short");
  for (std::uint8_t m : kCheckpointMagic) {
    if (reader.u8() != m) fail(errc::io_error, "bad checkpoint magic");
  }
  if (reader.u32() != kCheckpointVersion) {
    fail(errc::io_error, "unsupported checkpoint version");
  }
  const int in = static_cast<int>(reader.u32());
  const int hidden = static_cast<int>(reader.u32());
  const int out_dim = static_cast<int>(reader.u32());
  Checkpoint ck;
  ck.epoch = static_cast<int>(reader.u32());
  ck.val_mean_auc = reader.f64();
  auto& p = ck.params;
  p.bn_updates = reader.u64();
  auto get_matrix = [&reader](MatrixXd& m, int rows, int cols) {
    m.resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) m(r, c) = reader.f64();
    }
  };
  auto get_vector = [&reader](VectorXd& v, int size) {
    v.resize(size);
    for (int i = 0; i < size; ++i) v(i) = reader.f64();
  };
  get_matrix(p.w1, hidden, in);
  get_vector(p.b1, hidden);
  get_vector(p.bn_gamma, hidden);
  get_vector(p.bn_beta, hidden);
  get_vector(p.bn_mean, hidden);
  get_vector(p.bn_var, hidden);
  get_matrix(p.w2, out_dim, hidden);
  get_vector(p.b2, out_dim);
  if (reader.remaining() != 0) fail(errc::io_error, "trailing bytes in checkpoint");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

// Feature CSV: image_path,f0,...,fK-1. All non-path columns are features, in
// header order.
struct FeatureFile {
  std::vector<std::string> paths;
  MatrixXd values;  // n x d
};

inline FeatureFile parse_features_csv(std::string_view text) {
  const csv::Table raw = csv::parse(text);
  const auto path_col = raw.require_column("image_path");
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < raw.header.size(); ++c) {
    if (c != path_col) feature_cols.push_back(c);
  }
  if (feature_cols.empty()) fail(errc::missing_column, "feature CSV has no feature columns");
  FeatureFile out;
  out.paths.reserve(raw.rows.size());
  out.values.resize(static_cast<Eigen::Index>(raw.rows.size()),
                    static_cast<Eigen::Index>(feature_cols.size()));
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    out.paths.push_back(raw.rows[r][path_col]);
    for (std::size_t c = 0; c < feature_cols.size(); ++c) {
      try {
        out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            std::stod(raw.rows[r][feature_cols[c]]);
      } catch (const std::exception&) {
        fail(errc::bad_value, "bad feature value on line " + std::to_string(r + 2));
      }
    }
  }
  return out;
}

// Joins feature rows to label records by image path, in label-table order.
// Every labelled image must have a feature row.
inline Dataset make_dataset(const FeatureFile& features, const labels::LabelTable& table) {
  if (table.records.empty()) fail(errc::empty_table, "label table has no records");
  if (features.paths.empty()) fail(errc::empty_set, "feature file has no rows");
  std::unordered_map<std::string_view, Eigen::Index> by_path;
  by_path.reserve(features.paths.size());
  for (std::size_t i = 0; i < features.paths.size(); ++i) {
    by_path.emplace(features.paths[i], static_cast<Eigen::Index>(i));
  }
  const auto n = static_cast<Eigen::Index>(table.records.size());
  const auto n_labels = static_cast<Eigen::Index>(table.observations.size());
  Dataset set;
  set.features.resize(n, features.values.cols());
  set.targets.resize(n, n_labels);
  set.masks.resize(n, n_labels);
  set.paths.reserve(table.records.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& record = table.records[static_cast<std::size_t>(i)];
    const auto found = by_path.find(record.image_path);
    if (found == by_path.end()) {
      fail(errc::missing_scores, "no feature row for image " + record.image_path);
    }
    set.features.row(i) = features.values.row(found->second);
    const labels::TrainingTarget target = labels::to_target(record);
    for (Eigen::Index j = 0; j < n_labels; ++j) {
      set.targets(i, j) = target.target[static_cast<std::size_t>(j)];
      set.masks(i, j) = target.mask[static_cast<std::size_t>(j)];
    }
    set.paths.push_back(record.image_path);
  }
  return set;
}

inline std::string to_csv(const FeatureFile& features) {
  std::string out = "image_path";
  for (Eigen::Index c = 0; c < features.values.cols(); ++c) {
    out += ",f" + std::to_string(c);
  }
  out += '\n';
  char buf[40];
  for (Eigen::Index r = 0; r < features.values.rows(); ++r) {
    out += csv::escape(features.paths[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < features.values.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.17g", features.values(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace chexkit::head
