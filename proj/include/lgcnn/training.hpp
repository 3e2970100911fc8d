#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lgcnn/data.hpp"
#include "lgcnn/error.hpp"
#include "lgcnn/layers.hpp"
#include "lgcnn/model_spec.hpp"
#include "lgcnn/network.hpp"
#include "lgcnn/tensor.hpp"

namespace lgcnn {

// ---------------------------------------------------------------------------
// Loss

template <typename T>
struct LossResult {
  T loss{};
  Tensor<T> grad_logits;  // d loss / d pre-softmax logits
};

/**
 * Mean negative log-likelihood of the true labels given softmax outputs.
 * The gradient returned is the fused softmax+NLL gradient w.r.t. the
 * pre-softmax logits: (probs - onehot) / M.
 */
template <typename T>
LossResult<T> cross_entropy_loss(const Tensor<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy_loss: probabilities " + to_string(probs.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t M = probs.dim(0), C = probs.dim(1);
  LossResult<T> r{T{0}, probs};
  for (std::size_t m = 0; m < M; ++m) {
    T row = 0;
    for (std::size_t c = 0; c < C; ++c) row += probs[m * C + c];
    if (std::abs(static_cast<double>(row) - 1.0) > 1e-5) {
      throw DomainError("cross_entropy_loss: row " + std::to_string(m) + " of probabilities does not sum to 1");
    }
    const int y = labels[m];
    if (y < 0 || static_cast<std::size_t>(y) >= C) {
      throw DomainError("label " + std::to_string(y) + " out of range [0, " + std::to_string(C) + ")");
    }
    const T p = probs[m * C + static_cast<std::size_t>(y)];
    r.loss -= std::log(std::max(p, std::numeric_limits<T>::min()));
    r.grad_logits[m * C + static_cast<std::size_t>(y)] -= T{1};
  }
  r.loss /= static_cast<T>(M);
  for (auto& g : r.grad_logits.data()) g /= static_cast<T>(M);
  return r;
}

/// Softmax followed by cross_entropy_loss, computed stably from logits.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  const Tensor<T> probs = softmax(logits);
  LossResult<T> r = cross_entropy_loss(probs, labels);
  // log p = x_y - max - log(sum exp(x - max)) avoids log of an underflowed probability
  const std::size_t M = logits.dim(0), C = logits.dim(1);
  T loss = 0;
  for (std::size_t m = 0; m < M; ++m) {
    const T* x = &logits[m * C];
    const T mx = *std::max_element(x, x + C);
    T sum = 0;
    for (std::size_t c = 0; c < C; ++c) sum += std::exp(x[c] - mx);
    loss -= x[labels[m]] - mx - std::log(sum);
  }
  r.loss = loss / static_cast<T>(M);
  return r;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { sgd, sgd_momentum, adam };

inline const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::sgd_momentum: return "sgd_momentum";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "sgd_momentum" || s == "momentum") return OptimizerKind::sgd_momentum;
  if (s == "adam") return OptimizerKind::adam;
  throw ParseError("unknown optimizer '" + s + "'");
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // epochs; 0 disables
  std::filesystem::path checkpoint_dir;

  void validate() const {
    if (batch_size == 0) throw DomainError("batch_size must be at least 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw DomainError("learning_rate must be a finite non-negative number");
    }
  }
};

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(const std::vector<ParamRef<T>>& params) {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.value.shape());
        second_.emplace_back(p.value.shape());
      }
    }
    ++t_;
    const T lr = static_cast<T>(cfg_.learning_rate);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor<T>& w = params[k].value;
      const Tensor<T>& g = params[k].grad;
      switch (cfg_.optimizer) {
        case OptimizerKind::sgd:
          for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
          break;
        case OptimizerKind::sgd_momentum: {
          Tensor<T>& v = first_[k];
          const T mu = static_cast<T>(cfg_.momentum);
          for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + g[i];
            w[i] -= lr * v[i];
          }
          break;
        }
        case OptimizerKind::adam: {
          Tensor<T>& m = first_[k];
          Tensor<T>& v = second_[k];
          const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
          const T c1 = T{1} - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
          const T c2 = T{1} - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));
          const T eps = static_cast<T>(cfg_.adam_epsilon);
          for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1 * m[i] + (T{1} - b1) * g[i];
            v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
            w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
          }
          break;
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor<T>> first_, second_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, spec hash, spec text, then parameters and
// running statistics in declaration order.

inline constexpr char kCheckpointMagic[8] = {'L', 'G', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(Network<float>& net, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    io::write_u32(out, kCheckpointVersion);
    io::write_u64(out, spec_hash(net.spec()));
    io::write_string(out, to_text(net.spec()));
    const auto params = net.parameters();
    io::write_u64(out, params.size());
    for (const auto& p : params) write_tensor(out, p.value);
    const auto buffers = net.buffers();
    io::write_u64(out, buffers.size());
    for (const auto& b : buffers) write_tensor(out, b.value);
    if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

struct CheckpointContents {
  std::uint64_t hash = 0;
  ModelSpec spec;
  std::vector<Tensor<float>> params;
  std::vector<Tensor<float>> buffers;
};

inline CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic)) {
    throw IoError("'" + path.string() + "' is not a checkpoint");
  }
  if (const auto v = io::read_u32(in); v != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(v));
  }
  CheckpointContents c;
  c.hash = io::read_u64(in);
  c.spec = parse_model_spec(io::read_string(in), path.string());
  if (spec_hash(c.spec) != c.hash) throw IoError("checkpoint spec hash does not match its embedded spec");
  const std::uint64_t np = io::read_u64(in);
  if (np > (1u << 20)) throw IoError("corrupt checkpoint: parameter count");
  for (std::uint64_t i = 0; i < np; ++i) c.params.push_back(read_tensor(in));
  const std::uint64_t nb = io::read_u64(in);
  if (nb > (1u << 20)) throw IoError("corrupt checkpoint: buffer count");
  for (std::uint64_t i = 0; i < nb; ++i) c.buffers.push_back(read_tensor(in));
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint payload");
  return c;
}

}  // namespace detail

/**
 * Restores parameters and running statistics into `net`. The network must
 * have been built from a spec with the same hash. `net` is left untouched
 * on any failure.
 */
inline void load_checkpoint_into(Network<float>& net, const std::filesystem::path& path) {
  detail::CheckpointContents c = detail::read_checkpoint(path);
  if (c.hash != spec_hash(net.spec())) {
    throw IoError("checkpoint '" + path.string() + "' was written for model '" + c.spec.name +
                  "', which does not match '" + net.spec().name + "' (spec hash mismatch)");
  }
  auto params = net.parameters();
  auto buffers = net.buffers();
  if (c.params.size() != params.size() || c.buffers.size() != buffers.size()) {
    throw IoError("checkpoint tensor count does not match the model");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (c.params[i].shape() != params[i].value.shape()) throw IoError("checkpoint shape mismatch at " + params[i].name);
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (c.buffers[i].shape() != buffers[i].value.shape()) throw IoError("checkpoint shape mismatch at " + buffers[i].name);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(c.params[i]);
  for (std::size_t i = 0; i < buffers.size(); ++i) buffers[i].value = std::move(c.buffers[i]);
}

/// Rebuilds the network from the spec embedded in the checkpoint.
inline Network<float> load_checkpoint(const std::filesystem::path& path) {
  detail::CheckpointContents c = detail::read_checkpoint(path);
  Network<float> net(c.spec);
  load_checkpoint_into(net, path);
  return net;
}

/// Model spec embedded in a checkpoint file.
inline ModelSpec checkpoint_spec(const std::filesystem::path& path) { return detail::read_checkpoint(path).spec; }

// ---------------------------------------------------------------------------
// Training

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
  std::vector<std::filesystem::path> checkpoints;
};

inline std::size_t argmax_row(const float* row, std::size_t n) {
  return static_cast<std::size_t>(std::max_element(row, row + n) - row);  // first maximum on ties
}

/// Mini-batch training of an already initialized network. Deterministic given cfg.seed.
inline TrainReport train(Network<float>& net, const data::ImageDataset& ds, const TrainConfig& cfg,
                         const std::function<void(std::size_t, double, double)>& on_epoch = {}) {
  cfg.validate();
  if (ds.size() == 0) throw DomainError("training set is empty");
  const Shape4& in = net.spec().input;
  if (in.channels != 1 || in.height != ds.height || in.width != ds.width) {
    throw ShapeError("dataset images are " + std::to_string(ds.height) + "x" + std::to_string(ds.width) +
                     ", model '" + net.spec().name + "' expects " + to_string(in));
  }
  if (net.num_classes() != ds.num_classes()) {
    throw ShapeError("model has " + std::to_string(net.num_classes()) + " outputs, dataset has " +
                     std::to_string(ds.num_classes()) + " classes");
  }

  TrainReport report;
  Optimizer<float> opt(cfg);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(ds.labels[i]);
      const Tensor<float> logits = net.logits(ds.batch(idx), Mode::train);
      const LossResult<float> loss = softmax_cross_entropy(logits, labels);
      if (!std::isfinite(loss.loss)) {
        throw DivergenceError("loss became non-finite in epoch " + std::to_string(epoch + 1) +
                              (report.checkpoints.empty() ? std::string{}
                                                          : "; last checkpoint: " + report.checkpoints.back().string()));
      }
      const std::size_t C = logits.dim(1);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (static_cast<int>(argmax_row(&logits[k * C], C)) == labels[k]) ++correct;
      }
      loss_sum += static_cast<double>(loss.loss) * static_cast<double>(idx.size());
      net.zero_grad();
      net.backward(loss.grad_logits);
      opt.step(net.parameters());
    }
    const double mean_loss = loss_sum / static_cast<double>(ds.size());
    const double acc = static_cast<double>(correct) / static_cast<double>(ds.size());
    report.epoch_loss.push_back(mean_loss);
    report.epoch_accuracy.push_back(acc);
    if (on_epoch) on_epoch(epoch + 1, mean_loss, acc);
    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      const auto path = cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".lgck");
      save_checkpoint(net, path);
      report.checkpoints.push_back(path);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation

/**
 * Per-class fault detection ratio TP / (TP + FN), i.e. recall, with its
 * confusion matrix (rows: true class, columns: predicted class).
 */
struct EvalReport {
  std::vector<int> class_ids;
  std::vector<std::size_t> counts;
  std::vector<double> fdr;  // NaN for a class without samples
  std::vector<std::vector<std::size_t>> confusion;
  double mean_fdr = 0.0;
  std::size_t sample_count = 0;
};

inline EvalReport evaluate_predictions(const std::vector<int>& labels, const std::vector<int>& predictions,
                                       const std::vector<int>& class_ids) {
  if (labels.size() != predictions.size()) throw ShapeError("label and prediction counts differ");
  const std::size_t C = class_ids.size();
  EvalReport r;
  r.class_ids = class_ids;
  r.counts.assign(C, 0);
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predictions[i]);
    if (y >= C || p >= C) throw DomainError("class index out of range");
    ++r.confusion[y][p];
    ++r.counts[y];
  }
  r.sample_count = labels.size();
  r.fdr.assign(C, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t populated = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (r.counts[c] == 0) continue;
    r.fdr[c] = static_cast<double>(r.confusion[c][c]) / static_cast<double>(r.counts[c]);
    sum += r.fdr[c];
    ++populated;
  }
  r.mean_fdr = populated ? sum / static_cast<double>(populated) : std::numeric_limits<double>::quiet_NaN();
  return r;
}

/// Class predictions (argmax of the output, lowest index on ties) in eval mode.
inline std::vector<int> predict(Network<float>& net, const data::ImageDataset& ds, std::size_t batch_size = 256) {
  std::vector<int> preds;
  preds.reserve(ds.size());
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor<float> out = net.forward(ds.batch(idx), Mode::eval);
    const std::size_t C = out.dim(1);
    for (std::size_t k = 0; k < idx.size(); ++k) preds.push_back(static_cast<int>(argmax_row(&out[k * C], C)));
  }
  return preds;
}

inline EvalReport evaluate(Network<float>& net, const data::ImageDataset& ds) {
  if (net.num_classes() != ds.num_classes()) {
    throw ShapeError("model has " + std::to_string(net.num_classes()) + " outputs, dataset has " +
                     std::to_string(ds.num_classes()) + " classes");
  }
  const std::vector<int> preds = predict(net, ds);
  return evaluate_predictions(ds.labels, preds, ds.class_ids);
}

/// A network built from `spec` with seeded initialization.
inline Network<float> make_network(const ModelSpec& spec, std::uint64_t seed) {
  Network<float> net(spec);
  net.initialize(seed);
  return net;
}

}  // namespace lgcnn
