#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lgcnn/error.hpp"
#include "lgcnn/layers.hpp"
#include "lgcnn/model_spec.hpp"
#include "lgcnn/tensor.hpp"

namespace lgcnn {

/// A named learnable tensor together with its gradient accumulator.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>& value;
  Tensor<T>& grad;
};

/// A named non-trainable state tensor (BN running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>& value;
};

/**
 * Executable form of a ModelSpec.
 *
 * forward() records what backward() needs on an internal tape: each layer's
 * output plus the batch-norm and pooling caches. The tape belongs to one
 * thread; use one Network per worker.
 */
template <typename T>
class Network {
 public:
  explicit Network(ModelSpec spec) : spec_(std::move(spec)) {
    const ResolvedGraph g = resolve(spec_);
    nodes_.resize(spec_.layers.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      const LayerSpec& l = spec_.layers[i];
      n.spec = &spec_.layers[i];
      n.inputs = g.inputs[i];
      n.out_shape = g.shapes[i];
      const Shape4 in = n.inputs[0] < 0 ? spec_.input : g.shapes[static_cast<std::size_t>(n.inputs[0])];
      if (is_conv(l.kind)) {
        n.conv = ConvParams<T>::make(l.kernel_h, l.kernel_w, in.channels, l.out_channels, l.stride, l.padding);
        n.grads = {Tensor<T>(n.conv.weights.shape()), Tensor<T>(n.conv.bias.shape())};
      } else if (l.kind == LayerKind::batch_norm) {
        n.bn = BatchNormParams<T>::make(in.channels);
        n.grads = {Tensor<T>({in.channels}), Tensor<T>({in.channels})};
      } else if (l.kind == LayerKind::fully_connected) {
        n.fc = FcParams<T>::make(l.in_features, l.out_features);
        n.grads = {Tensor<T>(n.fc.weights.shape()), Tensor<T>(n.fc.bias.shape())};
      }
    }
  }

  Network(const Network& other) : spec_(other.spec_), nodes_(other.nodes_) { rebind(); }
  Network& operator=(const Network& other) {
    spec_ = other.spec_;
    nodes_ = other.nodes_;
    rebind();
    return *this;
  }
  Network(Network&& other) noexcept : spec_(std::move(other.spec_)), nodes_(std::move(other.nodes_)) { rebind(); }
  Network& operator=(Network&& other) noexcept {
    spec_ = std::move(other.spec_);
    nodes_ = std::move(other.nodes_);
    rebind();
    return *this;
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t num_classes() const { return nodes_.back().out_shape.channels; }

  /// Uniform in +-sqrt(1/fan_in) for weights and biases; BN scale 1, shift 0.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (Node& n : nodes_) {
      const LayerKind k = n.spec->kind;
      if (is_conv(k)) {
        const double fan_in = static_cast<double>(n.conv.in_channels * n.conv.kernel_h * n.conv.kernel_w);
        fill_uniform(n.conv.weights, fan_in, rng);
        fill_uniform(n.conv.bias, fan_in, rng);
      } else if (k == LayerKind::fully_connected) {
        const double fan_in = static_cast<double>(n.fc.in_features);
        fill_uniform(n.fc.weights, fan_in, rng);
        fill_uniform(n.fc.bias, fan_in, rng);
      } else if (k == LayerKind::batch_norm) {
        n.bn = BatchNormParams<T>::make(n.bn.channels);
      }
    }
  }

  /// Learnable tensors in declaration order.
  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (Node& n : nodes_) {
      const std::string& name = n.spec->name;
      if (is_conv(n.spec->kind)) {
        out.push_back({name + ".weights", n.conv.weights, n.grads[0]});
        out.push_back({name + ".bias", n.conv.bias, n.grads[1]});
      } else if (n.spec->kind == LayerKind::batch_norm) {
        out.push_back({name + ".alpha", n.bn.alpha, n.grads[0]});
        out.push_back({name + ".beta", n.bn.beta, n.grads[1]});
      } else if (n.spec->kind == LayerKind::fully_connected) {
        out.push_back({name + ".weights", n.fc.weights, n.grads[0]});
        out.push_back({name + ".bias", n.fc.bias, n.grads[1]});
      }
    }
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (Node& n : nodes_) {
      if (n.spec->kind == LayerKind::batch_norm) {
        out.push_back({n.spec->name + ".running_mean", n.bn.running_mean});
        out.push_back({n.spec->name + ".running_var", n.bn.running_var});
      }
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (const auto& p : parameters()) total += p.value.size();
    return total;
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      for (auto& g : n.grads) g.fill(T{0});
    }
  }

  /// Runs every layer; the result of a terminal Softmax is class probabilities.
  Tensor<T> forward(const Tensor<T>& input, Mode mode) { return run(input, mode, nodes_.size()); }

  /// Runs every layer except a terminal Softmax.
  Tensor<T> logits(const Tensor<T>& input, Mode mode) {
    std::size_t stop = nodes_.size();
    if (nodes_.back().spec->kind == LayerKind::softmax) --stop;
    return run(input, mode, stop);
  }

  /**
   * Back-propagates `grad` (w.r.t. the output of the last forward()/logits()
   * call) and accumulates into every parameter gradient. Consumes the tape.
   */
  void backward(const Tensor<T>& grad) {
    if (!recorded_) throw StateError("backward called without a recorded forward pass");
    recorded_ = false;
    const std::size_t last = executed_ - 1;
    if (grad.shape() != nodes_[last].output.shape()) {
      throw ShapeError("backward: gradient " + to_string(grad.shape()) + " does not match output " +
                       to_string(nodes_[last].output.shape()));
    }
    std::vector<Tensor<T>> upstream(executed_);
    std::vector<bool> has(executed_, false);
    upstream[last] = grad;
    has[last] = true;
    input_grad_ = Tensor<T>(input_.shape());

    auto send = [&](int target, Tensor<T> g) {
      if (target < 0) {
        input_grad_ = add(input_grad_, g);
        return;
      }
      auto t = static_cast<std::size_t>(target);
      if (has[t]) {
        upstream[t] = add(upstream[t], g);
      } else {
        upstream[t] = std::move(g);
        has[t] = true;
      }
    };

    for (std::size_t i = executed_; i-- > 0;) {
      if (!has[i]) continue;
      Node& n = nodes_[i];
      const Tensor<T>& g = upstream[i];
      const Tensor<T>& x = input_of(n, 0);
      switch (n.spec->kind) {
        case LayerKind::conv2d:
        case LayerKind::conv1x1:
        case LayerKind::conv_fat:
        case LayerKind::conv_tall: {
          ConvGrads<T> cg = conv2d_backward(x, n.conv, g);
          accumulate(n.grads[0], cg.weights);
          accumulate(n.grads[1], cg.bias);
          send(n.inputs[0], std::move(cg.input));
          break;
        }
        case LayerKind::batch_norm: {
          BatchNormGrads<T> bg = batch_norm2d_backward(n.bn_cache, n.bn, g);
          accumulate(n.grads[0], bg.alpha);
          accumulate(n.grads[1], bg.beta);
          send(n.inputs[0], std::move(bg.input));
          break;
        }
        case LayerKind::relu: send(n.inputs[0], relu_backward(x, g.reshape(x.shape()))); break;
        case LayerKind::max_pool: send(n.inputs[0], max_pool2d_backward(n.pool_cache, g)); break;
        case LayerKind::flatten: send(n.inputs[0], g.reshape(x.shape())); break;
        case LayerKind::fully_connected: {
          FcGrads<T> fg = fully_connected_backward(x, n.fc, g);
          accumulate(n.grads[0], fg.weights);
          accumulate(n.grads[1], fg.bias);
          send(n.inputs[0], std::move(fg.input));
          break;
        }
        case LayerKind::softmax: send(n.inputs[0], softmax_backward(n.output, g)); break;
        case LayerKind::outer_fuse: {
          FuseGrads<T> fg = outer_product_fuse_backward(x, input_of(n, 1), g);
          send(n.inputs[0], std::move(fg.phi));
          send(n.inputs[1], std::move(fg.omega));
          break;
        }
        case LayerKind::concat: {
          const std::size_t B = g.dim(0), HW = g.dim(2) * g.dim(3), C = g.dim(1);
          std::size_t offset = 0;
          for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const Tensor<T>& src = input_of(n, k);
            const std::size_t c = src.dim(1);
            Tensor<T> part(src.shape());
            for (std::size_t b = 0; b < B; ++b) {
              std::copy_n(&g[(b * C + offset) * HW], c * HW, &part[b * c * HW]);
            }
            offset += c;
            send(n.inputs[k], std::move(part));
          }
          break;
        }
      }
    }
  }

  /// Gradient w.r.t. the network input from the most recent backward().
  const Tensor<T>& input_grad() const { return input_grad_; }

  /// Output of a named layer from the most recent forward pass.
  const Tensor<T>& layer_output(const std::string& name) const {
    for (const Node& n : nodes_) {
      if (n.spec->name == name) return n.output;
    }
    throw ShapeError("unknown layer '" + name + "'");
  }

 private:
  struct Node {
    const LayerSpec* spec = nullptr;
    std::vector<int> inputs;
    Shape4 out_shape;
    ConvParams<T> conv;
    BatchNormParams<T> bn;
    FcParams<T> fc;
    std::vector<Tensor<T>> grads;
    // tape
    Tensor<T> output;
    BatchNormCache<T> bn_cache;
    PoolCache pool_cache;
  };

  void rebind() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) nodes_[i].spec = &spec_.layers[i];
  }

  const Tensor<T>& input_of(const Node& n, std::size_t k) const {
    const int s = n.inputs.at(k);
    return s < 0 ? input_ : nodes_[static_cast<std::size_t>(s)].output;
  }

  static void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  static void fill_uniform(Tensor<T>& t, double fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  }

  Tensor<T> run(const Tensor<T>& input, Mode mode, std::size_t stop) {
    const Shape4& s = spec_.input;
    if (input.rank() != 4 || input.dim(1) != s.channels || input.dim(2) != s.height || input.dim(3) != s.width) {
      throw ShapeError("network '" + spec_.name + "' expects input (batch, " + std::to_string(s.channels) + ", " +
                       std::to_string(s.height) + ", " + std::to_string(s.width) + "), got " +
                       to_string(input.shape()));
    }
    recorded_ = false;
    input_ = input;
    const std::size_t B = input.dim(0);
    for (std::size_t i = 0; i < stop; ++i) {
      Node& n = nodes_[i];
      const Tensor<T>& x = input_of(n, 0);
      switch (n.spec->kind) {
        case LayerKind::conv2d:
        case LayerKind::conv1x1: n.output = conv2d(x, n.conv); break;
        case LayerKind::conv_fat: n.output = conv_fat_1d(x, n.conv); break;
        case LayerKind::conv_tall: n.output = conv_tall_1d(x, n.conv); break;
        case LayerKind::batch_norm: n.output = batch_norm2d(x, n.bn, mode, &n.bn_cache); break;
        case LayerKind::relu: n.output = relu(x); break;
        case LayerKind::max_pool:
          n.output = max_pool2d(x, n.spec->pool_window, n.spec->pool_stride, &n.pool_cache);
          break;
        case LayerKind::flatten: n.output = x.reshape({B, x.size() / B}); break;
        case LayerKind::fully_connected: n.output = fully_connected(x, n.fc); break;
        case LayerKind::softmax: n.output = softmax(x); break;
        case LayerKind::outer_fuse: n.output = outer_product_fuse(x, input_of(n, 1)); break;
        case LayerKind::concat: {
          const std::size_t HW = x.dim(2) * x.dim(3);
          std::size_t C = 0;
          for (std::size_t k = 0; k < n.inputs.size(); ++k) C += input_of(n, k).dim(1);
          n.output = Tensor<T>({B, C, x.dim(2), x.dim(3)});
          std::size_t offset = 0;
          for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            const Tensor<T>& src = input_of(n, k);
            const std::size_t c = src.dim(1);
            for (std::size_t b = 0; b < B; ++b) {
              std::copy_n(&src[b * c * HW], c * HW, &n.output[(b * C + offset) * HW]);
            }
            offset += c;
          }
          break;
        }
      }
    }
    executed_ = stop;
    recorded_ = true;
    return nodes_[stop - 1].output;
  }

  ModelSpec spec_;
  std::vector<Node> nodes_;
  Tensor<T> input_;
  Tensor<T> input_grad_;
  std::size_t executed_ = 0;
  bool recorded_ = false;
};

}  // namespace lgcnn
