#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "lgcnn/error.hpp"
#include "lgcnn/tensor.hpp"

// Forward/backward primitives. Activations are (batch, channel, height, width);
// every function is a pure transformation apart from batch_norm2d in train
// mode, which updates the running statistics it is handed.

namespace lgcnn {

enum class Padding { valid, same };
enum class Mode { train, eval };

namespace detail {

inline void require_rank4(const Shape& s, const char* what) {
  if (s.size() != 4) {
    throw ShapeError(std::string(what) + " expects a (batch, channel, height, width) tensor, got " +
                     to_string(s));
  }
}

}  // namespace detail

/// Output size and leading padding of a convolution along both spatial axes.
struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
};

/**
 * Valid: floor((in - k) / stride) + 1. Same: ceil(in / stride), with the total
 * zero padding split evenly and any odd pixel going to the bottom/right.
 */
inline ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t k_h,
                                  std::size_t k_w, std::size_t stride, Padding padding) {
  if (stride == 0) throw ShapeError("convolution stride must be at least 1");
  if (k_h == 0 || k_w == 0) throw ShapeError("convolution kernel must be at least 1x1");
  ConvGeometry g;
  if (padding == Padding::valid) {
    if (k_h > in_h || k_w > in_w) {
      throw ShapeError("kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
                       " larger than input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    }
    g.out_h = (in_h - k_h) / stride + 1;
    g.out_w = (in_w - k_w) / stride + 1;
    return g;
  }
  g.out_h = (in_h + stride - 1) / stride;
  g.out_w = (in_w + stride - 1) / stride;
  const std::size_t need_h = (g.out_h - 1) * stride + k_h;
  const std::size_t need_w = (g.out_w - 1) * stride + k_w;
  const std::size_t total_h = need_h > in_h ? need_h - in_h : 0;
  const std::size_t total_w = need_w > in_w ? need_w - in_w : 0;
  if (k_h > in_h + total_h || k_w > in_w + total_w) {
    throw ShapeError("kernel larger than padded input");
  }
  g.pad_top = total_h / 2;
  g.pad_left = total_w / 2;
  return g;
}

template <typename T>
struct ConvParams {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  Padding padding = Padding::same;
  Tensor<T> weights;  // (out, in, kernel_h, kernel_w)
  Tensor<T> bias;     // (out)

  /// Zero-initialized parameters of the given geometry.
  static ConvParams make(std::size_t k_h, std::size_t k_w, std::size_t in, std::size_t out,
                         std::size_t stride = 1, Padding padding = Padding::same) {
    ConvParams p;
    p.kernel_h = k_h;
    p.kernel_w = k_w;
    p.in_channels = in;
    p.out_channels = out;
    p.stride = stride;
    p.padding = padding;
    p.weights = Tensor<T>({out, in, k_h, k_w});
    p.bias = Tensor<T>({out});
    return p;
  }

  void validate() const {
    if (weights.shape() != Shape{out_channels, in_channels, kernel_h, kernel_w} ||
        bias.shape() != Shape{out_channels}) {
      throw ShapeError("convolution parameters inconsistent with declared geometry");
    }
    if (stride == 0) throw ShapeError("convolution stride must be at least 1");
  }
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& p) {
  detail::require_rank4(input.shape(), "conv2d");
  p.validate();
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (C != p.in_channels) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(C) +
                     ", kernel expects " + std::to_string(p.in_channels));
  }
  const ConvGeometry g = conv_geometry(H, W, p.kernel_h, p.kernel_w, p.stride, p.padding);
  const std::size_t O = p.out_channels, OH = g.out_h, OW = g.out_w, s = p.stride;
  Tensor<T> out({B, O, OH, OW});
  const T* x = input.data().data();
  const T* w = p.weights.data().data();
  T* y = out.data().data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      T* yplane = y + (b * O + o) * OH * OW;
      std::fill(yplane, yplane + OH * OW, p.bias[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const T* xplane = x + (b * C + c) * H * W;
        for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
            const T wv = w[((o * C + c) * p.kernel_h + ky) * p.kernel_w + kx];
            for (std::size_t oy = 0; oy < OH; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad_top);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              const T* xrow = xplane + iy * W;
              T* yrow = yplane + oy * OW;
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad_left);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                yrow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& p,
                             const Tensor<T>& grad_out) {
  detail::require_rank4(input.shape(), "conv2d_backward");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const ConvGeometry g = conv_geometry(H, W, p.kernel_h, p.kernel_w, p.stride, p.padding);
  const std::size_t O = p.out_channels, OH = g.out_h, OW = g.out_w, s = p.stride;
  if (grad_out.shape() != Shape{B, O, OH, OW}) {
    throw ShapeError("conv2d_backward gradient shape " + to_string(grad_out.shape()) +
                     " does not match output shape");
  }
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(p.weights.shape()), Tensor<T>(p.bias.shape())};
  const T* x = input.data().data();
  const T* w = p.weights.data().data();
  const T* gy = grad_out.data().data();
  T* gx = grads.input.data().data();
  T* gw = grads.weights.data().data();

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      const T* gplane = gy + (b * O + o) * OH * OW;
      T bsum{};
      for (std::size_t i = 0; i < OH * OW; ++i) bsum += gplane[i];
      grads.bias[o] += bsum;
      for (std::size_t c = 0; c < C; ++c) {
        const T* xplane = x + (b * C + c) * H * W;
        T* gxplane = gx + (b * C + c) * H * W;
        for (std::size_t ky = 0; ky < p.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
            const std::size_t widx = ((o * C + c) * p.kernel_h + ky) * p.kernel_w + kx;
            const T wv = w[widx];
            T wacc{};
            for (std::size_t oy = 0; oy < OH; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) -
                                        static_cast<std::ptrdiff_t>(g.pad_top);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              const T* xrow = xplane + iy * W;
              T* gxrow = gxplane + iy * W;
              const T* grow = gplane + oy * OW;
              for (std::size_t ox = 0; ox < OW; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) -
                                          static_cast<std::ptrdiff_t>(g.pad_left);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                wacc += grow[ox] * xrow[ix];
                gxrow[ix] += wv * grow[ox];
              }
            }
            gw[widx] += wacc;
          }
        }
      }
    }
  }
  return grads;
}

// Full-span 1D convolutions. Both are conv2d restricted to a kernel that
// covers one whole spatial axis with no padding.

template <typename T>
void check_fat_kernel(const Tensor<T>& input, const ConvParams<T>& p) {
  detail::require_rank4(input.shape(), "conv_fat_1d");
  if (p.kernel_h != 1 || p.kernel_w != input.dim(3) || p.padding != Padding::valid || p.stride != 1) {
    throw ShapeError("fat kernel must be 1x" + std::to_string(input.dim(3)) +
                     " (full input width), unpadded, stride 1; got " + std::to_string(p.kernel_h) +
                     "x" + std::to_string(p.kernel_w));
  }
}

template <typename T>
void check_tall_kernel(const Tensor<T>& input, const ConvParams<T>& p) {
  detail::require_rank4(input.shape(), "conv_tall_1d");
  if (p.kernel_w != 1 || p.kernel_h != input.dim(2) || p.padding != Padding::valid || p.stride != 1) {
    throw ShapeError("tall kernel must be " + std::to_string(input.dim(2)) +
                     "x1 (full input height), unpadded, stride 1; got " + std::to_string(p.kernel_h) +
                     "x" + std::to_string(p.kernel_w));
  }
}

/// (B, C, H, W) -> (B, out, H, 1): one affine response per row.
template <typename T>
Tensor<T> conv_fat_1d(const Tensor<T>& input, const ConvParams<T>& p) {
  check_fat_kernel(input, p);
  return conv2d(input, p);
}

/// (B, C, H, W) -> (B, out, 1, W): one affine response per column.
template <typename T>
Tensor<T> conv_tall_1d(const Tensor<T>& input, const ConvParams<T>& p) {
  check_tall_kernel(input, p);
  return conv2d(input, p);
}

/**
 * Per-channel outer product of a column map (B, C, H, 1) and a row map
 * (B, C, 1, W): out[b][c][i][j] = phi[b][c][i] * omega[b][c][j].
 */
template <typename T>
Tensor<T> outer_product_fuse(const Tensor<T>& phi, const Tensor<T>& omega) {
  detail::require_rank4(phi.shape(), "outer_product_fuse");
  detail::require_rank4(omega.shape(), "outer_product_fuse");
  if (phi.dim(0) != omega.dim(0) || phi.dim(1) != omega.dim(1)) {
    throw ShapeError("outer_product_fuse pairs channels one-to-one; got " + to_string(phi.shape()) +
                     " and " + to_string(omega.shape()));
  }
  if (phi.dim(3) != 1 || omega.dim(2) != 1) {
    throw ShapeError("outer_product_fuse needs a width-1 column map and a height-1 row map; got " +
                     to_string(phi.shape()) + " and " + to_string(omega.shape()));
  }
  const std::size_t B = phi.dim(0), C = phi.dim(1), H = phi.dim(2), W = omega.dim(3);
  Tensor<T> out({B, C, H, W});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* col = &phi[bc * H];
    const T* row = &omega[bc * W];
    T* dst = &out[bc * H * W];
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) dst[i * W + j] = col[i] * row[j];
    }
  }
  return out;
}

template <typename T>
struct FuseGrads {
  Tensor<T> phi;
  Tensor<T> omega;
};

template <typename T>
FuseGrads<T> outer_product_fuse_backward(const Tensor<T>& phi, const Tensor<T>& omega,
                                         const Tensor<T>& grad_out) {
  const std::size_t B = phi.dim(0), C = phi.dim(1), H = phi.dim(2), W = omega.dim(3);
  if (grad_out.shape() != Shape{B, C, H, W}) throw ShapeError("outer_product_fuse_backward: bad gradient shape");
  FuseGrads<T> g{Tensor<T>(phi.shape()), Tensor<T>(omega.shape())};
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* col = &phi[bc * H];
    const T* row = &omega[bc * W];
    const T* gy = &grad_out[bc * H * W];
    T* gcol = &g.phi[bc * H];
    T* grow = &g.omega[bc * W];
    for (std::size_t i = 0; i < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        gcol[i] += gy[i * W + j] * row[j];
        grow[j] += gy[i * W + j] * col[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
struct BatchNormParams {
  std::size_t channels = 1;
  Tensor<T> alpha;  // scale
  Tensor<T> beta;   // shift
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  static BatchNormParams make(std::size_t channels) {
    BatchNormParams p;
    p.channels = channels;
    p.alpha = Tensor<T>({channels}, T{1});
    p.beta = Tensor<T>({channels}, T{0});
    p.running_mean = Tensor<T>({channels}, T{0});
    p.running_var = Tensor<T>({channels}, T{1});
    return p;
  }

  void validate() const {
    const Shape s{channels};
    if (alpha.shape() != s || beta.shape() != s || running_mean.shape() != s || running_var.shape() != s) {
      throw ShapeError("batch-norm parameters inconsistent with channel count " + std::to_string(channels));
    }
    if (!(epsilon > T{0})) throw DomainError("batch-norm epsilon must be positive");
    if (!(momentum > T{0} && momentum < T{1})) throw DomainError("batch-norm momentum must lie in (0, 1)");
  }
};

/// What backward needs from a batch-norm forward.
template <typename T>
struct BatchNormCache {
  Mode mode = Mode::train;
  Tensor<T> normalized;
  std::vector<T> inv_std;
};

/**
 * Per-channel normalization over batch and spatial positions followed by
 * y = x_hat * alpha + beta. Train mode normalizes with the batch moments
 * (population variance) and folds them into the running statistics; eval
 * mode uses the running statistics.
 */
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode,
                       BatchNormCache<T>* cache = nullptr) {
  detail::require_rank4(input.shape(), "batch_norm2d");
  p.validate();
  const std::size_t B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
  if (C != p.channels) {
    throw ShapeError("batch_norm2d channel mismatch: input has " + std::to_string(C) +
                     ", parameters have " + std::to_string(p.channels));
  }
  Tensor<T> out(input.shape());
  Tensor<T> normalized(input.shape());
  std::vector<T> inv_std(C);
  const T count = static_cast<T>(B * HW);

  for (std::size_t c = 0; c < C; ++c) {
    T mean, var;
    if (mode == Mode::train) {
      T sum{};
      for (std::size_t b = 0; b < B; ++b) {
        const T* src = &input[(b * C + c) * HW];
        for (std::size_t i = 0; i < HW; ++i) sum += src[i];
      }
      mean = sum / count;
      T ss{};
      for (std::size_t b = 0; b < B; ++b) {
        const T* src = &input[(b * C + c) * HW];
        for (std::size_t i = 0; i < HW; ++i) ss += (src[i] - mean) * (src[i] - mean);
      }
      var = ss / count;
      p.running_mean[c] = (T{1} - p.momentum) * p.running_mean[c] + p.momentum * mean;
      p.running_var[c] = (T{1} - p.momentum) * p.running_var[c] + p.momentum * var;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const T istd = T{1} / std::sqrt(var + p.epsilon);
    inv_std[c] = istd;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (input[base + i] - mean) * istd;
        normalized[base + i] = xh;
        out[base + i] = xh * p.alpha[c] + p.beta[c];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> alpha;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batch_norm2d_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
                                        const Tensor<T>& grad_out) {
  const Tensor<T>& xh = cache.normalized;
  if (grad_out.shape() != xh.shape()) throw ShapeError("batch_norm2d_backward: bad gradient shape");
  const std::size_t B = xh.dim(0), C = xh.dim(1), HW = xh.dim(2) * xh.dim(3);
  const T count = static_cast<T>(B * HW);
  BatchNormGrads<T> g{Tensor<T>(xh.shape()), Tensor<T>({C}), Tensor<T>({C})};

  for (std::size_t c = 0; c < C; ++c) {
    T sum_g{}, sum_gx{};
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_g += grad_out[base + i];
        sum_gx += grad_out[base + i] * xh[base + i];
      }
    }
    g.beta[c] = sum_g;
    g.alpha[c] = sum_gx;
    const T k = p.alpha[c] * cache.inv_std[c];
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t base = (b * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        if (cache.mode == Mode::train) {
          g.input[base + i] = k * (grad_out[base + i] - sum_g / count - xh[base + i] * sum_gx / count);
        } else {
          g.input[base + i] = k * grad_out[base + i];
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling (valid: trailing partial windows are dropped)

struct PoolCache {
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t window, std::size_t stride,
                     PoolCache* cache = nullptr) {
  detail::require_rank4(input.shape(), "max_pool2d");
  if (window == 0 || stride == 0) throw ShapeError("max_pool2d window and stride must be positive");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (window > H || window > W) {
    throw ShapeError("max_pool2d window " + std::to_string(window) + " exceeds input " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  Tensor<T> out({B, C, OH, OW});
  std::vector<std::size_t> arg(out.size());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = bc * H * W + (oy * stride) * W + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = bc * H * W + (oy * stride + ky) * W + ox * stride + kx;
            if (input[idx] > input[best]) best = idx;  // strict: first maximum wins
          }
        }
        const std::size_t o = (bc * OH + oy) * OW + ox;
        out[o] = input[best];
        arg[o] = best;
      }
    }
  }
  if (cache) {
    cache->input_shape = input.shape();
    cache->argmax = std::move(arg);
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2d_backward(const PoolCache& cache, const Tensor<T>& grad_out) {
  if (grad_out.size() != cache.argmax.size()) throw ShapeError("max_pool2d_backward: bad gradient shape");
  Tensor<T> g(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g[cache.argmax[o]] += grad_out[o];
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected

template <typename T>
struct FcParams {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
  Tensor<T> weights;  // (out, in)
  Tensor<T> bias;     // (out)

  static FcParams make(std::size_t in, std::size_t out) {
    FcParams p;
    p.in_features = in;
    p.out_features = out;
    p.weights = Tensor<T>({out, in});
    p.bias = Tensor<T>({out});
    return p;
  }

  void validate() const {
    if (weights.shape() != Shape{out_features, in_features} || bias.shape() != Shape{out_features}) {
      throw ShapeError("fully-connected parameters inconsistent with declared geometry");
    }
  }
};

/// (B, in) -> (B, out); out[b][z] = bias[z] + <x[b], weights[z]>.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& input, const FcParams<T>& p) {
  p.validate();
  if (input.rank() != 2 || input.dim(1) != p.in_features) {
    throw ShapeError("fully_connected expects (batch, " + std::to_string(p.in_features) +
                     "), got " + to_string(input.shape()));
  }
  const std::size_t B = input.dim(0), Z = p.out_features, N = p.in_features;
  Tensor<T> out({B, Z});
  for (std::size_t b = 0; b < B; ++b) {
    const T* x = &input[b * N];
    for (std::size_t z = 0; z < Z; ++z) {
      const T* w = &p.weights[z * N];
      T acc = p.bias[z];
      for (std::size_t k = 0; k < N; ++k) acc += x[k] * w[k];
      out[b * Z + z] = acc;
    }
  }
  return out;
}

template <typename T>
struct FcGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
FcGrads<T> fully_connected_backward(const Tensor<T>& input, const FcParams<T>& p,
                                    const Tensor<T>& grad_out) {
  const std::size_t B = input.dim(0), Z = p.out_features, N = p.in_features;
  if (grad_out.shape() != Shape{B, Z}) throw ShapeError("fully_connected_backward: bad gradient shape");
  FcGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(p.weights.shape()), Tensor<T>(p.bias.shape())};
  for (std::size_t b = 0; b < B; ++b) {
    const T* x = &input[b * N];
    T* gx = &g.input[b * N];
    for (std::size_t z = 0; z < Z; ++z) {
      const T gz = grad_out[b * Z + z];
      if (gz == T{0}) continue;
      g.bias[z] += gz;
      const T* w = &p.weights[z * N];
      T* gw = &g.weights[z * N];
      for (std::size_t k = 0; k < N; ++k) {
        gw[k] += gz * x[k];
        gx[k] += gz * w[k];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = std::max(v, T{0});
  return out;
}

/// Gradient passes where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) throw ShapeError("relu_backward: bad gradient shape");
  Tensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T{0} ? grad_out[i] : T{0};
  return g;
}

/// Row-wise softmax of a (batch, classes) tensor, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& input) {
  if (input.rank() != 2) throw ShapeError("softmax expects (batch, classes), got " + to_string(input.shape()));
  const std::size_t B = input.dim(0), C = input.dim(1);
  Tensor<T> out(input.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const T* x = &input[b * C];
    T* y = &out[b * C];
    const T mx = *std::max_element(x, x + C);
    T sum{};
    for (std::size_t c = 0; c < C; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < C; ++c) y[c] /= sum;
  }
  return out;
}

/// Given the softmax output y: dx = y * (g - <g, y>) per row.
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  if (output.shape() != grad_out.shape()) throw ShapeError("softmax_backward: bad gradient shape");
  const std::size_t B = output.dim(0), C = output.dim(1);
  Tensor<T> g(output.shape());
  for (std::size_t b = 0; b < B; ++b) {
    T dot{};
    for (std::size_t c = 0; c < C; ++c) dot += grad_out[b * C + c] * output[b * C + c];
    for (std::size_t c = 0; c < C; ++c) g[b * C + c] = output[b * C + c] * (grad_out[b * C + c] - dot);
  }
  return g;
}

}  // namespace lgcnn
