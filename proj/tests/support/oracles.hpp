#pragma once

// Independent reference implementations used only by the test suites. They
// are written for obviousness, not speed, and share no code paths with the
// library kernels they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "lgcnn/data.hpp"
#include "lgcnn/tensor.hpp"

namespace lgcnn::oracle {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
Tensor<T> naive_matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor<T> c({p, r});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < r; ++j) {
      T s{};
      for (std::size_t k = 0; k < q; ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

/// Direct convolution over an explicitly zero-padded copy of the input.
template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                       std::size_t pad_top, std::size_t pad_bottom, std::size_t pad_left, std::size_t pad_right) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t PH = H + pad_top + pad_bottom, PW = W + pad_left + pad_right;
  Tensor<T> padded({B, C, PH, PW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) padded(b, c, i + pad_top, j + pad_left) = x(b, c, i, j);
  const std::size_t OH = (PH - KH) / stride + 1, OW = (PW - KW) / stride + 1;
  Tensor<T> y({B, O, OH, OW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          T s = bias[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) s += w(o, c, ky, kx) * padded(b, c, oy * stride + ky, ox * stride + kx);
          y(b, o, oy, ox) = s;
        }
  return y;
}

template <typename T>
Tensor<T> region_max_pool(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  Tensor<T> y({B, C, OH, OW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          std::vector<T> region;
          for (std::size_t u = 0; u < window; ++u)
            for (std::size_t v = 0; v < window; ++v) region.push_back(x(b, c, i * stride + u, j * stride + v));
          y(b, c, i, j) = *std::max_element(region.begin(), region.end());
        }
  return y;
}

template <typename T>
Tensor<T> nested_outer_product(const Tensor<T>& phi, const Tensor<T>& omega) {
  const std::size_t B = phi.dim(0), C = phi.dim(1), H = phi.dim(2), W = omega.dim(3);
  Tensor<T> y({B, C, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) y(b, c, i, j) = phi(b, c, i, 0) * omega(b, c, 0, j);
  return y;
}

/// Textbook two-pass Pearson coefficient of variables i and j, pair by pair.
inline double two_pass_pearson(const std::vector<data::SimulationRecord>& recs, std::size_t i, std::size_t j) {
  std::vector<double> xi, xj;
  for (const auto& r : recs)
    for (std::size_t t = 0; t < r.rows(); ++t) {
      xi.push_back(r.at(t, i));
      xj.push_back(r.at(t, j));
    }
  const double n = static_cast<double>(xi.size());
  double mi = 0, mj = 0;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    mi += xi[k];
    mj += xj[k];
  }
  mi /= n;
  mj /= n;
  double sij = 0, sii = 0, sjj = 0;
  for (std::size_t k = 0; k < xi.size(); ++k) {
    sij += (xi[k] - mi) * (xj[k] - mj);
    sii += (xi[k] - mi) * (xi[k] - mi);
    sjj += (xj[k] - mj) * (xj[k] - mj);
  }
  return sij / std::sqrt(sii * sjj);
}

/**
 * Central finite differences of a scalar function of a tensor, perturbing
 * `x` in place and restoring it: df/dx[i] ~ (f(x + h e_i) - f(x - h e_i)) / 2h.
 */
inline Tensor<double> finite_difference(Tensor<double>& x, const std::function<double()>& f, double h = 1e-4) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i| + |n_i|, floor): symmetric relative error with an absolute floor.
inline double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max(std::abs(analytic[i]) + std::abs(numeric[i]), floor);
    worst = std::max(worst, diff / scale);
  }
  return worst;
}

/// Fixed random projection used to turn a tensor output into a scalar loss.
inline double project(const Tensor<double>& y, const Tensor<double>& weights) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
  return s;
}

}  // namespace lgcnn::oracle
