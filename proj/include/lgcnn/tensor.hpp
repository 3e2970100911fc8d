#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "lgcnn/error.hpp"

namespace lgcnn {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

inline std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Activation geometry in (batch, channel, height, width) order.
struct Shape4 {
  std::size_t batch = 1;
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t per_sample() const { return channels * height * width; }
  Shape dims() const { return {batch, channels, height, width}; }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.channels) + ", " + std::to_string(s.height) + ", " +
         std::to_string(s.width) + ")";
}

/**
 * Dense row-major N-dimensional array.
 *
 * Rank is at least one and every dimension is at least one, so the element
 * count is never zero. Consumers treat a constructed tensor as a value; the
 * mutable accessors exist for the single owner that fills it.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{}) {}

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_product(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_product(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  /// Rank-1 tensor from a list of values.
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
  }

  /// Rank-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  /// Flat offset of a full coordinate; bounds-checked.
  std::size_t offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw ShapeError("index of rank " + std::to_string(index.size()) + " into tensor of shape " +
                       to_string(shape_));
    }
    std::size_t off = 0;
    for (std::size_t d = 0; d < shape_.size(); ++d) {
      if (index[d] >= shape_[d]) throw ShapeError("index out of range for shape " + to_string(shape_));
      off = off * shape_[d] + index[d];
    }
    return off;
  }

  template <typename... I>
  const T& operator()(I... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[offset(index)];
  }
  template <typename... I>
  T& operator()(I... idx) {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    return data_[offset(index)];
  }

  Tensor reshape(Shape shape) const {
    if (shape_product(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("zero-sized dimension in shape " + to_string(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), T{0});
}

template <typename T>
Tensor<T> ones_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape(), T{1});
}

enum class BinaryOp { add, sub, mul, div };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, BinaryOp op) {
  if (a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (op) {
      case BinaryOp::add: out[i] = a[i] + b[i]; break;
      case BinaryOp::sub: out[i] = a[i] - b[i]; break;
      case BinaryOp::mul: out[i] = a[i] * b[i]; break;
      case BinaryOp::div:
        if (b[i] == T{0}) throw DomainError("division by zero at flat index " + std::to_string(i));
        out[i] = a[i] / b[i];
        break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, BinaryOp::add); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, BinaryOp::sub); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, BinaryOp::mul); }
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(a, b, BinaryOp::div); }

// The only broadcast the library supports.
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.data()) v += s;
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  const std::size_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
  Tensor<T> out({p, r}, T{0});
  auto A = a.data();
  auto B = b.data();
  auto C = out.data();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < q; ++k) {
      const T aik = A[i * q + k];
      const T* brow = &B[k * r];
      T* crow = &C[i * r];
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
  return out;
}

enum class ReduceOp { sum, max, mean, var };

/**
 * Reduces one axis away. A rank-1 input reduces to shape (1). `var` is the
 * population variance (divides by the element count).
 */
template <typename T>
Tensor<T> reduce(const Tensor<T>& a, std::size_t axis, ReduceOp op) {
  if (axis >= a.rank()) {
    throw ShapeError("reduce axis " + std::to_string(axis) + " out of range for shape " +
                     to_string(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.dim(d);
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const std::size_t n = a.dim(axis);

  Shape out_shape;
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (d != axis) out_shape.push_back(a.dim(d));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Tensor<T> out(out_shape);

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      auto at = [&](std::size_t k) { return a[(o * n + k) * inner + i]; };
      T result{};
      if (op == ReduceOp::max) {
        result = at(0);
        for (std::size_t k = 1; k < n; ++k) result = std::max(result, at(k));
      } else {
        T sum{};
        for (std::size_t k = 0; k < n; ++k) sum += at(k);
        if (op == ReduceOp::sum) {
          result = sum;
        } else {
          const T mean = sum / static_cast<T>(n);
          if (op == ReduceOp::mean) {
            result = mean;
          } else {
            T ss{};
            for (std::size_t k = 0; k < n; ++k) ss += (at(k) - mean) * (at(k) - mean);
            result = ss / static_cast<T>(n);
          }
        }
      }
      out[o * inner + i] = result;
    }
  }
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& a) {
  return std::accumulate(a.data().begin(), a.data().end(), T{0});
}

// ---------------------------------------------------------------------------
// Binary serialization: u64 rank, u64 dims, then float32 payload; all
// little-endian.

namespace io {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 4);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw IoError("unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char buf[4];
  if (!is.read(reinterpret_cast<char*>(buf), 4)) throw IoError("unexpected end of stream");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | buf[i];
  return v;
}

inline void write_f32(std::ostream& os, float f) { write_u32(os, std::bit_cast<std::uint32_t>(f)); }
inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t max_len = (1u << 26)) {
  const std::uint64_t n = read_u64(is);
  if (n > max_len) throw IoError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("unexpected end of stream");
  return s;
}

}  // namespace io

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  io::write_u64(os, t.rank());
  for (std::size_t d : t.shape()) io::write_u64(os, d);
  if constexpr (std::is_same_v<T, float> && std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (T v : t.data()) io::write_f32(os, static_cast<float>(v));
  }
  if (!os) throw IoError("failed writing tensor");
}

inline Tensor<float> read_tensor(std::istream& is) {
  const std::uint64_t rank = io::read_u64(is);
  if (rank == 0 || rank > 8) throw IoError("corrupt tensor header: rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = io::read_u64(is);
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw IoError("corrupt tensor header: dimension " + std::to_string(d));
    count *= d;
    if (count > (std::size_t{1} << 34)) throw IoError("corrupt tensor header: too many elements");
  }
  std::vector<float> data(count);
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)))) {
      throw IoError("unexpected end of stream in tensor payload");
    }
  } else {
    for (auto& v : data) v = io::read_f32(is);
  }
  return Tensor<float>(std::move(shape), std::move(data));
}

}  // namespace lgcnn
