#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace purify {

/// 4-D shape in (batch, channels, height, width) order.
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

/// Dense 4-D tensor, row-major with batch outermost. Values are immutable
/// once shared across threads; mutation happens only on exclusively owned
/// instances.
template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape s) : shape_(s), data_(static_cast<size_t>(s.numel()), T(0)) {
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
      throw std::invalid_argument("tensor shape must be positive, got " + s.str());
    }
  }
  TensorT(int n, int c, int h, int w) : TensorT(Shape{n, c, h, w}) {}

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int n, int c, int y, int x) {
    return data_[idx(n, c, y, x)];
  }
  const T& at(int n, int c, int y, int x) const {
    return data_[idx(n, c, y, x)];
  }

  size_t idx(int n, int c, int y, int x) const {
    return ((static_cast<size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  static TensorT zeros(Shape s) { return TensorT(s); }
  static TensorT ones(Shape s) {
    TensorT t(s);
    t.fill(T(1));
    return t;
  }
  static TensorT full(Shape s, T v) {
    TensorT t(s);
    t.fill(v);
    return t;
  }

  /// Uniform values in [lo, hi) from a seeded engine; deterministic across runs.
  static TensorT uniform(Shape s, std::uint64_t seed, T lo = T(0), T hi = T(1)) {
    TensorT t(s);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data_) v = static_cast<T>(dist(rng));
    return t;
  }

  static TensorT gaussian(Shape s, std::uint64_t seed, double mean = 0.0, double stddev = 1.0) {
    TensorT t(s);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(mean, stddev);
    for (auto& v : t.data_) v = static_cast<T>(dist(rng));
    return t;
  }

  bool all_finite() const {
    for (const auto& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  double sum() const {
    double acc = 0.0;
    for (const auto& v : data_) acc += static_cast<double>(v);
    return acc;
  }

  double dot(const TensorT& other) const {
    if (shape_ != other.shape_) {
      throw std::invalid_argument("dot: shape mismatch " + shape_.str() + " vs " + other.shape_.str());
    }
    double acc = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) {
      acc += static_cast<double>(data_[i]) * static_cast<double>(other.data_[i]);
    }
    return acc;
  }

  double norm2() const { return std::sqrt(dot(*this)); }

  T min_value() const { return *std::min_element(data_.begin(), data_.end()); }
  T max_value() const { return *std::max_element(data_.begin(), data_.end()); }

  /// this += alpha * other
  void axpy(T alpha, const TensorT& other) {
    if (shape_ != other.shape_) {
      throw std::invalid_argument("axpy: shape mismatch " + shape_.str() + " vs " + other.shape_.str());
    }
    for (size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
  }

  void scale_inplace(T alpha) {
    for (auto& v : data_) v *= alpha;
  }

  void clamp_inplace(T lo, T hi) {
    for (auto& v : data_) v = std::clamp(v, lo, hi);
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
    return out;
  }

  bool operator==(const TensorT&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace purify
