#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace halo {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Shape or rank disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A spatial size is not a multiple of the requested block size.
class DivisibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Value outside an operation's domain (NaN input, negative variance, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid layer or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline Index product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
}

/// Dense row-major N-d array. Storage is an Eigen column vector so
/// elementwise work can go through Eigen array expressions; reductions are
/// written as explicit ascending loops to keep summation order fixed.
template <typename Scalar = double>
class Tensor {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (Index d : shape_) {
      if (d <= 0) throw DimensionError("tensor dims must be positive, got " + to_string(shape_));
    }
    data_ = Storage::Zero(product(shape_));
  }

  Tensor(std::initializer_list<Index> shape) : Tensor(Shape(shape)) {}

  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != size()) {
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + to_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor constant(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return shape_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Storage& flat() { return data_; }
  const Storage& flat() const { return data_; }

  Scalar& operator[](Index i) { return data_[i]; }
  const Scalar& operator[](Index i) const { return data_[i]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) { return data_[offset(ix...)]; }
  template <typename... Ix>
  const Scalar& operator()(Ix... ix) const { return data_[offset(ix...)]; }

  /// Rank-2 view as a row-major Eigen matrix.
  Eigen::Map<RowMajorMatrix> matrix() {
    require_rank(2);
    return {data_.data(), shape_[0], shape_[1]};
  }
  Eigen::Map<const RowMajorMatrix> matrix() const {
    require_rank(2);
    return {data_.data(), shape_[0], shape_[1]};
  }

  Tensor reshaped(Shape s) const {
    if (product(s) != size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(s));
    }
    Tensor t;
    t.shape_ = std::move(s);
    t.data_ = data_;
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(shape_);
    t.flat() = data_.template cast<Other>();
    return t;
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  template <typename... Ix>
  Index offset(Ix... ix) const {
    constexpr std::size_t n = sizeof...(Ix);
    const Index idx[n] = {static_cast<Index>(ix)...};
    Index off = 0;
    for (std::size_t i = 0; i < n; ++i) off = off * shape_[i] + idx[i];
    return off;
  }

  void require_rank(Index r) const {
    if (rank() != r) {
      throw DimensionError("expected rank " + std::to_string(r) + ", got " + to_string(shape_));
    }
  }

  Shape shape_;
  Storage data_;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.size() == 0) return Scalar(0);
  return (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

}  // namespace halo
