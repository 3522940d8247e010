#pragma once

// Dense row-major tensor of arbitrary rank backed by an Eigen array.
// Scalar is float for training/benchmarks and double for gradient checks.

#include <Eigen/Dense>

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace simex {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

template <typename Scalar>
struct Tensor {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)) {
    data = Array::Zero(shape_numel(shape));
  }
  Tensor(Shape s, Array d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw std::invalid_argument("tensor data length does not match shape " +
                                  shape_str(shape));
  }

  long size() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  Scalar& operator[](long i) { return data[i]; }
  Scalar operator[](long i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const { return data.isFinite().all(); }

  // Maps a rank-N tensor as a (rows, cols) Eigen matrix over contiguous
  // row-major storage; rows must be a prefix product of the shape.
  auto as_matrix(long rows, long cols) {
    return Eigen::Map<
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), rows, cols);
  }
  auto as_matrix(long rows, long cols) const {
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                          Eigen::Dynamic, Eigen::RowMajor>>(
        data.data(), rows, cols);
  }

  template <typename OtherScalar>
  Tensor<OtherScalar> cast() const {
    Tensor<OtherScalar> out;
    out.shape = shape;
    out.data = data.template cast<OtherScalar>();
    return out;
  }

  static Tensor from_values(Shape s, std::initializer_list<Scalar> vals) {
    Tensor t(std::move(s));
    if (static_cast<long>(vals.size()) != t.size())
      throw std::invalid_argument("value count does not match shape");
    long i = 0;
    for (Scalar v : vals) t.data[i++] = v;
    return t;
  }
};

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& expected,
                   const char* what) {
  if (t.shape != expected)
    throw std::invalid_argument(std::string(what) + ": expected shape " +
                                shape_str(expected) + ", received " +
                                shape_str(t.shape));
}

}  // namespace simex
