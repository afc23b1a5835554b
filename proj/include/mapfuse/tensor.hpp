#pragma once

#include <Eigen/Dense>
#include <array>
#include <numeric>
#include <sstream>
#include <string>

#include "mapfuse/common.hpp"

namespace mapfuse::nn {

// Dense tensor over contiguous row-major storage. Rank 1 (bias vectors),
// rank 2 (rows, cols), rank 3 (channels, height, width) or rank 4
// (out_channels, in_channels, kh, kw) for convolution weights.
template <typename Scalar>
struct Tensor {
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixRM =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<MatrixRM>;
  using ConstMatMap = Eigen::Map<const MatrixRM>;

  int rank = 0;
  std::array<Eigen::Index, 4> dim{{0, 0, 0, 0}};
  Storage data;

  Tensor() = default;

  static Tensor vec(Eigen::Index n) {
    Tensor t;
    t.rank = 1;
    t.dim = {n, 0, 0, 0};
    t.data = Storage::Zero(n);
    return t;
  }
  static Tensor mat(Eigen::Index rows, Eigen::Index cols) {
    Tensor t;
    t.rank = 2;
    t.dim = {rows, cols, 0, 0};
    t.data = Storage::Zero(rows * cols);
    return t;
  }
  static Tensor chw(Eigen::Index c, Eigen::Index h, Eigen::Index w) {
    Tensor t;
    t.rank = 3;
    t.dim = {c, h, w, 0};
    t.data = Storage::Zero(c * h * w);
    return t;
  }
  static Tensor conv_weight(Eigen::Index out, Eigen::Index in, Eigen::Index kh,
                            Eigen::Index kw) {
    Tensor t;
    t.rank = 4;
    t.dim = {out, in, kh, kw};
    t.data = Storage::Zero(out * in * kh * kw);
    return t;
  }

  static Tensor zeros_like(const Tensor& other) {
    Tensor t;
    t.rank = other.rank;
    t.dim = other.dim;
    t.data = Storage::Zero(other.data.size());
    return t;
  }

  Eigen::Index size() const { return data.size(); }

  Eigen::Index channels() const { return dim[0]; }
  Eigen::Index height() const { return rank == 3 ? dim[1] : dim[2]; }
  Eigen::Index width() const { return rank == 3 ? dim[2] : dim[3]; }
  Eigen::Index rows() const { return dim[0]; }
  Eigen::Index cols() const { return dim[1]; }

  bool same_shape(const Tensor& o) const {
    return rank == o.rank && dim == o.dim;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank; ++i) os << (i ? "," : "") << dim[i];
    os << ')';
    return os.str();
  }

  // Rank-2 view (rows x cols).
  MatMap matrix() { return MatMap(data.data(), dim[0], dim[1]); }
  ConstMatMap matrix() const { return ConstMatMap(data.data(), dim[0], dim[1]); }

  // Rank-3: one channel as an h x w matrix view.
  MatMap channel(Eigen::Index c) {
    return MatMap(data.data() + c * dim[1] * dim[2], dim[1], dim[2]);
  }
  ConstMatMap channel(Eigen::Index c) const {
    return ConstMatMap(data.data() + c * dim[1] * dim[2], dim[1], dim[2]);
  }

  // Rank-3 tensor flattened to (channels x height*width); rank-4 weights
  // flattened to (out x in*kh*kw).
  MatMap flat2d() {
    return MatMap(data.data(), dim[0], data.size() / std::max<Eigen::Index>(dim[0], 1));
  }
  ConstMatMap flat2d() const {
    return ConstMatMap(data.data(), dim[0],
                       data.size() / std::max<Eigen::Index>(dim[0], 1));
  }

  Scalar& at(Eigen::Index i) { return data[i]; }
  Scalar at(Eigen::Index i) const { return data[i]; }

  bool all_finite() const { return data.isFinite().all(); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t;
    t.rank = rank;
    t.dim = dim;
    t.data = data.template cast<T>();
    return t;
  }
};

inline void check_same_shape(const char* op, int rank_a,
                             const std::array<Eigen::Index, 4>& a, int rank_b,
                             const std::array<Eigen::Index, 4>& b) {
  if (rank_a != rank_b || a != b) {
    std::ostringstream os;
    os << op << ": operand shapes differ";
    throw ShapeError(os.str());
  }
}

}  // namespace mapfuse::nn
