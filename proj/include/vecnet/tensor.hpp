#pragma once

// Dense row-major float64 tensor. Small, contiguous, CPU-only; every numeric
// stage of the pipeline (network, losses, metrics) runs on this type.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vecnet::core {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    v_.assign(count(shape_), 0.0);
  }

  Tensor(std::initializer_list<int> shape, double fill)
      : shape_(shape) {
    v_.assign(count(shape_), fill);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.v_.begin(), t.v_.end(), value);
    return t;
  }

  static Tensor scalar(double value) { return full({1}, value); }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    if (count(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("Tensor::from: shape/data size mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.v_ = std::move(data);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& vec() { return v_; }
  const std::vector<double>& vec() const { return v_; }

  double& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

  // [C,H,W] indexing
  double& at3(int c, int y, int x) {
    return v_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at3(int c, int y, int x) const {
    return v_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  // [H,W] indexing
  double& at2(int y, int x) { return v_[static_cast<std::size_t>(y) * shape_[1] + x]; }
  double at2(int y, int x) const { return v_[static_cast<std::size_t>(y) * shape_[1] + x]; }

  void fill(double value) { std::fill(v_.begin(), v_.end(), value); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double min() const { return v_.empty() ? 0.0 : *std::min_element(v_.begin(), v_.end()); }
  double max() const { return v_.empty() ? 0.0 : *std::max_element(v_.begin(), v_.end()); }

  double mean() const {
    if (v_.empty()) return 0.0;
    double s = 0.0;
    for (double x : v_) s += x;
    return s / static_cast<double>(v_.size());
  }

  double max_abs_diff(const Tensor& o) const {
    if (!same_shape(o)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < v_.size(); ++i) m = std::max(m, std::abs(v_[i] - o.v_[i]));
    return m;
  }

  // 2-D Eigen views: rows x cols must cover the whole buffer.
  MatMap mat(int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != size())
      throw std::invalid_argument("Tensor::mat: view size mismatch");
    return MatMap(v_.data(), rows, cols);
  }
  ConstMatMap mat(int rows, int cols) const {
    if (static_cast<std::int64_t>(rows) * cols != size())
      throw std::invalid_argument("Tensor::mat: view size mismatch");
    return ConstMatMap(v_.data(), rows, cols);
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
  }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = shape.empty() ? 0 : 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> v_;
};

inline void check_shape(const Tensor& t, const std::vector<int>& want, const char* where) {
  if (t.shape() != want) {
    std::ostringstream os;
    os << where << ": expected shape [";
    for (std::size_t i = 0; i < want.size(); ++i) os << (i ? "," : "") << want[i];
    os << "], got " << t.shape_str();
    throw std::invalid_argument(os.str());
  }
}

}  // namespace vecnet::core
