#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cmtml {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Error categories surfaced by the library. Callers distinguish them by type.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AnnotationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A learnable tensor and its accumulated gradient. Vectors are stored as
/// n x 1 matrices so that every parameter has the same representation.
struct Param {
  Mat value;
  Mat grad;

  Param() = default;
  Param(Eigen::Index rows, Eigen::Index cols)
      : value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

using ParamVisitor = std::function<void(const std::string& name, Param& p)>;

/// Non-learnable state that still has to survive a checkpoint (batch-norm
/// running statistics).
using BufferVisitor = std::function<void(const std::string& name, Mat& m)>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec sigmoid(const Vec& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

inline Mat sigmoid(const Mat& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

/// Numerically stable softmax (max subtraction).
inline Vec softmax(const Vec& x) {
  Vec e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

/// Backward through softmax: returns dL/dx given y = softmax(x) and dL/dy.
inline Vec softmax_backward(const Vec& y, const Vec& dy) {
  return (y.array() * (dy.array() - y.dot(dy))).matrix();
}

/// Uniform(-bound, bound) fill.
inline void uniform_fill(Mat& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

inline void check_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols,
                        std::string_view what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError(std::string(what) + ": expected shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", got " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()));
  }
}

}  // namespace cmtml
