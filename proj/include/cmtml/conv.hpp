#pragma once

#include <string>
#include <vector>

#include "cmtml/common.hpp"

namespace cmtml {

// Feature maps are stored as (channels x positions) matrices. A 1-D sequence
// of length l has l positions; a 2-D proposal map has l*l positions with cell
// (x, y) at column x*l + y.

enum class Geometry { Seq1D, Map2D };

struct ConvLayerSpec {
  int kernel = 3;
  int stride = 1;
  int filters = 64;
};

/// Layers are conv -> batch-norm -> pReLU except the last, which is conv ->
/// sigmoid. The last layer's filter count is fixed by the head that owns the
/// stack (1 for proposal maps, 3 for boundary scores).
struct ConvStackConfig {
  std::vector<ConvLayerSpec> layers;

  static ConvStackConfig uniform(int n_layers, int kernel = 3, int filters = 64);
  void validate() const;
};

/// Parametric ReLU: x if x > 0, a*x otherwise.
inline double prelu(double x, double a) { return x > 0.0 ? x : a * x; }

/// d prelu / d a.
inline double prelu_grad_slope(double x) { return x > 0.0 ? 0.0 : x; }

/// Stride-1, same-padded convolution over a 1-D or 2-D grid of side l.
class Conv {
 public:
  Conv() = default;
  Conv(Geometry geo, int l, int in_channels, int out_channels, int kernel, bool bias);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);

  Mat forward(const Mat& x) const;
  /// Accumulates parameter grads; returns dL/dx.
  Mat backward(const Mat& x, const Mat& dy);

  Param& weight() { return W_; }
  Param& bias() { return b_; }
  bool has_bias() const { return has_bias_; }

  /// im2col, transposed: positions x (in * k^dims). Column c*k^dims + offset,
  /// with 2-D offsets ordered (dx, dy) row-major.
  Mat unfold(const Mat& x) const;
  Mat fold(const Mat& cols) const;

 private:
  Geometry geo_ = Geometry::Seq1D;
  int l_ = 0, in_ = 0, out_ = 0, k_ = 1;
  bool has_bias_ = true;
  Param W_;
  Param b_;
};

/// Convolution applied to the implicit boundary-pairing map of a sequence:
/// base cell (x, y) holds [F[:, x]; F[:, y]] (2P channels). Weights use the
/// same layout as a Conv over 2P input channels, so the result equals
/// Conv::forward on the explicit base map, without materialising it.
class PairConv {
 public:
  PairConv() = default;
  PairConv(int l, int in_channels, int out_channels, int kernel, bool bias);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);

  /// F is P x l; returns out x l*l.
  Mat forward(const Mat& F) const;
  Mat backward(const Mat& F, const Mat& dy);

  Param& weight() { return W_; }
  Param& bias() { return b_; }

 private:
  // Weight block acting on channel half `half` (0: start column, 1: end column) at offset (a, b).
  Mat block(int half, int a, int b) const;

  int l_ = 0, in_ = 0, out_ = 0, k_ = 1;
  bool has_bias_ = true;
  Param W_;  // out x (2 * in * k * k)
  Param b_;
};

/// Builds the explicit boundary-pairing base map (2P x l*l).
Mat pair_base_map(const Mat& F);

/// Per-channel batch normalisation over all samples and positions.
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);

  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);

  struct Cache {
    std::vector<Mat> xhat;
    Vec invstd;
    bool train = false;
  };

  /// Training mode uses batch statistics and updates the running estimates.
  std::vector<Mat> forward(const std::vector<Mat>& xs, bool train, Cache* cache);
  std::vector<Mat> backward(const Cache& cache, const std::vector<Mat>& dys);

  Mat& running_mean() { return running_mean_; }
  Mat& running_var() { return running_var_; }

 private:
  int c_ = 0;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Param gamma_, beta_;
  Mat running_mean_, running_var_;
};

class ConvStack {
 public:
  ConvStack() = default;
  /// pair_input: the first layer is a PairConv over a P x l sequence and the
  /// stack runs on the l x l grid.
  ConvStack(const ConvStackConfig& cfg, Geometry geo, int l, int in_channels, int out_channels,
            bool pair_input = false);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn);

  struct Cache {
    std::vector<std::vector<Mat>> inputs;  // per layer, per sample
    std::vector<BatchNorm::Cache> bn;
    std::vector<std::vector<Mat>> pre_act;  // batch-norm outputs
    std::vector<Mat> out;                   // sigmoid outputs
  };

  /// Sigmoid outputs, one (out_channels x positions) matrix per sample.
  std::vector<Mat> forward(const std::vector<Mat>& inputs, bool train, Cache* cache);
  std::vector<Mat> backward(const Cache& cache, const std::vector<Mat>& d_out);

  std::size_t depth() const { return convs_.size(); }
  Conv& conv(std::size_t i) { return convs_[i]; }
  PairConv& pair_conv() { return pair_; }
  Param& prelu_slope(std::size_t i) { return slopes_[i]; }

 private:
  Mat conv_forward(std::size_t layer, const Mat& x) const;
  Mat conv_backward(std::size_t layer, const Mat& x, const Mat& dy);

  bool pair_input_ = false;
  PairConv pair_;
  std::vector<Conv> convs_;  // convs_[0] unused when pair_input_
  std::vector<BatchNorm> bns_;
  std::vector<Param> slopes_;
};

}  // namespace cmtml
