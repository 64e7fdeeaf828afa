#include "cmtml/conv.hpp"

#include <algorithm>

namespace cmtml {

ConvStackConfig ConvStackConfig::uniform(int n_layers, int kernel, int filters) {
  ConvStackConfig cfg;
  cfg.layers.assign(static_cast<std::size_t>(n_layers), ConvLayerSpec{kernel, 1, filters});
  return cfg;
}

void ConvStackConfig::validate() const {
  if (layers.empty()) throw ConfigError("conv stack needs at least one layer");
  for (const auto& layer : layers) {
    if (layer.kernel < 1 || layer.kernel % 2 == 0) throw ConfigError("conv kernel size must be odd and positive");
    // Every stack must keep the l-clip (or l x l) grid intact for the map heads.
    if (layer.stride != 1) throw ConfigError("only stride 1 is supported (the proposal grid must keep its size)");
    if (layer.filters < 1) throw ConfigError("conv filter count must be positive");
  }
}

// ---- Conv -----------------------------------------------------------------

Conv::Conv(Geometry geo, int l, int in_channels, int out_channels, int kernel, bool bias)
    : geo_(geo), l_(l), in_(in_channels), out_(out_channels), k_(kernel), has_bias_(bias) {
  const int taps = geo == Geometry::Map2D ? kernel * kernel : kernel;
  W_ = Param(out_channels, in_channels * taps);
  b_ = Param(out_channels, 1);
}

void Conv::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(W_.value.cols()));
  uniform_fill(W_.value, bound, rng);
  if (has_bias_) uniform_fill(b_.value, bound, rng);
}

void Conv::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "W", W_);
  if (has_bias_) fn(prefix + "b", b_);
}

Mat Conv::unfold(const Mat& x) const {
  const int r = k_ / 2;
  const Mat xt = x.transpose();  // positions x channels
  if (geo_ == Geometry::Seq1D) {
    Mat cols = Mat::Zero(l_, static_cast<Eigen::Index>(in_) * k_);
    for (int c = 0; c < in_; ++c) {
      for (int a = -r; a <= r; ++a) {
        const int lo = std::max(0, -a);
        const int hi = std::min(l_, l_ - a);
        if (hi <= lo) continue;
        cols.col(c * k_ + a + r).segment(lo, hi - lo) = xt.col(c).segment(lo + a, hi - lo);
      }
    }
    return cols;
  }
  const int kk = k_ * k_;
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(l_) * l_, static_cast<Eigen::Index>(in_) * kk);
  for (int c = 0; c < in_; ++c) {
    for (int a = -r; a <= r; ++a) {
      for (int b = -r; b <= r; ++b) {
        const Eigen::Index j = static_cast<Eigen::Index>(c) * kk + (a + r) * k_ + (b + r);
        const int ylo = std::max(0, -b);
        const int yhi = std::min(l_, l_ - b);
        if (yhi <= ylo) continue;
        for (int x = std::max(0, -a); x < std::min(l_, l_ - a); ++x) {
          cols.col(j).segment(x * l_ + ylo, yhi - ylo) = xt.col(c).segment((x + a) * l_ + ylo + b, yhi - ylo);
        }
      }
    }
  }
  return cols;
}

Mat Conv::fold(const Mat& cols) const {
  const int r = k_ / 2;
  const Eigen::Index positions = cols.rows();
  Mat xt = Mat::Zero(positions, in_);
  if (geo_ == Geometry::Seq1D) {
    for (int c = 0; c < in_; ++c) {
      for (int a = -r; a <= r; ++a) {
        const int lo = std::max(0, -a);
        const int hi = std::min(l_, l_ - a);
        if (hi <= lo) continue;
        xt.col(c).segment(lo + a, hi - lo) += cols.col(c * k_ + a + r).segment(lo, hi - lo);
      }
    }
    return xt.transpose();
  }
  const int kk = k_ * k_;
  for (int c = 0; c < in_; ++c) {
    for (int a = -r; a <= r; ++a) {
      for (int b = -r; b <= r; ++b) {
        const Eigen::Index j = static_cast<Eigen::Index>(c) * kk + (a + r) * k_ + (b + r);
        const int ylo = std::max(0, -b);
        const int yhi = std::min(l_, l_ - b);
        if (yhi <= ylo) continue;
        for (int x = std::max(0, -a); x < std::min(l_, l_ - a); ++x) {
          xt.col(c).segment((x + a) * l_ + ylo + b, yhi - ylo) += cols.col(j).segment(x * l_ + ylo, yhi - ylo);
        }
      }
    }
  }
  return xt.transpose();
}

Mat Conv::forward(const Mat& x) const {
  const Eigen::Index positions = geo_ == Geometry::Map2D ? static_cast<Eigen::Index>(l_) * l_ : l_;
  if (x.rows() != in_ || x.cols() != positions) {
    throw ConfigError("conv: expected " + std::to_string(in_) + "x" + std::to_string(positions) + " input, got " +
                      std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
  }
  Mat y;
  if (k_ == 1) {
    y = W_.value * x;
  } else {
    y = W_.value * unfold(x).transpose();
  }
  if (has_bias_) y.colwise() += b_.value.col(0);
  return y;
}

Mat Conv::backward(const Mat& x, const Mat& dy) {
  if (has_bias_) b_.grad += dy.rowwise().sum();
  if (k_ == 1) {
    W_.grad.noalias() += dy * x.transpose();
    return W_.value.transpose() * dy;
  }
  const Mat cols = unfold(x);
  W_.grad.noalias() += dy * cols;
  const Mat dcols = dy.transpose() * W_.value;
  return fold(dcols);
}

// ---- PairConv ---------------------------------------------------------------

PairConv::PairConv(int l, int in_channels, int out_channels, int kernel, bool bias)
    : l_(l), in_(in_channels), out_(out_channels), k_(kernel), has_bias_(bias),
      W_(out_channels, 2 * in_channels * kernel * kernel), b_(out_channels, 1) {}

void PairConv::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(W_.value.cols()));
  uniform_fill(W_.value, bound, rng);
  if (has_bias_) uniform_fill(b_.value, bound, rng);
}

void PairConv::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "W", W_);
  if (has_bias_) fn(prefix + "b", b_);
}

Mat PairConv::block(int half, int a, int b) const {
  const int r = k_ / 2;
  const int kk = k_ * k_;
  Mat out(out_, in_);
  for (int c = 0; c < in_; ++c) {
    out.col(c) = W_.value.col(static_cast<Eigen::Index>(half * in_ + c) * kk + (a + r) * k_ + (b + r));
  }
  return out;
}

Mat PairConv::forward(const Mat& F) const {
  if (F.rows() != in_ || F.cols() != l_) {
    throw ConfigError("pair conv: expected " + std::to_string(in_) + "x" + std::to_string(l_) + " features");
  }
  const int r = k_ / 2;
  Mat y = Mat::Zero(out_, static_cast<Eigen::Index>(l_) * l_);
  for (int a = -r; a <= r; ++a) {
    for (int b = -r; b <= r; ++b) {
      const Mat A = block(0, a, b) * F;
      const Mat B = block(1, a, b) * F;
      const int ylo = std::max(0, -b);
      const int yhi = std::min(l_, l_ - b);
      if (yhi <= ylo) continue;
      for (int x = std::max(0, -a); x < std::min(l_, l_ - a); ++x) {
        auto seg = y.middleCols(x * l_ + ylo, yhi - ylo);
        seg.colwise() += A.col(x + a);
        seg += B.middleCols(ylo + b, yhi - ylo);
      }
    }
  }
  if (has_bias_) y.colwise() += b_.value.col(0);
  return y;
}

Mat PairConv::backward(const Mat& F, const Mat& dy) {
  const int r = k_ / 2;
  const int kk = k_ * k_;
  if (has_bias_) b_.grad += dy.rowwise().sum();
  Mat dF = Mat::Zero(in_, l_);
  for (int a = -r; a <= r; ++a) {
    for (int b = -r; b <= r; ++b) {
      Mat dA = Mat::Zero(out_, l_);
      Mat dB = Mat::Zero(out_, l_);
      const int ylo = std::max(0, -b);
      const int yhi = std::min(l_, l_ - b);
      if (yhi <= ylo) continue;
      for (int x = std::max(0, -a); x < std::min(l_, l_ - a); ++x) {
        const auto seg = dy.middleCols(x * l_ + ylo, yhi - ylo);
        dA.col(x + a) += seg.rowwise().sum();
        dB.middleCols(ylo + b, yhi - ylo) += seg;
      }
      const Mat gA = dA * F.transpose();
      const Mat gB = dB * F.transpose();
      for (int c = 0; c < in_; ++c) {
        const Eigen::Index off = (a + r) * k_ + (b + r);
        W_.grad.col(static_cast<Eigen::Index>(c) * kk + off) += gA.col(c);
        W_.grad.col(static_cast<Eigen::Index>(in_ + c) * kk + off) += gB.col(c);
      }
      dF.noalias() += block(0, a, b).transpose() * dA + block(1, a, b).transpose() * dB;
    }
  }
  return dF;
}

Mat pair_base_map(const Mat& F) {
  const Eigen::Index P = F.rows();
  const Eigen::Index l = F.cols();
  Mat out(2 * P, l * l);
  for (Eigen::Index x = 0; x < l; ++x) {
    for (Eigen::Index y = 0; y < l; ++y) {
      out.col(x * l + y) << F.col(x), F.col(y);
    }
  }
  return out;
}

// ---- BatchNorm --------------------------------------------------------------

BatchNorm::BatchNorm(int channels, double momentum, double eps)
    : c_(channels), momentum_(momentum), eps_(eps), gamma_(channels, 1), beta_(channels, 1),
      running_mean_(Mat::Zero(channels, 1)), running_var_(Mat::Ones(channels, 1)) {
  gamma_.value.setOnes();
}

void BatchNorm::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "gamma", gamma_);
  fn(prefix + "beta", beta_);
}

void BatchNorm::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  fn(prefix + "running_mean", running_mean_);
  fn(prefix + "running_var", running_var_);
}

std::vector<Mat> BatchNorm::forward(const std::vector<Mat>& xs, bool train, Cache* cache) {
  Vec mean, var;
  if (train) {
    double n = 0.0;
    mean = Vec::Zero(c_);
    for (const auto& x : xs) {
      mean += x.rowwise().sum();
      n += static_cast<double>(x.cols());
    }
    mean /= n;
    var = Vec::Zero(c_);
    for (const auto& x : xs) var += (x.colwise() - mean).array().square().rowwise().sum().matrix();
    var /= n;
    const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
    running_mean_.col(0) = (1.0 - momentum_) * running_mean_.col(0) + momentum_ * mean;
    running_var_.col(0) = (1.0 - momentum_) * running_var_.col(0) + momentum_ * unbias * var;
  } else {
    mean = running_mean_.col(0);
    var = running_var_.col(0);
  }
  const Vec invstd = (var.array() + eps_).rsqrt().matrix();
  std::vector<Mat> out;
  out.reserve(xs.size());
  if (cache) {
    cache->xhat.clear();
    cache->invstd = invstd;
    cache->train = train;
  }
  for (const auto& x : xs) {
    Mat xhat = invstd.asDiagonal() * (x.colwise() - mean);
    Mat y = gamma_.value.col(0).asDiagonal() * xhat;
    y.colwise() += beta_.value.col(0);
    out.push_back(std::move(y));
    if (cache) cache->xhat.push_back(std::move(xhat));
  }
  return out;
}

std::vector<Mat> BatchNorm::backward(const Cache& cache, const std::vector<Mat>& dys) {
  Vec sum_dy = Vec::Zero(c_);
  Vec sum_dy_xhat = Vec::Zero(c_);
  double n = 0.0;
  for (std::size_t i = 0; i < dys.size(); ++i) {
    sum_dy += dys[i].rowwise().sum();
    sum_dy_xhat += dys[i].cwiseProduct(cache.xhat[i]).rowwise().sum();
    n += static_cast<double>(dys[i].cols());
  }
  gamma_.grad.col(0) += sum_dy_xhat;
  beta_.grad.col(0) += sum_dy;
  const Vec g = gamma_.value.col(0);
  std::vector<Mat> dxs;
  dxs.reserve(dys.size());
  for (std::size_t i = 0; i < dys.size(); ++i) {
    if (cache.train) {
      // dx = gamma * invstd / n * (n dy - sum(dy) - xhat * sum(dy * xhat))
      Mat t = dys[i] * n;
      t.colwise() -= sum_dy;
      t -= sum_dy_xhat.asDiagonal() * cache.xhat[i];
      dxs.push_back((g.cwiseProduct(cache.invstd) / n).asDiagonal() * t);
    } else {
      dxs.push_back(g.cwiseProduct(cache.invstd).asDiagonal() * dys[i]);
    }
  }
  return dxs;
}

// ---- ConvStack --------------------------------------------------------------

ConvStack::ConvStack(const ConvStackConfig& cfg, Geometry geo, int l, int in_channels, int out_channels,
                     bool pair_input)
    : pair_input_(pair_input) {
  cfg.validate();
  if (pair_input && geo != Geometry::Map2D) throw ConfigError("pair input requires a 2-D stack");
  const std::size_t n = cfg.layers.size();
  int in = in_channels;
  for (std::size_t i = 0; i < n; ++i) {
    const bool last = i + 1 == n;
    const int out = last ? out_channels : cfg.layers[i].filters;
    // Layers followed by batch-norm carry no bias (it would be cancelled).
    if (i == 0 && pair_input) {
      pair_ = PairConv(l, in, out, cfg.layers[i].kernel, last);
      convs_.emplace_back();
    } else {
      convs_.emplace_back(geo, l, in, out, cfg.layers[i].kernel, last);
    }
    if (!last) {
      bns_.emplace_back(out);
      Param a(1, 1);
      a.value(0, 0) = 0.25;
      slopes_.push_back(std::move(a));
    }
    in = out;
  }
}

void ConvStack::init(Rng& rng) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    if (i == 0 && pair_input_) {
      pair_.init(rng);
    } else {
      convs_[i].init(rng);
    }
  }
}

void ConvStack::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string lp = prefix + "layer" + std::to_string(i) + ".";
    if (i == 0 && pair_input_) {
      pair_.visit(lp + "conv.", fn);
    } else {
      convs_[i].visit(lp + "conv.", fn);
    }
    if (i < bns_.size()) {
      bns_[i].visit(lp + "bn.", fn);
      fn(lp + "prelu", slopes_[i]);
    }
  }
}

void ConvStack::visit_buffers(const std::string& prefix, const BufferVisitor& fn) {
  for (std::size_t i = 0; i < bns_.size(); ++i) bns_[i].visit_buffers(prefix + "layer" + std::to_string(i) + ".bn.", fn);
}

Mat ConvStack::conv_forward(std::size_t layer, const Mat& x) const {
  return layer == 0 && pair_input_ ? pair_.forward(x) : convs_[layer].forward(x);
}

Mat ConvStack::conv_backward(std::size_t layer, const Mat& x, const Mat& dy) {
  return layer == 0 && pair_input_ ? pair_.backward(x, dy) : convs_[layer].backward(x, dy);
}

std::vector<Mat> ConvStack::forward(const std::vector<Mat>& inputs, bool train, Cache* cache) {
  const std::size_t n = convs_.size();
  if (cache) {
    cache->inputs.assign(n, {});
    cache->bn.assign(bns_.size(), {});
    cache->pre_act.assign(bns_.size(), {});
  }
  std::vector<Mat> x = inputs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Mat> z;
    z.reserve(x.size());
    for (const auto& xi : x) z.push_back(conv_forward(i, xi));
    if (cache) cache->inputs[i] = std::move(x);
    if (i + 1 == n) {
      for (auto& zi : z) zi = sigmoid(zi);
      if (cache) cache->out = z;
      return z;
    }
    std::vector<Mat> y = bns_[i].forward(z, train, cache ? &cache->bn[i] : nullptr);
    const double a = slopes_[i].value(0, 0);
    x.clear();
    for (const auto& yi : y) x.push_back(yi.unaryExpr([a](double v) { return prelu(v, a); }));
    if (cache) cache->pre_act[i] = std::move(y);
  }
  return x;
}

std::vector<Mat> ConvStack::backward(const Cache& cache, const std::vector<Mat>& d_out) {
  const std::size_t n = convs_.size();
  std::vector<Mat> d(d_out.size());
  for (std::size_t s = 0; s < d_out.size(); ++s) {
    const Mat& o = cache.out[s];
    const Mat dz = d_out[s].cwiseProduct((o.array() * (1.0 - o.array())).matrix());
    d[s] = conv_backward(n - 1, cache.inputs[n - 1][s], dz);
  }
  for (std::size_t i = n - 1; i-- > 0;) {
    const double a = slopes_[i].value(0, 0);
    double da = 0.0;
    std::vector<Mat> dy(d.size());
    for (std::size_t s = 0; s < d.size(); ++s) {
      const Mat& y = cache.pre_act[i][s];
      da += (y.array() > 0.0).select(0.0, d[s].array() * y.array()).sum();
      dy[s] = (y.array() > 0.0).select(d[s].array(), a * d[s].array()).matrix();
    }
    slopes_[i].grad(0, 0) += da;
    std::vector<Mat> dz = bns_[i].backward(cache.bn[i], dy);
    for (std::size_t s = 0; s < d.size(); ++s) d[s] = conv_backward(i, cache.inputs[i][s], dz[s]);
  }
  return d;
}

}  // namespace cmtml
