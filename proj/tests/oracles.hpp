// Independent scalar-loop reference implementations shared by the unit tests
// and the acceptance binary. Nothing here calls into the vectorised code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cmtml/model.hpp"
#include "cmtml/metrics.hpp"

namespace oracle {

using cmtml::Mat;
using cmtml::Vec;

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Vec random_vec(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_mat(n, 1, rng, scale);
}

// sum_j M(r, j) * x(j)
inline double row_dot(const Mat& M, int r, const Vec& x) {
  double s = 0.0;
  for (int j = 0; j < x.size(); ++j) s += M(r, j) * x(j);
  return s;
}

struct ScalarState {
  std::vector<double> h, c;
};

/// Standard LSTM with gate rows [f; i; o; candidate].
inline ScalarState lstm_step(const Vec& x, const ScalarState& s, const cmtml::LstmParams& P) {
  const int p = static_cast<int>(P.hidden());
  const Mat& W = P.W.value;
  const Mat& U = P.U.value;
  const Mat& b = P.b.value;
  Vec h(p);
  for (int j = 0; j < p; ++j) h(j) = s.h[j];
  ScalarState out{std::vector<double>(p), std::vector<double>(p)};
  for (int j = 0; j < p; ++j) {
    const double f = sig(row_dot(W, j, x) + row_dot(U, j, h) + b(j, 0));
    const double i = sig(row_dot(W, p + j, x) + row_dot(U, p + j, h) + b(p + j, 0));
    const double o = sig(row_dot(W, 2 * p + j, x) + row_dot(U, 2 * p + j, h) + b(2 * p + j, 0));
    const double g = std::tanh(row_dot(W, 3 * p + j, x) + row_dot(U, 3 * p + j, h) + b(3 * p + j, 0));
    out.c[j] = f * s.c[j] + i * g;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

/// Cross-modal cell, coordinate by coordinate.
inline ScalarState cm_lstm_step(const Vec& v, const Vec& q, const ScalarState& s, const cmtml::CmLstmParams& P) {
  const int p = static_cast<int>(P.hidden());
  Vec h(p);
  for (int j = 0; j < p; ++j) h(j) = s.h[j];

  std::vector<double> u(p);
  for (int j = 0; j < p; ++j) u[j] = std::tanh(row_dot(P.Wc.value, j, q) + row_dot(P.Wd.value, j, v));
  std::vector<double> z(p);
  double zmax = -1e300;
  for (int j = 0; j < p; ++j) {
    z[j] = 0.0;
    for (int k = 0; k < p; ++k) z[j] += P.We.value(j, k) * u[k];
    zmax = std::max(zmax, z[j]);
  }
  double zsum = 0.0;
  for (int j = 0; j < p; ++j) zsum += std::exp(z[j] - zmax);

  ScalarState out{std::vector<double>(p), std::vector<double>(p)};
  for (int j = 0; j < p; ++j) {
    const double a = std::exp(z[j] - zmax) / zsum;
    const double rec = row_dot(P.Uc.value, j, h);
    const double vt = std::tanh(a * row_dot(P.Wv.value, j, v) + rec);
    const double st = std::tanh(a * row_dot(P.Ws.value, j, q) + rec);
    auto gate = [&](int block) {
      const int r = block * p + j;
      return sig(row_dot(P.Wx.value, r, v) + row_dot(P.Wy.value, r, q) + row_dot(P.U.value, r, h) + P.b.value(r, 0));
    };
    const double f = gate(0), i = gate(1), m = gate(2), o = gate(3);
    const double cand = m * vt + (1.0 - m) * st;
    out.c[j] = f * s.c[j] + i * cand;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

inline double interval_iou(int as, int ae, int bs, int be) {
  int inter = 0, uni = 0;
  for (int t = std::min(as, bs); t <= std::max(ae, be); ++t) {
    const bool in_a = t >= as && t <= ae;
    const bool in_b = t >= bs && t <= be;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

inline Mat iou_map(int l, int s, int e) {
  Mat m = Mat::Zero(l, l);
  for (int x = 0; x < l; ++x)
    for (int y = 0; y < l; ++y)
      if (x <= y) m(x, y) = interval_iou(x, y, s, e);
  return m;
}

inline double bce(const Mat& pred, const Mat& target, double eps) {
  double sum = 0.0;
  int n = 0;
  for (int x = 0; x < pred.rows(); ++x) {
    for (int y = 0; y < pred.cols(); ++y) {
      if (x > y) continue;
      double p = pred(x, y);
      if (p < eps) p = eps;
      if (p > 1.0 - eps) p = 1.0 - eps;
      sum += -(target(x, y) * std::log(p) + (1.0 - target(x, y)) * std::log(1.0 - p));
      ++n;
    }
  }
  return sum / n;
}

inline double kl(const Vec& P, const Vec& Q, double eps) {
  double s = 0.0;
  for (int i = 0; i < P.size(); ++i) s += P(i) * std::log((P(i) + eps) / (Q(i) + eps));
  return s;
}

inline Vec l1_normalize(const Vec& v) {
  double s = 0.0;
  for (int i = 0; i < v.size(); ++i) s += v(i);
  Vec out(v.size());
  for (int i = 0; i < v.size(); ++i) out(i) = v(i) / s;
  return out;
}

inline Vec gaussian_label(int center, int l, double sigma) {
  Vec v(l);
  double s = 0.0;
  for (int t = 0; t < l; ++t) {
    v(t) = std::exp(-(t - center) * (t - center) / (2.0 * sigma * sigma));
    s += v(t);
  }
  for (int t = 0; t < l; ++t) v(t) /= s;
  return v;
}

inline double local_loss(const cmtml::BoundaryScores& pred, int s, int e, int l, double sigma, double lambda_m,
                         double eps) {
  Vec m(l);
  for (int t = 0; t < l; ++t) m(t) = (t >= s && t <= e) ? 1.0 : 0.0;
  return kl(l1_normalize(pred.start), gaussian_label(s, l, sigma), eps) +
         kl(l1_normalize(pred.end), gaussian_label(e, l, sigma), eps) +
         lambda_m * kl(l1_normalize(pred.momentness), l1_normalize(m), eps);
}

inline double seconds_iou(const cmtml::Interval& a, const cmtml::Interval& b) {
  const double lo = std::max(a.start, b.start);
  const double hi = std::min(a.end, b.end);
  const double inter = hi > lo ? hi - lo : 0.0;
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (inter <= 0.0) return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
  return inter / uni;
}

/// Counts hits query by query, prediction by prediction.
inline double recall(const std::vector<std::vector<cmtml::Interval>>& preds, const std::vector<cmtml::Interval>& truths,
                     int n, double m) {
  int hits = 0;
  for (std::size_t q = 0; q < truths.size(); ++q) {
    bool hit = false;
    for (int k = 0; k < n && k < static_cast<int>(preds[q].size()); ++k) {
      if (seconds_iou(preds[q][k], truths[q]) >= m) hit = true;
    }
    hits += hit;
  }
  return static_cast<double>(hits) / truths.size();
}

struct GradCheck {
  std::string name;
  double rel_error = 0.0;
  Eigen::Index entries = 0;
};

/// Central finite differences of `loss` w.r.t. every parameter tensor the model
/// exposes, compared against the analytic gradients already in `Param::grad`.
/// Error per tensor is max|a - n| / max(max|a|, max|n|, 1e-6).
inline std::vector<GradCheck> finite_difference_check(cmtml::TaciModel& model, const std::function<double()>& loss,
                                                      double h = 1e-5) {
  std::vector<GradCheck> out;
  model.visit_params([&](const std::string& name, cmtml::Param& p) {
    const Mat analytic = p.grad;
    Mat numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = loss();
      p.value.data()[i] = keep - h;
      const double down = loss();
      p.value.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), 1e-6});
    out.push_back({name, (analytic - numeric).cwiseAbs().maxCoeff() / scale, p.value.size()});
  });
  return out;
}

}  // namespace oracle
