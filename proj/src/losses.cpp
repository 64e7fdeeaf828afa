#include "cmtml/losses.hpp"

#include <algorithm>
#include <iostream>

namespace cmtml {

void LossConfig::validate() const {
  if (!(lambda_local > 0.0) || !(lambda_m > 0.0)) throw ConfigError("loss weights must be positive");
  if (soft_label_sigma < 0.0) throw ConfigError("soft_label_sigma must be >= 0");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

double interval_iou(int a_start, int a_end, int b_start, int b_end) {
  if (a_start > a_end || b_start > b_end) throw InputError("interval_iou: start after end");
  const int inter = std::min(a_end, b_end) - std::max(a_start, b_start) + 1;
  if (inter <= 0) return 0.0;
  const int uni = (a_end - a_start + 1) + (b_end - b_start + 1) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Vec soft_label(int center, int l, double sigma) {
  Vec v = Vec::Zero(l);
  if (sigma <= 0.0) {
    v(center) = 1.0;
    return v;
  }
  for (int t = 0; t < l; ++t) {
    const double z = (t - center) / sigma;
    v(t) = std::exp(-0.5 * z * z);
  }
  return v / v.sum();
}

GroundTruthTargets build_targets(const MomentAnnotation& ann, int l, const LossConfig& cfg) {
  if (ann.start_idx < 0 || ann.end_idx >= l || ann.start_idx > ann.end_idx) {
    throw AnnotationError("annotation clip span outside the " + std::to_string(l) + "-clip grid");
  }
  GroundTruthTargets t;
  t.iou_map = ProposalMap::Zero(l, l);
  for (int x = 0; x < l; ++x) {
    for (int y = x; y < l; ++y) t.iou_map(x, y) = interval_iou(x, y, ann.start_idx, ann.end_idx);
  }
  t.gt_start = soft_label(ann.start_idx, l, cfg.soft_label_sigma);
  t.gt_end = soft_label(ann.end_idx, l, cfg.soft_label_sigma);
  t.gt_momentness = Vec::Zero(l);
  t.gt_momentness.segment(ann.start_idx, ann.end_idx - ann.start_idx + 1).setOnes();
  return t;
}

double map_loss(const ProposalMap& pred, const ProposalMap& target, const ProposalMap& mask, double eps) {
  double sum = 0.0;
  double count = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (mask.data()[i] == 0.0) continue;
    const double p = std::clamp(pred.data()[i], eps, 1.0 - eps);
    const double y = target.data()[i];
    sum -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    count += 1.0;
  }
  return count > 0.0 ? sum / count : 0.0;
}

ProposalMap map_loss_grad(const ProposalMap& pred, const ProposalMap& target, const ProposalMap& mask, double eps) {
  const double count = mask.sum();
  ProposalMap g = ProposalMap::Zero(pred.rows(), pred.cols());
  if (count <= 0.0) return g;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    if (mask.data()[i] == 0.0) continue;
    const double raw = pred.data()[i];
    if (raw < eps || raw > 1.0 - eps) continue;  // clamped: flat
    const double y = target.data()[i];
    g.data()[i] = (-y / raw + (1.0 - y) / (1.0 - raw)) / count;
  }
  return g;
}

double kl_div(const Vec& P, const Vec& Q, double eps) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < P.size(); ++i) s += P(i) * std::log((P(i) + eps) / (Q(i) + eps));
  return s;
}

double normalized_kl(const Vec& pred, const Vec& Q, double eps, Vec* grad) {
  const double total = pred.sum();
  const Vec P = pred / total;
  const double value = kl_div(P, Q, eps);
  if (grad) {
    Vec dP(P.size());
    for (Eigen::Index i = 0; i < P.size(); ++i) {
      dP(i) = std::log((P(i) + eps) / (Q(i) + eps)) + P(i) / (P(i) + eps);
    }
    *grad = (dP.array() - dP.dot(P)).matrix() / total;
  }
  return value;
}

LocalLossResult local_loss(const BoundaryScores& pred, const GroundTruthTargets& targets, const LossConfig& cfg) {
  LocalLossResult r;
  const double eps = cfg.epsilon;
  r.value = normalized_kl(pred.start, targets.gt_start, eps, &r.grad.start);
  r.value += normalized_kl(pred.end, targets.gt_end, eps, &r.grad.end);

  Vec q_m;
  const double mass = targets.gt_momentness.sum();
  if (mass > 0.0) {
    q_m = targets.gt_momentness / mass;
  } else {
    r.degenerate_momentness = true;
    std::cerr << "warning: empty momentness target, using a uniform distribution\n";
    q_m = Vec::Constant(targets.gt_momentness.size(), 1.0 / static_cast<double>(targets.gt_momentness.size()));
  }
  Vec g_m;
  r.value += cfg.lambda_m * normalized_kl(pred.momentness, q_m, eps, &g_m);
  r.grad.momentness = cfg.lambda_m * g_m;
  return r;
}

}  // namespace cmtml
