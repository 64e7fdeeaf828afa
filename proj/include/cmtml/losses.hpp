#pragma once

#include <string>
#include <vector>

#include "cmtml/common.hpp"
#include "cmtml/data_io.hpp"
#include "cmtml/proposal.hpp"

namespace cmtml {

struct LossConfig {
  double lambda_local = 2.0;
  double lambda_m = 2.0;
  double soft_label_sigma = 1.0;  // clips
  double epsilon = 1e-8;

  void validate() const;
};

struct GroundTruthTargets {
  ProposalMap iou_map;  // l x l, zero below the diagonal
  Vec gt_start;         // distribution over clips
  Vec gt_end;
  Vec gt_momentness;    // 0/1 indicator
};

/// IoU of inclusive clip spans [a_start, a_end] and [b_start, b_end].
double interval_iou(int a_start, int a_end, int b_start, int b_end);

/// Normalised discrete Gaussian over l clips centred at `center`. A
/// non-positive sigma gives the one-hot limit.
Vec soft_label(int center, int l, double sigma);

GroundTruthTargets build_targets(const MomentAnnotation& ann, int l, const LossConfig& cfg);

/// Mean binary cross-entropy over cells where mask == 1; predictions are
/// clamped to [eps, 1 - eps].
double map_loss(const ProposalMap& pred, const ProposalMap& target, const ProposalMap& mask, double eps = 1e-8);
ProposalMap map_loss_grad(const ProposalMap& pred, const ProposalMap& target, const ProposalMap& mask,
                          double eps = 1e-8);

/// sum_i P(i) log((P(i) + eps) / (Q(i) + eps)).
double kl_div(const Vec& P, const Vec& Q, double eps);

/// KL between the L1-normalised prediction and Q, with its gradient w.r.t.
/// the un-normalised prediction.
double normalized_kl(const Vec& pred, const Vec& Q, double eps, Vec* grad);

struct LocalLossResult {
  double value = 0.0;
  BoundaryScores grad;
  bool degenerate_momentness = false;
};

/// K(start || gt_s) + K(end || gt_e) + lambda_m * K(momentness || gt_m).
LocalLossResult local_loss(const BoundaryScores& pred, const GroundTruthTargets& targets, const LossConfig& cfg);

inline double total_loss(double map_loss_value, double local_loss_value, const LossConfig& cfg) {
  return map_loss_value + cfg.lambda_local * local_loss_value;
}

}  // namespace cmtml
