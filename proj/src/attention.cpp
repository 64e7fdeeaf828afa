#include "cmtml/attention.hpp"

namespace cmtml {

AttentionParams::AttentionParams(int d, int k) : Wb(k, d), Ub(k, d), b(k, 1), Wa(k, 1) {
  if (d < 1 || k < 1) throw ConfigError("attention dimensions must be positive");
}

void AttentionParams::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(Wb.value.cols()));
  uniform_fill(Wb.value, bound, rng);
  uniform_fill(Ub.value, bound, rng);
  uniform_fill(b.value, bound, rng);
  uniform_fill(Wa.value, 1.0 / std::sqrt(static_cast<double>(Wa.value.rows())), rng);
}

void AttentionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "Wb", Wb);
  fn(prefix + "Ub", Ub);
  fn(prefix + "b", b);
  fn(prefix + "Wa", Wa);
}

AttentionOutput attend(const Mat& F, const Vec& q, const AttentionParams& params, AttentionCache* cache) {
  const Eigen::Index d = params.Wb.value.cols();
  if (F.rows() != d || q.size() != d) throw ConfigError("attend: feature/query dimension mismatch");
  Mat pre = params.Wb.value * F;
  pre.colwise() += params.Ub.value * q + params.b.value.col(0);
  Mat H = pre.array().tanh().matrix();
  const Vec scores = H.transpose() * params.Wa.value.col(0);
  AttentionOutput out;
  out.weights = softmax(scores);
  out.attended = F * out.weights.asDiagonal();
  if (cache) {
    cache->F = F;
    cache->q = q;
    cache->H = std::move(H);
    cache->weights = out.weights;
  }
  return out;
}

AttentionGrads attend_backward(const AttentionCache& cache, const Mat& d_attended, AttentionParams& params) {
  AttentionGrads g;
  const Vec d_weights = (d_attended.cwiseProduct(cache.F)).colwise().sum().transpose();
  g.dF = d_attended * cache.weights.asDiagonal();
  const Vec d_scores = softmax_backward(cache.weights, d_weights);
  params.Wa.grad.col(0) += cache.H * d_scores;
  const Mat dpre = (params.Wa.value.col(0) * d_scores.transpose()).cwiseProduct(
      (1.0 - cache.H.array().square()).matrix());
  params.Wb.grad.noalias() += dpre * cache.F.transpose();
  const Vec dpre_sum = dpre.rowwise().sum();
  params.Ub.grad.noalias() += dpre_sum * cache.q.transpose();
  params.b.grad.col(0) += dpre_sum;
  g.dF.noalias() += params.Wb.value.transpose() * dpre;
  g.dq = params.Ub.value.transpose() * dpre_sum;
  return g;
}

std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::NA: return "NA";
    case AttentionMode::SA: return "SA";
    case AttentionMode::TA: return "TA";
  }
  return "?";
}

AttentionMode attention_mode_from_string(const std::string& s) {
  if (s == "NA") return AttentionMode::NA;
  if (s == "SA") return AttentionMode::SA;
  if (s == "TA") return AttentionMode::TA;
  throw ConfigError("unknown attention mode '" + s + "'");
}

int stream_count(AttentionMode m) { return m == AttentionMode::TA ? 2 : 1; }

std::vector<Mat> two_stream(const Mat& F, const Vec& q, const AttentionParams& params, AttentionMode mode,
                            TwoStreamCache* cache) {
  if (cache) cache->mode = mode;
  if (mode == AttentionMode::NA) return {F};
  AttentionOutput a = attend(F, q, params, cache ? &cache->attention : nullptr);
  if (mode == AttentionMode::SA) return {std::move(a.attended)};
  return {std::move(a.attended), F};
}

AttentionGrads two_stream_backward(const TwoStreamCache& cache, const std::vector<Mat>& d_streams,
                                   AttentionParams& params) {
  if (cache.mode == AttentionMode::NA) return {d_streams.at(0), Vec::Zero(params.Ub.value.cols())};
  AttentionGrads g = attend_backward(cache.attention, d_streams.at(0), params);
  if (cache.mode == AttentionMode::TA) g.dF += d_streams.at(1);
  return g;
}

}  // namespace cmtml
