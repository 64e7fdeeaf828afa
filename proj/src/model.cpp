#include "cmtml/model.hpp"

namespace cmtml {

TaciModel::TaciModel(const RunConfig& cfg, int raw_feature_dim, int embedding_dim)
    : cfg_(cfg), d_raw_(raw_feature_dim), emb_dim_(embedding_dim) {
  cfg_.validate();
  const ModelConfig& m = cfg_.model;
  mask_ = make_mask(m.l);
  video_ = VideoEncoder(raw_feature_dim, m.d);
  sentence_ = SentenceEncoder(embedding_dim, m.sentence_hidden_size(), m.d);
  attention_ = AttentionParams(m.d, m.k);
  IntegratorConfig ic;
  ic.d = m.d;
  ic.p = m.p;
  ic.n_streams = stream_count(cfg_.attention_mode);
  ic.fusion = cfg_.fusion;
  ic.share_streams = cfg_.share_stream_params;
  integrator_ = Integrator(ic);
  global_ = GlobalEvaluator(cfg_.heads.global, integrator_.output_dim(), m.l);
  scorer_ = BoundaryScorer(cfg_.heads.score, integrator_.output_dim(), m.l);
  local_ = LocalEvaluator(cfg_.heads.local, m.l);
}

void TaciModel::init(std::uint64_t seed) {
  Rng rng(seed);
  video_.init(rng);
  sentence_.init(rng);
  attention_.init(rng);
  integrator_.init(rng);
  global_.init(rng);
  scorer_.init(rng);
  local_.init(rng);
}

void TaciModel::visit_params(const ParamVisitor& fn) {
  video_.visit("video.", fn);
  sentence_.visit("sentence.", fn);
  if (cfg_.attention_mode != AttentionMode::NA) attention_.visit("attention.", fn);
  integrator_.visit("recurrent.", fn);
  if (uses_global()) global_.visit("global.", fn);
  if (uses_local()) {
    scorer_.visit("score.", fn);
    local_.visit("local.", fn);
  }
}

void TaciModel::visit_buffers(const BufferVisitor& fn) {
  if (uses_global()) global_.visit_buffers("global.", fn);
  if (uses_local()) {
    scorer_.visit_buffers("score.", fn);
    local_.visit_buffers("local.", fn);
  }
}

void TaciModel::zero_grad() {
  visit_params([](const std::string&, Param& p) { p.zero_grad(); });
}

ForwardOutput TaciModel::forward(const std::vector<ModelInput>& batch, bool train, Rng* dropout_rng,
                                 BatchCache* cache) {
  const ModelConfig& m = cfg_.model;
  const double rate = dropout_rng ? m.dropout : 0.0;
  ForwardOutput out;
  if (cache) cache->samples.assign(batch.size(), {});
  out.integrated.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ModelInput& in = batch[b];
    if (in.clips.cols() != m.l) {
      throw InputError("expected " + std::to_string(m.l) + " clips, got " + std::to_string(in.clips.cols()));
    }
    SampleCache* sc = cache ? &cache->samples[b] : nullptr;
    Mat encoded = video_.forward(in.clips);
    const QueryEncoding q =
        sentence_.encode(in.word_embeddings, rate, dropout_rng, sc ? &sc->sentence : nullptr);
    TwoStreamCache local_attention;
    TwoStreamCache& ac = sc ? sc->attention : local_attention;
    const std::vector<Mat> streams = two_stream(encoded, q.sentence_vector, attention_, cfg_.attention_mode, &ac);
    if (cfg_.attention_mode != AttentionMode::NA) out.attention.push_back(ac.attention.weights);
    Mat F = integrator_.forward(streams, q.sentence_vector, sc ? &sc->integrator : nullptr);
    if (rate > 0.0) {
      Mat dm = dropout_mask(F.rows(), F.cols(), rate, *dropout_rng);
      F = F.cwiseProduct(dm);
      if (sc) sc->feature_dropout = std::move(dm);
    }
    if (sc) {
      sc->clips = in.clips;
      sc->encoded = std::move(encoded);
    }
    out.integrated.push_back(std::move(F));
  }

  if (uses_global()) out.global_maps = global_.forward(out.integrated, train, cache ? &cache->global : nullptr);
  if (uses_local()) {
    out.scores = scorer_.forward(out.integrated, train, cache ? &cache->scorer : nullptr);
    out.local_maps = local_.forward(out.scores, train, cache ? &cache->local : nullptr);
  }
  out.maps.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    switch (cfg_.eval_mode) {
      case EvalMode::GL: out.maps.push_back(ensemble(out.global_maps[b], out.local_maps[b], mask_)); break;
      case EvalMode::GE: out.maps.push_back(out.global_maps[b].cwiseProduct(mask_)); break;
      case EvalMode::LE: out.maps.push_back(out.local_maps[b].cwiseProduct(mask_)); break;
    }
  }
  return out;
}

LossBreakdown TaciModel::loss(const ForwardOutput& out, const std::vector<GroundTruthTargets>& targets) const {
  LossBreakdown r;
  const auto B = static_cast<double>(targets.size());
  for (std::size_t b = 0; b < targets.size(); ++b) {
    r.map += map_loss(out.maps[b], targets[b].iou_map, mask_, cfg_.loss.epsilon) / B;
    if (uses_local()) r.local += local_loss(out.scores[b], targets[b], cfg_.loss).value / B;
  }
  r.total = total_loss(r.map, r.local, cfg_.loss);
  return r;
}

void TaciModel::backward(const ForwardOutput& out, const std::vector<GroundTruthTargets>& targets,
                         BatchCache& cache) {
  const std::size_t B = targets.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  std::vector<ProposalMap> d_global, d_local;
  for (std::size_t b = 0; b < B; ++b) {
    const ProposalMap dM = map_loss_grad(out.maps[b], targets[b].iou_map, mask_, cfg_.loss.epsilon) * inv_b;
    switch (cfg_.eval_mode) {
      case EvalMode::GL:
        d_global.push_back(dM.cwiseProduct(out.local_maps[b]).cwiseProduct(mask_));
        d_local.push_back(dM.cwiseProduct(out.global_maps[b]).cwiseProduct(mask_));
        break;
      case EvalMode::GE: d_global.push_back(dM.cwiseProduct(mask_)); break;
      case EvalMode::LE: d_local.push_back(dM.cwiseProduct(mask_)); break;
    }
  }

  std::vector<Mat> dF(B);
  for (std::size_t b = 0; b < B; ++b) dF[b] = Mat::Zero(out.integrated[b].rows(), out.integrated[b].cols());

  if (uses_global()) {
    const std::vector<Mat> g = global_.backward(cache.global, d_global);
    for (std::size_t b = 0; b < B; ++b) dF[b] += g[b];
  }
  if (uses_local()) {
    std::vector<BoundaryScores> d_scores = local_.backward(cache.local, d_local);
    const double w = cfg_.loss.lambda_local * inv_b;
    for (std::size_t b = 0; b < B; ++b) {
      const LocalLossResult lr = local_loss(out.scores[b], targets[b], cfg_.loss);
      d_scores[b].start += w * lr.grad.start;
      d_scores[b].end += w * lr.grad.end;
      d_scores[b].momentness += w * lr.grad.momentness;
    }
    const std::vector<Mat> g = scorer_.backward(cache.scorer, d_scores);
    for (std::size_t b = 0; b < B; ++b) dF[b] += g[b];
  }

  for (std::size_t b = 0; b < B; ++b) {
    SampleCache& sc = cache.samples[b];
    if (sc.feature_dropout.size() > 0) dF[b] = dF[b].cwiseProduct(sc.feature_dropout);
    Integrator::Grads ig = integrator_.backward(sc.integrator, dF[b]);
    AttentionGrads ag = two_stream_backward(sc.attention, ig.d_streams, attention_);
    video_.backward(sc.clips, sc.encoded, ag.dF);
    sentence_.backward(sc.sentence, ig.d_query + ag.dq);
  }
}

LossBreakdown TaciModel::compute_gradients(const std::vector<ModelInput>& batch,
                                           const std::vector<GroundTruthTargets>& targets, bool train,
                                           Rng* dropout_rng) {
  zero_grad();
  BatchCache cache;
  const ForwardOutput out = forward(batch, train, dropout_rng, &cache);
  const LossBreakdown l = loss(out, targets);
  backward(out, targets, cache);
  return l;
}

ProposalMap TaciModel::predict_map(const ModelInput& input) {
  return forward({input}, false, nullptr, nullptr).maps.front();
}

}  // namespace cmtml
