#pragma once

#include <random>
#include <vector>

#include "cmtml/trainer.hpp"
#include "oracles.hpp"

namespace fixture {

/// Small model used for gradient checks: l = 4, d = 4, p = 3.
inline cmtml::RunConfig tiny_config() {
  cmtml::RunConfig cfg;
  cfg.model.l = 4;
  cfg.model.d = 4;
  cfg.model.p = 3;
  cfg.model.k = 3;
  cfg.model.dropout = 0.0;
  cfg.model.sentence_hidden = 3;
  cfg.heads.global = cmtml::ConvStackConfig::uniform(2, 3, 3);
  cfg.heads.score = cmtml::ConvStackConfig::uniform(2, 3, 3);
  cfg.heads.local = cmtml::ConvStackConfig::uniform(3, 3, 3);
  return cfg;
}

struct Batch {
  std::vector<cmtml::ModelInput> inputs;
  std::vector<cmtml::GroundTruthTargets> targets;
};

inline Batch random_batch(const cmtml::RunConfig& cfg, int raw_dim, int emb_dim, int size, std::mt19937_64& rng) {
  Batch b;
  const int l = cfg.model.l;
  std::uniform_int_distribution<int> clip(0, l - 1);
  std::uniform_int_distribution<int> words(1, 4);
  for (int i = 0; i < size; ++i) {
    cmtml::ModelInput in;
    in.clips = oracle::random_mat(raw_dim, l, rng);
    in.word_embeddings = oracle::random_mat(emb_dim, words(rng), rng);
    b.inputs.push_back(in);
    int s = clip(rng), e = clip(rng);
    if (s > e) std::swap(s, e);
    cmtml::MomentAnnotation ann;
    ann.start_idx = s;
    ann.end_idx = e;
    b.targets.push_back(cmtml::build_targets(ann, l, cfg.loss));
  }
  return b;
}

/// Synthetic task used by the end-to-end checks.
inline cmtml::RunConfig synthetic_config(std::uint64_t seed, int n_samples = 500, int epochs = 50, int filters = 16) {
  cmtml::RunConfig cfg;
  cmtml::SyntheticSpec s;
  s.n_samples = n_samples;
  s.l = 32;
  s.d = 16;
  s.noise_std = 0.1;
  s.seed = seed;
  cfg.synthetic = s;
  cfg.model.l = 32;
  cfg.model.d = 16;
  cfg.model.p = 32;
  cfg.model.k = 16;
  cfg.heads.global = cmtml::ConvStackConfig::uniform(2, 3, filters);
  cfg.heads.score = cmtml::ConvStackConfig::uniform(2, 3, filters);
  cfg.heads.local = cmtml::ConvStackConfig::uniform(4, 3, filters);
  cfg.optimizer.epochs = epochs;
  cfg.optimizer.seed = seed;
  return cfg;
}

}  // namespace fixture
