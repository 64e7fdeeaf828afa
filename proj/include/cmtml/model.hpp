#pragma once

#include <vector>

#include "cmtml/attention.hpp"
#include "cmtml/config.hpp"
#include "cmtml/encoders.hpp"
#include "cmtml/losses.hpp"
#include "cmtml/proposal.hpp"
#include "cmtml/recurrent.hpp"

namespace cmtml {

/// One query/video pair as the model consumes it.
struct ModelInput {
  Mat clips;            // d_raw x l
  Mat word_embeddings;  // E x N
};

struct ForwardOutput {
  std::vector<ProposalMap> maps;           // final masked maps
  std::vector<ProposalMap> global_maps;    // empty in LE mode
  std::vector<ProposalMap> local_maps;     // empty in GE mode
  std::vector<BoundaryScores> scores;      // empty in GE mode
  std::vector<Mat> integrated;             // F_i per sample
  std::vector<Vec> attention;              // h_a per sample (empty in NA mode)
};

struct LossBreakdown {
  double total = 0.0;
  double map = 0.0;
  double local = 0.0;
};

/// Two-stream attentive cross-modal interaction network: video/sentence
/// encoders, two-stream attention, bidirectional cross-modal recurrence and
/// local-global proposal evaluation.
class TaciModel {
 public:
  TaciModel(const RunConfig& cfg, int raw_feature_dim, int embedding_dim);

  const RunConfig& config() const { return cfg_; }
  int raw_feature_dim() const { return d_raw_; }
  int embedding_dim() const { return emb_dim_; }
  int integrated_dim() const { return integrator_.output_dim(); }

  void init(std::uint64_t seed);
  void visit_params(const ParamVisitor& fn);
  void visit_buffers(const BufferVisitor& fn);
  void zero_grad();

  struct SampleCache {
    Mat clips;
    Mat encoded;
    SentenceEncoder::Cache sentence;
    TwoStreamCache attention;
    Integrator::Cache integrator;
    Mat feature_dropout;
  };

  struct BatchCache {
    std::vector<SampleCache> samples;
    GlobalEvaluator::Cache global;
    BoundaryScorer::Cache scorer;
    LocalEvaluator::Cache local;
  };

  /// `dropout_rng` null disables dropout. Batch-norm uses batch statistics
  /// when `train` is true.
  ForwardOutput forward(const std::vector<ModelInput>& batch, bool train, Rng* dropout_rng, BatchCache* cache);

  /// Mean objective over the batch for the configured ablation.
  LossBreakdown loss(const ForwardOutput& out, const std::vector<GroundTruthTargets>& targets) const;

  /// Backpropagates the mean batch objective. Gradients accumulate.
  void backward(const ForwardOutput& out, const std::vector<GroundTruthTargets>& targets, BatchCache& cache);

  /// Forward + loss + backward in one call (grads are zeroed first).
  LossBreakdown compute_gradients(const std::vector<ModelInput>& batch, const std::vector<GroundTruthTargets>& targets,
                                  bool train, Rng* dropout_rng);

  /// Eval-mode final map for one query.
  ProposalMap predict_map(const ModelInput& input);

  // Component access for tests.
  VideoEncoder& video_encoder() { return video_; }
  SentenceEncoder& sentence_encoder() { return sentence_; }
  AttentionParams& attention() { return attention_; }
  Integrator& integrator() { return integrator_; }
  GlobalEvaluator& global_evaluator() { return global_; }
  BoundaryScorer& boundary_scorer() { return scorer_; }
  LocalEvaluator& local_evaluator() { return local_; }

 private:
  bool uses_global() const { return cfg_.eval_mode != EvalMode::LE; }
  bool uses_local() const { return cfg_.eval_mode != EvalMode::GE; }

  RunConfig cfg_;
  int d_raw_ = 0;
  int emb_dim_ = 0;
  ProposalMap mask_;
  VideoEncoder video_;
  SentenceEncoder sentence_;
  AttentionParams attention_;
  Integrator integrator_;
  GlobalEvaluator global_;
  BoundaryScorer scorer_;
  LocalEvaluator local_;
};

}  // namespace cmtml
