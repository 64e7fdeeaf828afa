#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cmtml/config.hpp"
#include "cmtml/metrics.hpp"
#include "cmtml/model.hpp"

namespace cmtml {

/// A sample ready for the model: resampled features, embedded query and targets.
struct PreparedSample {
  ModelInput input;
  MomentAnnotation annotation;
  GroundTruthTargets targets;
};

std::vector<PreparedSample> prepare_samples(const std::vector<Sample>& samples, const EmbeddingTable& embeddings,
                                            const RunConfig& cfg);

struct LoadedData {
  std::vector<PreparedSample> train;
  std::vector<PreparedSample> eval;
  EmbeddingTable embeddings;
  int raw_feature_dim = 0;
  int skipped = 0;  // annotations without a feature file
};

/// Reads features for each annotation from `features_dir/<video_id>.bin`.
/// Annotations whose file is missing are skipped and counted.
std::vector<Sample> load_samples(const std::filesystem::path& features_dir,
                                 const std::vector<MomentAnnotation>& annotations, int l, int* skipped,
                                 std::vector<std::string>* warnings);

/// Embedding table for a config: regenerated for synthetic runs, loaded otherwise.
EmbeddingTable embeddings_for(const RunConfig& cfg);

/// Training and evaluation data for a config. Synthetic runs hold out the
/// trailing `holdout_fraction` of samples; file runs use `eval_annotations`.
LoadedData load_data(const RunConfig& cfg, std::vector<std::string>* warnings = nullptr);

class Adam {
 public:
  Adam() = default;
  explicit Adam(const OptimizerConfig& cfg) : cfg_(cfg) {}

  /// One update over every parameter the model exposes.
  void step(TaciModel& model);

  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }

  /// First and second moments keyed by parameter name (created on demand).
  void visit_state(TaciModel& model, const std::function<void(const std::string&, Mat&, Mat&)>& fn);

 private:
  OptimizerConfig cfg_;
  long long t_ = 0;
  std::vector<Mat> m_, v_;
};

/// Global L2 norm of all parameter gradients.
double gradient_norm(TaciModel& model);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double map_loss = 0.0;
  double local_loss = 0.0;
  double seconds = 0.0;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, int raw_feature_dim, int embedding_dim);

  TaciModel& model() { return model_; }
  const TaciModel& model() const { return model_; }
  Adam& optimizer() { return adam_; }
  Rng& rng() { return rng_; }
  int epoch() const { return epoch_; }
  void set_epoch(int e) { epoch_ = e; }

  /// One pass over `data` in shuffled mini-batches. Throws TrainingError on a
  /// non-finite loss.
  EpochLog run_epoch(const std::vector<PreparedSample>& data);

  /// Runs until `config().optimizer.epochs` epochs are done. `on_epoch`, when
  /// set, is called after each epoch.
  std::vector<EpochLog> fit(const std::vector<PreparedSample>& data,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

 private:
  TaciModel model_;
  Adam adam_;
  Rng rng_;
  int epoch_ = 0;
};

struct EvalReport {
  EvalResult all;
  std::vector<EvalResult> groups;  // temporal, spatial
  std::vector<MomentPrediction> top1;
  int skipped = 0;
};

/// Ranks each query's map and scores it against its annotation in seconds.
EvalReport evaluate(TaciModel& model, const std::vector<PreparedSample>& data, const std::vector<int>& n_list = {1},
                    const std::vector<double>& m_list = {0.3, 0.5, 0.7});

/// Forward pass and selection for one query.
MomentPrediction predict(TaciModel& model, const ModelInput& input, double duration, ProposalMap* map_out = nullptr);

/// Embeds query text; throws InputError when it has no tokens.
Mat embed_query(const std::string& query, const EmbeddingTable& embeddings);

}  // namespace cmtml
