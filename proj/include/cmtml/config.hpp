#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "cmtml/attention.hpp"
#include "cmtml/conv.hpp"
#include "cmtml/data_io.hpp"
#include "cmtml/encoders.hpp"
#include "cmtml/losses.hpp"
#include "cmtml/recurrent.hpp"

namespace cmtml {

/// GE: global map only. LE: local map only. GL: both, multiplied.
enum class EvalMode { GE, LE, GL };

std::string to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

struct OptimizerConfig {
  double learning_rate = 0.001;
  int batch_size = 32;
  int epochs = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 0.0;  // max global norm; 0 disables clipping
};

struct HeadConfig {
  ConvStackConfig global = ConvStackConfig::uniform(2);
  ConvStackConfig score = ConvStackConfig::uniform(2);
  ConvStackConfig local = ConvStackConfig::uniform(4);
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  AttentionMode attention_mode = AttentionMode::TA;
  EvalMode eval_mode = EvalMode::GL;
  Fusion fusion = Fusion::CmLstm;
  OptimizerConfig optimizer;
  HeadConfig heads;
  bool share_stream_params = false;

  std::string features;     // directory of <video_id>.bin feature files
  std::string annotations;  // training annotations
  std::string embeddings;
  std::string checkpoints;  // output directory

  std::optional<std::string> eval_annotations;
  /// Train on generated data instead of files.
  std::optional<SyntheticSpec> synthetic;
  /// Fraction of synthetic samples held out for evaluation.
  double holdout_fraction = 0.2;

  void validate() const;
};

/// Presets matching the two benchmark setups of the reference model.
RunConfig activitynet_preset();
RunConfig charades_preset();

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

}  // namespace cmtml
