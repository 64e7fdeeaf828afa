#include "cmtml/config.hpp"

#include <fstream>

namespace cmtml {

using nlohmann::json;

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::GE: return "GE";
    case EvalMode::LE: return "LE";
    case EvalMode::GL: return "GL";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "GE") return EvalMode::GE;
  if (s == "LE") return EvalMode::LE;
  if (s == "GL") return EvalMode::GL;
  throw ConfigError("unknown eval mode '" + s + "'");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(optimizer.learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (optimizer.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (optimizer.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (optimizer.grad_clip < 0.0) throw ConfigError("grad_clip must be >= 0");
  heads.global.validate();
  heads.score.validate();
  heads.local.validate();
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout_fraction must lie in [0, 1)");
  if (synthetic) synthetic->validate();
}

RunConfig activitynet_preset() {
  RunConfig c;
  c.model = ModelConfig{64, 256, 256, 32, 0.5, 256};
  c.heads.global = ConvStackConfig::uniform(2);
  c.heads.score = ConvStackConfig::uniform(2);
  c.heads.local = ConvStackConfig::uniform(4);
  return c;
}

RunConfig charades_preset() {
  RunConfig c;
  c.model = ModelConfig{64, 256, 256, 32, 0.5, 128};
  c.heads.global = ConvStackConfig::uniform(4);
  c.heads.score = ConvStackConfig::uniform(4);
  c.heads.local = ConvStackConfig::uniform(4);
  return c;
}

namespace {

json stack_to_json(const ConvStackConfig& s) {
  json layers = json::array();
  for (const auto& l : s.layers) layers.push_back({{"kernel", l.kernel}, {"stride", l.stride}, {"filters", l.filters}});
  return {{"layers", layers}};
}

ConvStackConfig stack_from_json(const json& j) {
  ConvStackConfig s;
  for (const auto& l : j.at("layers")) {
    ConvLayerSpec spec;
    spec.kernel = l.value("kernel", 3);
    spec.stride = l.value("stride", 1);
    spec.filters = l.value("filters", 64);
    s.layers.push_back(spec);
  }
  return s;
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const SyntheticSpec& s) {
  return {{"n_samples", s.n_samples},   {"l", s.l},
          {"d", s.d},                   {"noise_std", s.noise_std},
          {"seed", s.seed},             {"vocab_size", s.vocab_size},
          {"embedding_dim", s.embedding_dim}, {"min_tokens", s.min_tokens},
          {"max_tokens", s.max_tokens}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  try {
    read_opt(j, "n_samples", s.n_samples);
    read_opt(j, "l", s.l);
    read_opt(j, "d", s.d);
    read_opt(j, "noise_std", s.noise_std);
    read_opt(j, "seed", s.seed);
    read_opt(j, "vocab_size", s.vocab_size);
    read_opt(j, "embedding_dim", s.embedding_dim);
    read_opt(j, "min_tokens", s.min_tokens);
    read_opt(j, "max_tokens", s.max_tokens);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

json to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"l", c.model.l},   {"d", c.model.d},
                {"p", c.model.p},   {"k", c.model.k},
                {"dropout", c.model.dropout}, {"sentence_hidden", c.model.sentence_hidden}};
  j["loss"] = {{"lambda_local", c.loss.lambda_local},
               {"lambda_m", c.loss.lambda_m},
               {"soft_label_sigma", c.loss.soft_label_sigma},
               {"epsilon", c.loss.epsilon}};
  j["attention_mode"] = to_string(c.attention_mode);
  j["eval_mode"] = to_string(c.eval_mode);
  j["fusion"] = to_string(c.fusion);
  j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"batch_size", c.optimizer.batch_size},
                    {"epochs", c.optimizer.epochs},
                    {"seed", c.optimizer.seed},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"adam_epsilon", c.optimizer.adam_epsilon},
                    {"grad_clip", c.optimizer.grad_clip}};
  j["heads"] = {{"global", stack_to_json(c.heads.global)},
                {"score", stack_to_json(c.heads.score)},
                {"local", stack_to_json(c.heads.local)}};
  j["share_stream_params"] = c.share_stream_params;
  j["features"] = c.features;
  j["annotations"] = c.annotations;
  j["embeddings"] = c.embeddings;
  j["checkpoints"] = c.checkpoints;
  if (c.eval_annotations) j["eval_annotations"] = *c.eval_annotations;
  if (c.synthetic) j["synthetic"] = to_json(*c.synthetic);
  j["holdout_fraction"] = c.holdout_fraction;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("model")) {
      const auto& m = j.at("model");
      read_opt(m, "l", c.model.l);
      read_opt(m, "d", c.model.d);
      read_opt(m, "p", c.model.p);
      read_opt(m, "k", c.model.k);
      read_opt(m, "dropout", c.model.dropout);
      read_opt(m, "sentence_hidden", c.model.sentence_hidden);
    }
    if (j.contains("loss")) {
      const auto& l = j.at("loss");
      read_opt(l, "lambda_local", c.loss.lambda_local);
      read_opt(l, "lambda_m", c.loss.lambda_m);
      read_opt(l, "soft_label_sigma", c.loss.soft_label_sigma);
      read_opt(l, "epsilon", c.loss.epsilon);
    }
    if (j.contains("attention_mode")) c.attention_mode = attention_mode_from_string(j.at("attention_mode"));
    if (j.contains("eval_mode")) c.eval_mode = eval_mode_from_string(j.at("eval_mode"));
    if (j.contains("fusion")) c.fusion = fusion_from_string(j.at("fusion"));
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      read_opt(o, "learning_rate", c.optimizer.learning_rate);
      read_opt(o, "batch_size", c.optimizer.batch_size);
      read_opt(o, "epochs", c.optimizer.epochs);
      read_opt(o, "seed", c.optimizer.seed);
      read_opt(o, "beta1", c.optimizer.beta1);
      read_opt(o, "beta2", c.optimizer.beta2);
      read_opt(o, "adam_epsilon", c.optimizer.adam_epsilon);
      read_opt(o, "grad_clip", c.optimizer.grad_clip);
    }
    if (j.contains("heads")) {
      const auto& h = j.at("heads");
      if (h.contains("global")) c.heads.global = stack_from_json(h.at("global"));
      if (h.contains("score")) c.heads.score = stack_from_json(h.at("score"));
      if (h.contains("local")) c.heads.local = stack_from_json(h.at("local"));
    }
    read_opt(j, "share_stream_params", c.share_stream_params);
    read_opt(j, "features", c.features);
    read_opt(j, "annotations", c.annotations);
    read_opt(j, "embeddings", c.embeddings);
    read_opt(j, "checkpoints", c.checkpoints);
    if (j.contains("eval_annotations")) c.eval_annotations = j.at("eval_annotations").get<std::string>();
    if (j.contains("synthetic")) c.synthetic = synthetic_spec_from_json(j.at("synthetic"));
    read_opt(j, "holdout_fraction", c.holdout_fraction);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).string();
  };
  resolve(c.features);
  resolve(c.annotations);
  resolve(c.embeddings);
  resolve(c.checkpoints);
  if (c.eval_annotations) resolve(*c.eval_annotations);
  return c;
}

}  // namespace cmtml
