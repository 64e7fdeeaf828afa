// Command-line front end: train, eval, predict and synth.

#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "cmtml/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace cmtml;

namespace {

void print_report(const EvalReport& r) {
  for (const auto& [key, value] : r.all.recall) {
    std::printf("R@%d, IoU@%.1f = %.4f\n", key.first, key.second, value);
  }
  if (r.skipped > 0) std::printf("skipped %d queries without features\n", r.skipped);
}

int run_train(const fs::path& config_path) {
  const RunConfig cfg = load_run_config(config_path);
  LoadedData data = load_data(cfg);
  if (data.skipped > 0) std::cerr << "skipped " << data.skipped << " annotations without features\n";
  Trainer trainer(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));

  const fs::path out_dir = cfg.checkpoints.empty() ? fs::path("checkpoints") : fs::path(cfg.checkpoints);
  fs::create_directories(out_dir);
  std::ofstream loss_log(out_dir / "loss_log.csv");
  loss_log << "epoch,loss,map_loss,local_loss,seconds\n";
  std::printf("training on %zu samples, %zu held out\n", data.train.size(), data.eval.size());
  trainer.fit(data.train, [&](const EpochLog& e) {
    std::printf("epoch %d  loss %.6f  map %.6f  local %.6f  (%.1fs)\n", e.epoch, e.loss, e.map_loss, e.local_loss,
                e.seconds);
    std::fflush(stdout);
    loss_log << e.epoch << ',' << e.loss << ',' << e.map_loss << ',' << e.local_loss << ',' << e.seconds << '\n';
    loss_log.flush();
    save_checkpoint(out_dir / "latest.ckpt", trainer);
  });
  save_checkpoint(out_dir / "latest.ckpt", trainer);
  std::printf("checkpoint written to %s\n", (out_dir / "latest.ckpt").c_str());

  if (!data.eval.empty()) {
    EvalReport r = evaluate(trainer.model(), data.eval);
    r.skipped = data.skipped;
    print_report(r);
    std::vector<EvalResult> rows = {r.all};
    rows.insert(rows.end(), r.groups.begin(), r.groups.end());
    write_metrics_csv(out_dir / "metrics.csv", rows);
  }
  return 0;
}

int run_eval(const fs::path& ckpt, const fs::path& annotations, const std::string& features_override,
             const std::string& metrics_out) {
  Trainer trainer = load_checkpoint(ckpt);
  const RunConfig& cfg = trainer.model().config();
  const fs::path features = features_override.empty() ? fs::path(cfg.features) : fs::path(features_override);
  const EmbeddingTable embeddings = embeddings_for(cfg);
  const auto ann = load_annotations(annotations, cfg.model.l);
  int skipped = 0;
  const auto samples = prepare_samples(load_samples(features, ann, cfg.model.l, &skipped, nullptr), embeddings, cfg);
  EvalReport r = evaluate(trainer.model(), samples);
  r.skipped = skipped;
  print_report(r);
  for (const auto& g : r.groups) {
    for (const auto& [key, value] : g.recall) {
      std::printf("[%s] R@%d, IoU@%.1f = %.4f\n", g.group.c_str(), key.first, key.second, value);
    }
  }
  if (!metrics_out.empty()) {
    std::vector<EvalResult> rows = {r.all};
    rows.insert(rows.end(), r.groups.begin(), r.groups.end());
    write_metrics_csv(metrics_out, rows);
  }
  return 0;
}

int run_predict(const fs::path& ckpt, const fs::path& video, const std::string& query, const std::string& dump_dir) {
  Trainer trainer = load_checkpoint(ckpt);
  const RunConfig& cfg = trainer.model().config();
  const EmbeddingTable embeddings = embeddings_for(cfg);
  const RawVideoFeatures raw = load_feature_file(video);
  ModelInput input;
  input.clips = interpolate_to_fixed_length(raw, cfg.model.l).features;
  input.word_embeddings = embed_query(query, embeddings);
  ProposalMap map;
  const MomentPrediction p = predict(trainer.model(), input, raw.duration_seconds, &map);
  std::printf("t_start %.3f  t_end %.3f  score %.6f  clips %d..%d%s\n", p.t_start, p.t_end, p.score, p.start_idx,
              p.end_idx, p.degenerate ? "  (degenerate map)" : "");
  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    write_map_pgm(fs::path(dump_dir) / "map.pgm", map);
    write_map_csv(fs::path(dump_dir) / "map.csv", map);
    std::printf("map written to %s\n", dump_dir.c_str());
  }
  return 0;
}

int run_synth(const fs::path& spec_path, const fs::path& out) {
  std::ifstream in(spec_path);
  if (!in) throw ConfigError("cannot open spec " + spec_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(spec_path.string() + ": " + e.what());
  }
  const SyntheticSpec spec = synthetic_spec_from_json(j);
  write_synthetic_dataset(out, generate_synthetic_dataset(spec));
  std::printf("wrote %d samples to %s\n", spec.n_samples, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal temporal moment localization"};
  app.require_subcommand(1);

  std::string config;
  auto* train = app.add_subcommand("train", "Train a model from a JSON run config");
  train->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);

  std::string ckpt, annotations, features, metrics_out;
  auto* eval = app.add_subcommand("eval", "Evaluate R@n, IoU@m for a checkpoint");
  eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--annotations", annotations, "Annotation JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--features", features, "Feature directory (defaults to the config's)");
  eval->add_option("--metrics-csv", metrics_out, "Write metrics CSV here");

  std::string video, query, dump;
  auto* pred = app.add_subcommand("predict", "Localize one query in one video");
  pred->add_option("--checkpoint", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  pred->add_option("--video", video, "Feature file (.bin)")->required()->check(CLI::ExistingFile);
  pred->add_option("--query", query, "Query text")->required();
  pred->add_option("--dump-map", dump, "Directory for map.pgm and map.csv");

  std::string spec, out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--spec", spec, "Synthetic spec (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config);
    if (*eval) return run_eval(ckpt, annotations, features, metrics_out);
    if (*pred) return run_predict(ckpt, video, query, dump);
    if (*synth) return run_synth(spec, out);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
