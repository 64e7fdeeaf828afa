#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cmtml/checkpoint.hpp"
#include "fixtures.hpp"

using namespace cmtml;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cmtml_trainer" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small_synthetic(std::uint64_t seed, int epochs) {
  RunConfig cfg = fixture::synthetic_config(seed, 40, epochs, 4);
  cfg.synthetic->l = 8;
  cfg.synthetic->d = 6;
  cfg.synthetic->embedding_dim = 8;
  cfg.model.l = 8;
  cfg.model.d = 6;
  cfg.model.p = 5;
  cfg.model.k = 4;
  cfg.optimizer.batch_size = 8;
  return cfg;
}

std::vector<Mat> snapshot(TaciModel& m) {
  std::vector<Mat> out;
  m.visit_params([&](const std::string&, Param& p) { out.push_back(p.value); });
  return out;
}

}  // namespace

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  RunConfig cfg = small_synthetic(1, 1);
  cfg.optimizer.learning_rate = 0.0;
  const LoadedData data = load_data(cfg);
  Trainer t(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
  const auto before = snapshot(t.model());
  t.fit(data.train);
  EXPECT_EQ(snapshot(t.model()), before);
  EXPECT_EQ(t.epoch(), 1);
}

TEST(Trainer, SameSeedSameLossCurve) {
  const RunConfig cfg = small_synthetic(2, 3);
  const LoadedData data = load_data(cfg);
  auto run = [&] {
    Trainer t(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
    std::vector<double> losses;
    for (const auto& e : t.fit(data.train)) losses.push_back(e.loss);
    return losses;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_LT(a.back(), a.front());
}

TEST(Trainer, HoldoutIsTrailingFraction) {
  const RunConfig cfg = small_synthetic(3, 1);
  const LoadedData data = load_data(cfg);
  EXPECT_EQ(data.train.size(), 32u);
  EXPECT_EQ(data.eval.size(), 8u);
  const auto ds = generate_synthetic_dataset(*cfg.synthetic);
  EXPECT_EQ(data.eval.back().annotation.video_id, ds.samples.back().annotation.video_id);
}

TEST(Trainer, NonFiniteLossAborts) {
  const RunConfig cfg = small_synthetic(4, 1);
  const LoadedData data = load_data(cfg);
  Trainer t(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
  t.model().video_encoder().b.value(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    t.run_epoch(data.train);
    FAIL();
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos);
    EXPECT_NE(msg.find("video."), std::string::npos);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  RunConfig cfg = fixture::tiny_config();
  TaciModel model(cfg, 3, 2);
  model.init(5);
  const auto before = snapshot(model);
  model.visit_params([](const std::string&, Param& p) { p.grad.setConstant(0.37); });
  Adam adam(cfg.optimizer);
  adam.step(model);
  std::size_t i = 0;
  model.visit_params([&](const std::string&, Param& p) {
    const Mat delta = before[i++] - p.value;
    EXPECT_LT((delta.array() - cfg.optimizer.learning_rate).abs().maxCoeff(), 1e-10);
  });
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, ClippingScalesGradient) {
  RunConfig cfg = fixture::tiny_config();
  cfg.optimizer.grad_clip = 1e-3;
  TaciModel a(cfg, 3, 2), b(cfg, 3, 2);
  a.init(6);
  b.init(6);
  a.visit_params([](const std::string&, Param& p) { p.grad.setConstant(5.0); });
  b.visit_params([](const std::string&, Param& p) { p.grad.setConstant(5.0); });
  Adam clipped(cfg.optimizer);
  cfg.optimizer.grad_clip = 0.0;
  Adam plain(cfg.optimizer);
  clipped.step(a);
  plain.step(b);
  // Adam is scale invariant on the first step up to epsilon.
  const auto sa = snapshot(a), sb = snapshot(b);
  for (std::size_t i = 0; i < sa.size(); ++i) EXPECT_LT((sa[i] - sb[i]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const RunConfig cfg = small_synthetic(7, 2);
  const LoadedData data = load_data(cfg);
  Trainer t(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
  t.fit(data.train);
  const fs::path path = scratch("ckpt") / "m.ckpt";
  save_checkpoint(path, t);
  Trainer back = load_checkpoint(path);
  EXPECT_EQ(back.epoch(), 2);
  EXPECT_EQ(back.optimizer().steps(), t.optimizer().steps());
  EXPECT_EQ(snapshot(back.model()), snapshot(t.model()));
  for (const auto& s : data.eval) EXPECT_EQ(back.model().predict_map(s.input), t.model().predict_map(s.input));

  // Resuming continues the same trajectory.
  Trainer c(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
  c.fit(data.train);
  const double direct = c.run_epoch(data.train).loss;
  EXPECT_EQ(back.run_epoch(data.train).loss, direct);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const fs::path dir = scratch("bad_ckpt");
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), FormatError);

  const RunConfig cfg = small_synthetic(8, 0);
  Trainer t(cfg, 6, 8);
  save_checkpoint(dir / "ok.ckpt", t);
  std::ifstream in(dir / "ok.ckpt", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(dir / "short.ckpt"), FormatError);
}

TEST(Evaluate, ReportsGroupsAndTopPredictions) {
  const RunConfig cfg = small_synthetic(9, 0);
  LoadedData data = load_data(cfg);
  Trainer t(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
  data.eval[0].annotation.query_text = "person walks before sitting";
  data.eval[1].annotation.query_text = "person on the left";
  const EvalReport r = evaluate(t.model(), data.eval, {1, 5}, {0.5});
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_EQ(r.groups[0].group, "temporal");
  EXPECT_EQ(r.top1.size(), data.eval.size());
  EXPECT_LE(r.all.recall.at({1, 0.5}), r.all.recall.at({5, 0.5}));
  for (std::size_t i = 0; i < data.eval.size(); ++i) {
    const MomentPrediction p = predict(t.model(), data.eval[i].input, data.eval[i].annotation.duration_seconds);
    EXPECT_EQ(p.start_idx, r.top1[i].start_idx);
    EXPECT_EQ(p.end_idx, r.top1[i].end_idx);
  }
}

TEST(Predict, DumpedMapAgreesWithSelection) {
  const RunConfig cfg = small_synthetic(10, 1);
  const LoadedData data = load_data(cfg);
  Trainer t(cfg, data.raw_feature_dim, static_cast<int>(data.embeddings.dim()));
  t.fit(data.train);
  ProposalMap map;
  const auto& s = data.eval[0];
  const MomentPrediction p = predict(t.model(), s.input, 16.0, &map);
  for (int x = 0; x < cfg.model.l; ++x)
    for (int y = 0; y < cfg.model.l; ++y) {
      if (x > y) EXPECT_EQ(map(x, y), 0.0);
      else EXPECT_LE(map(x, y), p.score);
    }
  EXPECT_EQ(map(p.start_idx, p.end_idx), p.score);
  EXPECT_DOUBLE_EQ(p.t_start, p.start_idx * 2.0);
  EXPECT_DOUBLE_EQ(p.t_end, (p.end_idx + 1) * 2.0);
}

TEST(Data, MissingFeaturesAreSkippedAndCounted) {
  const fs::path dir = scratch("missing");
  SyntheticSpec spec;
  spec.n_samples = 4;
  spec.l = 8;
  spec.d = 3;
  spec.embedding_dim = 4;
  const auto ds = generate_synthetic_dataset(spec);
  write_synthetic_dataset(dir, ds);
  fs::remove(dir / "features" / (ds.samples[1].annotation.video_id + ".bin"));
  const auto anns = load_annotations(dir / "annotations.json", 8);
  int skipped = 0;
  std::vector<std::string> warnings;
  const auto samples = load_samples(dir / "features", anns, 8, &skipped, &warnings);
  EXPECT_EQ(samples.size(), 3u);
  EXPECT_EQ(skipped, 1);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find(ds.samples[1].annotation.video_id), std::string::npos);
}

TEST(Data, EmptyQueryIsInputError) {
  EmbeddingTable table({{"door", 0}}, Mat::Ones(1, 3));
  EXPECT_THROW(embed_query("  ?! ", table), InputError);
  EXPECT_EQ(embed_query("Open the DOOR", table).cols(), 3);

  RunConfig cfg = small_synthetic(11, 0);
  auto ds = generate_synthetic_dataset(*cfg.synthetic);
  ds.samples[0].tokens.clear();
  EXPECT_THROW(prepare_samples(ds.samples, ds.embeddings, cfg), InputError);
}

TEST(Data, LengthMismatchIsInputError) {
  RunConfig cfg = small_synthetic(12, 0);
  const auto ds = generate_synthetic_dataset(*cfg.synthetic);
  cfg.model.l = 16;
  EXPECT_THROW(prepare_samples(ds.samples, ds.embeddings, cfg), InputError);
}

#ifdef CMTML_CLI_PATH
TEST(Cli, SynthTrainEvalPredict) {
  const fs::path dir = scratch("cli");
  SyntheticSpec spec;
  spec.n_samples = 12;
  spec.l = 8;
  spec.d = 4;
  spec.embedding_dim = 6;
  std::ofstream(dir / "spec.json") << to_json(spec).dump(2);
  const std::string cli = CMTML_CLI_PATH;
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
  };
  ASSERT_EQ(run("synth --spec " + (dir / "spec.json").string() + " --out " + (dir / "data").string()), 0);

  RunConfig cfg = small_synthetic(13, 1);
  cfg.synthetic.reset();
  cfg.model.d = 4;
  cfg.features = (dir / "data" / "features").string();
  cfg.annotations = (dir / "data" / "annotations.json").string();
  cfg.eval_annotations = cfg.annotations;
  cfg.embeddings = (dir / "data" / "embeddings.txt").string();
  cfg.checkpoints = (dir / "out").string();
  std::ofstream(dir / "run.json") << to_json(cfg).dump(2);
  ASSERT_EQ(run("train --config " + (dir / "run.json").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "latest.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "out" / "loss_log.csv"));
  EXPECT_TRUE(fs::exists(dir / "out" / "metrics.csv"));

  const std::string ckpt = (dir / "out" / "latest.ckpt").string();
  EXPECT_EQ(run("eval --checkpoint " + ckpt + " --annotations " + cfg.annotations + " --metrics-csv " +
                (dir / "m.csv").string()),
            0);
  std::ifstream csv(dir / "m.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "n,m,recall,query_group");

  const auto anns = load_annotations(cfg.annotations, 8);
  const std::string video = (dir / "data" / "features" / (anns[0].video_id + ".bin")).string();
  EXPECT_EQ(run("predict --checkpoint " + ckpt + " --video " + video + " --query \"" + anns[0].query_text +
                "\" --dump-map " + (dir / "dump").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "dump" / "map.pgm"));
  EXPECT_TRUE(fs::exists(dir / "dump" / "map.csv"));
  EXPECT_EQ(run("predict --checkpoint " + ckpt + " --video " + video + " --query \"...\""), 2 << 8);
}
#endif
