#include <gtest/gtest.h>
#include <map>

#include "cmtml/model.hpp"
#include "fixtures.hpp"

using namespace cmtml;

namespace {

constexpr int kRaw = 5;
constexpr int kEmb = 3;

double max_rel_error(TaciModel& model, const fixture::Batch& b, std::string* worst) {
  model.compute_gradients(b.inputs, b.targets, true, nullptr);
  auto loss = [&] { return model.loss(model.forward(b.inputs, true, nullptr, nullptr), b.targets).total; };
  double err = 0.0;
  for (const auto& g : oracle::finite_difference_check(model, loss)) {
    if (g.rel_error > err) {
      err = g.rel_error;
      *worst = g.name;
    }
  }
  return err;
}

}  // namespace

struct ModeCase {
  AttentionMode attention;
  EvalMode eval;
  Fusion fusion;
};

class ModelGradient : public ::testing::TestWithParam<ModeCase> {};

TEST_P(ModelGradient, MatchesFiniteDifferences) {
  RunConfig cfg = fixture::tiny_config();
  cfg.attention_mode = GetParam().attention;
  cfg.eval_mode = GetParam().eval;
  cfg.fusion = GetParam().fusion;
  TaciModel model(cfg, kRaw, kEmb);
  model.init(11);
  std::mt19937_64 rng(12);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 3, rng);
  std::string worst;
  EXPECT_LT(max_rel_error(model, batch, &worst), 1e-3) << worst;
}

INSTANTIATE_TEST_SUITE_P(
    Modes, ModelGradient,
    ::testing::Values(ModeCase{AttentionMode::TA, EvalMode::GL, Fusion::CmLstm},
                      ModeCase{AttentionMode::SA, EvalMode::GL, Fusion::CmLstm},
                      ModeCase{AttentionMode::NA, EvalMode::GL, Fusion::CmLstm},
                      ModeCase{AttentionMode::TA, EvalMode::GE, Fusion::CmLstm},
                      ModeCase{AttentionMode::TA, EvalMode::LE, Fusion::CmLstm},
                      ModeCase{AttentionMode::TA, EvalMode::GL, Fusion::EM},
                      ModeCase{AttentionMode::TA, EvalMode::GL, Fusion::CAT},
                      ModeCase{AttentionMode::TA, EvalMode::GL, Fusion::CTRL}));

TEST(Model, SharedStreamParamsGradient) {
  RunConfig cfg = fixture::tiny_config();
  cfg.share_stream_params = true;
  TaciModel model(cfg, kRaw, kEmb);
  model.init(13);
  std::mt19937_64 rng(14);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 2, rng);
  std::string worst;
  EXPECT_LT(max_rel_error(model, batch, &worst), 1e-3) << worst;
}

TEST(Model, MapsAreMaskedProbabilities) {
  RunConfig cfg = fixture::tiny_config();
  cfg.model.l = 6;
  for (EvalMode mode : {EvalMode::GL, EvalMode::GE, EvalMode::LE}) {
    cfg.eval_mode = mode;
    TaciModel model(cfg, kRaw, kEmb);
    model.init(15);
    std::mt19937_64 rng(16);
    const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 4, rng);
    const ForwardOutput out = model.forward(batch.inputs, false, nullptr, nullptr);
    ASSERT_EQ(out.maps.size(), 4u);
    for (const auto& m : out.maps) {
      for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y) {
          if (x > y) EXPECT_EQ(m(x, y), 0.0);
          else {
            EXPECT_GT(m(x, y), 0.0);
            EXPECT_LT(m(x, y), 1.0);
          }
        }
    }
  }
}

TEST(Model, EnsembleIsProductOfSubmaps) {
  RunConfig cfg = fixture::tiny_config();
  TaciModel model(cfg, kRaw, kEmb);
  model.init(17);
  std::mt19937_64 rng(18);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 2, rng);
  const ForwardOutput out = model.forward(batch.inputs, false, nullptr, nullptr);
  const ProposalMap mask = make_mask(cfg.model.l);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(out.maps[i], ensemble(out.global_maps[i], out.local_maps[i], mask));
  }
}

TEST(Model, AblationsMatchFullPipelineSubmaps) {
  RunConfig cfg = fixture::tiny_config();
  TaciModel full(cfg, kRaw, kEmb);
  full.init(19);
  std::mt19937_64 rng(20);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 2, rng);
  const ForwardOutput ref = full.forward(batch.inputs, false, nullptr, nullptr);
  const ProposalMap mask = make_mask(cfg.model.l);

  for (EvalMode mode : {EvalMode::GE, EvalMode::LE}) {
    RunConfig c = cfg;
    c.eval_mode = mode;
    TaciModel ab(c, kRaw, kEmb);
    // Copy every parameter the ablated model exposes from the full model.
    std::map<std::string, Mat> values;
    full.visit_params([&](const std::string& n, Param& p) { values[n] = p.value; });
    ab.visit_params([&](const std::string& n, Param& p) {
      ASSERT_TRUE(values.count(n)) << n;
      p.value = values.at(n);
    });
    const ForwardOutput out = ab.forward(batch.inputs, false, nullptr, nullptr);
    for (std::size_t i = 0; i < 2; ++i) {
      const ProposalMap& sub = mode == EvalMode::GE ? ref.global_maps[i] : ref.local_maps[i];
      EXPECT_LT((out.maps[i] - ensemble(sub, ProposalMap::Ones(sub.rows(), sub.cols()), mask)).cwiseAbs().maxCoeff(),
                1e-14);
    }
  }
}

TEST(Model, ParameterSetsFollowConfiguration) {
  auto names = [](const RunConfig& c) {
    TaciModel m(c, kRaw, kEmb);
    std::vector<std::string> n;
    m.visit_params([&](const std::string& s, Param&) { n.push_back(s); });
    return n;
  };
  auto has_prefix = [](const std::vector<std::string>& n, const std::string& pre) {
    return std::any_of(n.begin(), n.end(), [&](const std::string& s) { return s.rfind(pre, 0) == 0; });
  };
  RunConfig cfg = fixture::tiny_config();
  auto n = names(cfg);
  EXPECT_TRUE(has_prefix(n, "attention."));
  EXPECT_TRUE(has_prefix(n, "global."));
  EXPECT_TRUE(has_prefix(n, "local."));
  cfg.attention_mode = AttentionMode::NA;
  EXPECT_FALSE(has_prefix(names(cfg), "attention."));
  cfg.eval_mode = EvalMode::GE;
  n = names(cfg);
  EXPECT_FALSE(has_prefix(n, "local."));
  EXPECT_FALSE(has_prefix(n, "score."));
  cfg.eval_mode = EvalMode::LE;
  EXPECT_FALSE(has_prefix(names(cfg), "global."));
}

TEST(Model, LossCombinesMapAndLocalTerms) {
  RunConfig cfg = fixture::tiny_config();
  TaciModel model(cfg, kRaw, kEmb);
  model.init(21);
  std::mt19937_64 rng(22);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 3, rng);
  const ForwardOutput out = model.forward(batch.inputs, false, nullptr, nullptr);
  const LossBreakdown lb = model.loss(out, batch.targets);
  double map = 0.0, local = 0.0;
  const ProposalMap mask = make_mask(cfg.model.l);
  for (std::size_t i = 0; i < 3; ++i) {
    map += map_loss(out.maps[i], batch.targets[i].iou_map, mask, cfg.loss.epsilon);
    local += local_loss(out.scores[i], batch.targets[i], cfg.loss).value;
  }
  EXPECT_NEAR(lb.map, map / 3, 1e-12);
  EXPECT_NEAR(lb.local, local / 3, 1e-12);
  EXPECT_NEAR(lb.total, lb.map + cfg.loss.lambda_local * lb.local, 1e-12);

  cfg.eval_mode = EvalMode::GE;
  TaciModel ge(cfg, kRaw, kEmb);
  ge.init(21);
  const LossBreakdown g = ge.loss(ge.forward(batch.inputs, false, nullptr, nullptr), batch.targets);
  EXPECT_EQ(g.local, 0.0);
  EXPECT_EQ(g.total, g.map);
}

TEST(Model, AttentionWeightsAreDistributions) {
  RunConfig cfg = fixture::tiny_config();
  TaciModel model(cfg, kRaw, kEmb);
  model.init(23);
  std::mt19937_64 rng(24);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 2, rng);
  const ForwardOutput out = model.forward(batch.inputs, false, nullptr, nullptr);
  ASSERT_EQ(out.attention.size(), 2u);
  for (const Vec& a : out.attention) {
    EXPECT_NEAR(a.sum(), 1.0, 1e-12);
    EXPECT_GE(a.minCoeff(), 0.0);
  }
  EXPECT_EQ(out.integrated[0].rows(), model.integrated_dim());
  EXPECT_EQ(out.integrated[0].cols(), cfg.model.l);
}

TEST(Model, DropoutOnlyWithRng) {
  RunConfig cfg = fixture::tiny_config();
  cfg.model.dropout = 0.5;
  TaciModel model(cfg, kRaw, kEmb);
  model.init(25);
  std::mt19937_64 rng(26);
  const auto batch = fixture::random_batch(cfg, kRaw, kEmb, 2, rng);
  const auto a = model.forward(batch.inputs, false, nullptr, nullptr).maps[0];
  const auto b = model.forward(batch.inputs, false, nullptr, nullptr).maps[0];
  EXPECT_EQ(a, b);
  Rng drop(27);
  const auto c = model.forward(batch.inputs, false, &drop, nullptr).maps[0];
  EXPECT_NE(a, c);
}

TEST(Model, RejectsWrongInputShapes) {
  RunConfig cfg = fixture::tiny_config();
  TaciModel model(cfg, kRaw, kEmb);
  model.init(28);
  std::mt19937_64 rng(29);
  ModelInput in{oracle::random_mat(kRaw, cfg.model.l + 1, rng), oracle::random_mat(kEmb, 2, rng)};
  EXPECT_ANY_THROW(model.predict_map(in));
  in.clips = oracle::random_mat(kRaw + 1, cfg.model.l, rng);
  EXPECT_ANY_THROW(model.predict_map(in));
}
