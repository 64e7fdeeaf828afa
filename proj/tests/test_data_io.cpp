#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "cmtml/data_io.hpp"
#include "oracles.hpp"

using namespace cmtml;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cmtml_data_io";
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

}  // namespace

TEST(Interpolate, IdentityWhenLengthsMatch) {
  std::mt19937_64 rng(1);
  RawVideoFeatures raw{"v", oracle::random_mat(3, 7, rng), 7.0};
  EXPECT_EQ(interpolate_to_fixed_length(raw, 7).features, raw.features);
}

TEST(Interpolate, MidpointOfTwoClips) {
  Mat f(2, 2);
  f << 1.0, 3.0, -2.0, 4.0;
  const Mat out = interpolate_to_fixed_length({"v", f, 1.0}, 3).features;
  EXPECT_EQ(out.col(0), f.col(0));
  EXPECT_EQ(out.col(1), (f.col(0) + f.col(1)) / 2.0);
  EXPECT_EQ(out.col(2), f.col(1));
}

TEST(Interpolate, MatchesScalarLerpOracle) {
  std::mt19937_64 rng(2);
  RawVideoFeatures raw{"v", oracle::random_mat(5, 100, rng), 50.0};
  const Mat out = interpolate_to_fixed_length(raw, 64).features;
  for (int j = 0; j < 64; ++j) {
    const double pos = j * 99.0 / 63.0;
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, 99);
    const double w = pos - lo;
    for (int r = 0; r < 5; ++r) {
      EXPECT_NEAR(out(r, j), (1.0 - w) * raw.features(r, lo) + w * raw.features(r, hi), 1e-12);
    }
  }
}

TEST(Interpolate, ConstantStaysConstantAndErrors) {
  RawVideoFeatures single{"v", Mat::Constant(3, 1, 2.5), 1.0};
  EXPECT_EQ(interpolate_to_fixed_length(single, 9).features, Mat::Constant(3, 9, 2.5));
  RawVideoFeatures flat{"v", Mat::Constant(2, 13, -1.25), 1.0};
  EXPECT_EQ(interpolate_to_fixed_length(flat, 64).features, Mat::Constant(2, 64, -1.25));
  EXPECT_THROW(interpolate_to_fixed_length({"v", Mat(0, 0), 1.0}, 4), FormatError);
  EXPECT_THROW(interpolate_to_fixed_length(flat, 1), InputError);
}

TEST(ProjectAnnotation, Examples) {
  EXPECT_EQ(project_annotation(0, 120, 120, 64), std::make_pair(0, 63));
  EXPECT_EQ(project_annotation(30, 60, 120, 64), std::make_pair(16, 31));
  EXPECT_EQ(project_annotation(119.9, 120, 120, 64), std::make_pair(63, 63));
  EXPECT_THROW(project_annotation(5, 4, 10, 8), AnnotationError);
  EXPECT_THROW(project_annotation(0, 1, 0, 8), AnnotationError);
}

TEST(ProjectAnnotation, MonotoneAndOrdered) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double dur = 1.0 + 200.0 * u(rng);
    double a = dur * u(rng), b = dur * u(rng);
    if (a > b) std::swap(a, b);
    const auto [s, e] = project_annotation(a, b, dur, 32);
    EXPECT_LE(s, e);
    EXPECT_GE(s, 0);
    EXPECT_LT(e, 32);
    const auto [s2, e2] = project_annotation(std::min(b, a + 0.01 * dur), b, dur, 32);
    EXPECT_GE(s2, s);
    (void)e2;
  }
}

TEST(Synthetic, DeterministicAndPlantsPattern) {
  SyntheticSpec spec;
  spec.n_samples = 20;
  spec.l = 16;
  spec.d = 6;
  spec.noise_std = 0.0;
  spec.seed = 5;
  const SyntheticDataset a = generate_synthetic_dataset(spec);
  const SyntheticDataset b = generate_synthetic_dataset(spec);
  ASSERT_EQ(a.samples.size(), 20u);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].features.features, b.samples[i].features.features);
    EXPECT_EQ(a.samples[i].tokens, b.samples[i].tokens);
    const auto& s = a.samples[i];
    const Vec pattern = synthetic_pattern(a.token_basis, a.embeddings.vocabulary(), s.tokens);
    for (int t = 0; t < spec.l; ++t) {
      const bool inside = t >= s.annotation.start_idx && t <= s.annotation.end_idx;
      if (inside) EXPECT_EQ(s.features.features.col(t), pattern);
      else EXPECT_EQ(s.features.features.col(t), Vec::Zero(spec.d));
    }
    EXPECT_EQ(project_annotation(s.annotation.t_start, s.annotation.t_end, s.annotation.duration_seconds, spec.l),
              std::make_pair(s.annotation.start_idx, s.annotation.end_idx));
  }
  EXPECT_EQ(a.embeddings.dim(), 300);
}

TEST(FeatureFile, RoundTripIsExactForFloat32Values) {
  std::mt19937_64 rng(4);
  RawVideoFeatures raw{"clip", oracle::random_mat(4, 9, rng), 12.5};
  raw.features = raw.features.cast<float>().cast<double>();
  save_feature_file(scratch("f.bin"), raw);
  const RawVideoFeatures back = load_feature_file(scratch("f.bin"));
  EXPECT_EQ(back.features, raw.features);
  EXPECT_EQ(back.duration_seconds, 12.5);
  EXPECT_EQ(back.video_id, "f");
}

TEST(FeatureFile, MalformedFilesReportByteOffsets) {
  write_text(scratch("bad_magic.bin"), "NOTMAGIC and more bytes here");
  try {
    load_feature_file(scratch("bad_magic.bin"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 0"), std::string::npos);
  }
  std::mt19937_64 rng(5);
  save_feature_file(scratch("full.bin"), {"x", oracle::random_mat(2, 3, rng), 1.0});
  std::ifstream in(scratch("full.bin"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  write_text(scratch("short.bin"), bytes.substr(0, bytes.size() - 4));
  try {
    load_feature_file(scratch("short.bin"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
}

TEST(Annotations, LoadProjectsAndRejectsBadRows) {
  write_text(scratch("ann.json"),
             R"([{"video_id": "a", "query": "Person opens door.", "t_start": 30, "t_end": 60, "duration": 120}])");
  const auto anns = load_annotations(scratch("ann.json"), 64);
  ASSERT_EQ(anns.size(), 1u);
  EXPECT_EQ(anns[0].start_idx, 16);
  EXPECT_EQ(anns[0].end_idx, 31);
  EXPECT_EQ(anns[0].query_text, "Person opens door.");

  write_text(scratch("bad.json"), R"([{"video_id": "a", "query": "q", "t_start": 9, "t_end": 3, "duration": 10}])");
  EXPECT_THROW(load_annotations(scratch("bad.json"), 64), AnnotationError);
  write_text(scratch("junk.json"), "[{");
  EXPECT_THROW(load_annotations(scratch("junk.json"), 64), FormatError);

  save_annotations(scratch("ann2.json"), anns);
  const auto again = load_annotations(scratch("ann2.json"), 64);
  EXPECT_EQ(again[0].t_end, 60.0);
  EXPECT_EQ(again[0].video_id, "a");
}

TEST(Embeddings, DuplicateWordLastWinsWithWarning) {
  write_text(scratch("emb.txt"), "cat 1 2 3\ndog 4 5 6\ncat 7 8 9\n");
  std::vector<std::string> warnings;
  const EmbeddingTable t = load_embeddings(scratch("emb.txt"), &warnings);
  EXPECT_EQ(t.dim(), 3);
  EXPECT_EQ(t.lookup("cat"), (Vec(3) << 7, 8, 9).finished());
  EXPECT_EQ(t.lookup("bird"), Vec::Zero(3));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("cat"), std::string::npos);

  write_text(scratch("ragged.txt"), "a 1 2\nb 1\n");
  try {
    load_embeddings(scratch("ragged.txt"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("ragged.txt:2:"), std::string::npos);
  }

  save_embeddings(scratch("emb2.txt"), t);
  const EmbeddingTable back = load_embeddings(scratch("emb2.txt"));
  EXPECT_EQ(back.lookup("dog"), t.lookup("dog"));
}

TEST(Tokenize, LowercasesAndTrims) {
  EXPECT_EQ(tokenize("  The man, sits DOWN.  "), (std::vector<std::string>{"the", "man", "sits", "down"}));
  EXPECT_TRUE(tokenize(" ... ").empty());
}

TEST(SyntheticWriter, WritesLoadableDataset) {
  SyntheticSpec spec;
  spec.n_samples = 3;
  spec.l = 8;
  spec.d = 4;
  spec.embedding_dim = 5;
  const auto ds = generate_synthetic_dataset(spec);
  const fs::path dir = scratch("synth_out");
  write_synthetic_dataset(dir, ds);
  const auto anns = load_annotations(dir / "annotations.json", 8);
  ASSERT_EQ(anns.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(anns[i].start_idx, ds.samples[i].annotation.start_idx);
    EXPECT_EQ(anns[i].end_idx, ds.samples[i].annotation.end_idx);
    const auto raw = load_feature_file(dir / "features" / (anns[i].video_id + ".bin"));
    EXPECT_LT((raw.features - ds.samples[i].features.features).cwiseAbs().maxCoeff(), 1e-6);
  }
  EXPECT_EQ(load_embeddings(dir / "embeddings.txt").dim(), 5);
}
