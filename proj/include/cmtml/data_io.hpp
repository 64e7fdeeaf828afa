#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmtml/common.hpp"

namespace cmtml {

/// Per-clip features as extracted, before length unification. Columns are clips.
struct RawVideoFeatures {
  std::string video_id;
  Mat features;  // d_raw x T_clips
  double duration_seconds = 0.0;
};

/// Features resampled onto the fixed l-clip grid (d x l).
struct ClipFeatureSequence {
  Mat features;

  Eigen::Index dim() const { return features.rows(); }
  Eigen::Index length() const { return features.cols(); }
};

/// A ground-truth moment. Clip indices use the inclusive-end convention:
/// the moment covers clips start_idx..end_idx.
struct MomentAnnotation {
  std::string video_id;
  std::string query_text;
  double t_start = 0.0;
  double t_end = 0.0;
  double duration_seconds = 0.0;
  int start_idx = 0;
  int end_idx = 0;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::unordered_map<std::string, int> vocabulary, Mat vectors);

  /// Row-major view: one row per word.
  const Mat& vectors() const { return vectors_; }
  const std::unordered_map<std::string, int>& vocabulary() const { return vocab_; }
  Eigen::Index dim() const { return vectors_.cols(); }
  Eigen::Index size() const { return vectors_.rows(); }

  /// Embedding of one word; out-of-vocabulary words map to the zero vector.
  Vec lookup(const std::string& word) const;

  /// dim x N matrix of embeddings for a token sequence.
  Mat embed(const std::vector<std::string>& tokens) const;

 private:
  std::unordered_map<std::string, int> vocab_;
  Mat vectors_;  // V x dim
};

struct SyntheticSpec {
  int n_samples = 100;
  int l = 32;
  int d = 16;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  int vocab_size = 32;
  int embedding_dim = 300;
  int min_tokens = 2;
  int max_tokens = 5;

  void validate() const;
};

struct Sample {
  ClipFeatureSequence features;
  std::vector<std::string> tokens;
  MomentAnnotation annotation;
};

struct SyntheticDataset {
  std::vector<Sample> samples;
  EmbeddingTable embeddings;
  /// Per-token base vectors (vocab_size x d) used to build planted patterns.
  Mat token_basis;
};

/// Linear interpolation of the clip axis onto l evenly spaced positions
/// spanning [0, T_clips - 1].
ClipFeatureSequence interpolate_to_fixed_length(const RawVideoFeatures& raw, int l);

/// Seconds -> inclusive clip span on an l-clip grid.
std::pair<int, int> project_annotation(double t_start, double t_end, double duration, int l);

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec);

/// Pattern planted inside the moment for a given token sequence.
Vec synthetic_pattern(const Mat& token_basis,
                      const std::unordered_map<std::string, int>& vocabulary,
                      const std::vector<std::string>& tokens);

// File formats.
//   features: "CMTMLFV1", u32 d_raw, u32 T_clips, f64 duration, f32 body clip-major (LE)
//   annotations: JSON array of {video_id, query, t_start, t_end, duration}
//   embeddings: "word v1 v2 ... vD" per line
RawVideoFeatures load_feature_file(const std::filesystem::path& path);
void save_feature_file(const std::filesystem::path& path, const RawVideoFeatures& raw);

/// Loads annotations and projects them onto an l-clip grid.
std::vector<MomentAnnotation> load_annotations(const std::filesystem::path& path, int l);
void save_annotations(const std::filesystem::path& path,
                      const std::vector<MomentAnnotation>& annotations);

/// Duplicate words: the last entry wins and a warning is appended to
/// `warnings` (or printed to stderr when `warnings` is null).
EmbeddingTable load_embeddings(const std::filesystem::path& path,
                               std::vector<std::string>* warnings = nullptr);
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table);

/// Writes a synthetic dataset as feature files, annotations.json and embeddings.txt.
void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds);

/// Lowercased whitespace tokenization with leading/trailing punctuation trimmed.
std::vector<std::string> tokenize(std::string_view text);

}  // namespace cmtml
