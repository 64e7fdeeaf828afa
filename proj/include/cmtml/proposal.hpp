#pragma once

#include <filesystem>
#include <vector>

#include "cmtml/common.hpp"
#include "cmtml/conv.hpp"

namespace cmtml {

/// l x l score map; row = start clip x, column = end clip y.
using ProposalMap = Mat;

struct BoundaryScores {
  Vec start;
  Vec end;
  Vec momentness;
};

/// Converts a (1 x l*l) stack output to an l x l map and back.
ProposalMap to_map(const Mat& row, int l);
Mat from_map(const ProposalMap& map);

/// Global submodule: boundary-pairing base map followed by a 2-D conv stack.
class GlobalEvaluator {
 public:
  GlobalEvaluator() = default;
  GlobalEvaluator(const ConvStackConfig& cfg, int feature_dim, int l);

  void init(Rng& rng) { stack_.init(rng); }
  void visit(const std::string& prefix, const ParamVisitor& fn) { stack_.visit(prefix, fn); }
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn) { stack_.visit_buffers(prefix, fn); }

  using Cache = ConvStack::Cache;
  std::vector<ProposalMap> forward(const std::vector<Mat>& features, bool train, Cache* cache);
  std::vector<Mat> backward(const Cache& cache, const std::vector<ProposalMap>& d_maps);

  ConvStack& stack() { return stack_; }

 private:
  int l_ = 0;
  ConvStack stack_;
};

/// Start / end / momentness sequences from a 1-D conv stack with three
/// sigmoid outputs.
class BoundaryScorer {
 public:
  BoundaryScorer() = default;
  BoundaryScorer(const ConvStackConfig& cfg, int feature_dim, int l);

  void init(Rng& rng) { stack_.init(rng); }
  void visit(const std::string& prefix, const ParamVisitor& fn) { stack_.visit(prefix, fn); }
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn) { stack_.visit_buffers(prefix, fn); }

  using Cache = ConvStack::Cache;
  std::vector<BoundaryScores> forward(const std::vector<Mat>& features, bool train, Cache* cache);
  std::vector<Mat> backward(const Cache& cache, const std::vector<BoundaryScores>& d_scores);

  ConvStack& stack() { return stack_; }

 private:
  ConvStack stack_;
};

/// Three-channel base map for the local submodule:
///   channel 0 at (x, y) = start[x]
///   channel 1 at (x, y) = end[y]
///   channel 2 at (x, y) = mean momentness over clips x..y (0 when x > y)
Mat local_base_map(const BoundaryScores& scores);
BoundaryScores local_base_map_backward(const Mat& d_base, const BoundaryScores& scores);

class LocalEvaluator {
 public:
  LocalEvaluator() = default;
  LocalEvaluator(const ConvStackConfig& cfg, int l);

  void init(Rng& rng) { stack_.init(rng); }
  void visit(const std::string& prefix, const ParamVisitor& fn) { stack_.visit(prefix, fn); }
  void visit_buffers(const std::string& prefix, const BufferVisitor& fn) { stack_.visit_buffers(prefix, fn); }

  struct Cache {
    ConvStack::Cache stack;
    std::vector<BoundaryScores> scores;
  };
  std::vector<ProposalMap> forward(const std::vector<BoundaryScores>& scores, bool train, Cache* cache);
  std::vector<BoundaryScores> backward(const Cache& cache, const std::vector<ProposalMap>& d_maps);

  ConvStack& stack() { return stack_; }

 private:
  int l_ = 0;
  ConvStack stack_;
};

/// 1 where start <= end, else 0.
ProposalMap make_mask(int l);

/// Element-wise product of the global map, local map and mask.
ProposalMap ensemble(const ProposalMap& global, const ProposalMap& local, const ProposalMap& mask);

struct MomentCell {
  int x = 0;
  int y = 0;
  double score = 0.0;
};

struct MomentPrediction {
  double t_start = 0.0;
  double t_end = 0.0;
  double score = 0.0;
  int start_idx = 0;
  int end_idx = 0;
  bool degenerate = false;  // the map had no positive valid cell
};

/// Clip span -> seconds, inclusive end: [x * dur / l, (y + 1) * dur / l].
std::pair<double, double> cell_to_seconds(int x, int y, double duration, int l);

/// Argmax over valid cells (x <= y); ties go to the smallest x, then y.
MomentPrediction select_moment(const ProposalMap& map, double duration);

/// Valid cells sorted by descending score with the same tie-break. Returns
/// every valid cell when n exceeds their count.
std::vector<MomentCell> rank_moments(const ProposalMap& map, int n);

/// Plain-text PGM (P2), scores clamped to [0, 1] and scaled to 0..255.
void write_map_pgm(const std::filesystem::path& path, const ProposalMap& map);
/// CSV of raw scores, one row per start clip.
void write_map_csv(const std::filesystem::path& path, const ProposalMap& map);

}  // namespace cmtml
