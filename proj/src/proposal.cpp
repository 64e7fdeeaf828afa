#include "cmtml/proposal.hpp"

#include <algorithm>
#include <fstream>

namespace cmtml {

ProposalMap to_map(const Mat& row, int l) {
  ProposalMap m(l, l);
  for (int x = 0; x < l; ++x) {
    for (int y = 0; y < l; ++y) m(x, y) = row(0, x * l + y);
  }
  return m;
}

Mat from_map(const ProposalMap& map) {
  const auto l = static_cast<int>(map.rows());
  Mat row(1, static_cast<Eigen::Index>(l) * l);
  for (int x = 0; x < l; ++x) {
    for (int y = 0; y < l; ++y) row(0, x * l + y) = map(x, y);
  }
  return row;
}

// ---- global -----------------------------------------------------------------

GlobalEvaluator::GlobalEvaluator(const ConvStackConfig& cfg, int feature_dim, int l)
    : l_(l), stack_(cfg, Geometry::Map2D, l, feature_dim, 1, /*pair_input=*/true) {}

std::vector<ProposalMap> GlobalEvaluator::forward(const std::vector<Mat>& features, bool train, Cache* cache) {
  std::vector<Mat> out = stack_.forward(features, train, cache);
  std::vector<ProposalMap> maps;
  maps.reserve(out.size());
  for (const auto& o : out) maps.push_back(to_map(o, l_));
  return maps;
}

std::vector<Mat> GlobalEvaluator::backward(const Cache& cache, const std::vector<ProposalMap>& d_maps) {
  std::vector<Mat> d;
  d.reserve(d_maps.size());
  for (const auto& m : d_maps) d.push_back(from_map(m));
  return stack_.backward(cache, d);
}

// ---- boundary scores ----------------------------------------------------------

BoundaryScorer::BoundaryScorer(const ConvStackConfig& cfg, int feature_dim, int l)
    : stack_(cfg, Geometry::Seq1D, l, feature_dim, 3) {}

std::vector<BoundaryScores> BoundaryScorer::forward(const std::vector<Mat>& features, bool train, Cache* cache) {
  std::vector<Mat> out = stack_.forward(features, train, cache);
  std::vector<BoundaryScores> scores;
  scores.reserve(out.size());
  for (const auto& o : out) {
    scores.push_back({o.row(0).transpose(), o.row(1).transpose(), o.row(2).transpose()});
  }
  return scores;
}

std::vector<Mat> BoundaryScorer::backward(const Cache& cache, const std::vector<BoundaryScores>& d_scores) {
  std::vector<Mat> d;
  d.reserve(d_scores.size());
  for (const auto& s : d_scores) {
    Mat m(3, s.start.size());
    m.row(0) = s.start.transpose();
    m.row(1) = s.end.transpose();
    m.row(2) = s.momentness.transpose();
    d.push_back(std::move(m));
  }
  return stack_.backward(cache, d);
}

// ---- local ------------------------------------------------------------------

Mat local_base_map(const BoundaryScores& scores) {
  const auto l = static_cast<int>(scores.start.size());
  Vec prefix(l + 1);
  prefix(0) = 0.0;
  for (int t = 0; t < l; ++t) prefix(t + 1) = prefix(t) + scores.momentness(t);
  Mat base = Mat::Zero(3, static_cast<Eigen::Index>(l) * l);
  for (int x = 0; x < l; ++x) {
    for (int y = 0; y < l; ++y) {
      const Eigen::Index c = static_cast<Eigen::Index>(x) * l + y;
      base(0, c) = scores.start(x);
      base(1, c) = scores.end(y);
      if (x <= y) base(2, c) = (prefix(y + 1) - prefix(x)) / static_cast<double>(y - x + 1);
    }
  }
  return base;
}

BoundaryScores local_base_map_backward(const Mat& d_base, const BoundaryScores& scores) {
  const auto l = static_cast<int>(scores.start.size());
  BoundaryScores g{Vec::Zero(l), Vec::Zero(l), Vec::Zero(l)};
  Vec diff = Vec::Zero(l + 1);
  for (int x = 0; x < l; ++x) {
    for (int y = 0; y < l; ++y) {
      const Eigen::Index c = static_cast<Eigen::Index>(x) * l + y;
      g.start(x) += d_base(0, c);
      g.end(y) += d_base(1, c);
      if (x <= y) {
        const double w = d_base(2, c) / static_cast<double>(y - x + 1);
        diff(x) += w;
        diff(y + 1) -= w;
      }
    }
  }
  double run = 0.0;
  for (int t = 0; t < l; ++t) {
    run += diff(t);
    g.momentness(t) = run;
  }
  return g;
}

LocalEvaluator::LocalEvaluator(const ConvStackConfig& cfg, int l)
    : l_(l), stack_(cfg, Geometry::Map2D, l, 3, 1) {}

std::vector<ProposalMap> LocalEvaluator::forward(const std::vector<BoundaryScores>& scores, bool train,
                                                 Cache* cache) {
  std::vector<Mat> base;
  base.reserve(scores.size());
  for (const auto& s : scores) base.push_back(local_base_map(s));
  std::vector<Mat> out = stack_.forward(base, train, cache ? &cache->stack : nullptr);
  if (cache) cache->scores = scores;
  std::vector<ProposalMap> maps;
  maps.reserve(out.size());
  for (const auto& o : out) maps.push_back(to_map(o, l_));
  return maps;
}

std::vector<BoundaryScores> LocalEvaluator::backward(const Cache& cache, const std::vector<ProposalMap>& d_maps) {
  std::vector<Mat> d;
  d.reserve(d_maps.size());
  for (const auto& m : d_maps) d.push_back(from_map(m));
  std::vector<Mat> d_base = stack_.backward(cache.stack, d);
  std::vector<BoundaryScores> out;
  out.reserve(d_base.size());
  for (std::size_t i = 0; i < d_base.size(); ++i) out.push_back(local_base_map_backward(d_base[i], cache.scores[i]));
  return out;
}

// ---- mask, ensemble, selection --------------------------------------------------

ProposalMap make_mask(int l) {
  if (l < 1) throw ConfigError("mask size must be >= 1");
  ProposalMap m = ProposalMap::Zero(l, l);
  for (int x = 0; x < l; ++x) {
    for (int y = x; y < l; ++y) m(x, y) = 1.0;
  }
  return m;
}

ProposalMap ensemble(const ProposalMap& global, const ProposalMap& local, const ProposalMap& mask) {
  if (global.rows() != local.rows() || global.cols() != local.cols() || global.rows() != mask.rows() ||
      global.cols() != mask.cols()) {
    throw ConfigError("ensemble: map shapes differ");
  }
  return global.cwiseProduct(local).cwiseProduct(mask);
}

std::pair<double, double> cell_to_seconds(int x, int y, double duration, int l) {
  return {x * duration / l, (y + 1) * duration / l};
}

MomentPrediction select_moment(const ProposalMap& map, double duration) {
  const auto l = static_cast<int>(map.rows());
  if (l < 1 || map.cols() != l) throw ConfigError("select_moment: map must be square and non-empty");
  int bx = 0;
  int by = 0;
  double best = map(0, 0);
  double lowest = best;
  for (int x = 0; x < l; ++x) {
    for (int y = x; y < l; ++y) {
      const double v = map(x, y);
      if (v > best) {
        best = v;
        bx = x;
        by = y;
      }
      lowest = std::min(lowest, v);
    }
  }
  MomentPrediction p;
  p.start_idx = bx;
  p.end_idx = by;
  p.score = best;
  p.degenerate = !(best > lowest);
  std::tie(p.t_start, p.t_end) = cell_to_seconds(bx, by, duration, l);
  return p;
}

std::vector<MomentCell> rank_moments(const ProposalMap& map, int n) {
  if (n < 1) throw InputError("rank_moments: n must be >= 1");
  const auto l = static_cast<int>(map.rows());
  std::vector<MomentCell> cells;
  cells.reserve(static_cast<std::size_t>(l) * (l + 1) / 2);
  for (int x = 0; x < l; ++x) {
    for (int y = x; y < l; ++y) cells.push_back({x, y, map(x, y)});
  }
  auto better = [](const MomentCell& a, const MomentCell& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.x != b.x) return a.x < b.x;
    return a.y < b.y;
  };
  const std::size_t keep = std::min(cells.size(), static_cast<std::size_t>(n));
  std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(keep), cells.end(), better);
  cells.resize(keep);
  return cells;
}

void write_map_pgm(const std::filesystem::path& path, const ProposalMap& map) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "P2\n" << map.cols() << ' ' << map.rows() << "\n255\n";
  for (Eigen::Index x = 0; x < map.rows(); ++x) {
    for (Eigen::Index y = 0; y < map.cols(); ++y) {
      const double v = std::clamp(map(x, y), 0.0, 1.0);
      out << (y ? " " : "") << static_cast<int>(std::lround(v * 255.0));
    }
    out << '\n';
  }
}

void write_map_csv(const std::filesystem::path& path, const ProposalMap& map) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  char buf[32];
  for (Eigen::Index x = 0; x < map.rows(); ++x) {
    for (Eigen::Index y = 0; y < map.cols(); ++y) {
      std::snprintf(buf, sizeof(buf), "%.17g", map(x, y));
      out << (y ? "," : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace cmtml
