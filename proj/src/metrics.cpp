#include "cmtml/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>

#include "cmtml/losses.hpp"

namespace cmtml {

double temporal_iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  if (uni <= 0.0) return (a.start == b.start && a.end == b.end) ? 1.0 : 0.0;
  return inter / uni;
}

double top_n_iou(const std::vector<Interval>& ranked, const Interval& truth, int n) {
  double best = 0.0;
  const std::size_t upto = std::min(ranked.size(), static_cast<std::size_t>(std::max(n, 0)));
  for (std::size_t i = 0; i < upto; ++i) best = std::max(best, temporal_iou(ranked[i], truth));
  return best;
}

double recall_at(const std::vector<std::vector<Interval>>& predictions, const std::vector<Interval>& truths, int n,
                 double m) {
  if (predictions.size() != truths.size()) throw InputError("recall_at: prediction/annotation count mismatch");
  if (truths.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < truths.size(); ++q) {
    if (!predictions[q].empty() && top_n_iou(predictions[q], truths[q], n) >= m) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

EvalResult evaluate_recall(const std::vector<std::vector<Interval>>& predictions, const std::vector<Interval>& truths,
                           const std::vector<int>& n_list, const std::vector<double>& m_list) {
  EvalResult r;
  for (int n : n_list) {
    for (double m : m_list) r.recall[{n, m}] = recall_at(predictions, truths, n, m);
  }
  const int n_max = n_list.empty() ? 1 : *std::max_element(n_list.begin(), n_list.end());
  for (std::size_t q = 0; q < truths.size(); ++q) r.best_iou.push_back(top_n_iou(predictions[q], truths[q], n_max));
  return r;
}

const std::vector<std::string>& group_words(QueryGroup g) {
  static const std::vector<std::string> temporal = {"finally", "afterwards", "while", "after", "until", "before"};
  static const std::vector<std::string> spatial = {"above",  "across",  "around", "behind", "beside",
                                                   "between", "inside", "near",   "outside", "over",
                                                   "under",  "front",   "left",   "right"};
  return g == QueryGroup::Temporal ? temporal : spatial;
}

bool in_group(const std::string& query, QueryGroup g) {
  const auto& words = group_words(g);
  for (const auto& tok : tokenize(query)) {
    if (std::find(words.begin(), words.end(), tok) != words.end()) return true;
  }
  return false;
}

std::vector<std::size_t> split_queries(const std::vector<MomentAnnotation>& annotations, QueryGroup g) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    if (in_group(annotations[i].query_text, g)) idx.push_back(i);
  }
  return idx;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EvalResult>& results) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "n,m,recall,query_group\n";
  char buf[128];
  for (const auto& r : results) {
    for (const auto& [key, value] : r.recall) {
      std::snprintf(buf, sizeof(buf), "%d,%.2f,%.6f,", key.first, key.second, value);
      out << buf << r.group << '\n';
    }
  }
}

double chance_recall_exact(const std::vector<std::pair<int, int>>& truths, int l, double m) {
  if (truths.empty()) return 0.0;
  const double cells = static_cast<double>(l) * (l + 1) / 2.0;
  double total = 0.0;
  for (const auto& [s, e] : truths) {
    int hits = 0;
    for (int x = 0; x < l; ++x) {
      for (int y = x; y < l; ++y) {
        if (interval_iou(x, y, s, e) >= m) ++hits;
      }
    }
    total += hits / cells;
  }
  return total / static_cast<double>(truths.size());
}

double chance_recall_monte_carlo(const std::vector<std::pair<int, int>>& truths, int l, double m, int draws,
                                 std::uint64_t seed) {
  if (truths.empty() || draws < 1) return 0.0;
  Rng rng(seed);
  std::uniform_int_distribution<int> clip(0, l - 1);
  std::size_t hits = 0;
  for (const auto& [s, e] : truths) {
    for (int i = 0; i < draws; ++i) {
      // Rejection keeps every x <= y cell equally likely.
      int x = clip(rng);
      int y = clip(rng);
      while (x > y) {
        x = clip(rng);
        y = clip(rng);
      }
      if (interval_iou(x, y, s, e) >= m) ++hits;
    }
  }
  return static_cast<double>(hits) / (static_cast<double>(draws) * static_cast<double>(truths.size()));
}

}  // namespace cmtml
