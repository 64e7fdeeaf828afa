#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmtml/data_io.hpp"

namespace cmtml {

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

/// Temporal IoU of two second-valued intervals (intersection / union length).
double temporal_iou(const Interval& a, const Interval& b);

/// Best IoU among the first n predictions; 0 when there are none.
double top_n_iou(const std::vector<Interval>& ranked, const Interval& truth, int n);

/// Fraction of queries whose top-n predictions reach IoU >= m.
double recall_at(const std::vector<std::vector<Interval>>& predictions, const std::vector<Interval>& truths, int n,
                 double m);

struct EvalResult {
  std::map<std::pair<int, double>, double> recall;  // (n, m) -> recall
  std::vector<double> best_iou;                     // per query, over the largest n
  std::string group = "all";
};

EvalResult evaluate_recall(const std::vector<std::vector<Interval>>& predictions, const std::vector<Interval>& truths,
                           const std::vector<int>& n_list, const std::vector<double>& m_list);

enum class QueryGroup { Temporal, Spatial };

const std::vector<std::string>& group_words(QueryGroup g);

/// True when the tokenised query contains a word from the group's list.
bool in_group(const std::string& query, QueryGroup g);

/// Indices of annotations whose query belongs to the group.
std::vector<std::size_t> split_queries(const std::vector<MomentAnnotation>& annotations, QueryGroup g);

/// Writes rows "n,m,recall,query_group" with a header line.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EvalResult>& results);

/// Expected R@1 at IoU threshold m when the prediction is a uniformly random
/// valid cell of the l-clip grid, computed by enumeration.
double chance_recall_exact(const std::vector<std::pair<int, int>>& truths, int l, double m);

/// The same quantity estimated by sampling `draws` random cells per query.
double chance_recall_monte_carlo(const std::vector<std::pair<int, int>>& truths, int l, double m, int draws,
                                 std::uint64_t seed);

}  // namespace cmtml
