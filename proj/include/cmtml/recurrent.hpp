#pragma once

#include <string>
#include <vector>

#include "cmtml/common.hpp"

namespace cmtml {

struct CellState {
  Vec h;
  Vec c;

  static CellState zeros(Eigen::Index p) { return {Vec::Zero(p), Vec::Zero(p)}; }
};

// ---------------------------------------------------------------------------
// Standard LSTM
// ---------------------------------------------------------------------------

/// Gate rows are stacked [forget; input; output; candidate], so W_f is
/// W.value.topRows(p), W_i the next p rows, and so on.
struct LstmParams {
  Param W;  // 4p x d
  Param U;  // 4p x p
  Param b;  // 4p x 1

  LstmParams() = default;
  LstmParams(int input_dim, int hidden);

  Eigen::Index hidden() const { return U.value.cols(); }
  Eigen::Index input_dim() const { return W.value.cols(); }
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LstmStepCache {
  Vec h_prev, c_prev;
  Vec f, i, o, g;
  Vec c, tanh_c;
};

CellState lstm_step(const Vec& x, const CellState& state, const LstmParams& params);

struct LstmSequenceCache {
  Mat x;  // input sequence in original order
  bool reverse = false;
  std::vector<LstmStepCache> steps;  // in processing order
};

/// Runs one direction from a zero state. Column t of the result is the hidden
/// state right after consuming input column t (in processing order).
Mat lstm_run(const Mat& x, const LstmParams& params, bool reverse, LstmSequenceCache* cache);

/// Backpropagates dH (p x T, aligned with lstm_run's output) through the run.
/// Accumulates parameter gradients and returns dX.
Mat lstm_run_backward(const LstmSequenceCache& cache, const Mat& d_hidden, LstmParams& params);

// ---------------------------------------------------------------------------
// Cross-modal LSTM
// ---------------------------------------------------------------------------

/// Parameters of the cross-modal cell.
///
/// The cross-modal filter is softmax(We * tanh(Wc*q + Wd*v)) over the p hidden
/// coordinates. Candidate paths are v_t = tanh(a * Wv*v + Uc*h) and
/// s_t = tanh(a * Ws*q + Uc*h) with one shared Uc. Gate rows in Wx (clip),
/// Wy (query), U and b are stacked [forget; input; modal; output].
struct CmLstmParams {
  Param Wc, Wd;  // p x d
  Param We;      // p x p
  Param Wv, Ws;  // p x d
  Param Uc;      // p x p
  Param Wx, Wy;  // 4p x d
  Param U;       // 4p x p
  Param b;       // 4p x 1

  CmLstmParams() = default;
  CmLstmParams(int input_dim, int hidden);

  Eigen::Index hidden() const { return Uc.value.rows(); }
  Eigen::Index input_dim() const { return Wd.value.cols(); }
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct CmLstmStepCache {
  Vec h_prev, c_prev;
  Vec u;         // tanh(Wc q + Wd v)
  Vec a;         // cross-modal filter
  Vec vis, sen;  // Wv v, Ws q
  Vec v_t, s_t;
  Vec f, i, m, o;
  Vec cand;
  Vec c, tanh_c;
};

/// One step of the cross-modal cell. `cache` may be null.
CellState cm_lstm_step(const Vec& clip, const Vec& query, const CellState& state,
                       const CmLstmParams& params, CmLstmStepCache* cache = nullptr);

struct CmLstmStepGrads {
  Vec d_clip, d_query;
  Vec dh_prev, dc_prev;
};

/// Backward of a single step. Accumulates into params' gradients.
CmLstmStepGrads cm_lstm_step_backward(const Vec& clip, const Vec& query, const CmLstmStepCache& cache,
                                      const Vec& dh, const Vec& dc, CmLstmParams& params);

struct CmSequenceCache {
  Mat x;
  Vec q;
  bool reverse = false;
  std::vector<CmLstmStepCache> steps;  // in processing order
};

/// Runs the cell over clip columns with the query held constant.
Mat cm_lstm_run(const Mat& x, const Vec& q, const CmLstmParams& params, bool reverse,
                CmSequenceCache* cache);

struct CmRunGrads {
  Mat dx;
  Vec dq;
};

CmRunGrads cm_lstm_run_backward(const CmSequenceCache& cache, const Mat& d_hidden, CmLstmParams& params);

// ---------------------------------------------------------------------------
// Bidirectional runners
// ---------------------------------------------------------------------------

struct BiCmCache {
  CmSequenceCache fwd, bwd;
};

/// 2p x l: column t stacks the forward state after clips 0..t over the
/// backward state after clips l-1..t.
Mat run_bidirectional(const Mat& stream, const Vec& query, const CmLstmParams& fwd,
                      const CmLstmParams& bwd, BiCmCache* cache = nullptr);

CmRunGrads run_bidirectional_backward(const BiCmCache& cache, const Mat& d_out, CmLstmParams& fwd,
                                      CmLstmParams& bwd);

struct BiLstmCache {
  LstmSequenceCache fwd, bwd;
};

Mat run_bidirectional_lstm(const Mat& x, const LstmParams& fwd, const LstmParams& bwd,
                           BiLstmCache* cache = nullptr);
Mat run_bidirectional_lstm_backward(const BiLstmCache& cache, const Mat& d_out, LstmParams& fwd,
                                    LstmParams& bwd);

// ---------------------------------------------------------------------------
// Fusion variants and feature integration
// ---------------------------------------------------------------------------

enum class Fusion { CmLstm, EM, CAT, CTRL };

std::string to_string(Fusion f);
Fusion fusion_from_string(const std::string& s);

/// Fully connected layer used by the CTRL variant: d outputs from [v; q].
struct FusionFc {
  Param W;  // d x 2d
  Param b;  // d x 1

  FusionFc() = default;
  explicit FusionFc(int d);
  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Input width of the standard LSTM that consumes a fused sequence.
int fused_input_dim(Fusion variant, int d);

/// Per-clip fusion for the baseline variants:
///   EM   -> v_t * q
///   CAT  -> [v_t; q]
///   CTRL -> [v_t + q; v_t * q; W [v_t; q] + b]
Mat fuse_baseline(const Mat& clips, const Vec& query, Fusion variant, const FusionFc* fc);

struct FuseGrads {
  Mat d_clips;
  Vec d_query;
};

FuseGrads fuse_baseline_backward(const Mat& clips, const Vec& query, Fusion variant, const Mat& d_fused,
                                 FusionFc* fc);

struct IntegratorConfig {
  int d = 0;
  int p = 0;
  int n_streams = 2;
  Fusion fusion = Fusion::CmLstm;
  /// Share recurrent parameters between the attended and raw streams.
  bool share_streams = false;
};

/// Runs every stream bidirectionally and stacks the hidden states into the
/// integrated features (2p * n_streams rows, l columns).
class Integrator {
 public:
  Integrator() = default;
  explicit Integrator(const IntegratorConfig& cfg);

  const IntegratorConfig& config() const { return cfg_; }
  int output_dim() const { return 2 * cfg_.p * cfg_.n_streams; }

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);

  struct Cache {
    std::vector<BiCmCache> cm;
    std::vector<BiLstmCache> lstm;
    std::vector<Mat> fused;
    std::vector<Mat> streams;
    Vec q;
  };

  Mat forward(const std::vector<Mat>& streams, const Vec& query, Cache* cache) const;

  struct Grads {
    std::vector<Mat> d_streams;
    Vec d_query;
  };
  Grads backward(const Cache& cache, const Mat& d_out);

  CmLstmParams& cm_params(int stream, bool backward_dir);
  LstmParams& lstm_params(int stream, bool backward_dir);

 private:
  int param_set(int stream) const { return cfg_.share_streams ? 0 : stream; }

  IntegratorConfig cfg_;
  std::vector<CmLstmParams> cm_;   // [set * 2 + dir]
  std::vector<LstmParams> lstm_;   // [set * 2 + dir]
  std::vector<FusionFc> fc_;       // one per set (CTRL only)
};

}  // namespace cmtml
