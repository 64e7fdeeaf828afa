#pragma once

#include <string>
#include <vector>

#include "cmtml/common.hpp"

namespace cmtml {

/// Query-conditioned clip attention.
///   H   = tanh(W_b F + (U_b q + b) 1^T)      (k x l)
///   h_a = softmax over clips of W_a^T H      (l)
///   F_A[:, t] = h_a[t] * F[:, t]
struct AttentionParams {
  Param Wb;  // k x d
  Param Ub;  // k x d
  Param b;   // k x 1
  Param Wa;  // k x 1

  AttentionParams() = default;
  AttentionParams(int d, int k);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct AttentionCache {
  Mat F;
  Vec q;
  Mat H;
  Vec weights;
};

struct AttentionOutput {
  Mat attended;  // F_A, d x l
  Vec weights;   // h_a, l
};

AttentionOutput attend(const Mat& F, const Vec& q, const AttentionParams& params,
                       AttentionCache* cache = nullptr);

struct AttentionGrads {
  Mat dF;
  Vec dq;
};

AttentionGrads attend_backward(const AttentionCache& cache, const Mat& d_attended, AttentionParams& params);

/// NA: raw features only. SA: attended only. TA: attended then raw.
enum class AttentionMode { NA, SA, TA };

std::string to_string(AttentionMode m);
AttentionMode attention_mode_from_string(const std::string& s);
int stream_count(AttentionMode m);

struct TwoStreamCache {
  AttentionMode mode = AttentionMode::TA;
  AttentionCache attention;
};

std::vector<Mat> two_stream(const Mat& F, const Vec& q, const AttentionParams& params, AttentionMode mode,
                            TwoStreamCache* cache = nullptr);

/// Gradients w.r.t. F and q given one gradient per emitted stream.
AttentionGrads two_stream_backward(const TwoStreamCache& cache, const std::vector<Mat>& d_streams,
                                   AttentionParams& params);

}  // namespace cmtml
