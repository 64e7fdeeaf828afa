#pragma once

#include <string>
#include <vector>

#include "cmtml/common.hpp"
#include "cmtml/data_io.hpp"
#include "cmtml/recurrent.hpp"

namespace cmtml {

struct ModelConfig {
  int l = 64;
  int d = 256;   // common feature size for clips and the sentence vector
  int p = 256;   // recurrent hidden size (sentence bi-LSTM and CM-LSTM)
  int k = 32;    // attention hidden size
  double dropout = 0.5;
  int sentence_hidden = 0;  // 0 -> use p

  int sentence_hidden_size() const { return sentence_hidden > 0 ? sentence_hidden : p; }
  void validate() const;
};

/// Fully connected projection of raw clip features: tanh(W x + b) per column.
struct VideoEncoder {
  Param W;  // d x d_raw
  Param b;  // d x 1

  VideoEncoder() = default;
  VideoEncoder(int d_raw, int d);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);

  Mat forward(const Mat& raw) const;
  /// `out` is the forward result. Accumulates parameter grads, returns d raw.
  Mat backward(const Mat& raw, const Mat& out, const Mat& d_out);
};

struct QueryEncoding {
  Mat word_embeddings;  // E x N
  Vec sentence_vector;  // d
};

/// Bidirectional LSTM over frozen word embeddings; the final forward and
/// backward hidden states are concatenated, dropped out (training only) and
/// linearly projected to d.
class SentenceEncoder {
 public:
  SentenceEncoder() = default;
  SentenceEncoder(int embedding_dim, int hidden, int d);

  void init(Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);

  LstmParams& forward_lstm() { return fwd_; }
  LstmParams& backward_lstm() { return bwd_; }
  Param& projection() { return proj_W_; }
  Param& projection_bias() { return proj_b_; }

  struct Cache {
    BiLstmCache lstm;
    Vec concat;  // after dropout
    Vec dropout_mask;
    Eigen::Index n_tokens = 0;
  };

  /// `dropout_rng` null disables dropout.
  QueryEncoding encode(const Mat& embeddings, double dropout, Rng* dropout_rng, Cache* cache) const;
  QueryEncoding encode(const std::vector<std::string>& tokens, const EmbeddingTable& table) const;

  /// Gradient flows into the recurrent and projection weights only; the
  /// embeddings are frozen.
  void backward(const Cache& cache, const Vec& d_sentence);

 private:
  LstmParams fwd_, bwd_;
  Param proj_W_;  // d x 2h
  Param proj_b_;  // d x 1
};

/// Inverted dropout mask (entries 0 or 1/(1-rate)).
Vec dropout_mask(Eigen::Index n, double rate, Rng& rng);
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

}  // namespace cmtml
