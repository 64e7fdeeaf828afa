#include "cmtml/encoders.hpp"

namespace cmtml {

void ModelConfig::validate() const {
  if (l < 1 || d < 1 || p < 1 || k < 1) throw ConfigError("model dimensions must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (sentence_hidden < 0) throw ConfigError("sentence_hidden must be >= 0");
}

VideoEncoder::VideoEncoder(int d_raw, int d) : W(d, d_raw), b(d, 1) {
  if (d_raw < 1 || d < 1) throw ConfigError("video encoder dimensions must be positive");
}

void VideoEncoder::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(W.value.cols()));
  uniform_fill(W.value, bound, rng);
  uniform_fill(b.value, bound, rng);
}

void VideoEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "W", W);
  fn(prefix + "b", b);
}

Mat VideoEncoder::forward(const Mat& raw) const {
  if (raw.rows() != W.value.cols()) {
    throw ConfigError("video encoder expects " + std::to_string(W.value.cols()) + "-dim clips, got " +
                      std::to_string(raw.rows()));
  }
  Mat z = W.value * raw;
  z.colwise() += b.value.col(0);
  return z.array().tanh().matrix();
}

Mat VideoEncoder::backward(const Mat& raw, const Mat& out, const Mat& d_out) {
  const Mat dz = d_out.cwiseProduct((1.0 - out.array().square()).matrix());
  W.grad.noalias() += dz * raw.transpose();
  b.grad += dz.rowwise().sum();
  return W.value.transpose() * dz;
}

SentenceEncoder::SentenceEncoder(int embedding_dim, int hidden, int d)
    : fwd_(embedding_dim, hidden), bwd_(embedding_dim, hidden), proj_W_(d, 2 * hidden), proj_b_(d, 1) {}

void SentenceEncoder::init(Rng& rng) {
  fwd_.init(rng);
  bwd_.init(rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(proj_W_.value.cols()));
  uniform_fill(proj_W_.value, bound, rng);
  uniform_fill(proj_b_.value, bound, rng);
}

void SentenceEncoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  fwd_.visit(prefix + "fwd.", fn);
  bwd_.visit(prefix + "bwd.", fn);
  fn(prefix + "proj.W", proj_W_);
  fn(prefix + "proj.b", proj_b_);
}

QueryEncoding SentenceEncoder::encode(const Mat& embeddings, double dropout, Rng* dropout_rng, Cache* cache) const {
  if (embeddings.cols() < 1) throw InputError("sentence has no tokens");
  if (embeddings.rows() != fwd_.input_dim()) {
    throw ConfigError("sentence encoder expects " + std::to_string(fwd_.input_dim()) +
                      "-dim embeddings, got " + std::to_string(embeddings.rows()));
  }
  const Eigen::Index h = fwd_.hidden();
  const Eigen::Index n = embeddings.cols();
  BiLstmCache local;
  BiLstmCache* lc = cache ? &cache->lstm : &local;
  const Mat states = run_bidirectional_lstm(embeddings, fwd_, bwd_, lc);
  Vec concat(2 * h);
  concat << states.col(n - 1).head(h), states.col(0).tail(h);
  Vec mask = Vec::Ones(2 * h);
  if (dropout_rng && dropout > 0.0) {
    mask = dropout_mask(2 * h, dropout, *dropout_rng);
    concat = concat.cwiseProduct(mask);
  }
  QueryEncoding out;
  out.word_embeddings = embeddings;
  out.sentence_vector = proj_W_.value * concat + proj_b_.value.col(0);
  if (cache) {
    cache->concat = concat;
    cache->dropout_mask = std::move(mask);
    cache->n_tokens = n;
  }
  return out;
}

QueryEncoding SentenceEncoder::encode(const std::vector<std::string>& tokens, const EmbeddingTable& table) const {
  if (tokens.empty()) throw InputError("sentence has no tokens");
  return encode(table.embed(tokens), 0.0, nullptr, nullptr);
}

void SentenceEncoder::backward(const Cache& cache, const Vec& d_sentence) {
  const Eigen::Index h = fwd_.hidden();
  const Eigen::Index n = cache.n_tokens;
  proj_W_.grad.noalias() += d_sentence * cache.concat.transpose();
  proj_b_.grad.col(0) += d_sentence;
  const Vec d_concat = (proj_W_.value.transpose() * d_sentence).cwiseProduct(cache.dropout_mask);
  Mat d_states = Mat::Zero(2 * h, n);
  d_states.col(n - 1).head(h) = d_concat.head(h);
  d_states.col(0).tail(h) += d_concat.tail(h);
  run_bidirectional_lstm_backward(cache.lstm, d_states, fwd_, bwd_);
}

Vec dropout_mask(Eigen::Index n, double rate, Rng& rng) {
  return dropout_mask(n, 1, rate, rng).col(0);
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

}  // namespace cmtml
