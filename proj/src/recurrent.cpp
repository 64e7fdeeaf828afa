#include "cmtml/recurrent.hpp"

namespace cmtml {

namespace {

Vec dsigmoid_from_out(const Vec& s) { return (s.array() * (1.0 - s.array())).matrix(); }
Vec dtanh_from_out(const Vec& t) { return (1.0 - t.array().square()).matrix(); }

// ---- LSTM kernel --------------------------------------------------------

// `input_proj` is W x + b for the current step.
CellState lstm_core(const Vec& input_proj, const CellState& s, const LstmParams& P, LstmStepCache* cache) {
  const Eigen::Index p = P.hidden();
  const Vec z = input_proj + P.U.value * s.h;
  LstmStepCache tmp;
  LstmStepCache& c = cache ? *cache : tmp;
  c.h_prev = s.h;
  c.c_prev = s.c;
  c.f = sigmoid(Vec(z.segment(0, p)));
  c.i = sigmoid(Vec(z.segment(p, p)));
  c.o = sigmoid(Vec(z.segment(2 * p, p)));
  c.g = z.segment(3 * p, p).array().tanh().matrix();
  c.c = (c.f.array() * s.c.array() + c.i.array() * c.g.array()).matrix();
  c.tanh_c = c.c.array().tanh().matrix();
  return {(c.o.array() * c.tanh_c.array()).matrix(), c.c};
}

struct LstmCoreGrads {
  Vec dz, dh_prev, dc_prev;
};

LstmCoreGrads lstm_core_backward(const LstmStepCache& c, const Vec& dh, const Vec& dc, LstmParams& P) {
  const Eigen::Index p = P.hidden();
  const Vec dc_total = dc + (dh.array() * c.o.array() * (1.0 - c.tanh_c.array().square())).matrix();
  Vec dz(4 * p);
  dz.segment(0, p) = (dc_total.array() * c.c_prev.array()).matrix().cwiseProduct(dsigmoid_from_out(c.f));
  dz.segment(p, p) = (dc_total.array() * c.g.array()).matrix().cwiseProduct(dsigmoid_from_out(c.i));
  dz.segment(2 * p, p) = (dh.array() * c.tanh_c.array()).matrix().cwiseProduct(dsigmoid_from_out(c.o));
  dz.segment(3 * p, p) = (dc_total.array() * c.i.array()).matrix().cwiseProduct(dtanh_from_out(c.g));
  P.U.grad.noalias() += dz * c.h_prev.transpose();
  return {dz, P.U.value.transpose() * dz, (dc_total.array() * c.f.array()).matrix()};
}

// ---- CM-LSTM kernel -----------------------------------------------------

struct ClipProj {
  Vec filt;  // Wd v
  Vec vis;   // Wv v
  Vec gate;  // Wx v
};

struct QueryProj {
  Vec filt;  // Wc q
  Vec sen;   // Ws q
  Vec gate;  // Wy q + b
};

QueryProj project_query(const Vec& q, const CmLstmParams& P) {
  return {P.Wc.value * q, P.Ws.value * q, P.Wy.value * q + P.b.value};
}

CellState cm_core(const Vec& clip_filt, const Vec& clip_vis, const Vec& clip_gate, const QueryProj& qp,
                  const CellState& s, const CmLstmParams& P, CmLstmStepCache& c) {
  const Eigen::Index p = P.hidden();
  c.h_prev = s.h;
  c.c_prev = s.c;
  c.u = (qp.filt + clip_filt).array().tanh().matrix();
  c.a = softmax(P.We.value * c.u);
  c.vis = clip_vis;
  c.sen = qp.sen;
  const Vec rec = P.Uc.value * s.h;
  c.v_t = (c.a.array() * c.vis.array() + rec.array()).tanh().matrix();
  c.s_t = (c.a.array() * c.sen.array() + rec.array()).tanh().matrix();
  const Vec z = clip_gate + qp.gate + P.U.value * s.h;
  c.f = sigmoid(Vec(z.segment(0, p)));
  c.i = sigmoid(Vec(z.segment(p, p)));
  c.m = sigmoid(Vec(z.segment(2 * p, p)));
  c.o = sigmoid(Vec(z.segment(3 * p, p)));
  c.cand = (c.m.array() * c.v_t.array() + (1.0 - c.m.array()) * c.s_t.array()).matrix();
  c.c = (c.f.array() * s.c.array() + c.i.array() * c.cand.array()).matrix();
  c.tanh_c = c.c.array().tanh().matrix();
  return {(c.o.array() * c.tanh_c.array()).matrix(), c.c};
}

struct CmCoreGrads {
  Vec d_filt;  // w.r.t. Wc q + Wd v
  Vec d_vis;   // w.r.t. Wv v
  Vec d_sen;   // w.r.t. Ws q
  Vec dz;      // w.r.t. gate pre-activations
  Vec dh_prev, dc_prev;
};

CmCoreGrads cm_core_backward(const CmLstmStepCache& c, const Vec& dh, const Vec& dc, CmLstmParams& P) {
  const Eigen::Index p = P.hidden();
  CmCoreGrads g;
  const Vec dc_total = dc + (dh.array() * c.o.array() * (1.0 - c.tanh_c.array().square())).matrix();
  const Vec d_cand = (dc_total.array() * c.i.array()).matrix();

  g.dz.resize(4 * p);
  g.dz.segment(0, p) = (dc_total.array() * c.c_prev.array()).matrix().cwiseProduct(dsigmoid_from_out(c.f));
  g.dz.segment(p, p) = (dc_total.array() * c.cand.array()).matrix().cwiseProduct(dsigmoid_from_out(c.i));
  g.dz.segment(2 * p, p) =
      (d_cand.array() * (c.v_t.array() - c.s_t.array())).matrix().cwiseProduct(dsigmoid_from_out(c.m));
  g.dz.segment(3 * p, p) = (dh.array() * c.tanh_c.array()).matrix().cwiseProduct(dsigmoid_from_out(c.o));

  const Vec dv_pre = (d_cand.array() * c.m.array()).matrix().cwiseProduct(dtanh_from_out(c.v_t));
  const Vec ds_pre = (d_cand.array() * (1.0 - c.m.array())).matrix().cwiseProduct(dtanh_from_out(c.s_t));
  const Vec d_rec = dv_pre + ds_pre;

  const Vec da = (dv_pre.array() * c.vis.array() + ds_pre.array() * c.sen.array()).matrix();
  g.d_vis = (dv_pre.array() * c.a.array()).matrix();
  g.d_sen = (ds_pre.array() * c.a.array()).matrix();

  const Vec de = softmax_backward(c.a, da);
  P.We.grad.noalias() += de * c.u.transpose();
  g.d_filt = (P.We.value.transpose() * de).cwiseProduct(dtanh_from_out(c.u));

  P.Uc.grad.noalias() += d_rec * c.h_prev.transpose();
  P.U.grad.noalias() += g.dz * c.h_prev.transpose();
  g.dh_prev = P.Uc.value.transpose() * d_rec + P.U.value.transpose() * g.dz;
  g.dc_prev = (dc_total.array() * c.f.array()).matrix();
  return g;
}

}  // namespace

// ---- LSTM ---------------------------------------------------------------

LstmParams::LstmParams(int input_dim, int hidden)
    : W(4 * hidden, input_dim), U(4 * hidden, hidden), b(4 * hidden, 1) {
  if (input_dim < 1 || hidden < 1) throw ConfigError("LSTM dimensions must be positive");
}

void LstmParams::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden()));
  uniform_fill(W.value, bound, rng);
  uniform_fill(U.value, bound, rng);
  uniform_fill(b.value, bound, rng);
}

void LstmParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "W", W);
  fn(prefix + "U", U);
  fn(prefix + "b", b);
}

CellState lstm_step(const Vec& x, const CellState& state, const LstmParams& params) {
  if (x.size() != params.input_dim() || state.h.size() != params.hidden() ||
      state.c.size() != params.hidden()) {
    throw ConfigError("lstm_step: input/state shape does not match parameters");
  }
  return lstm_core(params.W.value * x + params.b.value, state, params, nullptr);
}

Mat lstm_run(const Mat& x, const LstmParams& params, bool reverse, LstmSequenceCache* cache) {
  if (x.rows() != params.input_dim()) throw ConfigError("lstm_run: input dimension mismatch");
  const Eigen::Index T = x.cols();
  const Eigen::Index p = params.hidden();
  Mat proj = params.W.value * x;
  proj.colwise() += params.b.value.col(0);
  Mat out(p, T);
  CellState s = CellState::zeros(p);
  if (cache) {
    cache->x = x;
    cache->reverse = reverse;
    cache->steps.assign(static_cast<std::size_t>(T), {});
  }
  LstmStepCache scratch;
  for (Eigen::Index k = 0; k < T; ++k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    LstmStepCache* c = cache ? &cache->steps[static_cast<std::size_t>(k)] : &scratch;
    s = lstm_core(proj.col(t), s, params, c);
    out.col(t) = s.h;
  }
  return out;
}

Mat lstm_run_backward(const LstmSequenceCache& cache, const Mat& d_hidden, LstmParams& params) {
  const Eigen::Index T = cache.x.cols();
  const Eigen::Index p = params.hidden();
  Mat dz_all(4 * p, T);
  Vec dh_next = Vec::Zero(p);
  Vec dc_next = Vec::Zero(p);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    const Eigen::Index t = cache.reverse ? T - 1 - k : k;
    const Vec dh = d_hidden.col(t) + dh_next;
    LstmCoreGrads g = lstm_core_backward(cache.steps[static_cast<std::size_t>(k)], dh, dc_next, params);
    dz_all.col(t) = g.dz;
    dh_next = std::move(g.dh_prev);
    dc_next = std::move(g.dc_prev);
  }
  params.W.grad.noalias() += dz_all * cache.x.transpose();
  params.b.grad += dz_all.rowwise().sum();
  return params.W.value.transpose() * dz_all;
}

// ---- CM-LSTM ------------------------------------------------------------

CmLstmParams::CmLstmParams(int input_dim, int hidden)
    : Wc(hidden, input_dim),
      Wd(hidden, input_dim),
      We(hidden, hidden),
      Wv(hidden, input_dim),
      Ws(hidden, input_dim),
      Uc(hidden, hidden),
      Wx(4 * hidden, input_dim),
      Wy(4 * hidden, input_dim),
      U(4 * hidden, hidden),
      b(4 * hidden, 1) {
  if (input_dim < 1 || hidden < 1) throw ConfigError("CM-LSTM dimensions must be positive");
}

void CmLstmParams::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden()));
  for (Param* p : {&Wc, &Wd, &We, &Wv, &Ws, &Uc, &Wx, &Wy, &U, &b}) uniform_fill(p->value, bound, rng);
}

void CmLstmParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "Wc", Wc);
  fn(prefix + "Wd", Wd);
  fn(prefix + "We", We);
  fn(prefix + "Wv", Wv);
  fn(prefix + "Ws", Ws);
  fn(prefix + "Uc", Uc);
  fn(prefix + "Wx", Wx);
  fn(prefix + "Wy", Wy);
  fn(prefix + "U", U);
  fn(prefix + "b", b);
}

CellState cm_lstm_step(const Vec& clip, const Vec& query, const CellState& state,
                       const CmLstmParams& params, CmLstmStepCache* cache) {
  if (clip.size() != params.input_dim() || query.size() != params.input_dim()) {
    throw ConfigError("cm_lstm_step: clip and query must both have dimension " +
                      std::to_string(params.input_dim()));
  }
  if (state.h.size() != params.hidden() || state.c.size() != params.hidden()) {
    throw ConfigError("cm_lstm_step: state dimension mismatch");
  }
  CmLstmStepCache scratch;
  const QueryProj qp = project_query(query, params);
  return cm_core(params.Wd.value * clip, params.Wv.value * clip, params.Wx.value * clip, qp, state, params,
                 cache ? *cache : scratch);
}

CmLstmStepGrads cm_lstm_step_backward(const Vec& clip, const Vec& query, const CmLstmStepCache& cache,
                                      const Vec& dh, const Vec& dc, CmLstmParams& P) {
  CmCoreGrads g = cm_core_backward(cache, dh, dc, P);
  P.Wd.grad.noalias() += g.d_filt * clip.transpose();
  P.Wc.grad.noalias() += g.d_filt * query.transpose();
  P.Wv.grad.noalias() += g.d_vis * clip.transpose();
  P.Ws.grad.noalias() += g.d_sen * query.transpose();
  P.Wx.grad.noalias() += g.dz * clip.transpose();
  P.Wy.grad.noalias() += g.dz * query.transpose();
  P.b.grad += g.dz;
  CmLstmStepGrads out;
  out.d_clip = P.Wd.value.transpose() * g.d_filt + P.Wv.value.transpose() * g.d_vis +
               P.Wx.value.transpose() * g.dz;
  out.d_query = P.Wc.value.transpose() * g.d_filt + P.Ws.value.transpose() * g.d_sen +
                P.Wy.value.transpose() * g.dz;
  out.dh_prev = std::move(g.dh_prev);
  out.dc_prev = std::move(g.dc_prev);
  return out;
}

Mat cm_lstm_run(const Mat& x, const Vec& q, const CmLstmParams& params, bool reverse, CmSequenceCache* cache) {
  if (x.rows() != params.input_dim() || q.size() != params.input_dim()) {
    throw ConfigError("cm_lstm_run: clip/query dimension mismatch");
  }
  const Eigen::Index T = x.cols();
  const Eigen::Index p = params.hidden();
  const Mat filt = params.Wd.value * x;
  const Mat vis = params.Wv.value * x;
  const Mat gate = params.Wx.value * x;
  const QueryProj qp = project_query(q, params);
  if (cache) {
    cache->x = x;
    cache->q = q;
    cache->reverse = reverse;
    cache->steps.assign(static_cast<std::size_t>(T), {});
  }
  Mat out(p, T);
  CellState s = CellState::zeros(p);
  CmLstmStepCache scratch;
  for (Eigen::Index k = 0; k < T; ++k) {
    const Eigen::Index t = reverse ? T - 1 - k : k;
    CmLstmStepCache& c = cache ? cache->steps[static_cast<std::size_t>(k)] : scratch;
    s = cm_core(filt.col(t), vis.col(t), gate.col(t), qp, s, params, c);
    out.col(t) = s.h;
  }
  return out;
}

CmRunGrads cm_lstm_run_backward(const CmSequenceCache& cache, const Mat& d_hidden, CmLstmParams& P) {
  const Eigen::Index T = cache.x.cols();
  const Eigen::Index p = P.hidden();
  Mat d_filt(p, T), d_vis(p, T), dz(4 * p, T);
  Vec d_sen = Vec::Zero(p);
  Vec dh_next = Vec::Zero(p);
  Vec dc_next = Vec::Zero(p);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    const Eigen::Index t = cache.reverse ? T - 1 - k : k;
    const Vec dh = d_hidden.col(t) + dh_next;
    CmCoreGrads g = cm_core_backward(cache.steps[static_cast<std::size_t>(k)], dh, dc_next, P);
    d_filt.col(t) = g.d_filt;
    d_vis.col(t) = g.d_vis;
    dz.col(t) = g.dz;
    d_sen += g.d_sen;
    dh_next = std::move(g.dh_prev);
    dc_next = std::move(g.dc_prev);
  }
  const Vec d_filt_sum = d_filt.rowwise().sum();
  const Vec dz_sum = dz.rowwise().sum();
  const auto& x = cache.x;
  const auto& q = cache.q;
  P.Wd.grad.noalias() += d_filt * x.transpose();
  P.Wc.grad.noalias() += d_filt_sum * q.transpose();
  P.Wv.grad.noalias() += d_vis * x.transpose();
  P.Ws.grad.noalias() += d_sen * q.transpose();
  P.Wx.grad.noalias() += dz * x.transpose();
  P.Wy.grad.noalias() += dz_sum * q.transpose();
  P.b.grad += dz_sum;
  CmRunGrads out;
  out.dx = P.Wd.value.transpose() * d_filt + P.Wv.value.transpose() * d_vis + P.Wx.value.transpose() * dz;
  out.dq = P.Wc.value.transpose() * d_filt_sum + P.Ws.value.transpose() * d_sen + P.Wy.value.transpose() * dz_sum;
  return out;
}

// ---- bidirectional --------------------------------------------------------

Mat run_bidirectional(const Mat& stream, const Vec& query, const CmLstmParams& fwd, const CmLstmParams& bwd,
                      BiCmCache* cache) {
  const Eigen::Index p = fwd.hidden();
  if (bwd.hidden() != p) throw ConfigError("run_bidirectional: direction hidden sizes differ");
  Mat out(2 * p, stream.cols());
  out.topRows(p) = cm_lstm_run(stream, query, fwd, false, cache ? &cache->fwd : nullptr);
  out.bottomRows(p) = cm_lstm_run(stream, query, bwd, true, cache ? &cache->bwd : nullptr);
  return out;
}

CmRunGrads run_bidirectional_backward(const BiCmCache& cache, const Mat& d_out, CmLstmParams& fwd,
                                      CmLstmParams& bwd) {
  const Eigen::Index p = fwd.hidden();
  CmRunGrads a = cm_lstm_run_backward(cache.fwd, d_out.topRows(p), fwd);
  CmRunGrads b = cm_lstm_run_backward(cache.bwd, d_out.bottomRows(p), bwd);
  return {a.dx + b.dx, a.dq + b.dq};
}

Mat run_bidirectional_lstm(const Mat& x, const LstmParams& fwd, const LstmParams& bwd, BiLstmCache* cache) {
  const Eigen::Index p = fwd.hidden();
  if (bwd.hidden() != p) throw ConfigError("run_bidirectional_lstm: direction hidden sizes differ");
  Mat out(2 * p, x.cols());
  out.topRows(p) = lstm_run(x, fwd, false, cache ? &cache->fwd : nullptr);
  out.bottomRows(p) = lstm_run(x, bwd, true, cache ? &cache->bwd : nullptr);
  return out;
}

Mat run_bidirectional_lstm_backward(const BiLstmCache& cache, const Mat& d_out, LstmParams& fwd,
                                    LstmParams& bwd) {
  const Eigen::Index p = fwd.hidden();
  return lstm_run_backward(cache.fwd, d_out.topRows(p), fwd) +
         lstm_run_backward(cache.bwd, d_out.bottomRows(p), bwd);
}

// ---- fusion ---------------------------------------------------------------

std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::CmLstm: return "CM_LSTM";
    case Fusion::EM: return "EM";
    case Fusion::CAT: return "CAT";
    case Fusion::CTRL: return "CTRL";
  }
  return "?";
}

Fusion fusion_from_string(const std::string& s) {
  if (s == "CM_LSTM") return Fusion::CmLstm;
  if (s == "EM") return Fusion::EM;
  if (s == "CAT") return Fusion::CAT;
  if (s == "CTRL") return Fusion::CTRL;
  throw ConfigError("unknown fusion variant '" + s + "'");
}

FusionFc::FusionFc(int d) : W(d, 2 * d), b(d, 1) {}

void FusionFc::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(W.value.cols()));
  uniform_fill(W.value, bound, rng);
  uniform_fill(b.value, bound, rng);
}

void FusionFc::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + "W", W);
  fn(prefix + "b", b);
}

int fused_input_dim(Fusion variant, int d) {
  switch (variant) {
    case Fusion::EM: return d;
    case Fusion::CAT: return 2 * d;
    case Fusion::CTRL: return 3 * d;
    case Fusion::CmLstm: return d;
  }
  return d;
}

Mat fuse_baseline(const Mat& clips, const Vec& query, Fusion variant, const FusionFc* fc) {
  const Eigen::Index d = clips.rows();
  const Eigen::Index T = clips.cols();
  if (query.size() != d) throw ConfigError("fuse_baseline: query dimension mismatch");
  const Mat qmat = query.replicate(1, T);
  switch (variant) {
    case Fusion::EM:
      return clips.cwiseProduct(qmat);
    case Fusion::CAT: {
      Mat out(2 * d, T);
      out << clips, qmat;
      return out;
    }
    case Fusion::CTRL: {
      if (!fc) throw ConfigError("fuse_baseline: CTRL needs its fully connected layer");
      Mat cat(2 * d, T);
      cat << clips, qmat;
      Mat fcout = fc->W.value * cat;
      fcout.colwise() += fc->b.value.col(0);
      Mat out(3 * d, T);
      out << clips + qmat, clips.cwiseProduct(qmat), fcout;
      return out;
    }
    case Fusion::CmLstm:
      break;
  }
  throw ConfigError("fuse_baseline: CM_LSTM is not a baseline fusion");
}

FuseGrads fuse_baseline_backward(const Mat& clips, const Vec& query, Fusion variant, const Mat& d_fused,
                                 FusionFc* fc) {
  const Eigen::Index d = clips.rows();
  const Eigen::Index T = clips.cols();
  const Mat qmat = query.replicate(1, T);
  FuseGrads g{Mat::Zero(d, T), Vec::Zero(d)};
  switch (variant) {
    case Fusion::EM:
      g.d_clips = d_fused.cwiseProduct(qmat);
      g.d_query = d_fused.cwiseProduct(clips).rowwise().sum();
      break;
    case Fusion::CAT:
      g.d_clips = d_fused.topRows(d);
      g.d_query = d_fused.bottomRows(d).rowwise().sum();
      break;
    case Fusion::CTRL: {
      const auto d_add = d_fused.topRows(d);
      const auto d_mul = d_fused.middleRows(d, d);
      const Mat d_fc = d_fused.bottomRows(d);
      Mat cat(2 * d, T);
      cat << clips, qmat;
      fc->W.grad.noalias() += d_fc * cat.transpose();
      fc->b.grad += d_fc.rowwise().sum();
      const Mat d_cat = fc->W.value.transpose() * d_fc;
      g.d_clips = d_add + d_mul.cwiseProduct(qmat) + d_cat.topRows(d);
      g.d_query = d_add.rowwise().sum() + d_mul.cwiseProduct(clips).rowwise().sum() +
                  d_cat.bottomRows(d).rowwise().sum();
      break;
    }
    case Fusion::CmLstm:
      throw ConfigError("fuse_baseline_backward: CM_LSTM is not a baseline fusion");
  }
  return g;
}

// ---- integrator -------------------------------------------------------------

Integrator::Integrator(const IntegratorConfig& cfg) : cfg_(cfg) {
  if (cfg.n_streams < 1 || cfg.n_streams > 2) throw ConfigError("integrator expects 1 or 2 streams");
  const int sets = cfg.share_streams ? 1 : cfg.n_streams;
  for (int s = 0; s < sets; ++s) {
    for (int dir = 0; dir < 2; ++dir) {
      if (cfg.fusion == Fusion::CmLstm) {
        cm_.emplace_back(cfg.d, cfg.p);
      } else {
        lstm_.emplace_back(fused_input_dim(cfg.fusion, cfg.d), cfg.p);
      }
    }
    if (cfg.fusion == Fusion::CTRL) fc_.emplace_back(cfg.d);
  }
}

void Integrator::init(Rng& rng) {
  for (auto& p : cm_) p.init(rng);
  for (auto& p : lstm_) p.init(rng);
  for (auto& p : fc_) p.init(rng);
}

void Integrator::visit(const std::string& prefix, const ParamVisitor& fn) {
  const char* dirs[2] = {"fwd.", "bwd."};
  for (std::size_t i = 0; i < cm_.size(); ++i) {
    cm_[i].visit(prefix + "set" + std::to_string(i / 2) + "." + dirs[i % 2], fn);
  }
  for (std::size_t i = 0; i < lstm_.size(); ++i) {
    lstm_[i].visit(prefix + "set" + std::to_string(i / 2) + "." + dirs[i % 2], fn);
  }
  for (std::size_t i = 0; i < fc_.size(); ++i) fc_[i].visit(prefix + "set" + std::to_string(i) + ".fc.", fn);
}

CmLstmParams& Integrator::cm_params(int stream, bool backward_dir) {
  return cm_.at(static_cast<std::size_t>(param_set(stream) * 2 + (backward_dir ? 1 : 0)));
}

LstmParams& Integrator::lstm_params(int stream, bool backward_dir) {
  return lstm_.at(static_cast<std::size_t>(param_set(stream) * 2 + (backward_dir ? 1 : 0)));
}

Mat Integrator::forward(const std::vector<Mat>& streams, const Vec& query, Cache* cache) const {
  if (static_cast<int>(streams.size()) != cfg_.n_streams) {
    throw ConfigError("integrator configured for " + std::to_string(cfg_.n_streams) + " streams, got " +
                      std::to_string(streams.size()));
  }
  const Eigen::Index l = streams.front().cols();
  const int block = 2 * cfg_.p;
  Mat out(output_dim(), l);
  if (cache) {
    cache->streams = streams;
    cache->q = query;
    cache->cm.assign(streams.size(), {});
    cache->lstm.assign(streams.size(), {});
    cache->fused.assign(streams.size(), {});
  }
  for (int s = 0; s < cfg_.n_streams; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const std::size_t set = static_cast<std::size_t>(param_set(s));
    if (streams[su].cols() != l) throw ConfigError("integrator: streams differ in length");
    if (cfg_.fusion == Fusion::CmLstm) {
      out.middleRows(s * block, block) =
          run_bidirectional(streams[su], query, cm_[2 * set], cm_[2 * set + 1], cache ? &cache->cm[su] : nullptr);
    } else {
      Mat fused = fuse_baseline(streams[su], query, cfg_.fusion, fc_.empty() ? nullptr : &fc_[set]);
      out.middleRows(s * block, block) =
          run_bidirectional_lstm(fused, lstm_[2 * set], lstm_[2 * set + 1], cache ? &cache->lstm[su] : nullptr);
      if (cache) cache->fused[su] = std::move(fused);
    }
  }
  return out;
}

Integrator::Grads Integrator::backward(const Cache& cache, const Mat& d_out) {
  const int block = 2 * cfg_.p;
  Grads g;
  g.d_query = Vec::Zero(cache.q.size());
  for (int s = 0; s < cfg_.n_streams; ++s) {
    const auto su = static_cast<std::size_t>(s);
    const std::size_t set = static_cast<std::size_t>(param_set(s));
    const Mat d_block = d_out.middleRows(s * block, block);
    if (cfg_.fusion == Fusion::CmLstm) {
      CmRunGrads rg = run_bidirectional_backward(cache.cm[su], d_block, cm_[2 * set], cm_[2 * set + 1]);
      g.d_streams.push_back(std::move(rg.dx));
      g.d_query += rg.dq;
    } else {
      const Mat d_fused = run_bidirectional_lstm_backward(cache.lstm[su], d_block, lstm_[2 * set], lstm_[2 * set + 1]);
      FuseGrads fg = fuse_baseline_backward(cache.streams[su], cache.q, cfg_.fusion, d_fused,
                                            fc_.empty() ? nullptr : &fc_[set]);
      g.d_streams.push_back(std::move(fg.d_clips));
      g.d_query += fg.d_query;
    }
  }
  return g;
}

}  // namespace cmtml
