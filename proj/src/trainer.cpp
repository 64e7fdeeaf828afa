#include "cmtml/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace cmtml {

std::vector<PreparedSample> prepare_samples(const std::vector<Sample>& samples, const EmbeddingTable& embeddings,
                                            const RunConfig& cfg) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (s.features.length() != cfg.model.l) {
      throw InputError("sample " + s.annotation.video_id + " has " + std::to_string(s.features.length()) +
                       " clips, config expects " + std::to_string(cfg.model.l));
    }
    if (s.tokens.empty()) throw InputError("sample " + s.annotation.video_id + " has an empty query");
    PreparedSample p;
    p.input.clips = s.features.features;
    p.input.word_embeddings = embeddings.embed(s.tokens);
    p.annotation = s.annotation;
    p.targets = build_targets(s.annotation, cfg.model.l, cfg.loss);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Sample> load_samples(const std::filesystem::path& features_dir,
                                 const std::vector<MomentAnnotation>& annotations, int l, int* skipped,
                                 std::vector<std::string>* warnings) {
  std::map<std::string, ClipFeatureSequence> cache;
  std::vector<Sample> out;
  int missing = 0;
  for (const auto& ann : annotations) {
    auto it = cache.find(ann.video_id);
    if (it == cache.end()) {
      const auto path = features_dir / (ann.video_id + ".bin");
      if (!std::filesystem::exists(path)) {
        ++missing;
        const std::string msg = "missing features for " + ann.video_id + ", query skipped";
        if (warnings) warnings->push_back(msg);
        else std::cerr << "warning: " << msg << '\n';
        continue;
      }
      it = cache.emplace(ann.video_id, interpolate_to_fixed_length(load_feature_file(path), l)).first;
    }
    Sample s;
    s.features = it->second;
    s.tokens = tokenize(ann.query_text);
    s.annotation = ann;
    out.push_back(std::move(s));
  }
  if (skipped) *skipped += missing;
  return out;
}

EmbeddingTable embeddings_for(const RunConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic_dataset(*cfg.synthetic).embeddings;
  if (cfg.embeddings.empty()) throw ConfigError("config has neither synthetic spec nor embeddings path");
  return load_embeddings(cfg.embeddings);
}

LoadedData load_data(const RunConfig& cfg, std::vector<std::string>* warnings) {
  LoadedData data;
  if (cfg.synthetic) {
    if (cfg.synthetic->l != cfg.model.l) throw ConfigError("synthetic.l must equal model.l");
    SyntheticDataset ds = generate_synthetic_dataset(*cfg.synthetic);
    const auto n = static_cast<std::ptrdiff_t>(ds.samples.size());
    const auto n_eval = static_cast<std::ptrdiff_t>(std::llround(cfg.holdout_fraction * static_cast<double>(n)));
    const std::vector<Sample> train(ds.samples.begin(), ds.samples.end() - n_eval);
    const std::vector<Sample> eval(ds.samples.end() - n_eval, ds.samples.end());
    data.train = prepare_samples(train, ds.embeddings, cfg);
    data.eval = prepare_samples(eval, ds.embeddings, cfg);
    data.raw_feature_dim = cfg.synthetic->d;
    data.embeddings = std::move(ds.embeddings);
    return data;
  }
  data.embeddings = load_embeddings(cfg.embeddings, warnings);
  const auto train_ann = load_annotations(cfg.annotations, cfg.model.l);
  data.train = prepare_samples(load_samples(cfg.features, train_ann, cfg.model.l, &data.skipped, warnings),
                               data.embeddings, cfg);
  if (cfg.eval_annotations) {
    const auto eval_ann = load_annotations(*cfg.eval_annotations, cfg.model.l);
    data.eval = prepare_samples(load_samples(cfg.features, eval_ann, cfg.model.l, &data.skipped, warnings),
                                data.embeddings, cfg);
  }
  if (data.train.empty()) throw InputError("no training samples with features");
  data.raw_feature_dim = static_cast<int>(data.train.front().input.clips.rows());
  return data;
}

void Adam::step(TaciModel& model) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    const double norm = gradient_norm(model);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  std::size_t i = 0;
  model.visit_params([&](const std::string&, Param& p) {
    if (i == m_.size()) {
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
    Mat& m = m_[i];
    Mat& v = v_[i];
    const Mat g = p.grad * scale;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double lr = cfg_.learning_rate;
    p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.adam_epsilon);
    ++i;
  });
}

void Adam::visit_state(TaciModel& model, const std::function<void(const std::string&, Mat&, Mat&)>& fn) {
  // Allocate all moments first so references handed to `fn` stay valid.
  std::size_t i = 0;
  model.visit_params([&](const std::string&, Param& p) {
    if (i++ == m_.size()) {
      m_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Mat::Zero(p.value.rows(), p.value.cols()));
    }
  });
  i = 0;
  model.visit_params([&](const std::string& name, Param&) {
    fn(name, m_[i], v_[i]);
    ++i;
  });
}

double gradient_norm(TaciModel& model) {
  double sq = 0.0;
  model.visit_params([&](const std::string&, Param& p) { sq += p.grad.squaredNorm(); });
  return std::sqrt(sq);
}

Trainer::Trainer(const RunConfig& cfg, int raw_feature_dim, int embedding_dim)
    : model_(cfg, raw_feature_dim, embedding_dim), adam_(cfg.optimizer), rng_(cfg.optimizer.seed) {
  model_.init(cfg.optimizer.seed);
  // Decorrelate the shuffle/dropout stream from the initializer.
  rng_.discard(1000);
}

namespace {

std::string parameter_report(TaciModel& model) {
  std::ostringstream os;
  model.visit_params([&](const std::string& name, Param& p) {
    os << "  " << name << ": |w|=" << p.value.norm() << " |g|=" << p.grad.norm() << '\n';
  });
  return os.str();
}

}  // namespace

EpochLog Trainer::run_epoch(const std::vector<PreparedSample>& data) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig& cfg = model_.config();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);

  EpochLog log;
  log.epoch = epoch_ + 1;
  const auto bs = static_cast<std::size_t>(cfg.optimizer.batch_size);
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::vector<ModelInput> inputs;
    std::vector<GroundTruthTargets> targets;
    for (std::size_t i = start; i < end; ++i) {
      inputs.push_back(data[order[i]].input);
      targets.push_back(data[order[i]].targets);
    }
    Rng* drop = cfg.model.dropout > 0.0 ? &rng_ : nullptr;
    const LossBreakdown l = model_.compute_gradients(inputs, targets, true, drop);
    if (!std::isfinite(l.total)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(log.epoch) + ", batch " +
                          std::to_string(batches + 1) + " (map " + std::to_string(l.map) + ", local " +
                          std::to_string(l.local) + ")\nparameter norms:\n" + parameter_report(model_));
    }
    adam_.step(model_);
    log.loss += l.total;
    log.map_loss += l.map;
    log.local_loss += l.local;
    ++batches;
  }
  if (batches > 0) {
    log.loss /= static_cast<double>(batches);
    log.map_loss /= static_cast<double>(batches);
    log.local_loss /= static_cast<double>(batches);
  }
  ++epoch_;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

std::vector<EpochLog> Trainer::fit(const std::vector<PreparedSample>& data,
                                   const std::function<void(const EpochLog&)>& on_epoch) {
  std::vector<EpochLog> logs;
  while (epoch_ < model_.config().optimizer.epochs) {
    logs.push_back(run_epoch(data));
    if (on_epoch) on_epoch(logs.back());
  }
  return logs;
}

MomentPrediction predict(TaciModel& model, const ModelInput& input, double duration, ProposalMap* map_out) {
  ProposalMap map = model.predict_map(input);
  MomentPrediction p = select_moment(map, duration);
  if (map_out) *map_out = std::move(map);
  return p;
}

EvalReport evaluate(TaciModel& model, const std::vector<PreparedSample>& data, const std::vector<int>& n_list,
                    const std::vector<double>& m_list) {
  EvalReport report;
  const int l = model.config().model.l;
  const int n_max = n_list.empty() ? 1 : *std::max_element(n_list.begin(), n_list.end());
  std::vector<std::vector<Interval>> predictions;
  std::vector<Interval> truths;
  std::vector<MomentAnnotation> annotations;
  for (const auto& s : data) {
    const ProposalMap map = model.predict_map(s.input);
    const double dur = s.annotation.duration_seconds;
    std::vector<Interval> ranked;
    for (const auto& c : rank_moments(map, n_max)) {
      const auto [a, b] = cell_to_seconds(c.x, c.y, dur, l);
      ranked.push_back({a, b});
    }
    predictions.push_back(std::move(ranked));
    truths.push_back({s.annotation.t_start, s.annotation.t_end});
    annotations.push_back(s.annotation);
    report.top1.push_back(select_moment(map, dur));
  }
  report.all = evaluate_recall(predictions, truths, n_list, m_list);
  for (QueryGroup g : {QueryGroup::Temporal, QueryGroup::Spatial}) {
    std::vector<std::vector<Interval>> gp;
    std::vector<Interval> gt;
    for (std::size_t i : split_queries(annotations, g)) {
      gp.push_back(predictions[i]);
      gt.push_back(truths[i]);
    }
    EvalResult r = evaluate_recall(gp, gt, n_list, m_list);
    r.group = g == QueryGroup::Temporal ? "temporal" : "spatial";
    report.groups.push_back(std::move(r));
  }
  return report;
}

Mat embed_query(const std::string& query, const EmbeddingTable& embeddings) {
  const auto tokens = tokenize(query);
  if (tokens.empty()) throw InputError("query has no tokens");
  return embeddings.embed(tokens);
}

}  // namespace cmtml
