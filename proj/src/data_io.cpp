#include "cmtml/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace cmtml {

static_assert(std::endian::native == std::endian::little,
              "feature and checkpoint files are read with native little-endian layout");

namespace {

constexpr char kFeatureMagic[8] = {'C', 'M', 'T', 'M', 'L', 'F', 'V', '1'};

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
T read_pod(const std::string& buf, std::size_t& offset, const std::filesystem::path& path) {
  if (offset + sizeof(T) > buf.size()) {
    throw FormatError(path.string() + ": truncated at byte " + std::to_string(offset));
  }
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  offset += sizeof(T);
  return v;
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

}  // namespace

EmbeddingTable::EmbeddingTable(std::unordered_map<std::string, int> vocabulary, Mat vectors)
    : vocab_(std::move(vocabulary)), vectors_(std::move(vectors)) {
  for (const auto& [word, idx] : vocab_) {
    if (idx < 0 || idx >= vectors_.rows()) {
      throw ConfigError("embedding index out of range for word '" + word + "'");
    }
  }
}

Vec EmbeddingTable::lookup(const std::string& word) const {
  auto it = vocab_.find(word);
  if (it == vocab_.end()) return Vec::Zero(dim());
  return vectors_.row(it->second).transpose();
}

Mat EmbeddingTable::embed(const std::vector<std::string>& tokens) const {
  Mat out(dim(), static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = lookup(tokens[i]);
  return out;
}

void SyntheticSpec::validate() const {
  if (n_samples < 1) throw ConfigError("synthetic spec: n_samples must be >= 1");
  if (l < 2) throw ConfigError("synthetic spec: l must be >= 2");
  if (d < 1) throw ConfigError("synthetic spec: d must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic spec: noise_std must be >= 0");
  if (vocab_size < 1 || embedding_dim < 1) throw ConfigError("synthetic spec: empty vocabulary");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("synthetic spec: bad token range");
}

ClipFeatureSequence interpolate_to_fixed_length(const RawVideoFeatures& raw, int l) {
  if (raw.features.size() == 0) throw FormatError("empty feature array for '" + raw.video_id + "'");
  if (l < 2) throw InputError("interpolation target length must be >= 2");
  const Eigen::Index n = raw.features.cols();
  ClipFeatureSequence out{Mat(raw.features.rows(), l)};
  for (int j = 0; j < l; ++j) {
    const double pos = static_cast<double>(j) * static_cast<double>(n - 1) / static_cast<double>(l - 1);
    auto lo = static_cast<Eigen::Index>(std::floor(pos));
    lo = std::clamp<Eigen::Index>(lo, 0, n - 1);
    const Eigen::Index hi = std::min<Eigen::Index>(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    out.features.col(j) = (1.0 - frac) * raw.features.col(lo) + frac * raw.features.col(hi);
  }
  return out;
}

std::pair<int, int> project_annotation(double t_start, double t_end, double duration, int l) {
  if (!(duration > 0.0)) throw AnnotationError("duration must be positive");
  if (t_start > t_end) throw AnnotationError("t_start exceeds t_end");
  if (l < 1) throw AnnotationError("clip count must be positive");
  // Small tolerance so that times produced from clip boundaries map back exactly.
  constexpr double kTol = 1e-9;
  const double scale = static_cast<double>(l) / duration;
  int start = static_cast<int>(std::floor(t_start * scale + kTol));
  start = std::clamp(start, 0, l - 1);
  int end = static_cast<int>(std::ceil(t_end * scale - kTol)) - 1;
  end = std::clamp(end, start, l - 1);
  return {start, end};
}

Vec synthetic_pattern(const Mat& token_basis,
                      const std::unordered_map<std::string, int>& vocabulary,
                      const std::vector<std::string>& tokens) {
  Vec p = Vec::Zero(token_basis.cols());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto it = vocabulary.find(tokens[i]);
    if (it == vocabulary.end()) continue;
    // Position-dependent sign keeps the mapping order-sensitive.
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    p += sign * token_basis.row(it->second).transpose();
  }
  if (!tokens.empty()) p /= std::sqrt(static_cast<double>(tokens.size()));
  return p;
}

SyntheticDataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticDataset ds;
  std::unordered_map<std::string, int> vocab;
  Mat vectors(spec.vocab_size, spec.embedding_dim);
  ds.token_basis.resize(spec.vocab_size, spec.d);
  for (int w = 0; w < spec.vocab_size; ++w) {
    vocab.emplace("tok" + std::to_string(w), w);
    for (int c = 0; c < spec.embedding_dim; ++c) vectors(w, c) = normal(rng);
    for (int c = 0; c < spec.d; ++c) ds.token_basis(w, c) = normal(rng);
  }
  ds.embeddings = EmbeddingTable(vocab, std::move(vectors));

  const int min_len = std::max(1, spec.l / 16);
  const int max_len = std::max(min_len, spec.l / 2);
  std::uniform_int_distribution<int> n_tok(spec.min_tokens, spec.max_tokens);
  std::uniform_int_distribution<int> word(0, spec.vocab_size - 1);
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_real_distribution<double> dur_dist(static_cast<double>(spec.l),
                                                  4.0 * static_cast<double>(spec.l));

  ds.samples.reserve(static_cast<std::size_t>(spec.n_samples));
  for (int s = 0; s < spec.n_samples; ++s) {
    Sample sample;
    const int nt = n_tok(rng);
    for (int i = 0; i < nt; ++i) sample.tokens.push_back("tok" + std::to_string(word(rng)));
    const int len = len_dist(rng);
    std::uniform_int_distribution<int> start_dist(0, spec.l - len);
    const int start = start_dist(rng);
    const int end = start + len - 1;
    const double duration = dur_dist(rng);

    const Vec pattern = synthetic_pattern(ds.token_basis, vocab, sample.tokens);
    sample.features.features.resize(spec.d, spec.l);
    for (int t = 0; t < spec.l; ++t) {
      for (int c = 0; c < spec.d; ++c) {
        const double base = (t >= start && t <= end) ? pattern(c) : 0.0;
        const double noise = spec.noise_std > 0.0 ? spec.noise_std * normal(rng) : 0.0;
        sample.features.features(c, t) = base + noise;
      }
    }

    MomentAnnotation& ann = sample.annotation;
    char id[32];
    std::snprintf(id, sizeof(id), "synth_%05d", s);
    ann.video_id = id;
    for (std::size_t i = 0; i < sample.tokens.size(); ++i) {
      if (i) ann.query_text += ' ';
      ann.query_text += sample.tokens[i];
    }
    ann.duration_seconds = duration;
    ann.t_start = start * duration / spec.l;
    ann.t_end = end + 1 == spec.l ? duration : (end + 1) * duration / spec.l;
    ann.start_idx = start;
    ann.end_idx = end;
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

RawVideoFeatures load_feature_file(const std::filesystem::path& path) {
  const std::string buf = read_all(path);
  std::size_t off = 0;
  if (buf.size() < sizeof(kFeatureMagic) || std::memcmp(buf.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0) {
    throw FormatError(path.string() + ": bad magic at byte 0");
  }
  off = sizeof(kFeatureMagic);
  const auto d_raw = read_pod<std::uint32_t>(buf, off, path);
  const auto n_clips = read_pod<std::uint32_t>(buf, off, path);
  const std::size_t dur_off = off;
  const auto duration = read_pod<double>(buf, off, path);
  if (d_raw == 0 || n_clips == 0) {
    throw FormatError(path.string() + ": empty feature array declared in header at byte 8");
  }
  if (!(duration > 0.0) || !std::isfinite(duration)) {
    throw FormatError(path.string() + ": non-positive duration at byte " + std::to_string(dur_off));
  }
  const std::size_t count = static_cast<std::size_t>(d_raw) * n_clips;
  if (buf.size() - off != count * sizeof(float)) {
    throw FormatError(path.string() + ": body size mismatch at byte " + std::to_string(off) +
                      " (expected " + std::to_string(count * sizeof(float)) + " bytes, found " +
                      std::to_string(buf.size() - off) + ")");
  }
  RawVideoFeatures raw;
  raw.video_id = path.stem().string();
  raw.duration_seconds = duration;
  raw.features.resize(d_raw, n_clips);
  for (std::uint32_t t = 0; t < n_clips; ++t) {
    for (std::uint32_t c = 0; c < d_raw; ++c) {
      const std::size_t at = off;
      const float v = read_pod<float>(buf, off, path);
      if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite value at byte " + std::to_string(at));
      raw.features(c, t) = v;
    }
  }
  return raw;
}

void save_feature_file(const std::filesystem::path& path, const RawVideoFeatures& raw) {
  if (raw.features.size() == 0) throw FormatError("refusing to write an empty feature array");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(kFeatureMagic, sizeof(kFeatureMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(raw.features.rows()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(raw.features.cols()));
  write_pod<double>(out, raw.duration_seconds);
  for (Eigen::Index t = 0; t < raw.features.cols(); ++t) {
    for (Eigen::Index c = 0; c < raw.features.rows(); ++c) {
      write_pod<float>(out, static_cast<float>(raw.features(c, t)));
    }
  }
}

std::vector<MomentAnnotation> load_annotations(const std::filesystem::path& path, int l) {
  const std::string text = read_all(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw FormatError(path.string() + ": top-level value must be an array");
  std::vector<MomentAnnotation> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& row = doc[i];
    const std::string where = path.string() + ": annotation #" + std::to_string(i);
    MomentAnnotation a;
    try {
      a.video_id = row.at("video_id").get<std::string>();
      a.query_text = row.at("query").get<std::string>();
      a.t_start = row.at("t_start").get<double>();
      a.t_end = row.at("t_end").get<double>();
      a.duration_seconds = row.at("duration").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (a.t_start < 0.0 || a.t_start > a.t_end || a.t_end > a.duration_seconds * (1.0 + 1e-12) ||
        !(a.duration_seconds > 0.0)) {
      throw AnnotationError(where + ": requires 0 <= t_start <= t_end <= duration, got (" +
                            std::to_string(a.t_start) + ", " + std::to_string(a.t_end) + ", " +
                            std::to_string(a.duration_seconds) + ")");
    }
    std::tie(a.start_idx, a.end_idx) = project_annotation(a.t_start, a.t_end, a.duration_seconds, l);
    out.push_back(std::move(a));
  }
  return out;
}

void save_annotations(const std::filesystem::path& path,
                      const std::vector<MomentAnnotation>& annotations) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& a : annotations) {
    doc.push_back({{"video_id", a.video_id},
                   {"query", a.query_text},
                   {"t_start", a.t_start},
                   {"t_end", a.t_end},
                   {"duration", a.duration_seconds}});
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::unordered_map<std::string, int> vocab;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  Eigen::Index dim = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> values;
    std::string tok;
    while (ls >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end != tok.c_str() + tok.size() || !std::isfinite(v)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
      values.push_back(v);
    }
    if (values.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": no vector values");
    }
    if (dim < 0) dim = static_cast<Eigen::Index>(values.size());
    if (static_cast<Eigen::Index>(values.size()) != dim) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " values, found " + std::to_string(values.size()));
    }
    auto it = vocab.find(word);
    if (it != vocab.end()) {
      const std::string msg = path.string() + ":" + std::to_string(line_no) + ": duplicate word '" +
                              word + "', keeping the later entry";
      if (warnings) {
        warnings->push_back(msg);
      } else {
        std::cerr << "warning: " << msg << '\n';
      }
      rows[static_cast<std::size_t>(it->second)] = std::move(values);
    } else {
      vocab.emplace(word, static_cast<int>(rows.size()));
      rows.push_back(std::move(values));
    }
  }
  if (rows.empty()) throw FormatError(path.string() + ": no embeddings");
  Mat vectors(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) vectors(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  }
  return EmbeddingTable(std::move(vocab), std::move(vectors));
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  std::vector<std::pair<int, std::string>> ordered;
  for (const auto& [w, i] : table.vocabulary()) ordered.emplace_back(i, w);
  std::sort(ordered.begin(), ordered.end());
  char buf[40];
  for (const auto& [i, w] : ordered) {
    out << w;
    for (Eigen::Index c = 0; c < table.dim(); ++c) {
      std::snprintf(buf, sizeof(buf), " %.17g", table.vectors()(i, c));
      out << buf;
    }
    out << '\n';
  }
}

void write_synthetic_dataset(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  std::filesystem::create_directories(dir / "features");
  std::vector<MomentAnnotation> anns;
  for (const auto& s : ds.samples) {
    RawVideoFeatures raw{s.annotation.video_id, s.features.features, s.annotation.duration_seconds};
    save_feature_file(dir / "features" / (s.annotation.video_id + ".bin"), raw);
    anns.push_back(s.annotation);
  }
  save_annotations(dir / "annotations.json", anns);
  save_embeddings(dir / "embeddings.txt", ds.embeddings);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t a = i;
    std::size_t b = j;
    while (a < b && !is_word_char(static_cast<unsigned char>(text[a]))) ++a;
    while (b > a && !is_word_char(static_cast<unsigned char>(text[b - 1]))) --b;
    if (b > a) {
      std::string tok(text.substr(a, b - a));
      for (auto& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

}  // namespace cmtml
