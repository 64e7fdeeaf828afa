#include "cmtml/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace cmtml {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated while reading " + what);
  return v;
}

void put_array(std::ostream& out, const std::string& name, const Mat& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(out, 'd');
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

std::map<std::string, Mat> read_arrays(std::istream& in) {
  std::map<std::string, Mat> arrays;
  const auto count = get<std::uint64_t>(in, "array count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw FormatError("checkpoint truncated in array name");
    const auto dtype = get<std::uint8_t>(in, name);
    const auto rows = get<std::uint64_t>(in, name);
    const auto cols = get<std::uint64_t>(in, name);
    Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (dtype == 'd') {
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    } else if (dtype == 'f') {
      std::vector<float> buf(static_cast<std::size_t>(m.size()));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = buf[static_cast<std::size_t>(k)];
    } else {
      throw FormatError("array " + name + ": unknown dtype tag " + std::to_string(dtype));
    }
    if (!in) throw FormatError("checkpoint truncated in array " + name);
    arrays.emplace(std::move(name), std::move(m));
  }
  return arrays;
}

void restore(Mat& dst, const std::map<std::string, Mat>& arrays, const std::string& key) {
  auto it = arrays.find(key);
  if (it == arrays.end()) throw FormatError("checkpoint lacks array " + key);
  if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols()) {
    throw FormatError("array " + key + " has shape " + std::to_string(it->second.rows()) + "x" +
                      std::to_string(it->second.cols()) + ", expected " + std::to_string(dst.rows()) + "x" +
                      std::to_string(dst.cols()));
  }
  dst = it->second;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Trainer& trainer) {
  TaciModel& model = trainer.model();
  std::ostringstream rng;
  rng << trainer.rng();
  nlohmann::json meta = {{"config", to_json(model.config())},
                         {"raw_feature_dim", model.raw_feature_dim()},
                         {"embedding_dim", model.embedding_dim()},
                         {"epoch", trainer.epoch()},
                         {"rng", rng.str()},
                         {"adam_step", trainer.optimizer().steps()}};
  const std::string meta_text = meta.dump();

  std::vector<std::pair<std::string, const Mat*>> arrays;
  model.visit_params([&](const std::string& n, Param& p) { arrays.emplace_back("param/" + n, &p.value); });
  model.visit_buffers([&](const std::string& n, Mat& m) { arrays.emplace_back("buffer/" + n, &m); });
  trainer.optimizer().visit_state(model, [&](const std::string& n, Mat& m, Mat& v) {
    arrays.emplace_back("adam_m/" + n, &m);
    arrays.emplace_back("adam_v/" + n, &v);
  });

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp);
    out << kCheckpointVersion << '\n';
    put<std::uint64_t>(out, meta_text.size());
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    put<std::uint64_t>(out, arrays.size());
    for (const auto& [name, m] : arrays) put_array(out, name, *m);
    if (!out) throw FormatError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Trainer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::string version;
  std::getline(in, version);
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": expected header " + kCheckpointVersion + ", found '" + version + "'");
  }
  const auto meta_len = get<std::uint64_t>(in, "metadata length");
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw FormatError("checkpoint truncated in metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const RunConfig cfg = run_config_from_json(meta.at("config"));
  Trainer trainer(cfg, meta.at("raw_feature_dim").get<int>(), meta.at("embedding_dim").get<int>());
  trainer.set_epoch(meta.at("epoch").get<int>());
  std::istringstream rng(meta.at("rng").get<std::string>());
  rng >> trainer.rng();
  if (!rng) throw FormatError("checkpoint RNG state unreadable");
  trainer.optimizer().set_steps(meta.at("adam_step").get<long long>());

  const auto arrays = read_arrays(in);
  TaciModel& model = trainer.model();
  model.visit_params([&](const std::string& n, Param& p) {
    restore(p.value, arrays, "param/" + n);
    p.grad.setZero();
  });
  model.visit_buffers([&](const std::string& n, Mat& m) { restore(m, arrays, "buffer/" + n); });
  trainer.optimizer().visit_state(model, [&](const std::string& n, Mat& m, Mat& v) {
    restore(m, arrays, "adam_m/" + n);
    restore(v, arrays, "adam_v/" + n);
  });
  return trainer;
}

}  // namespace cmtml
