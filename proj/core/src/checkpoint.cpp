#include "regnet/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "regnet/error.hpp"

namespace regnet {

namespace {

using ojson = nlohmann::ordered_json;

constexpr char kMagic[8] = {'R', 'E', 'G', 'N', 'E', 'T', 'C', 'K'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_doubles(std::string& out, const std::vector<double>& values) {
  for (double d : values) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

std::vector<double> get_doubles(const std::string& payload, std::uint64_t offset, std::uint64_t count,
                                const std::string& origin) {
  if (offset > payload.size() / 8 || count > payload.size() / 8 - offset) {
    raise(ErrorKind::CheckpointFormat, origin + ": array extends past the end of the file");
  }
  std::vector<double> out(count);
  const char* base = payload.data() + offset * 8;
  for (std::uint64_t i = 0; i < count; ++i) out[i] = std::bit_cast<double>(get_u64(base + i * 8));
  return out;
}

ojson real_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

double real_from(const ojson& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

std::vector<double> reals_from(const ojson& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(real_from(v));
  return out;
}

ojson reals_json(const std::vector<double>& v) {
  ojson a = ojson::array();
  for (double x : v) a.push_back(real_or_null(x));
  return a;
}

}  // namespace

Checkpoint capture_checkpoint(const RunConfig& cfg, const Model& model, const AdamWState& optimizer,
                              const TrainingState& state) {
  Checkpoint c;
  c.config = cfg;
  c.config.model = model.config();
  if (!model.config().atom_features.empty()) c.atom_features_json = model.atom_features().to_json_text();
  for (const auto& p : model.params().all()) {
    const auto data = p.value.data();
    c.arrays.push_back({p.name, p.value.shape(), p.trainable, std::vector<double>(data.begin(), data.end())});
  }
  c.optimizer = optimizer;
  c.state = state;
  return c;
}

void copy_arrays_into(const Checkpoint& ckpt, ParameterStore& store) {
  auto& params = store.all();
  if (params.size() != ckpt.arrays.size()) {
    raise(ErrorKind::CheckpointFormat, "checkpoint holds " + std::to_string(ckpt.arrays.size()) +
                                           " arrays, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& a = ckpt.arrays[i];
    auto& p = params[i];
    if (a.name != p.name || !(a.shape == p.value.shape()) || a.trainable != p.trainable) {
      raise(ErrorKind::CheckpointFormat, "array '" + a.name + "' " + to_string(a.shape) + " does not match model array '" +
                                             p.name + "' " + to_string(p.value.shape()));
    }
    auto dst = p.value.mutable_data();
    std::copy(a.values.begin(), a.values.end(), dst.begin());
  }
}

std::unique_ptr<Model> restore_model(const Checkpoint& ckpt) {
  AtomFeatureTable table = ckpt.atom_features_json.empty()
                               ? AtomFeatureTable::one_hot()
                               : AtomFeatureTable::from_json_text(ckpt.atom_features_json, "checkpoint");
  auto model = std::make_unique<Model>(ckpt.config.model, std::move(table));
  copy_arrays_into(ckpt, model->params());
  return model;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ojson h;
  h["format_version"] = kCheckpointVersion;
  ojson cfg = ojson::object();
  for (const auto& [key, value] : config_entries(ckpt.config)) cfg[key] = value;
  h["config"] = cfg;
  h["atom_features"] = ckpt.atom_features_json;

  std::string payload;
  std::uint64_t offset = 0;
  const auto append = [&](const std::vector<double>& values) {
    const std::uint64_t at = offset;
    put_doubles(payload, values);
    offset += values.size();
    return at;
  };
  ojson arrays = ojson::array();
  for (const auto& a : ckpt.arrays) {
    if (a.values.size() != a.shape.size()) raise(ErrorKind::CheckpointFormat, "array '" + a.name + "' has the wrong size");
    ojson e;
    e["name"] = a.name;
    e["shape"] = {a.shape.rows, a.shape.cols};
    e["trainable"] = a.trainable;
    e["offset"] = append(a.values);
    arrays.push_back(e);
  }
  h["arrays"] = arrays;

  ojson opt;
  opt["step"] = ckpt.optimizer.step;
  ojson moments = ojson::array();
  if (ckpt.optimizer.m.size() != ckpt.optimizer.v.size()) raise(ErrorKind::CheckpointFormat, "optimizer moments disagree");
  for (std::size_t i = 0; i < ckpt.optimizer.m.size(); ++i) {
    ojson e;
    e["size"] = ckpt.optimizer.m[i].size();
    e["m_offset"] = append(ckpt.optimizer.m[i]);
    e["v_offset"] = append(ckpt.optimizer.v[i]);
    moments.push_back(e);
  }
  opt["moments"] = moments;
  h["optimizer"] = opt;

  const TrainingState& s = ckpt.state;
  ojson st;
  st["epochs_done"] = s.epochs_done;
  st["step"] = s.step;
  st["best_val"] = real_or_null(s.best_val);
  st["best_epoch"] = s.best_epoch;
  st["label_mean"] = reals_json(s.stats.mean);
  st["label_scale"] = reals_json(s.stats.scale);
  ojson hist = ojson::array();
  for (const auto& m : s.history) {
    ojson e;
    e["epoch"] = m.epoch;
    e["split"] = m.split;
    e["mae"] = reals_json(m.mae);
    e["loss"] = real_or_null(m.loss);
    e["lr"] = m.lr;
    hist.push_back(e);
  }
  st["history"] = hist;
  h["training"] = st;

  const std::string header = h.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, header.size());
  out += header;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    raise(ErrorKind::CheckpointFormat, origin + ": not a checkpoint file");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) raise(ErrorKind::CheckpointFormat, origin + ": truncated header");
  ojson h;
  try {
    h = ojson::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::CheckpointFormat, origin + ": corrupt header: " + e.what());
  }
  const std::string payload = bytes.substr(16 + header_len);
  if (payload.size() % 8 != 0) raise(ErrorKind::CheckpointFormat, origin + ": payload is not a whole number of doubles");

  Checkpoint c;
  try {
    if (h.at("format_version").get<std::uint32_t>() != kCheckpointVersion) {
      raise(ErrorKind::CheckpointFormat, origin + ": unsupported format version");
    }
    ConfigDocument doc;
    for (const auto& [key, value] : h.at("config").items()) doc.set(key, value.get<std::string>());
    apply_document(c.config, doc);
    c.atom_features_json = h.at("atom_features").get<std::string>();

    for (const auto& e : h.at("arrays")) {
      StoredArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = {e.at("shape").at(0).get<std::size_t>(), e.at("shape").at(1).get<std::size_t>()};
      a.trainable = e.at("trainable").get<bool>();
      a.values = get_doubles(payload, e.at("offset").get<std::uint64_t>(), a.shape.size(), origin);
      c.arrays.push_back(std::move(a));
    }
    const auto& opt = h.at("optimizer");
    c.optimizer.step = opt.at("step").get<std::int64_t>();
    for (const auto& e : opt.at("moments")) {
      const auto n = e.at("size").get<std::uint64_t>();
      c.optimizer.m.push_back(get_doubles(payload, e.at("m_offset").get<std::uint64_t>(), n, origin));
      c.optimizer.v.push_back(get_doubles(payload, e.at("v_offset").get<std::uint64_t>(), n, origin));
    }
    const auto& st = h.at("training");
    c.state.epochs_done = st.at("epochs_done").get<std::size_t>();
    c.state.step = st.at("step").get<std::int64_t>();
    c.state.best_val = st.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                                   : st.at("best_val").get<double>();
    c.state.best_epoch = st.at("best_epoch").get<std::size_t>();
    c.state.stats.mean = reals_from(st.at("label_mean"));
    c.state.stats.scale = reals_from(st.at("label_scale"));
    for (const auto& e : st.at("history")) {
      MetricRecord m;
      m.epoch = e.at("epoch").get<std::size_t>();
      m.split = e.at("split").get<std::string>();
      m.mae = reals_from(e.at("mae"));
      m.loss = real_from(e.at("loss"));
      m.lr = e.at("lr").get<double>();
      c.state.history.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::CheckpointFormat, origin + ": malformed header: " + e.what());
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::IoError, "cannot write checkpoint '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(ErrorKind::IoError, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) raise(ErrorKind::IoError, "cannot move checkpoint into '" + path + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::IoError, "cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path);
}

}  // namespace regnet
