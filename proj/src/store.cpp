#include "memeforge/store.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "json.hpp"
#include "memeforge/error.hpp"

namespace memeforge {

using json = nlohmann::json;

std::string_view to_string(StoreKind kind) {
  switch (kind) {
    case StoreKind::hash64: return "hash64";
    case StoreKind::dense: return "dense";
    case StoreKind::orb256: return "orb256";
  }
  return "unknown";
}

FeatureStore::FeatureStore(StoreKind kind, std::uint32_t dim) : kind_(kind), dim_(dim) {
  if (kind == StoreKind::hash64 && dim != 64) throw Error(ErrorCode::DimensionMismatch, "hash64 stores have dim 64");
  if (kind == StoreKind::orb256 && dim != 256) throw Error(ErrorCode::DimensionMismatch, "orb256 stores have dim 256");
}

bool FeatureStore::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

const Feature& FeatureStore::get(std::string_view id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::UnknownId, std::string(id));
  return rows_[it->second];
}

void FeatureStore::append(std::string id, Feature feature) {
  if (id.size() > 0xFFFF) throw Error(ErrorCode::InvalidArgument, "id longer than 65535 bytes");
  if (contains(id)) throw Error(ErrorCode::DuplicateId, id);
  switch (kind_) {
    case StoreKind::hash64:
      if (!std::holds_alternative<PerceptualHash>(feature)) {
        throw Error(ErrorCode::KindMismatch, "hash store expects perceptual hashes");
      }
      break;
    case StoreKind::dense:
      if (const auto* v = std::get_if<FeatureVector>(&feature)) {
        if (v->values.size() != dim_) {
          throw Error(ErrorCode::DimensionMismatch, id + ": dim " + std::to_string(v->values.size()) +
                                                        ", store dim " + std::to_string(dim_));
        }
      } else {
        throw Error(ErrorCode::KindMismatch, "dense store expects feature vectors");
      }
      break;
    case StoreKind::orb256:
      if (auto* d = std::get_if<DescriptorSet>(&feature)) {
        if (d->keypoints.size() != d->descriptors.size()) {
          throw Error(ErrorCode::LengthMismatch, id + ": keypoint and descriptor counts differ");
        }
        d->image_id = id;
      } else {
        throw Error(ErrorCode::KindMismatch, "orb store expects descriptor sets");
      }
      break;
  }
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  rows_.push_back(std::move(feature));
}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view take(std::size_t n) {
    if (in_.size() - pos_ < n) {
      throw Error(ErrorCode::CorruptStore, "truncated at byte " + std::to_string(pos_));
    }
    const auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  std::uint64_t get(int n) {
    const auto s = take(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(s[static_cast<std::size_t>(i)])} << (8 * i);
    return v;
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string FeatureStore::serialize() const {
  Writer w;
  w.bytes("MTFS");
  w.u16(kStoreVersion);
  w.u8(static_cast<std::uint8_t>(kind_));
  w.u32(dim_);
  w.u64(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    w.u16(static_cast<std::uint16_t>(ids_[i].size()));
    w.bytes(ids_[i]);
    switch (kind_) {
      case StoreKind::hash64: w.u64(std::get<PerceptualHash>(rows_[i]).bits); break;
      case StoreKind::dense:
        for (double v : std::get<FeatureVector>(rows_[i]).values) w.f32(static_cast<float>(v));
        break;
      case StoreKind::orb256: {
        const auto& set = std::get<DescriptorSet>(rows_[i]);
        w.u32(static_cast<std::uint32_t>(set.keypoints.size()));
        for (std::size_t k = 0; k < set.keypoints.size(); ++k) {
          const Keypoint& kp = set.keypoints[k];
          w.f32(kp.x);
          w.f32(kp.y);
          w.f32(kp.angle);
          w.f32(kp.score);
          w.u8(kp.octave);
          for (std::uint64_t word : set.descriptors[k].words) w.u64(word);
        }
        break;
      }
    }
  }
  return w.take();
}

FeatureStore FeatureStore::parse(std::string_view bytes, FeatureKind dense_kind) {
  Reader r(bytes);
  if (bytes.size() < 4 || r.take(4) != "MTFS") throw Error(ErrorCode::CorruptStore, "bad magic");
  const auto version = r.u16();
  if (version != kStoreVersion) {
    throw Error(ErrorCode::CorruptStore, "unsupported version " + std::to_string(version));
  }
  const auto kind_byte = r.u8();
  if (kind_byte > 2) throw Error(ErrorCode::CorruptStore, "unknown kind " + std::to_string(kind_byte));
  const auto kind = static_cast<StoreKind>(kind_byte);
  const auto dim = r.u32();
  const auto count = r.u64();
  FeatureStore store;
  try {
    store = FeatureStore(kind, dim);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptStore, e.what());
  }
  // Each row needs at least its id length prefix.
  if (count > r.remaining() / 2) throw Error(ErrorCode::CorruptStore, "row count exceeds file size");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id(r.take(r.u16()));
    Feature feature;
    switch (kind) {
      case StoreKind::hash64: feature = PerceptualHash{r.u64()}; break;
      case StoreKind::dense: {
        FeatureVector v{dense_kind, {}};
        if (dim > r.remaining() / 4) throw Error(ErrorCode::CorruptStore, "truncated row " + id);
        v.values.resize(dim);
        for (auto& x : v.values) x = r.f32();
        feature = std::move(v);
        break;
      }
      case StoreKind::orb256: {
        DescriptorSet set;
        set.image_id = id;
        const auto n = r.u32();
        if (n > r.remaining() / 49) throw Error(ErrorCode::CorruptStore, "truncated row " + id);
        set.keypoints.resize(n);
        set.descriptors.resize(n);
        for (std::uint32_t k = 0; k < n; ++k) {
          Keypoint& kp = set.keypoints[k];
          kp.x = r.f32();
          kp.y = r.f32();
          kp.angle = r.f32();
          kp.score = r.f32();
          kp.octave = r.u8();
          for (auto& word : set.descriptors[k].words) word = r.u64();
        }
        feature = std::move(set);
        break;
      }
    }
    try {
      store.append(std::move(id), std::move(feature));
    } catch (const Error& e) {
      throw Error(ErrorCode::CorruptStore, e.what());
    }
  }
  if (!r.done()) throw Error(ErrorCode::CorruptStore, "trailing bytes after the last row");
  return store;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot replace " + path.string());
  }
}

void write_store(const std::filesystem::path& path, const FeatureStore& store) {
  write_file_atomic(path, store.serialize());
}

FeatureStore read_store(const std::filesystem::path& path, FeatureKind dense_kind) {
  return FeatureStore::parse(read_file(path), dense_kind);
}

std::map<std::string, FeatureVector> import_embeddings(const std::filesystem::path& path) {
  const FeatureStore store = read_store(path, FeatureKind::embedding);
  if (store.kind() != StoreKind::dense) {
    throw Error(ErrorCode::DimensionMismatch, path.string() + " is a " + std::string(to_string(store.kind())) +
                                                  " store, not dense");
  }
  std::map<std::string, FeatureVector> out;
  for (std::size_t i = 0; i < store.size(); ++i) out.emplace(store.ids()[i], std::get<FeatureVector>(store.row(i)));
  return out;
}

// ---------------------------------------------------------------------------

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::string format_predictions(const std::vector<Prediction>& predictions) {
  std::string out = "image_id,label,score,method\n";
  for (const auto& p : predictions) {
    out += csv_field(p.image_id);
    out += ',';
    out += csv_field(p.label.to_string());
    out += ',';
    out += format_double(p.score);
    out += ',';
    out += csv_field(p.method);
    out += '\n';
  }
  return out;
}

std::vector<Prediction> parse_predictions(std::string_view text) {
  std::vector<Prediction> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto fields = split_csv_line(line);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line_no == 1 && !fields.empty() && fields[0] == "image_id") continue;
    if (fields.size() != 4) throw Error(ErrorCode::MalformedLine, where + "expected 4 fields");
    double score = 0.0;
    const auto& s = fields[2];
    const auto res = std::from_chars(s.data(), s.data() + s.size(), score);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
      throw Error(ErrorCode::MalformedLine, where + "bad score '" + s + "'");
    }
    try {
      out.push_back(Prediction{fields[0], TemplateLabel::parse(fields[1]), score, fields[3]});
    } catch (const Error& e) {
      throw Error(ErrorCode::MalformedLine, where + e.what());
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  write_file_atomic(path, format_predictions(predictions));
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  return parse_predictions(read_file(path));
}

std::string format_clustering(const Clustering& clustering) {
  std::string out;
  for (std::size_t i = 0; i < clustering.ids.size(); ++i) {
    const int c = clustering.assignment[i];
    std::string label;
    if (c != kNoise) {
      const auto& assigned = clustering.clusters[static_cast<std::size_t>(c)].assigned;
      if (assigned) label = assigned->to_string();
    } else {
      label = TemplateLabel::templateless().to_string();
    }
    out += csv_field(clustering.ids[i]) + ',' + std::to_string(c) + ',' + csv_field(label) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, path.string() + ": " + e.what());
  }
}

void expect_family(const json& j, std::string_view family, const std::filesystem::path& path) {
  if (j.value("family", std::string()) != family) {
    throw Error(ErrorCode::KindMismatch, path.string() + " is not a " + std::string(family) + " model");
  }
}

std::filesystem::path reference_path(const std::filesystem::path& model) {
  auto p = model;
  p += ".ref";
  return p;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd json_matrix(const json& rows, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].size()) != cols) {
      throw Error(ErrorCode::CorruptStore, "ragged matrix in model file");
    }
    for (Eigen::Index j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

}  // namespace

std::string model_family(const std::filesystem::path& path) {
  return read_json(path).value("family", std::string());
}

void save_radius_model(const std::filesystem::path& path, const RadiusModel& model) {
  StoreKind kind = StoreKind::hash64;
  std::uint32_t dim = 64;
  if (model.metric() == Metric::cosine_distance) {
    kind = StoreKind::dense;
    dim = static_cast<std::uint32_t>(std::get<FeatureVector>(model.reference().front().feature).dim());
  } else if (model.metric() == Metric::feature_match) {
    kind = StoreKind::orb256;
    dim = 256;
  }
  FeatureStore store(kind, dim);
  json labels = json::object();
  for (const auto& r : model.reference()) {
    store.append(r.id, r.feature);
    labels[r.id] = r.label.template_id();
  }
  json j{{"family", "rnn"},
         {"metric", std::string(to_string(model.metric()))},
         {"match_d", model.match_params().d},
         {"match_m", model.match_params().m},
         {"labels", std::move(labels)},
         {"reference", reference_path(path).filename().string()}};
  if (model.radius()) j["radius"] = *model.radius();
  write_store(reference_path(path), store);
  write_file_atomic(path, j.dump(2) + "\n");
}

RadiusModel load_radius_model(const std::filesystem::path& path, unsigned threads) {
  const json j = read_json(path);
  expect_family(j, "rnn", path);
  try {
    Metric metric;
    const auto name = j.at("metric").get<std::string>();
    if (name == "hamming") metric = Metric::hamming;
    else if (name == "cosine_distance") metric = Metric::cosine_distance;
    else if (name == "feature_match") metric = Metric::feature_match;
    else throw Error(ErrorCode::CorruptStore, "unknown metric " + name);
    const auto ref_path = path.parent_path() / j.at("reference").get<std::string>();
    const FeatureStore store = read_store(ref_path);
    std::vector<LabeledFeature> reference;
    reference.reserve(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& id = store.ids()[i];
      reference.push_back({id, store.row(i), TemplateLabel::of(j.at("labels").at(id).get<std::string>())});
    }
    MatchParams match;
    match.d = j.at("match_d").get<int>();
    match.m = j.at("match_m").get<int>();
    RadiusModel model = RadiusModel::fit(std::move(reference), metric, match, threads);
    if (j.contains("radius")) model.set_radius(j.at("radius").get<double>());
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, path.string() + ": " + e.what());
  }
}

void save_mlr_model(const std::filesystem::path& path, const MlrModel& model) {
  json j{{"family", "mlr"},
         {"classes", model.classes},
         {"dim", model.dim()},
         {"weights", matrix_json(model.weights)},
         {"bias", std::vector<double>(model.bias.data(), model.bias.data() + model.bias.size())},
         {"loss_history", model.loss_history}};
  write_file_atomic(path, j.dump() + "\n");
}

MlrModel load_mlr_model(const std::filesystem::path& path) {
  const json j = read_json(path);
  expect_family(j, "mlr", path);
  try {
    MlrModel m;
    m.classes = j.at("classes").get<std::vector<std::string>>();
    const auto dim = j.at("dim").get<Eigen::Index>();
    m.weights = json_matrix(j.at("weights"), dim);
    const auto bias = j.at("bias").get<std::vector<double>>();
    m.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    m.loss_history = j.at("loss_history").get<std::vector<double>>();
    if (m.weights.rows() != static_cast<Eigen::Index>(m.classes.size()) || m.bias.size() != m.weights.rows()) {
      throw Error(ErrorCode::CorruptStore, path.string() + ": shape mismatch");
    }
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, path.string() + ": " + e.what());
  }
}

void save_sparse_model(const std::filesystem::path& path, const SparseDictionary& dict) {
  json j{{"family", "sparse"},
         {"classes", dict.classes},
         {"column_class", dict.column_class},
         {"column_ids", dict.column_ids},
         {"lambda", dict.lambda},
         {"sci_threshold", dict.sci_threshold},
         {"dim", dict.atoms.rows()},
         {"atoms", matrix_json(dict.atoms.transpose())}};
  write_file_atomic(path, j.dump() + "\n");
}

SparseDictionary load_sparse_model(const std::filesystem::path& path) {
  const json j = read_json(path);
  expect_family(j, "sparse", path);
  try {
    SparseDictionary d;
    d.classes = j.at("classes").get<std::vector<std::string>>();
    d.column_class = j.at("column_class").get<std::vector<int>>();
    d.column_ids = j.at("column_ids").get<std::vector<std::string>>();
    d.lambda = j.at("lambda").get<double>();
    d.sci_threshold = j.at("sci_threshold").get<double>();
    d.atoms = json_matrix(j.at("atoms"), j.at("dim").get<Eigen::Index>()).transpose();
    if (d.atoms.cols() != static_cast<Eigen::Index>(d.column_class.size()) ||
        d.column_ids.size() != d.column_class.size()) {
      throw Error(ErrorCode::CorruptStore, path.string() + ": shape mismatch");
    }
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptStore, path.string() + ": " + e.what());
  }
}

}  // namespace memeforge
