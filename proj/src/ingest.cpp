#include "memeforge/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "memeforge/error.hpp"
#include "memeforge/image_io.hpp"
#include "memeforge/rng.hpp"

namespace memeforge {

using nlohmann::json;

namespace {

constexpr std::pair<Source, std::string_view> kSources[] = {
    {Source::imgflip, "imgflip"}, {Source::reddit, "reddit"},   {Source::x, "x"},
    {Source::facebook, "facebook"}, {Source::nonmeme, "nonmeme"}, {Source::synthetic, "synthetic"},
};

bool is_labeled_source(Source s) { return s == Source::imgflip || s == Source::synthetic; }

[[noreturn]] void malformed(std::size_t line_no, const std::string& why) {
  throw Error(ErrorCode::MalformedLine, "line " + std::to_string(line_no) + ": " + why);
}

ImageRecord parse_record(const json& obj, std::size_t line_no, const std::filesystem::path& base_dir) {
  if (!obj.is_object()) malformed(line_no, "expected an object");
  ImageRecord rec;

  const auto id = obj.find("id");
  if (id == obj.end() || !id->is_string() || id->get_ref<const std::string&>().empty()) {
    malformed(line_no, "missing or empty string field 'id'");
  }
  rec.id = id->get<std::string>();

  const auto source = obj.find("source");
  if (source == obj.end() || !source->is_string()) malformed(line_no, "missing string field 'source'");
  const auto parsed = parse_source(source->get_ref<const std::string&>());
  if (!parsed) malformed(line_no, "unknown source '" + source->get<std::string>() + "'");
  rec.source = *parsed;

  const auto path = obj.find("path");
  if (path == obj.end() || !path->is_string() || path->get_ref<const std::string&>().empty()) {
    malformed(line_no, "missing or empty string field 'path'");
  }
  rec.path = path->get<std::string>();
  if (rec.path.is_relative() && !base_dir.empty()) rec.path = base_dir / rec.path;

  if (const auto tmpl = obj.find("template"); tmpl != obj.end() && !tmpl->is_null()) {
    if (!tmpl->is_string() || tmpl->get_ref<const std::string&>().empty()) {
      malformed(line_no, "'template' must be a non-empty string");
    }
    try {
      rec.label = TemplateLabel::of(tmpl->get<std::string>());
    } catch (const Error& e) {
      malformed(line_no, e.what());
    }
  }
  if (rec.label.has_value() != is_labeled_source(rec.source)) {
    malformed(line_no, rec.label ? "only imgflip and synthetic records carry a template"
                                 : "imgflip and synthetic records require a template");
  }

  if (const auto boxes = obj.find("text_boxes"); boxes != obj.end() && !boxes->is_null()) {
    if (!boxes->is_array()) malformed(line_no, "'text_boxes' must be an array");
    for (const auto& box : *boxes) {
      if (!box.is_array() || box.size() != 4 ||
          !std::all_of(box.begin(), box.end(), [](const json& v) { return v.is_number_integer(); })) {
        malformed(line_no, "text box must be [x, y, w, h] integers");
      }
      Rect r{box[0].get<int>(), box[1].get<int>(), box[2].get<int>(), box[3].get<int>()};
      if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0) {
        malformed(line_no, "text box needs x, y >= 0 and w, h > 0");
      }
      rec.text_boxes.push_back(r);
    }
  }
  return rec;
}

void check_boxes(const std::vector<Rect>& boxes, int width, int height, const std::string& what) {
  for (const Rect& r : boxes) {
    if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.x + r.w > width || r.y + r.h > height) {
      throw Error(ErrorCode::RectOutOfBounds,
                  what + ": box [" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
                      std::to_string(r.w) + "," + std::to_string(r.h) + "] outside " +
                      std::to_string(width) + "x" + std::to_string(height));
    }
  }
}

}  // namespace

std::string_view to_string(Source source) {
  for (const auto& [s, name] : kSources) {
    if (s == source) return name;
  }
  return "unknown";
}

std::optional<Source> parse_source(std::string_view text) {
  for (const auto& [s, name] : kSources) {
    if (name == text) return s;
  }
  return std::nullopt;
}

std::vector<ImageRecord> parse_manifest(std::string_view text, const std::filesystem::path& base_dir) {
  std::vector<ImageRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      malformed(line_no, e.what());
    }
    ImageRecord rec = parse_record(obj, line_no, base_dir);
    if (!seen.insert(rec.id).second) throw Error(ErrorCode::DuplicateId, rec.id);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ImageRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str(), path.parent_path());
}

std::string format_manifest(const std::vector<ImageRecord>& records,
                            const std::filesystem::path& base_dir) {
  std::string out;
  for (const auto& rec : records) {
    json obj;
    obj["id"] = rec.id;
    obj["source"] = std::string(to_string(rec.source));
    std::filesystem::path p = rec.path;
    if (!base_dir.empty()) {
      p = std::filesystem::absolute(p).lexically_normal();
      const auto rel = p.lexically_relative(std::filesystem::absolute(base_dir).lexically_normal());
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    obj["path"] = p.generic_string();
    if (rec.label && rec.label->is_template()) obj["template"] = rec.label->template_id();
    if (!rec.text_boxes.empty()) {
      json boxes = json::array();
      for (const Rect& r : rec.text_boxes) boxes.push_back({r.x, r.y, r.w, r.h});
      obj["text_boxes"] = std::move(boxes);
    }
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records) {
  auto base = std::filesystem::absolute(path).parent_path();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
  out << format_manifest(records, base);
  if (!out) throw Error(ErrorCode::IoError, "failed writing manifest " + path.string());
}

RgbImage decode_rgb(const ImageRecord& record, std::optional<Size> size) {
  RgbImage img = read_rgb(record.path);
  check_boxes(record.text_boxes, img.width(), img.height(), record.id);
  if (size) return resize_bilinear(img, size->width, size->height);
  return img;
}

GrayImage decode_gray(const ImageRecord& record, std::optional<Size> size) {
  RgbImage rgb = read_rgb(record.path);
  check_boxes(record.text_boxes, rgb.width(), rgb.height(), record.id);
  GrayImage gray = to_gray(rgb);
  if (size) return resize_bilinear(gray, size->width, size->height);
  return gray;
}

GrayImage blur_text_regions(const GrayImage& img, const std::vector<Rect>& boxes) {
  check_boxes(boxes, img.width(), img.height(), "blur_text_regions");
  GrayImage out = img;
  if (boxes.empty()) return out;

  const int w = img.width();
  const int h = img.height();
  constexpr int kHalf = kTextBlurKernel / 2;
  constexpr int kArea = kTextBlurKernel * kTextBlurKernel;
  std::vector<bool> covered(static_cast<std::size_t>(w) * h, false);
  for (const Rect& r : boxes) {
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) covered[static_cast<std::size_t>(y) * w + x] = true;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!covered[static_cast<std::size_t>(y) * w + x]) continue;
      int sum = 0;
      for (int dy = -kHalf; dy <= kHalf; ++dy) {
        const int sy = std::clamp(y + dy, 0, h - 1);
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          sum += img.at(std::clamp(x + dx, 0, w - 1), sy);
        }
      }
      out.at(x, y) = static_cast<std::uint8_t>(sum / kArea);
    }
  }
  return out;
}

namespace {

// Template id -> record indices, each group sorted by record id.
std::map<std::string, std::vector<std::size_t>> group_by_template(
    const std::vector<ImageRecord>& records) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& label = records[i].label;
    if (!label || label->is_templateless()) {
      throw Error(ErrorCode::InvalidArgument,
                  "record '" + records[i].id + "' has no concrete template label");
    }
    groups[label->template_id()].push_back(i);
  }
  for (auto& [_, idx] : groups) {
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
  }
  return groups;
}

}  // namespace

Split stratified_split(const std::vector<ImageRecord>& records, double test_fraction,
                       std::uint64_t seed) {
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "nothing to split");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "test fraction must lie in (0, 1)");
  }
  auto groups = group_by_template(records);
  Rng rng(seed);
  std::vector<bool> in_test(records.size(), false);
  for (auto& [_, idx] : groups) {
    rng.shuffle(std::span<std::size_t>(idx));
    const auto n = static_cast<long>(idx.size());
    const long n_test = std::min(std::lround(test_fraction * static_cast<double>(n)), n - 1);
    for (long k = 0; k < n_test; ++k) in_test[idx[k]] = true;
  }
  Split split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (in_test[i] ? split.test : split.train).push_back(records[i]);
  }
  return split;
}

std::vector<int> stratified_folds(const std::vector<ImageRecord>& records, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 folds");
  if (records.empty()) throw Error(ErrorCode::EmptyInput, "nothing to fold");
  auto groups = group_by_template(records);
  Rng rng(seed);
  std::vector<int> fold(records.size(), 0);
  std::size_t next = 0;
  for (auto& [_, idx] : groups) {
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i : idx) fold[i] = static_cast<int>(next++ % static_cast<std::size_t>(k));
  }
  return fold;
}

std::vector<DuplicatePair> dedup_candidates(const std::map<std::string, FeatureVector>& embeddings,
                                            double tau) {
  std::vector<const std::string*> ids;
  std::vector<std::vector<double>> unit;
  std::size_t dim = 0;
  for (const auto& [id, vec] : embeddings) {
    if (ids.empty()) dim = vec.dim();
    if (vec.dim() != dim) {
      throw Error(ErrorCode::DimensionMismatch, id + " has dimension " + std::to_string(vec.dim()) +
                                                    ", expected " + std::to_string(dim));
    }
    double norm = 0.0;
    for (double v : vec.values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw Error(ErrorCode::ZeroVector, id);
    std::vector<double> u(vec.values);
    for (double& v : u) v /= norm;
    ids.push_back(&id);
    unit.push_back(std::move(u));
  }

  std::vector<DuplicatePair> pairs;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += unit[i][d] * unit[j][d];
      dot = std::clamp(dot, -1.0, 1.0);
      if (dot >= tau) pairs.push_back({*ids[i], *ids[j], dot});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const DuplicatePair& a, const DuplicatePair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  return pairs;
}

}  // namespace memeforge
