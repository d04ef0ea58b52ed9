#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memeforge/classify.hpp"
#include "memeforge/cluster.hpp"
#include "memeforge/labels.hpp"

namespace memeforge {

// ---------------------------------------------------------------------------
// Feature store: "MTFS", little-endian.
//
//   magic[4] version:u16 kind:u8 dim:u32 count:u64
//   count x { id_len:u16 id[id_len] payload }
//
// payload: hash64 -> u64; dense -> dim x f32; orb256 -> u32 n, then n x
// { x,y,angle,score: f32, octave: u8, descriptor[32] }.

inline constexpr std::uint16_t kStoreVersion = 1;

enum class StoreKind : std::uint8_t { hash64 = 0, dense = 1, orb256 = 2 };

std::string_view to_string(StoreKind kind);

class FeatureStore {
 public:
  FeatureStore() = default;
  FeatureStore(StoreKind kind, std::uint32_t dim);

  StoreKind kind() const noexcept { return kind_; }
  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<Feature>& rows() const noexcept { return rows_; }
  const Feature& row(std::size_t i) const { return rows_[i]; }

  bool contains(std::string_view id) const;
  /// Throws UnknownId.
  const Feature& get(std::string_view id) const;
  /// Throws DuplicateId, KindMismatch, DimensionMismatch.
  void append(std::string id, Feature feature);

  std::string serialize() const;
  /// `dense_kind` tags dense rows; the format does not record it.
  static FeatureStore parse(std::string_view bytes, FeatureKind dense_kind = FeatureKind::embedding);

 private:
  StoreKind kind_ = StoreKind::hash64;
  std::uint32_t dim_ = 64;
  std::vector<std::string> ids_;
  std::vector<Feature> rows_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Writes through a temporary file and renames it into place.
void write_store(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore read_store(const std::filesystem::path& path, FeatureKind dense_kind = FeatureKind::embedding);

/// Dense store as an id -> embedding map. Throws CorruptStore,
/// DimensionMismatch (non-dense store).
std::map<std::string, FeatureVector> import_embeddings(const std::filesystem::path& path);

/// Whole-file helpers; writes are atomic.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// ---------------------------------------------------------------------------
// Predictions: CSV with header `image_id,label,score,method`.

std::string format_predictions(const std::vector<Prediction>& predictions);
std::vector<Prediction> parse_predictions(std::string_view text);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

/// One line per point: `image_id,cluster_id,assigned_label`; cluster_id is
/// -1 for noise and assigned_label empty when the cluster is unannotated.
std::string format_clustering(const Clustering& clustering);

/// Splits one CSV line, honouring double quotes.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);

// ---------------------------------------------------------------------------
// Model files (JSON). Radius models keep their reference features in a
// sibling store `<model>.ref`.

void save_radius_model(const std::filesystem::path& path, const RadiusModel& model);
RadiusModel load_radius_model(const std::filesystem::path& path, unsigned threads = 0);

void save_mlr_model(const std::filesystem::path& path, const MlrModel& model);
MlrModel load_mlr_model(const std::filesystem::path& path);

void save_sparse_model(const std::filesystem::path& path, const SparseDictionary& dict);
SparseDictionary load_sparse_model(const std::filesystem::path& path);

/// Method tag stored in a model file ("rnn", "mlr", "sparse").
std::string model_family(const std::filesystem::path& path);

}  // namespace memeforge
