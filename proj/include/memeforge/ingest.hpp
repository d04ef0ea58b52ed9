#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memeforge/feature_types.hpp"
#include "memeforge/image.hpp"
#include "memeforge/labels.hpp"

namespace memeforge {

enum class Source { imgflip, reddit, x, facebook, nonmeme, synthetic };

std::string_view to_string(Source source);
std::optional<Source> parse_source(std::string_view text);

/// Pixel rectangle; w and h are strictly positive.
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  friend bool operator==(const Rect&, const Rect&) = default;
};

struct ImageRecord {
  std::string id;
  Source source = Source::synthetic;
  /// Absolute, or relative to the manifest's directory as written on disk.
  std::filesystem::path path;
  /// Present exactly for imgflip and synthetic records.
  std::optional<TemplateLabel> label;
  std::vector<Rect> text_boxes;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

/// Parses a line-delimited JSON manifest. Relative paths are resolved against
/// the manifest's directory. Errors: MalformedLine (1-based line number in the
/// message), DuplicateId.
std::vector<ImageRecord> load_manifest(const std::filesystem::path& path);

/// Parses manifest text; `base_dir` resolves relative paths.
std::vector<ImageRecord> parse_manifest(std::string_view text, const std::filesystem::path& base_dir);

/// Serializes records one per line. Paths under `base_dir` are written
/// relative to it.
std::string format_manifest(const std::vector<ImageRecord>& records,
                            const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, const std::vector<ImageRecord>& records);

struct Size {
  int width = 0;
  int height = 0;
};

/// Decodes the record's file and, when `size` is given, resamples it
/// bilinearly to exactly that size.
RgbImage decode_rgb(const ImageRecord& record, std::optional<Size> size = std::nullopt);
/// As decode_rgb, converted to luma before resampling. Text boxes are checked
/// against the decoded bounds (RectOutOfBounds).
GrayImage decode_gray(const ImageRecord& record, std::optional<Size> size = std::nullopt);

/// Side length of the box filter applied inside text boxes.
inline constexpr int kTextBlurKernel = 15;

/// Replaces every pixel covered by a box with the floor of the 15x15 mean of
/// the input around it (edge-clamped). Pixels outside all boxes are copied
/// unchanged. Throws RectOutOfBounds for boxes that leave the image.
GrayImage blur_text_regions(const GrayImage& img, const std::vector<Rect>& boxes);

struct Split {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> test;
};

/// Per template with n samples, round(test_fraction * n) samples (capped at
/// n - 1) go to test. Result depends only on the set of records and the seed,
/// not on input order; each side keeps input order. Throws EmptyInput, and
/// InvalidArgument for unlabeled records or a fraction outside (0, 1).
Split stratified_split(const std::vector<ImageRecord>& records, double test_fraction,
                       std::uint64_t seed);

/// Fold index in [0, k) for each record, dealt round-robin per template after
/// a seeded shuffle.
std::vector<int> stratified_folds(const std::vector<ImageRecord>& records, int k, std::uint64_t seed);

struct DuplicatePair {
  std::string first;
  std::string second;
  double similarity = 0.0;
  friend bool operator==(const DuplicatePair&, const DuplicatePair&) = default;
};

/// All unordered pairs with cosine similarity >= tau, most similar first
/// (ties by id). `first` < `second` lexicographically. Candidates are meant
/// for manual review; nothing is merged.
std::vector<DuplicatePair> dedup_candidates(const std::map<std::string, FeatureVector>& embeddings,
                                            double tau);

}  // namespace memeforge
