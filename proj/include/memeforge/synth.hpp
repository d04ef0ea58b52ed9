#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "memeforge/image.hpp"
#include "memeforge/ingest.hpp"

namespace memeforge {

inline constexpr int kSynthSide = 256;

struct SynthSpec {
  int n_templates = 20;
  int variants_per_template = 30;
  int n_nonmemes = 200;
  double overlay_coverage = 0.2;  // upper bound on text-box area fraction
  std::uint64_t seed = 7;

  /// Throws InvalidArgument.
  void validate() const;
};

std::string synth_template_id(int t);
std::string synth_variant_id(int t, int v);
std::string synth_nonmeme_id(int i);

/// Gradient background with coloured blocks.
RgbImage synth_template(const SynthSpec& spec, int t);

struct SynthVariant {
  RgbImage image;
  std::vector<Rect> text_boxes;
};

/// Template plus white caption boxes and Gaussian noise (sigma 3).
SynthVariant synth_variant(const SynthSpec& spec, int t, int v);

/// Smooth random field plus noise, unrelated to any template.
RgbImage synth_nonmeme(const SynthSpec& spec, int i);

/// Writes images/<id>.png and manifest.jsonl under `out_dir`; returns the
/// records in manifest order (variants by template, then non-memes).
/// Output is byte-identical for equal specs.
std::vector<ImageRecord> generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir,
                                            unsigned threads = 0);

}  // namespace memeforge
