#include "memeforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "memeforge/error.hpp"
#include "memeforge/image_io.hpp"
#include "memeforge/parallel.hpp"
#include "memeforge/rng.hpp"

namespace memeforge {

namespace {

constexpr std::uint64_t kTemplateStream = 1;
constexpr std::uint64_t kVariantStream = 2;
constexpr std::uint64_t kNonmemeStream = 3;
constexpr double kVariantNoise = 3.0;
constexpr double kNonmemeNoise = 6.0;

std::uint64_t stream(std::uint64_t family, std::uint64_t a, std::uint64_t b = 0) {
  return (family << 56) ^ (a << 28) ^ b;
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string numbered(const char* prefix, int n, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*d", prefix, width, n);
  return buf;
}

void add_noise(RgbImage& img, Rng& rng, double sigma) {
  for (auto& p : img.pixels()) p = clamp_byte(p + rng.normal(0.0, sigma));
}

}  // namespace

void SynthSpec::validate() const {
  if (n_templates < 0 || variants_per_template < 0 || n_nonmemes < 0) {
    throw Error(ErrorCode::InvalidArgument, "synthetic counts must be non-negative");
  }
  if (!(overlay_coverage > 0.0 && overlay_coverage < 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "overlay coverage must lie in (0, 0.5)");
  }
}

std::string synth_template_id(int t) { return numbered("tmpl", t, 3); }
std::string synth_variant_id(int t, int v) { return synth_template_id(t) + numbered("_v", v, 3); }
std::string synth_nonmeme_id(int i) { return numbered("nonmeme", i, 4); }

RgbImage synth_template(const SynthSpec& spec, int t) {
  Rng rng = Rng::derive(spec.seed, stream(kTemplateStream, static_cast<std::uint64_t>(t)));
  RgbImage img(kSynthSide, kSynthSide);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  double from[3], to[3];
  for (int c = 0; c < 3; ++c) {
    from[c] = rng.uniform(0.0, 255.0);
    to[c] = rng.uniform(0.0, 255.0);
  }
  const double half = kSynthSide / 2.0;
  for (int y = 0; y < kSynthSide; ++y) {
    for (int x = 0; x < kSynthSide; ++x) {
      // Projection onto the gradient direction, mapped to [0, 1].
      const double s = ((x - half) * dx + (y - half) * dy) / (half * std::numbers::sqrt2) * 0.5 + 0.5;
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = clamp_byte(from[c] + (to[c] - from[c]) * s);
    }
  }
  const int blocks = 4 + static_cast<int>(rng.below(4));
  for (int b = 0; b < blocks; ++b) {
    const int w = 48 + static_cast<int>(rng.below(113));
    const int h = 48 + static_cast<int>(rng.below(113));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(kSynthSide - w + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(kSynthSide - h + 1)));
    std::uint8_t color[3];
    // Dark or bright blocks keep the structure high-contrast.
    const bool bright = rng.below(2) == 0;
    for (auto& c : color) c = static_cast<std::uint8_t>(bright ? 160 + rng.below(96) : rng.below(96));
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + w; ++x) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
      }
    }
  }
  return img;
}

SynthVariant synth_variant(const SynthSpec& spec, int t, int v) {
  Rng rng = Rng::derive(spec.seed, stream(kVariantStream, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(v)));
  SynthVariant out{synth_template(spec, t), {}};
  // Captions sit in a top and/or bottom band, as in classic image macros.
  const int boxes = 1 + static_cast<int>(rng.below(2));
  const bool top_first = rng.below(2) == 0;
  const double budget = spec.overlay_coverage * kSynthSide * kSynthSide / boxes;
  for (int b = 0; b < boxes; ++b) {
    const int w = static_cast<int>(rng.uniform(0.6, 0.95) * kSynthSide);
    const int h = std::max(4, static_cast<int>(std::floor(rng.uniform(0.2, 0.5) * budget / w)));
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(kSynthSide - w + 1)));
    const int margin = static_cast<int>(rng.below(9));
    const bool top = (b == 0) == top_first;
    const int y = top ? margin : kSynthSide - h - margin;
    out.text_boxes.push_back(Rect{x, y, w, h});
    for (int yy = y; yy < y + h; ++yy) {
      for (int xx = x; xx < x + w; ++xx) {
        for (int c = 0; c < 3; ++c) out.image.at(xx, yy, c) = 255;
      }
    }
    // Dark glyph strokes inside the box.
    const int strokes = w / 6;
    for (int s = 0; s < strokes; ++s) {
      const int sw = 2 + static_cast<int>(rng.below(3));
      const int sh = std::max(1, h - 4 - static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, h / 3)))));
      const int sx = x + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, w - sw))));
      const int sy = y + (h - sh) / 2;
      for (int yy = sy; yy < sy + sh; ++yy) {
        for (int xx = sx; xx < sx + sw; ++xx) {
          for (int c = 0; c < 3; ++c) out.image.at(xx, yy, c) = 0;
        }
      }
    }
  }
  add_noise(out.image, rng, kVariantNoise);
  return out;
}

RgbImage synth_nonmeme(const SynthSpec& spec, int i) {
  Rng rng = Rng::derive(spec.seed, stream(kNonmemeStream, static_cast<std::uint64_t>(i)));
  RgbImage img(kSynthSide, kSynthSide);
  constexpr int kWaves = 6;
  struct Wave {
    double fx, fy, phase, amp[3];
  } waves[kWaves];
  for (auto& w : waves) {
    w.fx = rng.uniform(-4.0, 4.0);
    w.fy = rng.uniform(-4.0, 4.0);
    w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (double& a : w.amp) a = rng.uniform(-40.0, 40.0);
  }
  double base[3];
  for (double& b : base) b = rng.uniform(64.0, 192.0);
  for (int y = 0; y < kSynthSide; ++y) {
    for (int x = 0; x < kSynthSide; ++x) {
      const double u = static_cast<double>(x) / kSynthSide, v = static_cast<double>(y) / kSynthSide;
      for (int c = 0; c < 3; ++c) {
        double value = base[c];
        for (const auto& w : waves) {
          value += w.amp[c] * std::cos(2.0 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
        }
        img.at(x, y, c) = clamp_byte(value);
      }
    }
  }
  add_noise(img, rng, kNonmemeNoise);
  return img;
}

std::vector<ImageRecord> generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir,
                                            unsigned threads) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + (out_dir / "images").string());
  const auto variants = static_cast<std::size_t>(spec.n_templates) * static_cast<std::size_t>(spec.variants_per_template);
  std::vector<ImageRecord> records(variants + static_cast<std::size_t>(spec.n_nonmemes));
  parallel_for(records.size(), threads, [&](std::size_t i) {
    ImageRecord& r = records[i];
    if (i < variants) {
      const int t = static_cast<int>(i / static_cast<std::size_t>(spec.variants_per_template));
      const int v = static_cast<int>(i % static_cast<std::size_t>(spec.variants_per_template));
      r.id = synth_variant_id(t, v);
      r.source = Source::synthetic;
      r.label = TemplateLabel::of(synth_template_id(t));
      auto variant = synth_variant(spec, t, v);
      r.text_boxes = std::move(variant.text_boxes);
      r.path = out_dir / "images" / (r.id + ".png");
      write_png(r.path, variant.image);
    } else {
      const int n = static_cast<int>(i - variants);
      r.id = synth_nonmeme_id(n);
      r.source = Source::nonmeme;
      r.path = out_dir / "images" / (r.id + ".png");
      write_png(r.path, synth_nonmeme(spec, n));
    }
  });
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

}  // namespace memeforge
