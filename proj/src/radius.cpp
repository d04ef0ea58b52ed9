#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "memeforge/classify.hpp"
#include "memeforge/error.hpp"
#include "memeforge/parallel.hpp"

namespace memeforge {

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::hamming: return "hamming";
    case Metric::cosine_distance: return "cosine_distance";
    case Metric::feature_match: return "feature_match";
  }
  return "unknown";
}

namespace {

bool holds_for(const Feature& f, Metric metric) {
  switch (metric) {
    case Metric::hamming: return std::holds_alternative<PerceptualHash>(f);
    case Metric::cosine_distance: return std::holds_alternative<FeatureVector>(f);
    case Metric::feature_match: return std::holds_alternative<DescriptorSet>(f);
  }
  return false;
}

std::vector<double> unit(const std::vector<double>& v, const std::string& what) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw Error(ErrorCode::ZeroVector, what);
  std::vector<double> u(v);
  for (double& x : u) x /= n;
  return u;
}

double cosine_dist_unit(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return 1.0 - std::clamp(dot, -1.0, 1.0);
}

}  // namespace

RadiusModel RadiusModel::fit(std::vector<LabeledFeature> reference, Metric metric, MatchParams match,
                             unsigned threads) {
  if (reference.empty()) throw Error(ErrorCode::EmptyReference, "radius model needs references");
  match.validate();
  RadiusModel model;
  model.metric_ = metric;
  model.match_ = match;
  for (const auto& r : reference) {
    if (!holds_for(r.feature, metric)) {
      throw Error(ErrorCode::MetricFeatureMismatch,
                  "reference '" + r.id + "' does not carry a feature for metric " +
                      std::string(to_string(metric)));
    }
    if (r.label.is_templateless()) {
      throw Error(ErrorCode::InvalidArgument, "reference '" + r.id + "' is labeled Templateless");
    }
  }
  model.reference_ = std::move(reference);

  switch (metric) {
    case Metric::hamming: {
      std::vector<HashIndex::Code> codes;
      codes.reserve(model.reference_.size());
      for (const auto& r : model.reference_) codes.push_back({std::get<PerceptualHash>(r.feature).bits});
      model.hash_index_ = HashIndex(std::move(codes));
      break;
    }
    case Metric::cosine_distance: {
      const std::size_t dim = std::get<FeatureVector>(model.reference_.front().feature).dim();
      for (const auto& r : model.reference_) {
        const auto& v = std::get<FeatureVector>(r.feature);
        if (v.dim() != dim) {
          throw Error(ErrorCode::DimensionMismatch, "reference '" + r.id + "' has dimension " +
                                                        std::to_string(v.dim()));
        }
        model.unit_vectors_.push_back(unit(v.values, r.id));
      }
      break;
    }
    case Metric::feature_match: {
      std::vector<DescriptorSet> sets;
      sets.reserve(model.reference_.size());
      for (const auto& r : model.reference_) sets.push_back(std::get<DescriptorSet>(r.feature));
      model.reference_distances_ = pairwise_image_distances(sets, match, threads);
      model.corpus_ = DescriptorCorpus(std::move(sets));
      break;
    }
  }
  return model;
}

void RadiusModel::set_radius(double r) {
  if (!(r >= 0.0) || std::isnan(r)) throw Error(ErrorCode::InvalidArgument, "radius must be >= 0");
  radius_ = r;
}

void RadiusModel::check_feature(const Feature& f) const {
  if (!holds_for(f, metric_)) {
    throw Error(ErrorCode::MetricFeatureMismatch,
                "query feature does not match metric " + std::string(to_string(metric_)));
  }
}

std::vector<std::optional<double>> RadiusModel::leave_one_out_distances(unsigned threads) const {
  const std::size_t n = reference_.size();
  std::vector<std::optional<double>> out(n);
  switch (metric_) {
    case Metric::hamming: {
      const auto codes = hash_index_.codes();
      parallel_for(n, threads, [&](std::size_t i) {
        int best = std::numeric_limits<int>::max();
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) best = std::min(best, HashIndex::distance(codes[i], codes[j]));
        }
        if (n > 1) out[i] = best;
      });
      break;
    }
    case Metric::cosine_distance: {
      parallel_for(n, threads, [&](std::size_t i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) best = std::min(best, cosine_dist_unit(unit_vectors_[i], unit_vectors_[j]));
        }
        if (n > 1) out[i] = best;
      });
      break;
    }
    case Metric::feature_match: {
      for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [j, d] : reference_distances_.row(i)) {
          if (!out[i] || d < *out[i]) out[i] = d;
        }
      }
      break;
    }
  }
  return out;
}

double RadiusModel::calibrate(unsigned threads) {
  if (reference_.size() < 2) {
    throw Error(ErrorCode::TooFewSamples, "calibration needs at least 2 reference points");
  }
  std::optional<double> r;
  for (const auto& d : leave_one_out_distances(threads)) {
    if (d && (!r || *d > *r)) r = *d;
  }
  if (!r) {
    throw Error(ErrorCode::TooFewSamples, "no reference point has a similar neighbour");
  }
  radius_ = *r;
  return *r;
}

std::vector<RadiusModel::Neighbor> RadiusModel::neighbors(const Feature& query, double radius,
                                                          std::optional<std::size_t> exclude) const {
  check_feature(query);
  std::vector<Neighbor> out;
  switch (metric_) {
    case Metric::hamming: {
      if (radius < 0.0) return out;
      const int r = radius >= 64.0 ? 64 : static_cast<int>(std::floor(radius));
      for (const auto& hit : hash_index_.within({std::get<PerceptualHash>(query).bits}, r)) {
        if (exclude && hit.id == *exclude) continue;
        out.push_back({hit.id, static_cast<double>(hit.distance)});
      }
      break;
    }
    case Metric::cosine_distance: {
      const auto& v = std::get<FeatureVector>(query);
      if (v.dim() != unit_vectors_.front().size()) {
        throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(v.dim()));
      }
      const auto q = unit(v.values, "query");
      for (std::size_t j = 0; j < unit_vectors_.size(); ++j) {
        if (exclude && j == *exclude) continue;
        const double d = cosine_dist_unit(q, unit_vectors_[j]);
        if (d <= radius) out.push_back({j, d});
      }
      break;
    }
    case Metric::feature_match: {
      if (exclude) {
        // Leave-one-out queries reuse the precomputed reference matrix.
        for (const auto& [j, d] : reference_distances_.row(*exclude)) {
          if (d <= radius) out.push_back({j, d});
        }
        break;
      }
      for (const auto& [j, matches] : corpus_.match(std::get<DescriptorSet>(query), match_.d)) {
        const auto d = image_distance(matches, match_);
        if (d && *d <= radius) out.push_back({j, static_cast<double>(*d)});
      }
      break;
    }
  }
  return out;
}

Prediction vote(std::span<const RadiusModel::Neighbor> neighbors,
                std::span<const LabeledFeature> reference, std::string image_id, std::string method) {
  if (neighbors.empty()) return Prediction::rejected(std::move(image_id), std::move(method));
  struct Tally {
    int count = 0;
    double min_distance = std::numeric_limits<double>::infinity();
  };
  std::map<std::string, Tally> tallies;  // ordered: lexicographic final tie-break
  for (const auto& nb : neighbors) {
    Tally& t = tallies[reference[nb.index].label.template_id()];
    ++t.count;
    t.min_distance = std::min(t.min_distance, nb.distance);
  }
  auto best = tallies.begin();
  for (auto it = std::next(tallies.begin()); it != tallies.end(); ++it) {
    const Tally& a = it->second;
    const Tally& b = best->second;
    if (a.count > b.count || (a.count == b.count && a.min_distance < b.min_distance)) best = it;
  }
  return Prediction{std::move(image_id), TemplateLabel::of(best->first),
                    1.0 / (1.0 + best->second.min_distance), std::move(method)};
}

Prediction RadiusModel::predict(const Feature& query, std::string image_id,
                                std::optional<std::size_t> exclude) const {
  if (!radius_) throw Error(ErrorCode::RadiusUnset, "calibrate or set a radius before predicting");
  const auto nbs = neighbors(query, *radius_, exclude);
  return vote(nbs, reference_, std::move(image_id), method_name());
}

std::string RadiusModel::method_name() const {
  switch (metric_) {
    case Metric::hamming: return "rnn:phash";
    case Metric::cosine_distance: return "rnn:embedding";
    case Metric::feature_match: return "rnn:fm";
  }
  return "rnn";
}

}  // namespace memeforge
