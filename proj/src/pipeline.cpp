#include "memeforge/pipeline.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "memeforge/error.hpp"
#include "memeforge/features.hpp"
#include "memeforge/keypoints.hpp"
#include "memeforge/parallel.hpp"

namespace memeforge {

namespace {

constexpr std::array kMethods{"rnn:phash", "rnn:embedding", "rnn:fm", "mlr:baseline",
                              "sparse",    "dbscan:medoid", "hdbscan:majority"};
constexpr std::array kGates{"always", "mlr", "rnn"};

constexpr std::array<std::pair<ExtractKind, std::string_view>, 7> kExtractNames{{
    {ExtractKind::phash, "phash"},
    {ExtractKind::rgb, "rgb"},
    {ExtractKind::gray, "gray"},
    {ExtractKind::lbp, "lbp"},
    {ExtractKind::baseline, "baseline"},
    {ExtractKind::orb, "orb"},
    {ExtractKind::embedding, "embedding"},
}};

bool is_plain_method(std::string_view m) {
  return std::find(kMethods.begin(), kMethods.end(), m) != kMethods.end();
}

}  // namespace

std::string_view to_string(ExtractKind kind) {
  for (const auto& [k, name] : kExtractNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<ExtractKind> parse_extract_kind(std::string_view text) {
  for (const auto& [k, name] : kExtractNames) {
    if (name == text) return k;
  }
  return std::nullopt;
}

StoreKind store_kind(ExtractKind kind) {
  switch (kind) {
    case ExtractKind::phash: return StoreKind::hash64;
    case ExtractKind::orb: return StoreKind::orb256;
    default: return StoreKind::dense;
  }
}

FeatureKind dense_kind(ExtractKind kind) {
  switch (kind) {
    case ExtractKind::rgb: return FeatureKind::rgb_hist;
    case ExtractKind::gray: return FeatureKind::gray_hist;
    case ExtractKind::lbp: return FeatureKind::lbp_hist;
    case ExtractKind::baseline: return FeatureKind::baseline_concat;
    default: return FeatureKind::embedding;
  }
}

Feature extract_feature(const ImageRecord& record, ExtractKind kind) {
  switch (kind) {
    case ExtractKind::phash: return phash(decode_gray(record));
    case ExtractKind::rgb: return rgb_histogram(decode_rgb(record));
    case ExtractKind::gray: return gray_histogram(decode_gray(record));
    case ExtractKind::lbp: return lbp_histogram(decode_gray(record));
    case ExtractKind::baseline: return baseline_features(decode_rgb(record));
    case ExtractKind::orb: {
      GrayImage gray = decode_gray(record);
      if (!record.text_boxes.empty()) gray = blur_text_regions(gray, record.text_boxes);
      const auto keypoints = detect_oriented_fast(gray);
      return describe_rbrief(gray, keypoints, record.id);
    }
    case ExtractKind::embedding: break;
  }
  throw Error(ErrorCode::InvalidArgument, "embeddings are imported, not extracted");
}

ExtractResult extract_store(const std::vector<ImageRecord>& records, ExtractKind kind, unsigned threads,
                            const FeatureStore* existing) {
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (existing == nullptr || !existing->contains(records[i].id)) todo.push_back(i);
  }
  std::vector<std::optional<Feature>> computed(todo.size());
  std::vector<std::string> errors(todo.size());
  parallel_for(todo.size(), threads, [&](std::size_t k) {
    try {
      computed[k] = extract_feature(records[todo[k]], kind);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  });

  std::uint32_t dim = kind == ExtractKind::phash ? 64 : kind == ExtractKind::orb ? 256 : 0;
  if (existing != nullptr && existing->size() > 0) dim = existing->dim();
  for (const auto& f : computed) {
    if (dim == 0 && f) dim = static_cast<std::uint32_t>(std::get<FeatureVector>(*f).dim());
  }
  ExtractResult result{FeatureStore(store_kind(kind), dim), {}, 0};
  std::size_t k = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& id = records[i].id;
    if (existing != nullptr && existing->contains(id)) {
      result.store.append(id, existing->get(id));
      continue;
    }
    if (computed[k]) {
      result.store.append(id, std::move(*computed[k]));
      ++result.added;
    } else {
      result.failures.push_back({id, errors[k]});
    }
    ++k;
  }
  if (existing != nullptr) {
    for (std::size_t i = 0; i < existing->size(); ++i) {
      if (!result.store.contains(existing->ids()[i])) result.store.append(existing->ids()[i], existing->row(i));
    }
  }
  return result;
}

void validate_method(std::string_view method) {
  if (is_plain_method(method)) return;
  constexpr std::string_view kGated = "gated:";
  if (method.starts_with(kGated)) {
    const auto rest = method.substr(kGated.size());
    const auto comma = rest.find(',');
    if (comma == std::string_view::npos) {
      throw Error(ErrorCode::UnknownMethod, std::string(method) + " (expected gated:<gate>,<head>)");
    }
    const auto gate = rest.substr(0, comma);
    const auto head = rest.substr(comma + 1);
    if (std::find(kGates.begin(), kGates.end(), gate) == kGates.end()) {
      throw Error(ErrorCode::UnknownMethod, std::string(gate));
    }
    if (!is_plain_method(head)) throw Error(ErrorCode::UnknownMethod, std::string(head));
    return;
  }
  throw Error(ErrorCode::UnknownMethod, std::string(method));
}

namespace {

class EmbeddingSource {
 public:
  explicit EmbeddingSource(const PipelineOptions& options) {
    if (!options.embeddings) {
      throw Error(ErrorCode::MissingInput, "embedding store not given (--embeddings)");
    }
    path_ = *options.embeddings;
    if (!std::filesystem::exists(path_)) throw Error(ErrorCode::MissingInput, "embedding store " + path_.string());
    vectors_ = import_embeddings(path_);
  }
  const FeatureVector& get(const std::string& id) const {
    const auto it = vectors_.find(id);
    if (it == vectors_.end()) {
      throw Error(ErrorCode::MissingInput, "embedding for " + id + " in " + path_.string());
    }
    return it->second;
  }

 private:
  std::filesystem::path path_;
  std::map<std::string, FeatureVector> vectors_;
};

std::vector<Feature> features_for(const std::vector<ImageRecord>& records, ExtractKind kind,
                                  const PipelineOptions& options) {
  std::vector<Feature> out(records.size());
  if (kind == ExtractKind::embedding) {
    const EmbeddingSource source(options);
    for (std::size_t i = 0; i < records.size(); ++i) out[i] = source.get(records[i].id);
    return out;
  }
  parallel_for(records.size(), options.threads,
               [&](std::size_t i) { out[i] = extract_feature(records[i], kind); });
  return out;
}

std::vector<ImageRecord> labeled_only(const std::vector<ImageRecord>& records) {
  std::vector<ImageRecord> out;
  for (const auto& r : records) {
    if (r.label && r.label->is_template()) out.push_back(r);
  }
  if (out.empty()) throw Error(ErrorCode::MissingInput, "training manifest has no labeled records");
  return out;
}

std::vector<Prediction> run_radius(ExtractKind kind, Metric metric, const std::vector<ImageRecord>& train,
                                   const std::vector<ImageRecord>& eval, const PipelineOptions& options) {
  RadiusModel model =
      RadiusModel::fit(labeled_features(train, kind, options), metric, options.match, options.threads);
  if (options.radius) {
    model.set_radius(*options.radius);
  } else {
    model.calibrate(options.threads);
  }
  const auto queries = features_for(eval, kind, options);
  std::vector<Prediction> out(eval.size());
  parallel_for(eval.size(), options.threads,
               [&](std::size_t i) { out[i] = model.predict(queries[i], eval[i].id); });
  return out;
}

std::vector<Prediction> run_mlr(const std::vector<ImageRecord>& train, const std::vector<ImageRecord>& eval,
                                const PipelineOptions& options) {
  const auto labeled = labeled_only(train);
  std::vector<FeatureVector> x;
  std::vector<std::string> y;
  for (std::size_t i = 0; const auto& f : features_for(labeled, ExtractKind::baseline, options)) {
    x.push_back(std::get<FeatureVector>(f));
    y.push_back(labeled[i++].label->template_id());
  }
  MlrHyper hyper = options.mlr;
  hyper.seed = options.seed;
  const MlrModel model = fit_mlr(x, y, hyper);
  const auto queries = features_for(eval, ExtractKind::baseline, options);
  std::vector<Prediction> out(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i) {
    out[i] = predict_mlr(model, std::get<FeatureVector>(queries[i]), eval[i].id, options.mlr_reject);
  }
  return out;
}

std::vector<Prediction> run_sparse(const std::vector<ImageRecord>& train, const std::vector<ImageRecord>& eval,
                                   const PipelineOptions& options) {
  const auto labeled = labeled_only(train);
  std::vector<LabeledImage> images(labeled.size());
  parallel_for(labeled.size(), options.threads, [&](std::size_t i) {
    images[i] = LabeledImage{labeled[i].id, labeled[i].label->template_id(), decode_gray(labeled[i])};
  });
  const SparseDictionary dict =
      build_dictionary(images, options.sparse_cap, options.sparse_lambda, options.sparse_tau);
  std::vector<Prediction> out(eval.size());
  parallel_for(eval.size(), options.threads,
               [&](std::size_t i) { out[i] = predict_sparse(dict, decode_gray(eval[i]), eval[i].id); });
  return out;
}

std::vector<Prediction> run_cluster(std::string_view algo, std::string_view annotate, std::string_view method,
                                    const std::vector<ImageRecord>& train, const std::vector<ImageRecord>& eval,
                                    const PipelineOptions& options) {
  std::vector<ImageRecord> corpus = train;
  std::set<std::string> seen;
  for (const auto& r : train) seen.insert(r.id);
  std::vector<std::string> query_ids;
  for (const auto& r : eval) {
    query_ids.push_back(r.id);
    if (!seen.insert(r.id).second) continue;
    ImageRecord hidden = r;
    hidden.label.reset();
    corpus.push_back(std::move(hidden));
  }
  const Clustering clustering = cluster_corpus(algo, annotate, corpus, options);
  return cluster_predict(clustering, query_ids, std::string(method));
}

std::vector<bool> run_gate(std::string_view gate, const std::vector<ImageRecord>& train,
                           const std::vector<ImageRecord>& eval, const PipelineOptions& options) {
  std::vector<bool> accept(eval.size(), true);
  if (gate == "always") return accept;
  if (gate == "rnn") {
    const auto preds = run_radius(ExtractKind::phash, Metric::hamming, train, eval, options);
    for (std::size_t i = 0; i < eval.size(); ++i) accept[i] = preds[i].label.is_template();
    return accept;
  }
  // Binary templated-vs-templateless classifier on baseline features.
  std::vector<ImageRecord> pool;
  std::vector<std::string> y;
  for (const auto& r : train) {
    if (r.label && r.label->is_template()) {
      pool.push_back(r);
      y.emplace_back("templated");
    } else if (r.source == Source::nonmeme || r.label) {
      pool.push_back(r);
      y.emplace_back("templateless");
    }
  }
  std::vector<FeatureVector> x;
  for (const auto& f : features_for(pool, ExtractKind::baseline, options)) x.push_back(std::get<FeatureVector>(f));
  MlrHyper hyper = options.mlr;
  hyper.seed = options.seed;
  const MlrModel model = fit_mlr(x, y, hyper);
  const auto queries = features_for(eval, ExtractKind::baseline, options);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const auto p = predict_mlr(model, std::get<FeatureVector>(queries[i]), eval[i].id);
    accept[i] = p.label.is_template() && p.label.template_id() == "templated";
  }
  return accept;
}

}  // namespace

std::vector<LabeledFeature> labeled_features(const std::vector<ImageRecord>& records, ExtractKind kind,
                                             const PipelineOptions& options) {
  const auto labeled = labeled_only(records);
  const auto features = features_for(labeled, kind, options);
  std::vector<LabeledFeature> out;
  out.reserve(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) out.push_back({labeled[i].id, features[i], *labeled[i].label});
  return out;
}

Clustering cluster_corpus(std::string_view algo, std::string_view annotate,
                          const std::vector<ImageRecord>& corpus, const PipelineOptions& options) {
  if (algo != "dbscan" && algo != "hdbscan") throw Error(ErrorCode::UnknownMethod, std::string(algo));
  if (annotate != "medoid" && annotate != "majority") throw Error(ErrorCode::UnknownMethod, std::string(annotate));
  std::vector<std::string> ids;
  for (const auto& r : corpus) ids.push_back(r.id);

  std::vector<PerceptualHash> hashes;
  if (algo == "dbscan" || annotate == "medoid") {
    for (auto& f : features_for(corpus, ExtractKind::phash, options)) hashes.push_back(std::get<PerceptualHash>(f));
  }

  Clustering clustering;
  if (algo == "dbscan") {
    const HammingSpace space(hashes);
    clustering = dbscan(space, ids, options.dbscan);
    compute_medoids(clustering, space);
  } else {
    const ExtractKind kind = options.embeddings ? ExtractKind::embedding : ExtractKind::baseline;
    std::vector<FeatureVector> vectors;
    for (auto& f : features_for(corpus, kind, options)) vectors.push_back(std::get<FeatureVector>(f));
    if (!vectors.empty() && vectors.front().dim() > static_cast<std::size_t>(options.pca_dim) &&
        vectors.size() >= static_cast<std::size_t>(options.pca_dim) && vectors.size() >= 2) {
      const PcaProjection pca = pca_fit(vectors, options.pca_dim, options.seed);
      for (auto& v : vectors) v = pca_transform(pca, v);
    }
    std::vector<std::vector<double>> points;
    for (auto& v : vectors) points.push_back(std::move(v.values));
    const EuclideanSpace space(std::move(points));
    clustering = hdbscan(space, ids, options.hdbscan).clustering;
    compute_medoids(clustering, space);
  }

  if (annotate == "majority") {
    std::map<std::string, TemplateLabel> labeled;
    for (const auto& r : corpus) {
      if (r.label && r.label->is_template()) labeled.emplace(r.id, *r.label);
    }
    annotate_majority(clustering, labeled);
  } else {
    std::vector<LabeledHash> labeled;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (corpus[i].label && corpus[i].label->is_template()) {
        labeled.push_back({corpus[i].id, hashes[i], corpus[i].label->template_id()});
      }
    }
    annotate_medoid(clustering, hashes, labeled, static_cast<int>(options.dbscan.eps));
  }
  return clustering;
}

std::vector<Prediction> run_method(std::string_view method, const std::vector<ImageRecord>& train,
                                   const std::vector<ImageRecord>& eval, const PipelineOptions& options) {
  validate_method(method);
  std::vector<Prediction> out;
  if (method == "rnn:phash") {
    out = run_radius(ExtractKind::phash, Metric::hamming, train, eval, options);
  } else if (method == "rnn:embedding") {
    out = run_radius(ExtractKind::embedding, Metric::cosine_distance, train, eval, options);
  } else if (method == "rnn:fm") {
    out = run_radius(ExtractKind::orb, Metric::feature_match, train, eval, options);
  } else if (method == "mlr:baseline") {
    out = run_mlr(train, eval, options);
  } else if (method == "sparse") {
    out = run_sparse(train, eval, options);
  } else if (method == "dbscan:medoid") {
    out = run_cluster("dbscan", "medoid", method, train, eval, options);
  } else if (method == "hdbscan:majority") {
    out = run_cluster("hdbscan", "majority", method, train, eval, options);
  } else {
    const auto rest = method.substr(std::string_view("gated:").size());
    const auto comma = rest.find(',');
    const auto gate = rest.substr(0, comma);
    const auto head = run_method(rest.substr(comma + 1), train, eval, options);
    const auto accept = run_gate(gate, train, eval, options);
    for (std::size_t i = 0; i < eval.size(); ++i) {
      out.push_back(predict_gated<std::size_t>([&](std::size_t k) { return bool(accept[k]); },
                                               [&](std::size_t k) { return head[k]; }, i, eval[i].id,
                                               std::string(method)));
      out.back().method = std::string(method);
    }
  }
  for (auto& p : out) p.method = std::string(method);
  return out;
}

}  // namespace memeforge
