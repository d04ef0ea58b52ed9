#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "memeforge/classify.hpp"
#include "memeforge/cluster.hpp"
#include "memeforge/ingest.hpp"
#include "memeforge/store.hpp"

namespace memeforge {

enum class ExtractKind { phash, rgb, gray, lbp, baseline, orb, embedding };

std::string_view to_string(ExtractKind kind);
std::optional<ExtractKind> parse_extract_kind(std::string_view text);
StoreKind store_kind(ExtractKind kind);
FeatureKind dense_kind(ExtractKind kind);

/// Features of one image. ORB descriptors are computed on the grayscale
/// image with its text boxes blurred. Embeddings cannot be extracted
/// (InvalidArgument); they come from an imported store.
Feature extract_feature(const ImageRecord& record, ExtractKind kind);

struct ExtractFailure {
  std::string id;
  std::string message;
};

struct ExtractResult {
  FeatureStore store;
  std::vector<ExtractFailure> failures;
  std::size_t added = 0;
};

/// Extracts every record not already in `existing` (resume). Rows keep
/// manifest order. Per-record errors are collected, not thrown.
ExtractResult extract_store(const std::vector<ImageRecord>& records, ExtractKind kind, unsigned threads,
                            const FeatureStore* existing = nullptr);

struct PipelineOptions {
  unsigned threads = 0;
  std::uint64_t seed = 0;
  MatchParams match;
  std::optional<double> radius;  // skips calibration when set
  std::optional<std::filesystem::path> embeddings;
  MlrHyper mlr;
  std::optional<double> mlr_reject;
  std::optional<int> sparse_cap;
  double sparse_lambda = 0.01;
  double sparse_tau = 0.1;
  DbscanParams dbscan;
  HdbscanParams hdbscan;
  int pca_dim = 32;
};

/// Throws UnknownMethod naming the offending token.
void validate_method(std::string_view method);

/// One prediction per eval record, in eval order. Labeled train records are
/// the reference; clustering methods cluster train and eval together with
/// labels hidden. Throws UnknownMethod and MissingInput.
std::vector<Prediction> run_method(std::string_view method, const std::vector<ImageRecord>& train,
                                   const std::vector<ImageRecord>& eval, const PipelineOptions& options);

/// Labeled train records as radius-model references.
std::vector<LabeledFeature> labeled_features(const std::vector<ImageRecord>& records, ExtractKind kind,
                                             const PipelineOptions& options);

/// The clustering behind dbscan:medoid and hdbscan:majority over `corpus`,
/// annotated from its labeled records.
Clustering cluster_corpus(std::string_view algo, std::string_view annotate,
                          const std::vector<ImageRecord>& corpus, const PipelineOptions& options);

}  // namespace memeforge
