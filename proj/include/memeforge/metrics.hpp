#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "memeforge/ingest.hpp"
#include "memeforge/labels.hpp"

namespace memeforge {

/// Rows are truth, columns are predictions. Classes are sorted with
/// Templateless last.
struct ConfusionMatrix {
  std::vector<TemplateLabel> classes;
  std::vector<std::int64_t> counts;  // row-major, classes x classes

  std::size_t size() const noexcept { return classes.size(); }
  std::int64_t at(std::size_t truth, std::size_t predicted) const {
    return counts[truth * classes.size() + predicted];
  }
  std::int64_t total() const;
  std::optional<std::size_t> index_of(const TemplateLabel& label) const;

  static ConfusionMatrix from_counts(std::vector<TemplateLabel> classes, std::vector<std::int64_t> counts);
};

/// Builds the matrix from (truth, predicted) pairs. Extra classes may be
/// listed so that absent ones still get a row.
ConfusionMatrix confusion(std::span<const std::pair<TemplateLabel, TemplateLabel>> pairs,
                          std::span<const TemplateLabel> extra_classes = {});
/// Throws MissingTruth naming the first prediction without truth.
ConfusionMatrix confusion(std::span<const Prediction> predictions,
                          const std::map<std::string, TemplateLabel>& truth);

/// Multiclass MCC; 0 when the denominator vanishes.
double mcc(const ConfusionMatrix& cm);
/// 0 when expected agreement is 1.
double cohen_kappa(const ConfusionMatrix& cm);

enum class F1Average { macro, weighted, micro };
std::string_view to_string(F1Average average);
std::optional<F1Average> parse_f1_average(std::string_view text);

double f1(const ConfusionMatrix& cm, F1Average average = F1Average::weighted);

struct BinaryMetrics {
  double precision = 0.0;
  double recall = 0.0;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
};

/// Positive class = any concrete template. 0/0 gives 0.
BinaryMetrics binary_metrics(std::span<const std::pair<bool, bool>> truth_predicted);
BinaryMetrics binary_metrics(std::span<const Prediction> predictions,
                             const std::map<std::string, TemplateLabel>& truth);

/// Items x categories count table; every row must sum to the same n >= 2.
/// Throws RaggedTable, EmptyInput.
double fleiss_kappa(const std::vector<std::vector<int>>& table);

/// Noise (-1) counts as an ordinary label here.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

// ---------------------------------------------------------------------------
// Scenario evaluation

struct TruthEntry {
  bool is_templated = false;
  std::optional<std::string> template_id;  // unknown when templated but unlabeled
};

using GroundTruth = std::map<std::string, TruthEntry>;

/// Majority verdict per (image_id, method): true = prediction judged correct.
using VerdictMap = std::map<std::pair<std::string, std::string>, bool>;

/// Labeled records become templated with their template, nonmeme records
/// templateless. Other unlabeled records are skipped.
GroundTruth truth_from_manifest(std::span<const ImageRecord> records);

/// Truth file lines: {"image_id","is_templated","template"} and optionally
/// {"type":"verdict","image_id","method","correct"}.
std::pair<GroundTruth, VerdictMap> parse_truth(std::string_view text);
std::pair<GroundTruth, VerdictMap> load_truth(const std::filesystem::path& path);

struct ScenarioMetrics {
  double mcc = 0.0;
  double kappa = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

struct MethodReport {
  std::string method;
  ScenarioMetrics all;
  ScenarioMetrics model_templated;
  ScenarioMetrics true_templated;
  BinaryMetrics binary;
};

struct EvalReport {
  F1Average average = F1Average::weighted;
  std::vector<MethodReport> methods;  // sorted by method

  /// `method.scenario.metric value`, one per line.
  std::string to_text() const;
  std::string to_json() const;
};

/// Truth label used for one prediction. A templated image of unknown
/// template counts as the predicted template when the majority verdict says
/// so, otherwise as a class no method can predict.
TemplateLabel scenario_truth_label(const Prediction& prediction, const TruthEntry& truth,
                                   const VerdictMap& verdicts);

/// Label standing in for "templated, template unknown".
TemplateLabel unknown_template_label();

/// Predictions of several methods are grouped by their method field.
/// Throws MissingTruth.
EvalReport scenario_report(std::span<const Prediction> predictions, const GroundTruth& truth,
                           const VerdictMap& verdicts = {}, F1Average average = F1Average::weighted);

}  // namespace memeforge
