#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "memeforge/ingest.hpp"
#include "memeforge/labels.hpp"

namespace memeforge {

struct Task {
  int task_id = 0;
  std::string image_id;
  std::string method;
  TemplateLabel predicted = TemplateLabel::templateless();
  double score = 0.0;
  /// A labeled image of the predicted template; none for Templateless.
  std::optional<std::string> reference_image_id;
};

enum class Verdict { correct, incorrect };
enum class Templated { yes, no, unsure };

std::string_view to_string(Verdict v);
std::string_view to_string(Templated t);
std::optional<Verdict> parse_verdict(std::string_view text);
std::optional<Templated> parse_templated(std::string_view text);

struct Judgment {
  int task_id = 0;
  std::string annotator;
  /// Required for concrete predictions, absent for Templateless ones.
  std::optional<Verdict> verdict;
  Templated is_templated = Templated::unsure;
  std::string timestamp;
};

struct AgreementReport {
  std::optional<double> fleiss_kappa_verdicts;
  std::optional<double> fleiss_kappa_templated;
  std::size_t n_complete_items = 0;
  int raters = 0;
};

/// Task pool is built from predictions sorted by (image_id, method) with ids
/// from 1; judgments are appended to a log and replayed on construction.
class AnnotationService {
 public:
  /// Throws MissingInput when a predicted image or template reference is
  /// not in the manifest. An empty allow-list registers annotators on first
  /// contact.
  AnnotationService(std::vector<Prediction> predictions, std::vector<ImageRecord> manifest,
                    std::filesystem::path log_path, std::set<std::string> allowed_annotators = {});
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  const std::vector<Task>& tasks() const noexcept { return tasks_; }

  /// Lowest-id task the annotator has not judged; nullopt when done.
  /// Throws UnknownAnnotator.
  std::optional<Task> next_task(const std::string& annotator);
  /// Tasks judged by this annotator.
  std::size_t judged_count(const std::string& annotator) const;

  /// Persists and applies a judgment; a later one for the same task and
  /// annotator replaces the earlier. Throws UnknownTask, MalformedVerdict,
  /// UnknownAnnotator.
  void submit(Judgment judgment);

  /// Fleiss kappa over the items sharing the largest rater count. Throws
  /// InsufficientJudgments when no item has two raters.
  AgreementReport agreement() const;

  /// JSON lines sorted by image id: one truth line per judged image, then one
  /// verdict line per judged concrete prediction. Pure function of the
  /// judgment set.
  std::string export_ground_truth() const;

  /// Judgments currently in effect, by (task, annotator).
  std::map<std::pair<int, std::string>, Judgment> judgments() const;

  /// Throws UnknownId.
  const ImageRecord& image(const std::string& image_id) const;

 private:
  void check_annotator(const std::string& annotator) const;
  void validate(const Judgment& j, bool check_who = true) const;
  void apply(Judgment j);

  std::vector<Task> tasks_;
  std::map<std::string, ImageRecord> images_;
  std::set<std::string> allowed_;
  std::filesystem::path log_path_;
  std::FILE* log_ = nullptr;

  mutable std::shared_mutex mutex_;
  std::map<std::pair<int, std::string>, Judgment> judgments_;
  std::map<std::string, std::set<int>> judged_by_;
};

std::string judgment_to_json(const Judgment& j);
/// Throws MalformedVerdict.
Judgment judgment_from_json(std::string_view text);
std::string task_to_json(const Task& t);

}  // namespace memeforge
