#include "memeforge/annotate.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <mutex>
#include <unistd.h>

#include "json.hpp"
#include "memeforge/error.hpp"
#include "memeforge/metrics.hpp"

namespace memeforge {

using json = nlohmann::json;

std::string_view to_string(Verdict v) { return v == Verdict::correct ? "correct" : "incorrect"; }

std::string_view to_string(Templated t) {
  switch (t) {
    case Templated::yes: return "yes";
    case Templated::no: return "no";
    case Templated::unsure: return "unsure";
  }
  return "unsure";
}

std::optional<Verdict> parse_verdict(std::string_view text) {
  if (text == "correct") return Verdict::correct;
  if (text == "incorrect") return Verdict::incorrect;
  return std::nullopt;
}

std::optional<Templated> parse_templated(std::string_view text) {
  if (text == "yes") return Templated::yes;
  if (text == "no") return Templated::no;
  if (text == "unsure") return Templated::unsure;
  return std::nullopt;
}

std::string judgment_to_json(const Judgment& j) {
  json o{{"task_id", j.task_id},
         {"annotator", j.annotator},
         {"verdict", j.verdict ? json(std::string(to_string(*j.verdict))) : json(nullptr)},
         {"is_templated", std::string(to_string(j.is_templated))},
         {"timestamp", j.timestamp}};
  return o.dump();
}

Judgment judgment_from_json(std::string_view text) {
  json o;
  try {
    o = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedVerdict, std::string("not JSON: ") + e.what());
  }
  if (!o.is_object()) throw Error(ErrorCode::MalformedVerdict, "expected an object");
  Judgment j;
  try {
    j.task_id = o.at("task_id").get<int>();
    j.annotator = o.at("annotator").get<std::string>();
    if (const auto v = o.find("verdict"); v != o.end() && !v->is_null()) {
      const auto parsed = parse_verdict(v->get<std::string>());
      if (!parsed) throw Error(ErrorCode::MalformedVerdict, "verdict must be correct or incorrect");
      j.verdict = parsed;
    }
    const auto t = parse_templated(o.at("is_templated").get<std::string>());
    if (!t) throw Error(ErrorCode::MalformedVerdict, "is_templated must be yes, no or unsure");
    j.is_templated = *t;
    j.timestamp = o.value("timestamp", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedVerdict, e.what());
  }
  if (j.annotator.empty()) throw Error(ErrorCode::MalformedVerdict, "empty annotator id");
  return j;
}

std::string task_to_json(const Task& t) {
  json o{{"task_id", t.task_id},
         {"image_id", t.image_id},
         {"image_url", "/api/images/" + t.image_id},
         {"method", t.method},
         {"predicted", t.predicted.is_template() ? json(t.predicted.template_id()) : json(nullptr)},
         {"templateless", t.predicted.is_templateless()},
         {"score", t.score},
         {"reference_image_id", t.reference_image_id ? json(*t.reference_image_id) : json(nullptr)},
         {"reference_url", t.reference_image_id ? json("/api/images/" + *t.reference_image_id) : json(nullptr)}};
  return o.dump();
}

namespace {

std::string now_utc() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  ::gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

AnnotationService::AnnotationService(std::vector<Prediction> predictions, std::vector<ImageRecord> manifest,
                                     std::filesystem::path log_path, std::set<std::string> allowed_annotators)
    : allowed_(std::move(allowed_annotators)), log_path_(std::move(log_path)) {
  std::map<std::string, std::string> reference;  // template -> smallest labeled image id
  for (auto& r : manifest) {
    if (r.label && r.label->is_template()) {
      auto [it, inserted] = reference.emplace(r.label->template_id(), r.id);
      if (!inserted && r.id < it->second) it->second = r.id;
    }
    images_.emplace(r.id, std::move(r));
  }
  std::stable_sort(predictions.begin(), predictions.end(), [](const Prediction& a, const Prediction& b) {
    return std::tie(a.image_id, a.method) < std::tie(b.image_id, b.method);
  });
  for (auto& p : predictions) {
    if (!images_.contains(p.image_id)) throw Error(ErrorCode::MissingInput, "image " + p.image_id + " not in manifest");
    Task t;
    t.task_id = static_cast<int>(tasks_.size()) + 1;
    t.image_id = std::move(p.image_id);
    t.method = std::move(p.method);
    t.predicted = std::move(p.label);
    t.score = p.score;
    if (t.predicted.is_template()) {
      const auto it = reference.find(t.predicted.template_id());
      if (it == reference.end()) {
        throw Error(ErrorCode::MissingInput, "no labeled reference image for template " + t.predicted.template_id());
      }
      t.reference_image_id = it->second;
    }
    tasks_.push_back(std::move(t));
  }

  if (std::ifstream in{log_path_}) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        Judgment j = judgment_from_json(line);
        // The allow-list governs new judgments only.
        validate(j, false);
        apply(std::move(j));
      } catch (const Error& e) {
        // A torn final write is expected after a crash; anything else is not.
        if (in.peek() != std::char_traits<char>::eof()) {
          throw Error(ErrorCode::CorruptStore, log_path_.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
      }
    }
  }
  log_ = std::fopen(log_path_.c_str(), "ab");
  if (log_ == nullptr) throw Error(ErrorCode::IoError, "cannot open judgment log " + log_path_.string());
}

AnnotationService::~AnnotationService() {
  if (log_ != nullptr) std::fclose(log_);
}

void AnnotationService::check_annotator(const std::string& annotator) const {
  if (annotator.empty()) throw Error(ErrorCode::UnknownAnnotator, "empty annotator id");
  if (!allowed_.empty() && !allowed_.contains(annotator)) throw Error(ErrorCode::UnknownAnnotator, annotator);
}

void AnnotationService::validate(const Judgment& j, bool check_who) const {
  if (check_who) check_annotator(j.annotator);
  if (j.task_id < 1 || j.task_id > static_cast<int>(tasks_.size())) {
    throw Error(ErrorCode::UnknownTask, std::to_string(j.task_id));
  }
  const Task& t = tasks_[static_cast<std::size_t>(j.task_id - 1)];
  if (t.predicted.is_template() && !j.verdict) {
    throw Error(ErrorCode::MalformedVerdict, "task " + std::to_string(j.task_id) + " needs a verdict");
  }
  if (t.predicted.is_templateless() && j.verdict) {
    throw Error(ErrorCode::MalformedVerdict, "task " + std::to_string(j.task_id) + " predicts no template");
  }
}

void AnnotationService::apply(Judgment j) {
  judged_by_[j.annotator].insert(j.task_id);
  const auto key = std::make_pair(j.task_id, j.annotator);
  judgments_.insert_or_assign(key, std::move(j));
}

std::optional<Task> AnnotationService::next_task(const std::string& annotator) {
  check_annotator(annotator);
  std::shared_lock lock(mutex_);
  const auto it = judged_by_.find(annotator);
  for (const auto& t : tasks_) {
    if (it == judged_by_.end() || !it->second.contains(t.task_id)) return t;
  }
  return std::nullopt;
}

std::size_t AnnotationService::judged_count(const std::string& annotator) const {
  std::shared_lock lock(mutex_);
  const auto it = judged_by_.find(annotator);
  return it == judged_by_.end() ? 0 : it->second.size();
}

void AnnotationService::submit(Judgment judgment) {
  validate(judgment);
  if (judgment.timestamp.empty()) judgment.timestamp = now_utc();
  const std::string line = judgment_to_json(judgment) + "\n";
  std::unique_lock lock(mutex_);
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0) {
    throw Error(ErrorCode::IoError, "cannot append to " + log_path_.string());
  }
  ::fsync(::fileno(log_));
  apply(std::move(judgment));
}

std::map<std::pair<int, std::string>, Judgment> AnnotationService::judgments() const {
  std::shared_lock lock(mutex_);
  return judgments_;
}

const ImageRecord& AnnotationService::image(const std::string& image_id) const {
  const auto it = images_.find(image_id);
  if (it == images_.end()) throw Error(ErrorCode::UnknownId, image_id);
  return it->second;
}

AgreementReport AnnotationService::agreement() const {
  std::shared_lock lock(mutex_);
  std::map<int, std::vector<const Judgment*>> per_task;
  for (const auto& [key, j] : judgments_) per_task[key.first].push_back(&j);

  AgreementReport report;
  auto build = [&](bool verdicts) -> std::optional<double> {
    std::size_t k = 0;
    for (const auto& [task, js] : per_task) {
      if (verdicts && tasks_[static_cast<std::size_t>(task - 1)].predicted.is_templateless()) continue;
      k = std::max(k, js.size());
    }
    if (k < 2) return std::nullopt;
    std::vector<std::vector<int>> table;
    for (const auto& [task, js] : per_task) {
      if (js.size() != k) continue;
      if (verdicts && tasks_[static_cast<std::size_t>(task - 1)].predicted.is_templateless()) continue;
      std::vector<int> row(verdicts ? 2 : 3, 0);
      for (const Judgment* j : js) {
        if (verdicts) ++row[*j->verdict == Verdict::correct ? 0 : 1];
        else ++row[static_cast<std::size_t>(j->is_templated)];
      }
      table.push_back(std::move(row));
    }
    if (!verdicts) {
      report.n_complete_items = table.size();
      report.raters = static_cast<int>(k);
    }
    return fleiss_kappa(table);
  };
  report.fleiss_kappa_templated = build(false);
  report.fleiss_kappa_verdicts = build(true);
  if (!report.fleiss_kappa_templated) {
    throw Error(ErrorCode::InsufficientJudgments, "no item has judgments from two annotators");
  }
  return report;
}

std::string AnnotationService::export_ground_truth() const {
  std::shared_lock lock(mutex_);
  struct Tally {
    int correct = 0;
    int incorrect = 0;
  };
  struct ImageTally {
    int yes = 0;
    int no = 0;
    std::map<int, Tally> verdicts;  // by task
  };
  std::map<std::string, ImageTally> images;
  for (const auto& [key, j] : judgments_) {
    const Task& t = tasks_[static_cast<std::size_t>(key.first - 1)];
    ImageTally& img = images[t.image_id];
    if (j.is_templated == Templated::yes) ++img.yes;
    if (j.is_templated == Templated::no) ++img.no;
    if (j.verdict) {
      Tally& tally = img.verdicts[t.task_id];
      ++(*j.verdict == Verdict::correct ? tally.correct : tally.incorrect);
    }
  }
  std::string truth_lines;
  std::string verdict_lines;
  for (const auto& [image_id, img] : images) {
    std::set<std::string> correct_templates;
    for (const auto& [task_id, tally] : img.verdicts) {
      const Task& t = tasks_[static_cast<std::size_t>(task_id - 1)];
      const bool correct = tally.correct > tally.incorrect;  // ties are incorrect
      if (correct) correct_templates.insert(t.predicted.template_id());
      verdict_lines += json{{"type", "verdict"},
                            {"image_id", image_id},
                            {"method", t.method},
                            {"label", t.predicted.template_id()},
                            {"correct", correct},
                            {"votes_correct", tally.correct},
                            {"votes_incorrect", tally.incorrect}}
                           .dump() +
                       "\n";
    }
    json line{{"type", "truth"}, {"image_id", image_id}};
    // A prediction judged correct makes the image templated whatever the
    // templated answers said.
    line["is_templated"] = img.yes > img.no || !correct_templates.empty();
    line["template"] = correct_templates.empty() ? json(nullptr) : json(*correct_templates.begin());
    line["conflict"] = correct_templates.size() > 1;
    if (correct_templates.size() > 1) line["conflicting_templates"] = correct_templates;
    line["votes_yes"] = img.yes;
    line["votes_no"] = img.no;
    truth_lines += line.dump() + "\n";
  }
  return truth_lines + verdict_lines;
}

}  // namespace memeforge
