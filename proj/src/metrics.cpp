#include "memeforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "memeforge/error.hpp"

namespace memeforge {

using json = nlohmann::json;

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

std::optional<std::size_t> ConfusionMatrix::index_of(const TemplateLabel& label) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) return std::nullopt;
  return static_cast<std::size_t>(it - classes.begin());
}

ConfusionMatrix ConfusionMatrix::from_counts(std::vector<TemplateLabel> classes,
                                             std::vector<std::int64_t> counts) {
  if (counts.size() != classes.size() * classes.size()) {
    throw Error(ErrorCode::DimensionMismatch, "confusion counts are not square over the classes");
  }
  for (auto c : counts) {
    if (c < 0) throw Error(ErrorCode::InvalidArgument, "negative confusion count");
  }
  return ConfusionMatrix{std::move(classes), std::move(counts)};
}

ConfusionMatrix confusion(std::span<const std::pair<TemplateLabel, TemplateLabel>> pairs,
                          std::span<const TemplateLabel> extra_classes) {
  std::set<TemplateLabel> classes(extra_classes.begin(), extra_classes.end());
  for (const auto& [t, p] : pairs) {
    classes.insert(t);
    classes.insert(p);
  }
  ConfusionMatrix cm;
  cm.classes.assign(classes.begin(), classes.end());
  cm.counts.assign(cm.classes.size() * cm.classes.size(), 0);
  for (const auto& [t, p] : pairs) {
    ++cm.counts[*cm.index_of(t) * cm.classes.size() + *cm.index_of(p)];
  }
  return cm;
}

ConfusionMatrix confusion(std::span<const Prediction> predictions,
                          const std::map<std::string, TemplateLabel>& truth) {
  std::vector<std::pair<TemplateLabel, TemplateLabel>> pairs;
  pairs.reserve(predictions.size());
  for (const auto& p : predictions) {
    const auto it = truth.find(p.image_id);
    if (it == truth.end()) throw Error(ErrorCode::MissingTruth, p.image_id);
    pairs.emplace_back(it->second, p.label);
  }
  return confusion(pairs);
}

namespace {

struct Marginals {
  std::vector<double> rows;  // truth totals
  std::vector<double> cols;  // predicted totals
  double trace = 0.0;
  double total = 0.0;
};

Marginals marginals(const ConfusionMatrix& cm) {
  const std::size_t k = cm.size();
  Marginals m{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0), 0.0, 0.0};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto c = static_cast<double>(cm.at(i, j));
      m.rows[i] += c;
      m.cols[j] += c;
      m.total += c;
      if (i == j) m.trace += c;
    }
  }
  return m;
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

double mcc(const ConfusionMatrix& cm) {
  const Marginals m = marginals(cm);
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t k = 0; k < cm.size(); ++k) {
    pt += m.cols[k] * m.rows[k];
    pp += m.cols[k] * m.cols[k];
    tt += m.rows[k] * m.rows[k];
  }
  const double s2 = m.total * m.total;
  const double den = (s2 - pp) * (s2 - tt);
  if (!(den > 0.0)) return 0.0;
  return (m.trace * m.total - pt) / std::sqrt(den);
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const Marginals m = marginals(cm);
  if (m.total == 0.0) return 0.0;
  const double po = m.trace / m.total;
  double pe = 0.0;
  for (std::size_t k = 0; k < cm.size(); ++k) pe += (m.rows[k] / m.total) * (m.cols[k] / m.total);
  if (pe >= 1.0) return 0.0;
  return (po - pe) / (1.0 - pe);
}

std::string_view to_string(F1Average average) {
  switch (average) {
    case F1Average::macro: return "macro";
    case F1Average::weighted: return "weighted";
    case F1Average::micro: return "micro";
  }
  return "weighted";
}

std::optional<F1Average> parse_f1_average(std::string_view text) {
  for (auto a : {F1Average::macro, F1Average::weighted, F1Average::micro}) {
    if (to_string(a) == text) return a;
  }
  return std::nullopt;
}

double f1(const ConfusionMatrix& cm, F1Average average) {
  const Marginals m = marginals(cm);
  if (m.total == 0.0) return 0.0;
  if (average == F1Average::micro) return m.trace / m.total;
  double sum = 0.0;
  for (std::size_t k = 0; k < cm.size(); ++k) {
    const auto tp = static_cast<double>(cm.at(k, k));
    const double precision = ratio(tp, m.cols[k]);
    const double recall = ratio(tp, m.rows[k]);
    const double score = ratio(2.0 * precision * recall, precision + recall);
    sum += average == F1Average::macro ? score : score * m.rows[k];
  }
  return average == F1Average::macro ? ratio(sum, static_cast<double>(cm.size())) : sum / m.total;
}

BinaryMetrics binary_metrics(std::span<const std::pair<bool, bool>> truth_predicted) {
  BinaryMetrics b;
  for (const auto& [t, p] : truth_predicted) {
    if (t && p) ++b.tp;
    else if (!t && p) ++b.fp;
    else if (t && !p) ++b.fn;
    else ++b.tn;
  }
  b.precision = ratio(static_cast<double>(b.tp), static_cast<double>(b.tp + b.fp));
  b.recall = ratio(static_cast<double>(b.tp), static_cast<double>(b.tp + b.fn));
  return b;
}

BinaryMetrics binary_metrics(std::span<const Prediction> predictions,
                             const std::map<std::string, TemplateLabel>& truth) {
  std::vector<std::pair<bool, bool>> pairs;
  pairs.reserve(predictions.size());
  for (const auto& p : predictions) {
    const auto it = truth.find(p.image_id);
    if (it == truth.end()) throw Error(ErrorCode::MissingTruth, p.image_id);
    pairs.emplace_back(it->second.is_template(), p.label.is_template());
  }
  return binary_metrics(pairs);
}

double fleiss_kappa(const std::vector<std::vector<int>>& table) {
  if (table.empty()) throw Error(ErrorCode::EmptyInput, "Fleiss kappa over zero items");
  const std::size_t categories = table.front().size();
  long long n = -1;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (table[i].size() != categories) {
      throw Error(ErrorCode::RaggedTable, "row " + std::to_string(i) + " has a different category count");
    }
    long long s = 0;
    for (int c : table[i]) {
      if (c < 0) throw Error(ErrorCode::RaggedTable, "negative count in row " + std::to_string(i));
      s += c;
    }
    if (n < 0) n = s;
    if (s != n) {
      throw Error(ErrorCode::RaggedTable, "row " + std::to_string(i) + " has " + std::to_string(s) +
                                              " ratings, expected " + std::to_string(n));
    }
  }
  if (n < 2) throw Error(ErrorCode::RaggedTable, "at least two ratings per item are required");
  const auto items = static_cast<double>(table.size());
  const auto raters = static_cast<double>(n);
  std::vector<double> totals(categories, 0.0);
  double p_bar = 0.0;
  for (const auto& row : table) {
    double sq = 0.0;
    for (std::size_t j = 0; j < categories; ++j) {
      sq += static_cast<double>(row[j]) * row[j];
      totals[j] += row[j];
    }
    p_bar += (sq - raters) / (raters * (raters - 1.0));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (double t : totals) {
    const double p = t / (items * raters);
    p_e += p * p;
  }
  if (p_e >= 1.0) return p_bar >= 1.0 ? 1.0 : 0.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::LengthMismatch, "partitions differ in length");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [_, c] : joint) index += pairs(c);
  for (const auto& [_, c] : ra) sa += pairs(c);
  for (const auto& [_, c] : rb) sb += pairs(c);
  const double expected = sa * sb / pairs(n);
  const double max_index = (sa + sb) / 2.0;
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------

GroundTruth truth_from_manifest(std::span<const ImageRecord> records) {
  GroundTruth truth;
  for (const auto& r : records) {
    if (r.label && r.label->is_template()) {
      truth[r.id] = TruthEntry{true, r.label->template_id()};
    } else if (r.label || r.source == Source::nonmeme) {
      truth[r.id] = TruthEntry{false, std::nullopt};
    }
  }
  return truth;
}

std::pair<GroundTruth, VerdictMap> parse_truth(std::string_view text) {
  GroundTruth truth;
  VerdictMap verdicts;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    try {
      const json obj = json::parse(line);
      const std::string id = obj.at("image_id").get<std::string>();
      if (obj.value("type", std::string("truth")) == "verdict") {
        verdicts[{id, obj.at("method").get<std::string>()}] = obj.at("correct").get<bool>();
        continue;
      }
      TruthEntry e;
      e.is_templated = obj.at("is_templated").get<bool>();
      if (const auto t = obj.find("template"); t != obj.end() && !t->is_null()) {
        e.template_id = t->get<std::string>();
      }
      if (e.template_id && !e.is_templated) {
        throw Error(ErrorCode::MalformedLine, where + "template given for a templateless image");
      }
      truth[id] = std::move(e);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedLine, where + e.what());
    }
  }
  return {std::move(truth), std::move(verdicts)};
}

std::pair<GroundTruth, VerdictMap> load_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_truth(ss.str());
}

TemplateLabel unknown_template_label() { return TemplateLabel::of("__unknown_template__"); }

TemplateLabel scenario_truth_label(const Prediction& prediction, const TruthEntry& truth,
                                   const VerdictMap& verdicts) {
  if (!truth.is_templated) return TemplateLabel::templateless();
  if (truth.template_id) return TemplateLabel::of(*truth.template_id);
  if (prediction.label.is_template()) {
    const auto it = verdicts.find({prediction.image_id, prediction.method});
    if (it != verdicts.end() && it->second) return prediction.label;
  }
  return unknown_template_label();
}

namespace {

ScenarioMetrics scenario_metrics(std::span<const std::pair<TemplateLabel, TemplateLabel>> pairs,
                                 F1Average average) {
  const ConfusionMatrix cm = confusion(pairs);
  return ScenarioMetrics{mcc(cm), cohen_kappa(cm), f1(cm, average), static_cast<std::int64_t>(pairs.size())};
}

void put_metrics(json& out, const ScenarioMetrics& m) {
  out = json{{"mcc", m.mcc}, {"kappa", m.kappa}, {"f1", m.f1}, {"support", m.support}};
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << std::fixed << v;
  return ss.str();
}

}  // namespace

EvalReport scenario_report(std::span<const Prediction> predictions, const GroundTruth& truth,
                           const VerdictMap& verdicts, F1Average average) {
  std::map<std::string, std::vector<const Prediction*>> by_method;
  for (const auto& p : predictions) by_method[p.method].push_back(&p);
  EvalReport report;
  report.average = average;
  for (const auto& [method, preds] : by_method) {
    std::vector<std::pair<TemplateLabel, TemplateLabel>> all, model_templated, true_templated;
    std::vector<std::pair<bool, bool>> binary;
    for (const Prediction* p : preds) {
      const auto it = truth.find(p->image_id);
      if (it == truth.end()) throw Error(ErrorCode::MissingTruth, p->image_id);
      std::pair pair{scenario_truth_label(*p, it->second, verdicts), p->label};
      all.push_back(pair);
      if (p->label.is_template()) model_templated.push_back(pair);
      if (it->second.is_templated) true_templated.push_back(pair);
      binary.emplace_back(it->second.is_templated, p->label.is_template());
    }
    report.methods.push_back(MethodReport{method, scenario_metrics(all, average),
                                          scenario_metrics(model_templated, average),
                                          scenario_metrics(true_templated, average),
                                          binary_metrics(binary)});
  }
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "f1_average " << to_string(average) << '\n';
  for (const auto& m : methods) {
    const std::pair<const char*, const ScenarioMetrics*> scenarios[] = {
        {"all", &m.all}, {"model_templated", &m.model_templated}, {"true_templated", &m.true_templated}};
    for (const auto& [name, s] : scenarios) {
      const std::string key = m.method + "." + name + ".";
      out << key << "mcc " << fmt(s->mcc) << '\n';
      out << key << "kappa " << fmt(s->kappa) << '\n';
      out << key << "f1 " << fmt(s->f1) << '\n';
      out << key << "support " << s->support << '\n';
    }
    out << m.method << ".binary.precision " << fmt(m.binary.precision) << '\n';
    out << m.method << ".binary.recall " << fmt(m.binary.recall) << '\n';
  }
  return out.str();
}

std::string EvalReport::to_json() const {
  json out;
  out["f1_average"] = std::string(to_string(average));
  out["methods"] = json::object();
  for (const auto& m : methods) {
    json entry;
    put_metrics(entry["all"], m.all);
    put_metrics(entry["model_templated"], m.model_templated);
    put_metrics(entry["true_templated"], m.true_templated);
    entry["binary"] = json{{"precision", m.binary.precision}, {"recall", m.binary.recall},
                           {"tp", m.binary.tp},           {"fp", m.binary.fp},
                           {"fn", m.binary.fn},           {"tn", m.binary.tn}};
    out["methods"][m.method] = std::move(entry);
  }
  return out.dump(2) + "\n";
}

}  // namespace memeforge
