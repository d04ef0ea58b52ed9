#include "doctest.h"

#include <fstream>
#include <thread>

#include "json.hpp"
#include "memeforge/annotate.hpp"
#include "memeforge/annotate_server.hpp"
#include "memeforge/error.hpp"
#include "memeforge/image_io.hpp"
#include "memeforge/store.hpp"
#include "support.hpp"

#include "httplib.h"

using namespace memeforge;
using json = nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

const std::vector<std::string> kMethods{"rnn:phash", "sparse", "mlr:baseline"};

struct Corpus {
  testing::TempDir dir;
  std::vector<ImageRecord> manifest;
  std::vector<Prediction> predictions;

  explicit Corpus(int queries = 10) {
    Rng rng(5);
    auto add = [&](const std::string& id, std::optional<TemplateLabel> label) {
      const auto path = dir / (id + ".png");
      write_png(path, testing::random_rgb(8, 8, rng));
      manifest.push_back(ImageRecord{id, label ? Source::synthetic : Source::nonmeme, path, label, {}});
    };
    add("ref_b2", TemplateLabel::of("b"));
    add("ref_a", TemplateLabel::of("a"));
    add("ref_b1", TemplateLabel::of("b"));
    for (int q = 0; q < queries; ++q) add("q" + std::to_string(q), std::nullopt);
    // Reverse order so the task pool has to sort.
    for (int q = queries - 1; q >= 0; --q)
      for (std::size_t i = 0; i < kMethods.size(); ++i) {
        const auto& m = kMethods[i];
        const int pick = (q + static_cast<int>(i)) % 3;
        const std::string id = "q" + std::to_string(q);
        predictions.push_back(pick == 0 ? Prediction::rejected(id, m)
                                        : Prediction{id, TemplateLabel::of(pick == 1 ? "a" : "b"), 0.5, m});
      }
  }

  std::filesystem::path log() const { return dir / "judgments.jsonl"; }
};

Judgment judge(const Task& t, const std::string& who, Rng& rng) {
  Judgment j;
  j.task_id = t.task_id;
  j.annotator = who;
  if (t.predicted.is_template()) j.verdict = rng.below(4) == 0 ? Verdict::incorrect : Verdict::correct;
  j.is_templated = static_cast<Templated>(rng.below(3));
  return j;
}

// Fleiss kappa from raw counts, written out long-hand.
double fleiss_oracle(const std::vector<std::vector<int>>& rows) {
  const double n_items = static_cast<double>(rows.size());
  double raters = 0;
  for (int c : rows[0]) raters += c;
  std::vector<double> p(rows[0].size(), 0.0);
  double p_bar = 0;
  for (const auto& r : rows) {
    double agree = 0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      p[j] += r[j] / (n_items * raters);
      agree += r[j] * (r[j] - 1.0);
    }
    p_bar += agree / (raters * (raters - 1)) / n_items;
  }
  double pe = 0;
  for (double x : p) pe += x * x;
  if (pe == 1.0) return p_bar == 1.0 ? 1.0 : 0.0;
  return (p_bar - pe) / (1 - pe);
}

std::vector<std::vector<int>> templated_table(const AnnotationService& s, int raters) {
  std::map<int, std::vector<int>> rows;
  std::map<int, int> counts;
  for (const auto& [key, j] : s.judgments()) {
    auto& row = rows.try_emplace(key.first, std::vector<int>(3, 0)).first->second;
    ++row[j.is_templated == Templated::yes ? 0 : j.is_templated == Templated::no ? 1 : 2];
    ++counts[key.first];
  }
  std::vector<std::vector<int>> out;
  for (const auto& [task, row] : rows)
    if (counts[task] == raters) out.push_back(row);
  return out;
}

std::vector<std::vector<int>> verdict_table(const AnnotationService& s, int raters) {
  std::map<int, std::vector<int>> rows;
  std::map<int, int> counts;
  for (const auto& [key, j] : s.judgments()) {
    if (!j.verdict) continue;
    auto& row = rows.try_emplace(key.first, std::vector<int>(2, 0)).first->second;
    ++row[*j.verdict == Verdict::correct ? 0 : 1];
    ++counts[key.first];
  }
  std::vector<std::vector<int>> out;
  for (const auto& [task, row] : rows)
    if (counts[task] == raters) out.push_back(row);
  return out;
}

}  // namespace

TEST_CASE("task pool is sorted and references the smallest labeled image") {
  Corpus c;
  AnnotationService s(c.predictions, c.manifest, c.log());
  REQUIRE(s.tasks().size() == 30);
  for (std::size_t i = 0; i < s.tasks().size(); ++i) {
    const Task& t = s.tasks()[i];
    CHECK(t.task_id == static_cast<int>(i) + 1);
    if (i > 0) {
      const Task& prev = s.tasks()[i - 1];
      CHECK(std::tie(prev.image_id, prev.method) < std::tie(t.image_id, t.method));
    }
    if (t.predicted.is_templateless()) CHECK_FALSE(t.reference_image_id.has_value());
    else CHECK(*t.reference_image_id == (t.predicted.template_id() == "a" ? "ref_a" : "ref_b1"));
  }
  const auto j = json::parse(task_to_json(s.tasks()[0]));
  CHECK(j["image_url"] == "/api/images/" + s.tasks()[0].image_id);
}

TEST_CASE("construction checks the manifest") {
  Corpus c;
  auto preds = c.predictions;
  preds.push_back(Prediction{"ghost", TemplateLabel::templateless(), 0, "m"});
  CHECK(code_of([&] { AnnotationService(preds, c.manifest, c.log()); }) == ErrorCode::MissingInput);
  preds.back() = Prediction{"q1", TemplateLabel::of("zzz"), 0, "m"};
  CHECK(code_of([&] { AnnotationService(preds, c.manifest, c.log()); }) == ErrorCode::MissingInput);
}

TEST_CASE("judgments are validated") {
  Corpus c;
  AnnotationService s(c.predictions, c.manifest, c.log(), {"ann1", "ann2"});
  const Task* concrete = nullptr;
  const Task* rejected = nullptr;
  for (const auto& t : s.tasks()) (t.predicted.is_template() ? concrete : rejected) = &t;
  REQUIRE(concrete);
  REQUIRE(rejected);
  CHECK(code_of([&] { s.submit(Judgment{concrete->task_id, "ann1", std::nullopt, Templated::yes, ""}); }) ==
        ErrorCode::MalformedVerdict);
  CHECK(code_of([&] { s.submit(Judgment{rejected->task_id, "ann1", Verdict::correct, Templated::yes, ""}); }) ==
        ErrorCode::MalformedVerdict);
  CHECK(code_of([&] { s.submit(Judgment{99, "ann1", std::nullopt, Templated::no, ""}); }) == ErrorCode::UnknownTask);
  CHECK(code_of([&] { s.submit(Judgment{0, "ann1", std::nullopt, Templated::no, ""}); }) == ErrorCode::UnknownTask);
  CHECK(code_of([&] { s.submit(Judgment{rejected->task_id, "eve", std::nullopt, Templated::no, ""}); }) ==
        ErrorCode::UnknownAnnotator);
  CHECK(code_of([&] { s.next_task("eve"); }) == ErrorCode::UnknownAnnotator);
  CHECK(code_of([] { judgment_from_json("{\"task_id\":1}"); }) == ErrorCode::MalformedVerdict);
  CHECK(code_of([] { judgment_from_json("[1]"); }) == ErrorCode::MalformedVerdict);
  CHECK(code_of([] { judgment_from_json("{\"task_id\":1,\"annotator\":\"x\",\"is_templated\":\"maybe\"}"); }) ==
        ErrorCode::MalformedVerdict);
  CHECK(code_of([] {
          judgment_from_json("{\"task_id\":1,\"annotator\":\"x\",\"verdict\":\"meh\",\"is_templated\":\"yes\"}");
        }) == ErrorCode::MalformedVerdict);
  CHECK(s.judgments().empty());
  CHECK(code_of([&] { s.agreement(); }) == ErrorCode::InsufficientJudgments);
}

TEST_CASE("next task walks the pool and resubmission replaces") {
  Corpus c(2);
  AnnotationService s(c.predictions, c.manifest, c.log());
  Rng rng(1);
  std::vector<int> seen;
  while (const auto t = s.next_task("ann")) {
    seen.push_back(t->task_id);
    s.submit(judge(*t, "ann", rng));
  }
  CHECK(seen == std::vector<int>{1, 2, 3, 4, 5, 6});
  CHECK(s.judged_count("ann") == 6);
  CHECK(s.next_task("other")->task_id == 1);
  auto j = s.judgments().at({1, "ann"});
  j.is_templated = j.is_templated == Templated::yes ? Templated::no : Templated::yes;
  j.timestamp.clear();
  s.submit(j);
  CHECK(s.judgments().size() == 6);
  CHECK(s.judgments().at({1, "ann"}).is_templated == j.is_templated);
  CHECK_FALSE(s.judgments().at({1, "ann"}).timestamp.empty());
}

TEST_CASE("log replay restores state and tolerates a torn tail") {
  Corpus c;
  Rng rng(2);
  std::string export_before;
  {
    AnnotationService s(c.predictions, c.manifest, c.log());
    for (const auto* who : {"x", "y", "z"})
      for (int k = 0; k < 20; ++k) s.submit(judge(*s.next_task(who), who, rng));
    export_before = s.export_ground_truth();
  }
  {
    std::ofstream(c.log(), std::ios::app) << "{\"task_id\":3,\"annot";
  }
  AnnotationService again(c.predictions, c.manifest, c.log());
  CHECK(again.judgments().size() == 60);
  CHECK(again.export_ground_truth() == export_before);
  CHECK(again.next_task("x")->task_id == 21);

  auto text = read_file(c.log());
  text.insert(0, "garbage\n");
  write_file_atomic(c.log(), text);
  CHECK(code_of([&] { AnnotationService(c.predictions, c.manifest, c.log()); }) == ErrorCode::CorruptStore);
}

TEST_CASE("agreement uses the items with the most raters") {
  Corpus c;
  AnnotationService s(c.predictions, c.manifest, c.log());
  Rng rng(3);
  for (const auto* who : {"x", "y", "z"})
    for (const auto& t : s.tasks())
      if (std::string(who) != "z" || t.task_id <= 12) s.submit(judge(t, who, rng));
  const auto a = s.agreement();
  CHECK(a.raters == 3);
  CHECK(a.n_complete_items == 12);
  CHECK(*a.fleiss_kappa_templated == doctest::Approx(fleiss_oracle(templated_table(s, 3))).epsilon(1e-12));
  CHECK(*a.fleiss_kappa_verdicts == doctest::Approx(fleiss_oracle(verdict_table(s, 3))).epsilon(1e-12));
}

TEST_CASE("export resolves votes per image") {
  Corpus c(1);
  // q0 has three tasks; look them up by method
  AnnotationService s(c.predictions, c.manifest, c.log());
  std::map<std::string, Task> by_method;
  for (const auto& t : s.tasks()) by_method.emplace(t.method, t);
  std::vector<Judgment> js;
  for (const auto& [m, t] : by_method) {
    for (int r = 0; r < 2; ++r) {
      Judgment j{t.task_id, "r" + std::to_string(r), std::nullopt, Templated::no, "t"};
      if (t.predicted.is_template()) j.verdict = r == 0 ? Verdict::correct : Verdict::incorrect;
      js.push_back(j);
    }
  }
  // an extra rater breaks the tie for the first concrete prediction
  const Task* first_concrete = nullptr;
  for (const auto& t : s.tasks())
    if (!first_concrete && t.predicted.is_template()) first_concrete = &t;
  REQUIRE(first_concrete);
  js.push_back(Judgment{first_concrete->task_id, "r2", Verdict::correct, Templated::no, "t"});
  for (const auto& j : js) s.submit(j);

  std::istringstream lines(s.export_ground_truth());
  std::string line;
  std::vector<json> out;
  while (std::getline(lines, line)) out.push_back(json::parse(line));
  REQUIRE(out.size() == 1 + 2);
  CHECK(out[0]["type"] == "truth");
  CHECK(out[0]["image_id"] == "q0");
  CHECK(out[0]["is_templated"] == true);
  CHECK(out[0]["template"] == first_concrete->predicted.template_id());
  CHECK(out[0]["votes_no"] == 7);
  for (std::size_t i = 1; i < out.size(); ++i) {
    CHECK(out[i]["type"] == "verdict");
    CHECK(out[i]["correct"] == (out[i]["method"] == first_concrete->method));
  }

  // Same judgment set submitted in another order gives the same export.
  testing::TempDir other;
  AnnotationService s2(c.predictions, c.manifest, other / "log.jsonl");
  for (auto it = js.rbegin(); it != js.rend(); ++it) s2.submit(*it);
  CHECK(s2.export_ground_truth() == s.export_ground_truth());
}

TEST_CASE("HTTP service under concurrent annotators") {
  Corpus c;
  std::map<std::string, std::string> image_bytes;
  for (const auto& r : c.manifest) image_bytes[r.id] = read_file(r.path);

  auto run_clients = [&](AnnotationService& service, int port) {
    std::vector<std::thread> clients;
    for (int k = 0; k < 3; ++k) {
      clients.emplace_back([&, k] {
        httplib::Client cli("127.0.0.1", port);
        Rng rng(100 + k);
        const std::string who = "ann" + std::to_string(k);
        for (;;) {
          auto res = cli.Get("/api/tasks/next?annotator=" + who);
          REQUIRE(res);
          REQUIRE(res->status == 200);
          const auto body = json::parse(res->body);
          if (body["done"].get<bool>()) break;
          const auto& task = body["task"];
          json j{{"task_id", task["task_id"]}, {"annotator", who}};
          j["is_templated"] = std::array{"yes", "no", "unsure"}[rng.below(3)];
          if (!task["predicted"].is_null()) j["verdict"] = rng.below(3) == 0 ? "incorrect" : "correct";
          auto post = cli.Post("/api/judgments", j.dump(), "application/json");
          REQUIRE(post);
          CHECK(post->status == 200);
        }
      });
    }
    for (auto& t : clients) t.join();
    (void)service;
  };

  auto serve = [](AnnotateServer& server) {
    const int port = server.bind("127.0.0.1", 0);
    return std::make_pair(port, std::thread([&server] { server.listen(); }));
  };

  json agreement_first;
  std::string export_first;
  {
    AnnotationService service(c.predictions, c.manifest, c.log());
    AnnotateServer server(service);
    auto [port, thread] = serve(server);
    httplib::Client cli("127.0.0.1", port);
    for (int tries = 0; tries < 100 && !cli.Get("/"); ++tries) std::this_thread::sleep_for(std::chrono::milliseconds(10));

    auto early = cli.Get("/api/agreement");
    REQUIRE(early);
    CHECK(early->status == 409);
    CHECK(json::parse(early->body)["error"] == "InsufficientJudgments");

    run_clients(service, port);
    CHECK(service.judgments().size() == 90);

    auto res = cli.Get("/api/agreement");
    REQUIRE(res);
    CHECK(res->status == 200);
    agreement_first = json::parse(res->body);
    CHECK(agreement_first["raters"] == 3);
    CHECK(agreement_first["n_complete_items"] == 30);
    CHECK(agreement_first["fleiss_kappa_templated"].get<double>() ==
          doctest::Approx(fleiss_oracle(templated_table(service, 3))).epsilon(1e-12));
    CHECK(agreement_first["fleiss_kappa_verdicts"].get<double>() ==
          doctest::Approx(fleiss_oracle(verdict_table(service, 3))).epsilon(1e-12));

    auto done = cli.Get("/api/tasks/next?annotator=ann0");
    CHECK(json::parse(done->body)["done"] == true);
    CHECK(json::parse(done->body)["progress"]["judged"] == 30);

    auto bad = cli.Post("/api/judgments", "{not json", "application/json");
    CHECK(bad->status == 400);
    CHECK(json::parse(bad->body)["error"] == "MalformedVerdict");
    auto unknown = cli.Post("/api/judgments", R"({"task_id":31,"annotator":"a","is_templated":"yes"})",
                            "application/json");
    CHECK(unknown->status == 404);
    CHECK(json::parse(unknown->body)["error"] == "UnknownTask");
    CHECK(cli.Get("/api/tasks/next")->status == 400);
    CHECK(cli.Get("/api/images/nope")->status == 404);

    auto img = cli.Get("/api/images/ref_a");
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/png");
    CHECK(img->body == image_bytes["ref_a"]);

    auto exp = cli.Get("/api/export");
    CHECK(exp->get_header_value("Content-Type") == "application/x-ndjson");
    export_first = exp->body;
    CHECK(export_first == service.export_ground_truth());
    CHECK(cli.Get("/")->status == 200);

    server.stop();
    thread.join();
  }
  {
    AnnotationService service(c.predictions, c.manifest, c.log(), {"ann0"});
    AnnotateServer server(service);
    auto [port, thread] = serve(server);
    httplib::Client cli("127.0.0.1", port);
    for (int tries = 0; tries < 100 && !cli.Get("/"); ++tries) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    CHECK(json::parse(cli.Get("/api/agreement")->body) == agreement_first);
    CHECK(cli.Get("/api/export")->body == export_first);
    auto forbidden = cli.Get("/api/tasks/next?annotator=mallory");
    CHECK(forbidden->status == 403);
    CHECK(json::parse(forbidden->body)["error"] == "UnknownAnnotator");
    server.stop();
    thread.join();
  }
}
