// memeforge command-line interface.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "memeforge/annotate_server.hpp"
#include "memeforge/error.hpp"
#include "memeforge/features.hpp"
#include "memeforge/keypoints.hpp"
#include "memeforge/metrics.hpp"
#include "memeforge/pipeline.hpp"
#include "memeforge/store.hpp"
#include "memeforge/synth.hpp"

namespace fs = std::filesystem;
using namespace memeforge;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string manifest;
  std::string out;
};

fs::path data_dir() {
  const char* env = std::getenv("MEMEFORGE_DATA_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path(".");
}

fs::path out_or(const Globals& g, std::string_view fallback) {
  return g.out.empty() ? data_dir() / fallback : fs::path(g.out);
}

fs::path require(const std::string& value, std::string_view what) {
  if (value.empty()) throw Error(ErrorCode::MissingInput, std::string(what) + " is required");
  if (!fs::exists(value)) throw Error(ErrorCode::MissingInput, std::string(what) + " " + value + " does not exist");
  return value;
}

std::vector<ImageRecord> manifest_of(const Globals& g) { return load_manifest(require(g.manifest, "--manifest")); }

// ---------------------------------------------------------------------------

struct SynthArgs {
  SynthSpec spec;
};

int run_synth(const Globals& g, SynthArgs a) {
  a.spec.seed = g.seed;
  const fs::path dir = out_or(g, "synth");
  const auto records = generate_synthetic(a.spec, dir, g.threads);
  std::cout << "wrote " << records.size() << " images and " << (dir / "manifest.jsonl").string() << "\n";
  return 0;
}

struct SplitArgs {
  double test_fraction = 0.2;
  std::string unlabeled = "test";
};

int run_split(const Globals& g, const SplitArgs& a) {
  const auto records = manifest_of(g);
  std::vector<ImageRecord> labeled, unlabeled;
  for (const auto& r : records) (r.label ? labeled : unlabeled).push_back(r);
  Split split = stratified_split(labeled, a.test_fraction, g.seed);
  if (a.unlabeled == "test") {
    split.test.insert(split.test.end(), unlabeled.begin(), unlabeled.end());
  } else if (a.unlabeled == "train") {
    split.train.insert(split.train.end(), unlabeled.begin(), unlabeled.end());
  }
  const fs::path dir = out_or(g, "split");
  fs::create_directories(dir);
  write_manifest(dir / "train.jsonl", split.train);
  write_manifest(dir / "test.jsonl", split.test);
  std::cout << "train " << split.train.size() << ", test " << split.test.size() << "\n";
  return 0;
}

struct DedupArgs {
  std::string embeddings;
  double tau = 0.95;
};

int run_dedup(const Globals& g, const DedupArgs& a) {
  const auto vectors = import_embeddings(require(a.embeddings, "--embeddings"));
  std::string out = "first,second,similarity\n";
  for (const auto& p : dedup_candidates(vectors, a.tau)) {
    out += csv_field(p.first) + "," + csv_field(p.second) + "," + std::to_string(p.similarity) + "\n";
  }
  if (g.out.empty()) {
    std::cout << out;
  } else {
    write_file_atomic(g.out, out);
  }
  return 0;
}

struct ExtractArgs {
  std::string feature = "phash";
  std::string vectors;
  bool resume = false;
  bool tolerate_errors = false;
};

int run_extract(const Globals& g, const ExtractArgs& a) {
  const auto kind = parse_extract_kind(a.feature);
  if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown feature " + a.feature);
  const auto records = manifest_of(g);
  const fs::path out = out_or(g, a.feature + ".mtfs");

  if (*kind == ExtractKind::embedding) {
    // Embeddings come from an external store; keep the manifest's rows in its order.
    const auto vectors = import_embeddings(require(a.vectors, "--vectors"));
    const std::uint32_t dim = vectors.empty() ? 0 : static_cast<std::uint32_t>(vectors.begin()->second.dim());
    FeatureStore store(StoreKind::dense, dim);
    for (const auto& r : records) {
      const auto it = vectors.find(r.id);
      if (it == vectors.end()) throw Error(ErrorCode::MissingInput, "embedding for " + r.id + " in " + a.vectors);
      store.append(r.id, it->second);
    }
    write_store(out, store);
    std::cout << "wrote " << store.size() << " rows to " << out.string() << "\n";
    return 0;
  }

  std::optional<FeatureStore> existing;
  if (a.resume && fs::exists(out)) existing = read_store(out, dense_kind(*kind));
  ExtractResult result = extract_store(records, *kind, g.threads, existing ? &*existing : nullptr);
  write_store(out, result.store);
  fs::path sidecar = out;
  sidecar += ".failures";
  if (!result.failures.empty()) {
    std::string lines;
    for (const auto& f : result.failures) {
      std::cerr << "extract " << f.id << ": " << f.message << "\n";
      lines += csv_field(f.id) + "," + csv_field(f.message) + "\n";
    }
    write_file_atomic(sidecar, lines);
  } else if (fs::exists(sidecar)) {
    fs::remove(sidecar);
  }
  std::cout << "wrote " << result.store.size() << " rows (" << result.added << " new, " << result.failures.size()
            << " failed) to " << out.string() << "\n";
  return result.failures.empty() || a.tolerate_errors ? 0 : 1;
}

struct ModelArgs {
  std::string method = "rnn:phash";
  std::string model;
  std::string train;
  std::string embeddings;
  std::optional<double> radius;
  int d = 27;
  int m = 20;
  int epochs = 50;
  double lr = 0.1;
  int batch = 64;
  double l2 = 1e-4;
  std::optional<double> reject;
  std::optional<int> per_class;
  double lambda = 0.01;
  double tau = 0.1;
  double eps = 8;
  int min_pts = 5;
  int min_cluster_size = 5;
  int min_samples = 5;
  int pca_dim = 32;
};

PipelineOptions options_of(const Globals& g, const ModelArgs& a) {
  PipelineOptions o;
  o.threads = g.threads;
  o.seed = g.seed;
  o.match.d = a.d;
  o.match.m = a.m;
  o.match.validate();
  o.radius = a.radius;
  if (!a.embeddings.empty()) o.embeddings = require(a.embeddings, "--embeddings");
  o.mlr.epochs = a.epochs;
  o.mlr.lr = a.lr;
  o.mlr.batch = a.batch;
  o.mlr.l2 = a.l2;
  o.mlr.seed = g.seed;
  o.mlr_reject = a.reject;
  o.sparse_cap = a.per_class;
  o.sparse_lambda = a.lambda;
  o.sparse_tau = a.tau;
  o.dbscan.eps = a.eps;
  o.dbscan.min_pts = a.min_pts;
  o.hdbscan.min_cluster_size = a.min_cluster_size;
  o.hdbscan.min_samples = a.min_samples;
  o.pca_dim = a.pca_dim;
  return o;
}

int run_fit(const Globals& g, const ModelArgs& a) {
  validate_method(a.method);
  const auto train = manifest_of(g);
  const PipelineOptions o = options_of(g, a);
  const fs::path out = out_or(g, "model.json");
  if (a.method.starts_with("rnn:")) {
    const ExtractKind kind = a.method == "rnn:phash"       ? ExtractKind::phash
                             : a.method == "rnn:embedding" ? ExtractKind::embedding
                                                           : ExtractKind::orb;
    const Metric metric = a.method == "rnn:phash"       ? Metric::hamming
                          : a.method == "rnn:embedding" ? Metric::cosine_distance
                                                        : Metric::feature_match;
    RadiusModel model = RadiusModel::fit(labeled_features(train, kind, o), metric, o.match, g.threads);
    if (a.radius) model.set_radius(*a.radius);
    save_radius_model(out, model);
  } else if (a.method == "mlr:baseline") {
    std::vector<FeatureVector> x;
    std::vector<std::string> y;
    for (const auto& f : labeled_features(train, ExtractKind::baseline, o)) {
      x.push_back(std::get<FeatureVector>(f.feature));
      y.push_back(f.label.template_id());
    }
    const MlrModel model = fit_mlr(x, y, o.mlr);
    save_mlr_model(out, model);
    std::cout << "final loss " << model.loss_history.back() << "\n";
  } else if (a.method == "sparse") {
    std::vector<LabeledImage> images;
    for (const auto& r : train) {
      if (r.label && r.label->is_template()) images.push_back({r.id, r.label->template_id(), decode_gray(r)});
    }
    save_sparse_model(out, build_dictionary(images, o.sparse_cap, o.sparse_lambda, o.sparse_tau));
  } else {
    throw Error(ErrorCode::InvalidArgument, a.method + " has no stored model; use predict --method");
  }
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int run_calibrate(const Globals& g, const ModelArgs& a) {
  const fs::path path = require(a.model, "--model");
  RadiusModel model = load_radius_model(path, g.threads);
  const double r = model.calibrate(g.threads);
  save_radius_model(path, model);
  std::cout << "radius " << r << "\n";
  return 0;
}

int run_predict(const Globals& g, const ModelArgs& a, bool method_given) {
  const auto eval = manifest_of(g);
  const PipelineOptions o = options_of(g, a);
  std::vector<Prediction> preds;
  if (!a.model.empty()) {
    const fs::path path = require(a.model, "--model");
    const std::string family = model_family(path);
    if (family == "rnn") {
      const RadiusModel model = load_radius_model(path, g.threads);
      const ExtractKind kind = model.metric() == Metric::hamming           ? ExtractKind::phash
                               : model.metric() == Metric::cosine_distance ? ExtractKind::embedding
                                                                           : ExtractKind::orb;
      std::optional<std::map<std::string, FeatureVector>> vectors;
      if (kind == ExtractKind::embedding) vectors = import_embeddings(require(a.embeddings, "--embeddings"));
      for (const auto& r : eval) {
        Feature f;
        if (vectors) {
          const auto it = vectors->find(r.id);
          if (it == vectors->end()) throw Error(ErrorCode::MissingInput, "embedding for " + r.id);
          f = it->second;
        } else {
          f = extract_feature(r, kind);
        }
        preds.push_back(model.predict(f, r.id));
      }
    } else if (family == "mlr") {
      const MlrModel model = load_mlr_model(path);
      for (const auto& r : eval) {
        preds.push_back(predict_mlr(model, std::get<FeatureVector>(extract_feature(r, ExtractKind::baseline)), r.id,
                                    a.reject));
      }
    } else if (family == "sparse") {
      const SparseDictionary dict = load_sparse_model(path);
      for (const auto& r : eval) preds.push_back(predict_sparse(dict, decode_gray(r), r.id));
    } else {
      throw Error(ErrorCode::CorruptStore, path.string() + " is not a model file");
    }
  } else {
    if (!method_given) throw Error(ErrorCode::MissingInput, "--model or --method is required");
    const auto train = load_manifest(require(a.train, "--train"));
    preds = run_method(a.method, train, eval, o);
  }
  const fs::path out = out_or(g, "predictions.csv");
  write_predictions(out, preds);
  std::cout << "wrote " << preds.size() << " predictions to " << out.string() << "\n";
  return 0;
}

struct MatchArgs {
  std::string a;
  std::string b;
  std::string store;
  int d = 27;
  int m = 20;
};

int run_match(const Globals& g, const MatchArgs& a) {
  MatchParams p{a.d, a.m};
  p.validate();
  auto descriptors = [&](const std::string& id) -> DescriptorSet {
    if (!a.store.empty()) {
      static const FeatureStore store = read_store(require(a.store, "--store"));
      return std::get<DescriptorSet>(store.get(id));
    }
    for (const auto& r : manifest_of(g)) {
      if (r.id == id) return std::get<DescriptorSet>(extract_feature(r, ExtractKind::orb));
    }
    throw Error(ErrorCode::UnknownId, id);
  };
  const DescriptorSet da = descriptors(a.a);
  const DescriptorSet db = descriptors(a.b);
  const auto matches = match_descriptors(da, db, p);
  const auto distance = image_distance(matches, p);
  std::cout << "keypoints " << da.keypoints.size() << " " << db.keypoints.size() << "\n";
  std::cout << "matches " << matches.size() << "\n";
  std::cout << "distance " << (distance ? std::to_string(*distance) : std::string("none")) << "\n";
  return 0;
}

struct ClusterArgs {
  ModelArgs model;
  std::string algo = "dbscan";
  std::string annotate = "medoid";
};

int run_cluster(const Globals& g, const ClusterArgs& a) {
  const auto corpus = manifest_of(g);
  const Clustering c = cluster_corpus(a.algo, a.annotate, corpus, options_of(g, a.model));
  const fs::path out = out_or(g, "clusters.csv");
  write_file_atomic(out, format_clustering(c));
  std::cout << c.clusters.size() << " clusters, " << c.noise_count() << " noise points; wrote " << out.string()
            << "\n";
  return 0;
}

struct EvalArgs {
  std::vector<std::string> preds;
  std::string truth;
  std::string average = "weighted";
  std::string json_out;
  bool scenarios = false;
};

int run_eval(const Globals& g, const EvalArgs& a) {
  const auto average = parse_f1_average(a.average);
  if (!average) throw Error(ErrorCode::InvalidArgument, "unknown averaging " + a.average);
  std::vector<Prediction> preds;
  if (a.preds.empty()) throw Error(ErrorCode::MissingInput, "--preds is required");
  for (const auto& p : a.preds) {
    const auto part = read_predictions(require(p, "--preds"));
    preds.insert(preds.end(), part.begin(), part.end());
  }
  GroundTruth truth;
  VerdictMap verdicts;
  if (!a.truth.empty()) {
    std::tie(truth, verdicts) = load_truth(require(a.truth, "--truth"));
  } else {
    truth = truth_from_manifest(manifest_of(g));
  }
  const EvalReport report = scenario_report(preds, truth, verdicts, *average);
  std::string text = report.to_text();
  if (!a.scenarios) {
    // Only the all-items scenario and binary metrics.
    std::string filtered;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
      if (line.find(".model_templated.") == std::string::npos && line.find(".true_templated.") == std::string::npos) {
        filtered += line + "\n";
      }
    }
    text = std::move(filtered);
  }
  if (g.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(g.out, text);
  }
  if (!a.json_out.empty()) write_file_atomic(a.json_out, report.to_json());
  return 0;
}

struct ServeArgs {
  std::string preds;
  std::string log = "judgments.log";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::vector<std::string> annotators;
};

AnnotateServer* g_server = nullptr;

int run_serve(const Globals& g, const ServeArgs& a) {
  AnnotationService service(read_predictions(require(a.preds, "--preds")), manifest_of(g), a.log,
                            std::set<std::string>(a.annotators.begin(), a.annotators.end()));
  std::optional<fs::path> static_dir;
  if (!a.static_dir.empty()) static_dir = a.static_dir;
  AnnotateServer server(service, static_dir);
  const int port = server.bind(a.host, a.port);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server != nullptr) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server != nullptr) g_server->stop();
  });
  std::cout << "serving " << service.tasks().size() << " tasks on http://" << a.host << ":" << port << "/"
            << std::endl;
  server.listen();
  g_server = nullptr;
  return 0;
}

void add_model_options(CLI::App* cmd, ModelArgs& a) {
  cmd->add_option("--embeddings", a.embeddings, "Dense feature store with external embeddings");
  cmd->add_option("--radius", a.radius, "Fixed radius instead of calibration");
  cmd->add_option("--d", a.d, "Descriptor match threshold")->capture_default_str();
  cmd->add_option("--m", a.m, "Minimum number of matches")->capture_default_str();
  cmd->add_option("--epochs", a.epochs)->capture_default_str();
  cmd->add_option("--lr", a.lr)->capture_default_str();
  cmd->add_option("--batch", a.batch)->capture_default_str();
  cmd->add_option("--l2", a.l2)->capture_default_str();
  cmd->add_option("--reject", a.reject, "MLR probability below which to predict templateless");
  cmd->add_option("--per-class", a.per_class, "Sparse dictionary columns per template");
  cmd->add_option("--lambda", a.lambda, "L1 weight for sparse matching")->capture_default_str();
  cmd->add_option("--tau", a.tau, "SCI rejection threshold")->capture_default_str();
  cmd->add_option("--eps", a.eps, "DBSCAN radius")->capture_default_str();
  cmd->add_option("--min-pts", a.min_pts)->capture_default_str();
  cmd->add_option("--min-cluster-size", a.min_cluster_size)->capture_default_str();
  cmd->add_option("--min-samples", a.min_samples)->capture_default_str();
  cmd->add_option("--pca-dim", a.pca_dim)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memeforge: meme template identification"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--manifest", g.manifest, "Image manifest (JSON lines)");
  app.add_option("--out", g.out, "Output path");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth_cmd->add_option("--templates", synth.spec.n_templates)->capture_default_str();
  synth_cmd->add_option("--variants", synth.spec.variants_per_template)->capture_default_str();
  synth_cmd->add_option("--nonmemes", synth.spec.n_nonmemes)->capture_default_str();
  synth_cmd->add_option("--coverage", synth.spec.overlay_coverage)->capture_default_str();

  SplitArgs split;
  auto* split_cmd = app.add_subcommand("split", "Stratified train/test split");
  split_cmd->add_option("--test-fraction", split.test_fraction)->capture_default_str();
  split_cmd->add_option("--unlabeled", split.unlabeled, "Where unlabeled records go")
      ->check(CLI::IsMember({"test", "train", "drop"}))
      ->capture_default_str();

  DedupArgs dedup;
  auto* dedup_cmd = app.add_subcommand("dedup", "List near-duplicate templates by embedding");
  dedup_cmd->add_option("--embeddings", dedup.embeddings)->required();
  dedup_cmd->add_option("--tau", dedup.tau)->capture_default_str();

  ExtractArgs extract;
  auto* extract_cmd = app.add_subcommand("extract", "Compute a feature store");
  extract_cmd->add_option("--feature", extract.feature)
      ->check(CLI::IsMember({"phash", "rgb", "gray", "lbp", "baseline", "orb", "embedding"}))
      ->capture_default_str();
  extract_cmd->add_option("--vectors", extract.vectors, "Dense store to import for --feature embedding");
  extract_cmd->add_flag("--resume", extract.resume, "Keep rows already in the output store");
  extract_cmd->add_flag("--tolerate-errors", extract.tolerate_errors);

  ModelArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model on a labeled manifest");
  fit_cmd->add_option("--method", fit.method)->capture_default_str();
  add_model_options(fit_cmd, fit);

  ModelArgs calibrate;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "Calibrate the radius of a radius model");
  calibrate_cmd->add_option("--model", calibrate.model)->required();

  ModelArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Predict templates for a manifest");
  auto* method_opt = predict_cmd->add_option("--method", predict.method, "Method run end to end");
  predict_cmd->add_option("--model", predict.model, "Stored model");
  predict_cmd->add_option("--train", predict.train, "Training manifest for --method");
  add_model_options(predict_cmd, predict);

  MatchArgs match;
  auto* match_cmd = app.add_subcommand("match", "Match keypoints between two images");
  match_cmd->add_option("--a", match.a)->required();
  match_cmd->add_option("--b", match.b)->required();
  match_cmd->add_option("--store", match.store, "orb256 store instead of extracting");
  match_cmd->add_option("--d", match.d)->capture_default_str();
  match_cmd->add_option("--m", match.m)->capture_default_str();

  ClusterArgs cluster;
  auto* cluster_cmd = app.add_subcommand("cluster", "Cluster a corpus and transfer labels");
  cluster_cmd->add_option("--algo", cluster.algo)->check(CLI::IsMember({"dbscan", "hdbscan"}))->capture_default_str();
  cluster_cmd->add_option("--annotate", cluster.annotate)
      ->check(CLI::IsMember({"majority", "medoid"}))
      ->capture_default_str();
  add_model_options(cluster_cmd, cluster.model);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions");
  eval_cmd->add_option("--preds", eval.preds, "Prediction files")->required();
  eval_cmd->add_option("--truth", eval.truth, "Truth file (defaults to manifest labels)");
  eval_cmd->add_option("--average", eval.average)
      ->check(CLI::IsMember({"macro", "weighted", "micro"}))
      ->capture_default_str();
  eval_cmd->add_option("--json", eval.json_out, "Also write the report as JSON");
  eval_cmd->add_flag("--scenarios", eval.scenarios, "Report all three scenarios");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the annotation service");
  serve_cmd->add_option("--preds", serve.preds)->required();
  serve_cmd->add_option("--log", serve.log)->capture_default_str();
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port)->capture_default_str();
  serve_cmd->add_option("--static", serve.static_dir, "Directory with the built annotation UI");
  serve_cmd->add_option("--annotators", serve.annotators, "Allowed annotator ids")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) return run_synth(g, synth);
    if (*split_cmd) return run_split(g, split);
    if (*dedup_cmd) return run_dedup(g, dedup);
    if (*extract_cmd) return run_extract(g, extract);
    if (*fit_cmd) return run_fit(g, fit);
    if (*calibrate_cmd) return run_calibrate(g, calibrate);
    if (*predict_cmd) return run_predict(g, predict, method_opt->count() > 0);
    if (*match_cmd) return run_match(g, match);
    if (*cluster_cmd) return run_cluster(g, cluster);
    if (*eval_cmd) return run_eval(g, eval);
    if (*serve_cmd) return run_serve(g, serve);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
