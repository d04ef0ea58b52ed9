#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "memeforge/cluster.hpp"
#include "memeforge/error.hpp"
#include "memeforge/metrics.hpp"
#include "support.hpp"

using namespace memeforge;

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

std::vector<std::string> make_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("p" + std::to_string(1000 + i));
  return ids;
}

// Textbook DBSCAN with an explicit stack and a full distance matrix.
std::vector<int> reference_dbscan(const std::vector<std::vector<double>>& d, double eps, std::size_t min_pts) {
  const std::size_t n = d.size();
  std::vector<int> label(n, -2);
  auto region = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j)
      if (d[i][j] <= eps) out.push_back(j);
    return out;
  };
  int c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != -2) continue;
    auto seeds = region(i);
    if (seeds.size() < min_pts) {
      label[i] = -1;
      continue;
    }
    label[i] = c;
    std::vector<std::size_t> stack(seeds.begin(), seeds.end());
    while (!stack.empty()) {
      const std::size_t j = stack.back();
      stack.pop_back();
      if (label[j] == -1) label[j] = c;
      if (label[j] != -2) continue;
      label[j] = c;
      auto r = region(j);
      if (r.size() >= min_pts) stack.insert(stack.end(), r.begin(), r.end());
    }
    ++c;
  }
  // canonical numbering by smallest member
  std::map<int, int> renumber;
  for (int& l : label) {
    if (l < 0) continue;
    if (!renumber.contains(l)) renumber.emplace(l, static_cast<int>(renumber.size()));
    l = renumber[l];
  }
  return label;
}

std::vector<std::vector<double>> blobs(int k, int per, int dim, double spread, Rng& rng,
                                       std::vector<int>* truth = nullptr) {
  std::vector<std::vector<double>> pts;
  for (int c = 0; c < k; ++c) {
    std::vector<double> centre(dim);
    for (auto& x : centre) x = 20.0 * rng.normal();
    for (int i = 0; i < per; ++i) {
      auto p = centre;
      for (auto& x : p) x += spread * rng.normal();
      pts.push_back(p);
      if (truth) truth->push_back(c);
    }
  }
  return pts;
}

double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Kruskal over the complete mutual-reachability graph with core distances
// computed by sorting each row.
double kruskal_weight(const std::vector<std::vector<double>>& pts, int min_samples) {
  const std::size_t n = pts.size();
  std::vector<double> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < n; ++j) row.push_back(euclid(pts[i], pts[j]));
    std::sort(row.begin(), row.end());
    core[i] = row[static_cast<std::size_t>(min_samples) - 1];
  }
  std::vector<std::tuple<double, std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      edges.emplace_back(std::max({core[i], core[j], euclid(pts[i], pts[j])}), i, j);
  std::sort(edges.begin(), edges.end());
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = find(parent[x]);
  };
  double total = 0;
  for (const auto& [w, a, b] : edges) {
    const auto ra = find(a), rb = find(b);
    if (ra != rb) {
      parent[ra] = rb;
      total += w;
    }
  }
  return total;
}

std::uint64_t flip_bits(std::uint64_t v, int bits, Rng& rng) {
  for (int k = 0; k < bits; ++k) v ^= std::uint64_t{1} << rng.below(64);
  return v;
}

}  // namespace

TEST_CASE("DBSCAN matches the textbook algorithm on hashes and vectors") {
  Rng rng(70);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<PerceptualHash> hashes;
    for (int c = 0; c < 8; ++c) {
      const std::uint64_t centre = rng.next();
      for (int i = 0; i < 3 + static_cast<int>(rng.below(10)); ++i)
        hashes.push_back({flip_bits(centre, static_cast<int>(rng.below(12)), rng)});
    }
    for (int i = 0; i < 30; ++i) hashes.push_back({rng.next()});
    rng.shuffle(std::span<PerceptualHash>(hashes));
    const HammingSpace space(hashes);
    std::vector<std::vector<double>> d(hashes.size(), std::vector<double>(hashes.size()));
    for (std::size_t i = 0; i < hashes.size(); ++i)
      for (std::size_t j = 0; j < hashes.size(); ++j) d[i][j] = hamming(hashes[i], hashes[j]);
    for (double eps : {4.0, 8.0, 8.9, 12.0})
      for (int min_pts : {1, 3, 5}) {
        const auto got = dbscan(space, make_ids(hashes.size()), {eps, min_pts});
        CHECK(got.assignment == reference_dbscan(d, eps, static_cast<std::size_t>(min_pts)));
      }
  }
  const auto pts = blobs(5, 20, 3, 1.0, rng);
  const EuclideanSpace es(pts);
  std::vector<std::vector<double>> d(pts.size(), std::vector<double>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < pts.size(); ++j) d[i][j] = euclid(pts[i], pts[j]);
  for (double eps : {0.5, 1.0, 2.0})
    CHECK(dbscan(es, make_ids(pts.size()), {eps, 4}).assignment == reference_dbscan(d, eps, 4));
}

TEST_CASE("DBSCAN clusters are canonically numbered and listed") {
  // 1-D: {0, 1, 2} and {10, 11, 12}, an outlier at 50, points listed out of order
  const std::vector<double> xs{10, 0, 50, 11, 1, 12, 2};
  const FunctionSpace space(xs.size(), [&](std::size_t i, std::size_t j) { return std::abs(xs[i] - xs[j]); });
  const auto c = dbscan(space, make_ids(xs.size()), {1.0, 2});
  CHECK(c.assignment == std::vector<int>{0, 1, kNoise, 0, 1, 0, 1});
  REQUIRE(c.clusters.size() == 2);
  CHECK(c.clusters[0].members == std::vector<std::size_t>{0, 3, 5});
  CHECK(c.clusters[1].members == std::vector<std::size_t>{1, 4, 6});
  CHECK(c.noise_count() == 1);
  CHECK(code_of([&] { dbscan(space, make_ids(3), {1.0, 2}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { dbscan(space, make_ids(7), {-1.0, 2}); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { dbscan(space, make_ids(7), {1.0, 0}); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("Hamming space neighbours equal the brute-force default") {
  Rng rng(71);
  std::vector<PerceptualHash> hashes;
  const std::uint64_t centre = rng.next();
  for (int i = 0; i < 300; ++i) hashes.push_back({flip_bits(centre, static_cast<int>(rng.below(30)), rng)});
  const HammingSpace space(hashes);
  const FunctionSpace plain(hashes.size(), [&](std::size_t i, std::size_t j) {
    return static_cast<double>(hamming(hashes[i], hashes[j]));
  });
  for (std::size_t i = 0; i < 300; i += 17)
    for (double eps : {0.0, 5.5, 10.0, 20.0}) CHECK(space.neighbors(i, eps) == plain.neighbors(i, eps));
}

TEST_CASE("core distances count the point itself first") {
  const std::vector<double> xs{0, 1, 3, 7};
  const FunctionSpace s(xs.size(), [&](std::size_t i, std::size_t j) { return std::abs(xs[i] - xs[j]); });
  CHECK(core_distances(s, 1) == std::vector<double>{0, 0, 0, 0});
  CHECK(core_distances(s, 2) == std::vector<double>{1, 1, 2, 4});
  CHECK(core_distances(s, 3) == std::vector<double>{3, 2, 3, 6});
  CHECK(core_distances(s, 10) == std::vector<double>{7, 6, 4, 7});
}

TEST_CASE("HDBSCAN spanning tree has the minimum weight") {
  Rng rng(72);
  for (int ms : {1, 3, 6}) {
    const auto pts = blobs(4, 15, 2, 1.5, rng);
    const auto r = hdbscan(EuclideanSpace(pts), make_ids(pts.size()), {5, ms});
    REQUIRE(r.mst.size() == pts.size() - 1);
    double total = 0;
    for (const auto& e : r.mst) total += e.weight;
    CHECK(total == doctest::Approx(kruskal_weight(pts, ms)).epsilon(1e-12));
  }
}

TEST_CASE("HDBSCAN recovers separated blobs") {
  Rng rng(73);
  std::vector<int> truth;
  const auto pts = blobs(6, 40, 4, 1.0, rng, &truth);
  const auto r = hdbscan(EuclideanSpace(pts), make_ids(pts.size()), {10, 5});
  CHECK(r.clustering.clusters.size() == 6);
  CHECK(r.clustering.noise_count() <= pts.size() / 10);
  CHECK(adjusted_rand_index(truth, r.clustering.assignment) >= 0.9);
}

TEST_CASE("condensed tree structure") {
  Rng rng(74);
  const auto pts = blobs(3, 25, 2, 1.0, rng);
  const std::size_t n = pts.size();
  const auto r = hdbscan(EuclideanSpace(pts), make_ids(n), {8, 4});
  std::vector<int> seen(n, 0);
  std::map<std::size_t, std::size_t> parent;
  for (const auto& e : r.condensed_tree) {
    CHECK(e.parent >= n);
    CHECK(e.lambda > 0.0);
    if (e.child < n) {
      ++seen[e.child];
      CHECK(e.child_size == 1);
    } else {
      CHECK(e.child_size >= 8);
      CHECK(e.child > e.parent);
      parent[e.child] = e.parent;
    }
  }
  for (int s : seen) CHECK(s == 1);
  // selected clusters never nest and the root is not among them
  for (std::size_t c : r.selected) {
    CHECK(c != n);
    for (auto up = parent.find(c); up != parent.end(); up = parent.find(up->second))
      CHECK(std::find(r.selected.begin(), r.selected.end(), up->second) == r.selected.end());
  }
  for (const auto& [c, s] : r.stability) CHECK(s >= 0.0);
}

TEST_CASE("HDBSCAN is invariant to scaling every distance") {
  Rng rng(75);
  const auto pts = blobs(4, 20, 3, 2.0, rng);
  const EuclideanSpace base(pts);
  const auto ref = hdbscan(base, make_ids(pts.size()), {5, 5});
  for (double scale : {0.001, 3.0, 1e4}) {
    const FunctionSpace scaled(pts.size(), [&](std::size_t i, std::size_t j) { return scale * base.distance(i, j); });
    const auto r = hdbscan(scaled, make_ids(pts.size()), {5, 5});
    CHECK(r.clustering.assignment == ref.clustering.assignment);
  }
}

TEST_CASE("HDBSCAN small inputs and validation") {
  const std::vector<double> xs{0, 1, 2};
  const FunctionSpace s(3, [&](std::size_t i, std::size_t j) { return std::abs(xs[i] - xs[j]); });
  const auto r = hdbscan(s, make_ids(3), {5, 2});
  CHECK(r.clustering.assignment == std::vector<int>(3, kNoise));
  CHECK(r.core_distances == std::vector<double>{1, 1, 1});
  CHECK(r.clustering.clusters.empty());
  CHECK(code_of([&] { hdbscan(s, make_ids(3), {1, 2}); }) == ErrorCode::InvalidArgument);

  const std::vector<double> two{0, 0.5, 1, 100, 100.5, 101};
  const FunctionSpace t(two.size(), [&](std::size_t i, std::size_t j) { return std::abs(two[i] - two[j]); });
  const auto g = hdbscan(t, make_ids(two.size()), {2, 1});
  CHECK(g.clustering.assignment == std::vector<int>{0, 0, 0, 1, 1, 1});

  // duplicates give zero distances without breaking the tree
  const std::vector<double> dup{0, 0, 0, 0, 50, 50, 50, 50};
  const FunctionSpace u(dup.size(), [&](std::size_t i, std::size_t j) { return std::abs(dup[i] - dup[j]); });
  const auto h = hdbscan(u, make_ids(dup.size()), {3, 2});
  CHECK(h.clustering.assignment == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1});
}

TEST_CASE("medoid minimises summed distance with id tie-break") {
  Rng rng(76);
  const auto pts = blobs(1, 30, 3, 1.0, rng);
  const EuclideanSpace s(pts);
  std::vector<std::size_t> members(30);
  std::iota(members.begin(), members.end(), 0);
  const auto ids = make_ids(30);
  std::size_t best = 0;
  double best_sum = 1e300;
  for (std::size_t i : members) {
    double sum = 0;
    for (std::size_t j : members) sum += euclid(pts[i], pts[j]);
    if (sum < best_sum) {
      best_sum = sum;
      best = i;
    }
  }
  CHECK(medoid(s, members, ids) == best);

  // symmetric pair: both candidates tie, smaller id wins regardless of index
  const FunctionSpace pair(2, [](std::size_t, std::size_t) { return 1.0; });
  const std::vector<std::string> names{"zed", "amy"};
  const std::vector<std::size_t> both{0, 1};
  CHECK(medoid(pair, both, names) == 1);
  CHECK_THROWS_AS(medoid(pair, std::vector<std::size_t>{}, names), Error);
}

TEST_CASE("majority annotation and cluster predictions") {
  Clustering c;
  c.ids = {"a", "b", "c", "d", "e", "f", "g"};
  c.assignment = {0, 0, 0, 1, 1, kNoise, 2};
  c.normalize();
  std::map<std::string, TemplateLabel> labeled{
      {"a", TemplateLabel::of("x")}, {"b", TemplateLabel::of("y")}, {"d", TemplateLabel::of("z")},
      {"e", TemplateLabel::of("z")}, {"f", TemplateLabel::of("x")}};
  annotate_majority(c, labeled);
  REQUIRE(c.clusters[0].assigned.has_value());
  CHECK(*c.clusters[0].assigned == TemplateLabel::of("x"));  // tie x/y -> x
  CHECK(c.clusters[0].support == doctest::Approx(0.5));
  CHECK(*c.clusters[1].assigned == TemplateLabel::of("z"));
  CHECK(c.clusters[1].support == doctest::Approx(1.0));
  CHECK(c.clusters[2].assigned->is_templateless());

  const std::vector<std::string> q{"c", "f", "g", "e"};
  const auto preds = cluster_predict(c, q, "dbscan:majority");
  CHECK(preds[0].label == TemplateLabel::of("x"));
  CHECK(preds[0].score == doctest::Approx(0.5));
  CHECK(preds[1].label.is_templateless());
  CHECK(preds[2].label.is_templateless());
  CHECK(preds[3].label == TemplateLabel::of("z"));
  for (const auto& p : preds) CHECK(p.method == "dbscan:majority");
  const std::vector<std::string> unknown{"nope"};
  CHECK(code_of([&] { cluster_predict(c, unknown, "m"); }) == ErrorCode::UnknownId);
}

TEST_CASE("medoid annotation uses match proportions") {
  Rng rng(77);
  const std::uint64_t cx = rng.next(), cy = rng.next();
  std::vector<PerceptualHash> pts{{cx}, {cx ^ 1}, {cy}, {cy ^ 3}, {rng.next()}};
  Clustering c;
  c.ids = {"0", "1", "2", "3", "4"};
  c.assignment = {0, 0, 1, 1, 2};
  c.normalize();
  std::vector<LabeledHash> labeled{{"l0", {cx ^ 7}, "x"}, {"l1", {~cx}, "x"},
                                   {"l2", {cy ^ 1}, "y"}, {"l3", {cy ^ 0xF}, "y"}, {"l4", {cy ^ 0xFF}, "y"}};
  CHECK(code_of([&] { annotate_medoid(c, pts, labeled, 4); }) == ErrorCode::MissingMedoid);
  compute_medoids(c, HammingSpace(pts));
  CHECK(c.clusters[2].medoid == 4u);
  annotate_medoid(c, pts, labeled, 4);
  CHECK(*c.clusters[0].assigned == TemplateLabel::of("x"));
  CHECK(c.clusters[0].support == doctest::Approx(0.5));
  CHECK(*c.clusters[1].assigned == TemplateLabel::of("y"));
  CHECK(c.clusters[1].support == doctest::Approx(2.0 / 3.0));
  CHECK(c.clusters[2].assigned->is_templateless());
}

TEST_CASE("PCA matches a dense eigendecomposition") {
  Rng rng(78);
  std::vector<FeatureVector> vs;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> v(12);
    for (int j = 0; j < 12; ++j) v[j] = rng.normal() * (12 - j) + 3.0 * j;
    vs.push_back(FeatureVector{FeatureKind::baseline_concat, v});
  }
  const auto p = pca_fit(vs, 4, 1);
  REQUIRE(p.out_dim() == 4);
  CHECK_FALSE(p.shrunk);

  Eigen::MatrixXd x(200, 12);
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 12; ++j) x(i, j) = vs[i].values[j];
  const Eigen::VectorXd mean = x.colwise().mean();
  for (int j = 0; j < 12; ++j) CHECK(p.mean[j] == doctest::Approx(mean[j]));
  x.rowwise() -= mean.transpose();
  const Eigen::MatrixXd cov = x.transpose() * x / 199.0;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  CHECK(p.total_variance == doctest::Approx(cov.trace()));
  for (int k = 0; k < 4; ++k) {
    CHECK(p.eigenvalues[k] == doctest::Approx(es.eigenvalues()[11 - k]).epsilon(1e-6));
    const Eigen::VectorXd ref = es.eigenvectors().col(11 - k);
    CHECK(std::abs(p.components.row(k).dot(ref)) == doctest::Approx(1.0).epsilon(1e-6));
    Eigen::Index arg;
    p.components.row(k).cwiseAbs().maxCoeff(&arg);
    CHECK(p.components(k, arg) > 0);
  }
  CHECK((p.components * p.components.transpose() - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-9);
}

TEST_CASE("PCA of collinear points finds the line and shrinks") {
  std::vector<FeatureVector> vs;
  const std::vector<double> dir{1, 2, 2};  // norm 3
  for (int i = 0; i < 10; ++i) {
    const double t = i - 4.5;
    vs.push_back(FeatureVector{FeatureKind::embedding, {5 + t * dir[0], -1 + t * dir[1], t * dir[2]}});
  }
  const auto p = pca_fit(vs, 2);
  CHECK(p.shrunk);
  REQUIRE(p.out_dim() == 1);
  CHECK(p.components(0, 1) == doctest::Approx(2.0 / 3.0));
  CHECK(p.components(0, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(p.components(0, 0) == doctest::Approx(1.0 / 3.0));
  const auto y = pca_transform(p, vs[9]);
  CHECK(y.kind == FeatureKind::reduced);
  CHECK(y.values[0] == doctest::Approx(4.5 * 3.0));
}

TEST_CASE("full-rank PCA is an isometry on the data") {
  Rng rng(79);
  std::vector<FeatureVector> vs;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> v(5);
    for (auto& x : v) x = rng.normal();
    vs.push_back(FeatureVector{FeatureKind::embedding, v});
  }
  const auto p = pca_fit(vs, 5, 3);
  for (int i = 0; i < 40; i += 5)
    for (int j = 1; j < 40; j += 7) {
      const auto a = pca_transform(p, vs[i]);
      const auto b = pca_transform(p, vs[j]);
      CHECK(euclid(a.values, b.values) == doctest::Approx(euclid(vs[i].values, vs[j].values)).epsilon(1e-8));
    }
  CHECK(code_of([&] { pca_fit(std::span(vs).first(3), 5); }) == ErrorCode::TooFewSamples);
  CHECK(code_of([&] { pca_transform(p, FeatureVector{FeatureKind::embedding, {1, 2}}); }) ==
        ErrorCode::DimensionMismatch);
  auto ragged = vs;
  ragged[3].values.pop_back();
  CHECK(code_of([&] { pca_fit(ragged, 2); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("cosine space distances") {
  const CosineSpace s({{1, 0}, {0, 2}, {-3, 0}});
  CHECK(s.distance(0, 1) == doctest::Approx(1.0));
  CHECK(s.distance(0, 2) == doctest::Approx(2.0));
  CHECK(s.distance(1, 1) == doctest::Approx(0.0));
  CHECK(code_of([] { CosineSpace({{1, 0}, {0, 0}}); }) == ErrorCode::ZeroVector);
  CHECK(code_of([] { CosineSpace({{1, 0}, {0}}); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([] { EuclideanSpace({{1, 0}, {0}}); }) == ErrorCode::DimensionMismatch);
}
