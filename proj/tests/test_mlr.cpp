#include "doctest.h"

#include <cmath>

#include "memeforge/classify.hpp"
#include "memeforge/error.hpp"
#include "memeforge/rng.hpp"

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

struct Data {
  std::vector<FeatureVector> x;
  std::vector<std::string> labels;
  std::vector<int> targets;
};

Data blobs(int classes, int per, int dim, double spread, Rng& rng) {
  Data d;
  for (int k = 0; k < classes; ++k) {
    std::vector<double> centre(dim);
    for (auto& c : centre) c = 2.0 * rng.normal();
    for (int i = 0; i < per; ++i) {
      auto v = centre;
      for (auto& c : v) c += spread * rng.normal();
      d.x.push_back(FeatureVector{FeatureKind::baseline_concat, v});
      d.labels.push_back("c" + std::to_string(k));
      d.targets.push_back(k);
    }
  }
  return d;
}

// Objective computed with plain loops and a numerically direct log-sum-exp.
double ref_objective(const MlrModel& m, const Data& d, double l2) {
  double loss = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    std::vector<double> z(m.classes.size());
    double mx = -1e300;
    for (std::size_t k = 0; k < z.size(); ++k) {
      z[k] = m.bias[static_cast<Eigen::Index>(k)];
      for (std::size_t j = 0; j < d.x[i].dim(); ++j)
        z[k] += m.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) * d.x[i].values[j];
      mx = std::max(mx, z[k]);
    }
    double s = 0;
    for (double v : z) s += std::exp(v - mx);
    loss += mx + std::log(s) - z[static_cast<std::size_t>(d.targets[i])];
  }
  double w2 = 0;
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) w2 += m.weights(r, c) * m.weights(r, c);
  return loss / static_cast<double>(d.x.size()) + 0.5 * l2 * w2;
}

}  // namespace

TEST_CASE("objective matches a direct evaluation") {
  Rng rng(50);
  const auto d = blobs(3, 10, 5, 1.0, rng);
  auto m = init_mlr(d.labels, 5);
  CHECK(mlr_objective(m, d.x, d.targets, 0.0) == doctest::Approx(std::log(3.0)));
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r) {
    m.bias[r] = rng.normal();
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) m.weights(r, c) = rng.normal();
  }
  CHECK(mlr_objective(m, d.x, d.targets, 0.3) == doctest::Approx(ref_objective(m, d, 0.3)).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches central finite differences") {
  Rng rng(51);
  const auto d = blobs(4, 6, 6, 1.5, rng);
  auto m = init_mlr(d.labels, 6);
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r) {
    m.bias[r] = 0.3 * rng.normal();
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) m.weights(r, c) = 0.3 * rng.normal();
  }
  const double l2 = 0.05;
  const auto g = mlr_gradient(m, d.x, d.targets, l2);
  const double h = 1e-6;
  for (Eigen::Index r = 0; r < m.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.weights.cols(); ++c) {
      auto plus = m, minus = m;
      plus.weights(r, c) += h;
      minus.weights(r, c) -= h;
      const double fd = (ref_objective(plus, d, l2) - ref_objective(minus, d, l2)) / (2 * h);
      CHECK(g.weights(r, c) == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
    }
    auto plus = m, minus = m;
    plus.bias[r] += h;
    minus.bias[r] -= h;
    const double fd = (ref_objective(plus, d, l2) - ref_objective(minus, d, l2)) / (2 * h);
    CHECK(g.bias[r] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("training lowers the objective and separates blobs") {
  Rng rng(52);
  const auto d = blobs(5, 30, 10, 0.5, rng);
  MlrHyper hyper;
  hyper.epochs = 40;
  hyper.seed = 3;
  const auto m = fit_mlr(d.x, d.labels, hyper);
  REQUIRE(m.loss_history.size() == 40);
  CHECK(m.loss_history.back() < 0.5 * std::log(5.0));
  CHECK(m.loss_history.back() < m.loss_history.front());
  CHECK(m.classes == std::vector<std::string>{"c0", "c1", "c2", "c3", "c4"});
  int right = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const auto p = predict_mlr(m, d.x[i], "i");
    right += p.label.template_id() == d.labels[i];
    CHECK(p.score > 0.0);
    CHECK(p.score <= 1.0);
    CHECK(p.method == "mlr:baseline");
  }
  CHECK(right >= static_cast<int>(0.95 * static_cast<double>(d.x.size())));

  const auto again = fit_mlr(d.x, d.labels, hyper);
  CHECK(again.weights == m.weights);
  CHECK(again.loss_history == m.loss_history);
}

TEST_CASE("probabilities sum to one and thresholded predictions reject") {
  Rng rng(53);
  const auto d = blobs(3, 20, 4, 0.4, rng);
  const auto m = fit_mlr(d.x, d.labels);
  const auto p = m.probabilities(d.x[0].values);
  CHECK(p.sum() == doctest::Approx(1.0));
  const FeatureVector origin{FeatureKind::baseline_concat, std::vector<double>(4, 0.0)};
  const auto soft = predict_mlr(m, origin, "o");
  CHECK(predict_mlr(m, origin, "o", soft.score + 1e-9).label.is_templateless());
  CHECK(predict_mlr(m, origin, "o", soft.score).label == soft.label);
}

TEST_CASE("argmax ties go to the smaller class name") {
  std::vector<std::string> labels{"b", "a", "c"};
  const auto m = init_mlr(labels, 2);
  const auto p = predict_mlr(m, FeatureVector{FeatureKind::baseline_concat, {1, 1}}, "x");
  CHECK(p.label == TemplateLabel::of("a"));
  CHECK(p.score == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("MLR input validation") {
  std::vector<FeatureVector> x{FeatureVector{FeatureKind::baseline_concat, {1, 2}},
                               FeatureVector{FeatureKind::baseline_concat, {3, 4}}};
  std::vector<std::string> same{"a", "a"};
  CHECK(code_of([&] { fit_mlr(x, same); }) == ErrorCode::SingleClass);
  std::vector<std::string> two{"a", "b"};
  auto ragged = x;
  ragged[1].values.push_back(5);
  CHECK(code_of([&] { fit_mlr(ragged, two); }) == ErrorCode::DimensionMismatch);
  MlrHyper wild;
  wild.lr = 1e300;
  std::vector<FeatureVector> big{FeatureVector{FeatureKind::baseline_concat, {1e200, -1e200}},
                                 FeatureVector{FeatureKind::baseline_concat, {-1e200, 1e200}}};
  CHECK(code_of([&] { fit_mlr(big, two, wild); }) == ErrorCode::NonFiniteLoss);
  const auto m = fit_mlr(x, two);
  CHECK(code_of([&] { predict_mlr(m, FeatureVector{FeatureKind::baseline_concat, {1}}, "q"); }) ==
        ErrorCode::DimensionMismatch);
}
