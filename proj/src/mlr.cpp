#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "memeforge/classify.hpp"
#include "memeforge/error.hpp"
#include "memeforge/rng.hpp"

namespace memeforge {

namespace {

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

void check_inputs(const MlrModel& model, std::span<const FeatureVector> features,
                  std::span<const int> targets) {
  if (features.size() != targets.size()) {
    throw Error(ErrorCode::InvalidArgument, "features and targets differ in length");
  }
  for (const auto& f : features) {
    if (f.dim() != model.dim()) {
      throw Error(ErrorCode::DimensionMismatch, "feature dimension " + std::to_string(f.dim()) +
                                                    ", model expects " + std::to_string(model.dim()));
    }
  }
}

// Accumulates gradient and loss over the given sample indices.
double accumulate(const MlrModel& model, std::span<const FeatureVector> features,
                  std::span<const int> targets, std::span<const std::size_t> batch, double l2,
                  MlrGradient* grad) {
  const auto k = model.weights.rows();
  if (grad != nullptr) {
    grad->weights = Eigen::MatrixXd::Zero(k, model.weights.cols());
    grad->bias = Eigen::VectorXd::Zero(k);
  }
  double loss = 0.0;
  for (std::size_t i : batch) {
    const auto x = as_vector(features[i].values);
    Eigen::VectorXd p = model.probabilities(features[i].values);
    loss -= std::log(std::max(p[targets[i]], std::numeric_limits<double>::min()));
    if (grad != nullptr) {
      p[targets[i]] -= 1.0;
      grad->weights.noalias() += p * x.transpose();
      grad->bias += p;
    }
  }
  const double n = static_cast<double>(batch.size());
  if (grad != nullptr) {
    grad->weights /= n;
    grad->bias /= n;
    grad->weights += l2 * model.weights;
  }
  return loss / n + 0.5 * l2 * model.weights.squaredNorm();
}

}  // namespace

Eigen::VectorXd MlrModel::probabilities(std::span<const double> x) const {
  if (x.size() != dim()) {
    throw Error(ErrorCode::DimensionMismatch,
                "feature dimension " + std::to_string(x.size()) + ", model expects " + std::to_string(dim()));
  }
  return softmax(weights * as_vector(x) + bias);
}

MlrModel init_mlr(std::span<const std::string> labels, std::size_t dim) {
  const std::set<std::string> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw Error(ErrorCode::SingleClass, "MLR needs at least two classes");
  MlrModel model;
  model.classes.assign(distinct.begin(), distinct.end());
  const auto k = static_cast<Eigen::Index>(model.classes.size());
  model.weights = Eigen::MatrixXd::Zero(k, static_cast<Eigen::Index>(dim));
  model.bias = Eigen::VectorXd::Zero(k);
  return model;
}

double mlr_objective(const MlrModel& model, std::span<const FeatureVector> features,
                     std::span<const int> targets, double l2) {
  check_inputs(model, features, targets);
  std::vector<std::size_t> all(features.size());
  std::iota(all.begin(), all.end(), 0);
  return accumulate(model, features, targets, all, l2, nullptr);
}

MlrGradient mlr_gradient(const MlrModel& model, std::span<const FeatureVector> features,
                         std::span<const int> targets, double l2) {
  check_inputs(model, features, targets);
  std::vector<std::size_t> all(features.size());
  std::iota(all.begin(), all.end(), 0);
  MlrGradient g;
  accumulate(model, features, targets, all, l2, &g);
  return g;
}

MlrModel fit_mlr(std::span<const FeatureVector> features, std::span<const std::string> labels,
                 const MlrHyper& hyper) {
  if (features.size() != labels.size()) {
    throw Error(ErrorCode::InvalidArgument, "features and labels differ in length");
  }
  if (features.empty()) throw Error(ErrorCode::EmptyInput, "no training samples");
  if (hyper.epochs < 0 || hyper.batch < 1 || !(hyper.lr > 0.0) || hyper.l2 < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "invalid MLR hyper-parameters");
  }
  MlrModel model = init_mlr(labels, features.front().dim());
  std::vector<int> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    targets[i] = static_cast<int>(
        std::lower_bound(model.classes.begin(), model.classes.end(), labels[i]) - model.classes.begin());
  }
  check_inputs(model, features, targets);

  Rng rng(hyper.seed);
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(hyper.batch);
  MlrGradient grad;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double loss = accumulate(model, features, targets,
                                     std::span<const std::size_t>(order).subspan(start, end - start),
                                     hyper.l2, &grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::NonFiniteLoss, "loss diverged in epoch " + std::to_string(epoch));
      }
      model.weights -= hyper.lr * grad.weights;
      model.bias -= hyper.lr * grad.bias;
    }
    const double full = mlr_objective(model, features, targets, hyper.l2);
    if (!std::isfinite(full)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss diverged in epoch " + std::to_string(epoch));
    }
    model.loss_history.push_back(full);
  }
  return model;
}

Prediction predict_mlr(const MlrModel& model, const FeatureVector& feature, std::string image_id,
                       std::optional<double> reject_threshold) {
  const Eigen::VectorXd p = model.probabilities(feature.values);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < p.size(); ++k) {
    if (p[k] > p[best]) best = k;
  }
  if (reject_threshold && p[best] < *reject_threshold) {
    return Prediction::rejected(std::move(image_id), "mlr:baseline");
  }
  return Prediction{std::move(image_id), TemplateLabel::of(model.classes[best]), p[best],
                    "mlr:baseline"};
}

}  // namespace memeforge
