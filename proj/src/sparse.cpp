#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "memeforge/classify.hpp"
#include "memeforge/error.hpp"

namespace memeforge {

Eigen::VectorXd sparse_column(const GrayImage& img) {
  const GrayImage small = resize_bilinear(img, kSparseSide, kSparseSide);
  Eigen::VectorXd col(kSparseDim);
  for (int i = 0; i < kSparseDim; ++i) col[i] = small.pixels()[i];
  col.array() -= col.mean();
  const double n = col.norm();
  if (n == 0.0) throw Error(ErrorCode::DegenerateImage, "image has no variance at 16x16");
  return col / n;
}

SparseDictionary make_dictionary(std::vector<LabeledColumn> columns, std::optional<int> per_class_cap,
                                 double lambda, double sci_threshold) {
  if (columns.empty()) throw Error(ErrorCode::EmptyInput, "no dictionary columns");
  if (!(lambda >= 0.0) || !(sci_threshold >= 0.0 && sci_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0 and the SCI threshold in [0, 1]");
  }
  const auto dim = columns.front().column.size();
  std::map<std::string, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].column.size() != dim) {
      throw Error(ErrorCode::DimensionMismatch, "column '" + columns[i].id + "' has a different size");
    }
    auto& bucket = by_class[columns[i].template_id];
    if (!per_class_cap || static_cast<int>(bucket.size()) < *per_class_cap) bucket.push_back(i);
  }
  if (by_class.size() < 2) throw Error(ErrorCode::SingleClass, "dictionary needs two classes");

  SparseDictionary dict;
  dict.lambda = lambda;
  dict.sci_threshold = sci_threshold;
  std::size_t n = 0;
  for (const auto& [_, idx] : by_class) n += idx.size();
  dict.atoms.resize(dim, static_cast<Eigen::Index>(n));
  Eigen::Index c = 0;
  for (const auto& [name, idx] : by_class) {
    const int k = static_cast<int>(dict.classes.size());
    dict.classes.push_back(name);
    for (std::size_t i : idx) {
      const double norm = columns[i].column.norm();
      if (norm == 0.0) throw Error(ErrorCode::DegenerateImage, "column '" + columns[i].id + "' is zero");
      dict.atoms.col(c++) = columns[i].column / norm;
      dict.column_class.push_back(k);
      dict.column_ids.push_back(columns[i].id);
    }
  }
  return dict;
}

SparseDictionary build_dictionary(std::span<const LabeledImage> images,
                                  std::optional<int> per_class_cap, double lambda,
                                  double sci_threshold) {
  std::vector<LabeledColumn> columns;
  columns.reserve(images.size());
  for (const auto& img : images) {
    try {
      columns.push_back({img.id, img.template_id, sparse_column(img.image)});
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateImage) {
        throw Error(ErrorCode::DegenerateImage, img.id + ": constant after downsampling");
      }
      throw;
    }
  }
  return make_dictionary(std::move(columns), per_class_cap, lambda, sci_threshold);
}

double l1_objective(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                    double lambda) {
  return 0.5 * (A * x - y).squaredNorm() + lambda * x.lpNorm<1>();
}

namespace {

Eigen::VectorXd soft_threshold(const Eigen::VectorXd& v, double t) {
  return v.unaryExpr([t](double a) { return a > t ? a - t : (a < -t ? a + t : 0.0); });
}

double largest_eigenvalue_ata(const Eigen::MatrixXd& A) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(A.cols()).normalized();
  double estimate = 0.0;
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd w = A.transpose() * (A * v);
    estimate = w.norm();
    if (estimate == 0.0) return 0.0;
    v = w / estimate;
  }
  return estimate;
}

}  // namespace

L1Solution solve_l1(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, double lambda, int max_iter,
                    double tol) {
  if (y.size() != A.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "y has " + std::to_string(y.size()) + " rows, A has " +
                                                  std::to_string(A.rows()));
  }
  if (!A.allFinite() || !y.allFinite() || !std::isfinite(lambda)) {
    throw Error(ErrorCode::NonFinite, "non-finite input to the L1 solver");
  }
  L1Solution sol;
  sol.x = Eigen::VectorXd::Zero(A.cols());
  sol.lipschitz = largest_eigenvalue_ata(A);
  if (sol.lipschitz == 0.0) return sol;  // A = 0: x = 0 is optimal
  const double step = 1.0 / sol.lipschitz;
  const Eigen::MatrixXd At = A.transpose();

  Eigen::VectorXd x = sol.x;
  Eigen::VectorXd x_prev = x;
  Eigen::VectorXd y_k = x;
  double t = 1.0;
  double f_prev = l1_objective(A, y, x, lambda);
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::VectorXd grad = At * (A * y_k - y);
    const Eigen::VectorXd z = soft_threshold(y_k - step * grad, lambda * step);
    const double f_z = l1_objective(A, y, z, lambda);
    if (!std::isfinite(f_z)) throw Error(ErrorCode::NonFinite, "objective became non-finite");
    const bool accepted = f_z <= f_prev;
    x_prev = x;
    if (accepted) x = z;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y_k = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev);
    t = t_next;
    const double f = accepted ? f_z : f_prev;
    sol.objective.push_back(f);
    sol.iterations = it;
    const bool converged = accepted && std::abs(f_prev - f) <= tol * std::max(std::abs(f_prev), 1e-300);
    f_prev = f;
    if (converged) break;
  }
  sol.x = x;
  return sol;
}

double sci(std::span<const double> x, std::span<const int> column_class, int class_count) {
  if (class_count < 2) throw Error(ErrorCode::InvalidArgument, "SCI needs at least two classes");
  if (x.size() != column_class.size()) {
    throw Error(ErrorCode::DimensionMismatch, "coefficients and class partition differ in length");
  }
  std::vector<double> mass(static_cast<std::size_t>(class_count), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = std::abs(x[i]);
    mass[static_cast<std::size_t>(column_class[i])] += a;
    total += a;
  }
  if (total == 0.0) throw Error(ErrorCode::ZeroCoefficients, "all coefficients are zero");
  const double top = *std::max_element(mass.begin(), mass.end());
  const double k = class_count;
  return std::clamp((k * top / total - 1.0) / (k - 1.0), 0.0, 1.0);
}

Prediction predict_sparse(const SparseDictionary& dict, const Eigen::VectorXd& query,
                          std::string image_id) {
  const auto sol = solve_l1(dict.atoms, query, dict.lambda);
  double concentration = 0.0;
  try {
    concentration = sci(std::span<const double>(sol.x.data(), static_cast<std::size_t>(sol.x.size())),
                        dict.column_class, dict.class_count());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroCoefficients) throw;
    return Prediction::rejected(std::move(image_id), "sparse");
  }
  if (concentration < dict.sci_threshold) return Prediction::rejected(std::move(image_id), "sparse");

  int best = 0;
  double best_residual = std::numeric_limits<double>::infinity();
  for (int k = 0; k < dict.class_count(); ++k) {
    Eigen::VectorXd xk = Eigen::VectorXd::Zero(sol.x.size());
    for (Eigen::Index i = 0; i < sol.x.size(); ++i) {
      if (dict.column_class[static_cast<std::size_t>(i)] == k) xk[i] = sol.x[i];
    }
    const double r = (query - dict.atoms * xk).norm();
    if (r < best_residual) {
      best_residual = r;
      best = k;
    }
  }
  return Prediction{std::move(image_id), TemplateLabel::of(dict.classes[best]), concentration, "sparse"};
}

Prediction predict_sparse(const SparseDictionary& dict, const GrayImage& query, std::string image_id) {
  Eigen::VectorXd y;
  try {
    y = sparse_column(query);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateImage) throw;
    return Prediction::rejected(std::move(image_id), "sparse");
  }
  return predict_sparse(dict, y, std::move(image_id));
}

}  // namespace memeforge
