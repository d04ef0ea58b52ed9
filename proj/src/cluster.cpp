#include "memeforge/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <numeric>

#include "memeforge/error.hpp"
#include "memeforge/rng.hpp"

namespace memeforge {

std::vector<std::size_t> MetricSpace::neighbors(std::size_t i, double eps) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < size(); ++j) {
    if (distance(i, j) <= eps) out.push_back(j);
  }
  return out;
}

HammingSpace::HammingSpace(std::vector<PerceptualHash> hashes) : hashes_(std::move(hashes)) {
  std::vector<HashIndex::Code> codes;
  codes.reserve(hashes_.size());
  for (const auto& h : hashes_) codes.push_back({h.bits});
  index_ = HashIndex(std::move(codes));
}

std::vector<std::size_t> HammingSpace::neighbors(std::size_t i, double eps) const {
  std::vector<std::size_t> out;
  if (eps < 0.0) return out;
  const int r = eps >= 64.0 ? 64 : static_cast<int>(std::floor(eps));
  for (const auto& hit : index_.within({hashes_[i].bits}, r)) out.push_back(hit.id);
  return out;
}

EuclideanSpace::EuclideanSpace(std::vector<std::vector<double>> points) : points_(std::move(points)) {
  for (const auto& p : points_) {
    if (p.size() != points_.front().size()) {
      throw Error(ErrorCode::DimensionMismatch, "points differ in dimension");
    }
  }
}

double EuclideanSpace::distance(std::size_t i, std::size_t j) const {
  double s = 0.0;
  const auto& a = points_[i];
  const auto& b = points_[j];
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

CosineSpace::CosineSpace(const std::vector<std::vector<double>>& points) {
  for (const auto& p : points) {
    if (p.size() != points.front().size()) {
      throw Error(ErrorCode::DimensionMismatch, "points differ in dimension");
    }
    double n = 0.0;
    for (double v : p) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "zero vector in cosine space");
    std::vector<double> u(p);
    for (double& v : u) v /= n;
    unit_.push_back(std::move(u));
  }
}

double CosineSpace::distance(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < unit_[i].size(); ++k) dot += unit_[i][k] * unit_[j][k];
  return 1.0 - std::clamp(dot, -1.0, 1.0);
}

std::size_t Clustering::noise_count() const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), kNoise));
}

void Clustering::normalize() {
  std::map<int, int> renumber;
  for (int c : assignment) {
    if (c != kNoise && !renumber.contains(c)) {
      const int next = static_cast<int>(renumber.size());
      renumber.emplace(c, next);
    }
  }
  clusters.assign(renumber.size(), ClusterInfo{});
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == kNoise) continue;
    assignment[i] = renumber.at(assignment[i]);
    clusters[static_cast<std::size_t>(assignment[i])].members.push_back(i);
  }
}

namespace {

void check_ids(const MetricSpace& space, const std::vector<std::string>& ids) {
  if (ids.size() != space.size()) {
    throw Error(ErrorCode::InvalidArgument, "got " + std::to_string(ids.size()) + " ids for " +
                                                std::to_string(space.size()) + " points");
  }
}

}  // namespace

Clustering dbscan(const MetricSpace& space, std::vector<std::string> ids, const DbscanParams& params) {
  check_ids(space, ids);
  if (!(params.eps >= 0.0) || params.min_pts < 1) {
    throw Error(ErrorCode::InvalidArgument, "DBSCAN needs eps >= 0 and min_pts >= 1");
  }
  constexpr int kUnvisited = -2;
  const std::size_t n = space.size();
  const auto min_pts = static_cast<std::size_t>(params.min_pts);
  std::vector<int> label(n, kUnvisited);
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    const auto seeds = space.neighbors(i, params.eps);
    if (seeds.size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    label[i] = cluster;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      if (label[j] == kNoise) {
        label[j] = cluster;  // border point reached first by this cluster
        continue;
      }
      if (label[j] != kUnvisited) continue;
      label[j] = cluster;
      const auto reach = space.neighbors(j, params.eps);
      if (reach.size() >= min_pts) queue.insert(queue.end(), reach.begin(), reach.end());
    }
    ++cluster;
  }
  Clustering out{std::move(ids), std::move(label), {}};
  out.normalize();
  return out;
}

std::vector<double> core_distances(const MetricSpace& space, int min_samples) {
  if (min_samples < 1) throw Error(ErrorCode::InvalidArgument, "min_samples must be >= 1");
  const std::size_t n = space.size();
  std::vector<double> core(n, 0.0);
  if (n == 0) return core;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(min_samples), n) - 1;
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = space.distance(i, j);
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k), row.end());
    core[i] = row[k];
  }
  return core;
}

namespace {

std::vector<MstEdge> prim_mst(const MetricSpace& space, std::span<const double> core) {
  const std::size_t n = space.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<bool> in_tree(n, false);
  std::vector<double> key(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const double d = mutual_reachability(space, core, current, v);
      if (d < key[v]) {
        key[v] = d;
        parent[v] = current;
      }
      if (next == n || key[v] < key[next]) next = v;
    }
    in_tree[next] = true;
    edges.push_back({parent[next], next, key[next]});
    current = next;
  }
  return edges;
}

struct DendrogramNode {
  std::size_t left;
  std::size_t right;
  double distance;
  std::size_t size;
};

// Nodes n .. 2n-2 of the single-linkage tree, built by merging MST edges in
// ascending weight order.
std::vector<DendrogramNode> single_linkage(std::size_t n, std::vector<MstEdge> mst) {
  std::stable_sort(mst.begin(), mst.end(),
                   [](const MstEdge& a, const MstEdge& b) { return a.weight < b.weight; });
  std::vector<std::size_t> parent(2 * n - 1);
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<std::size_t> size(2 * n - 1, 1);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::vector<DendrogramNode> nodes;
  nodes.reserve(n - 1);
  for (const auto& e : mst) {
    const std::size_t ra = find(e.a);
    const std::size_t rb = find(e.b);
    const std::size_t id = n + nodes.size();
    size[id] = size[ra] + size[rb];
    parent[ra] = id;
    parent[rb] = id;
    nodes.push_back({ra, rb, e.weight, size[id]});
  }
  return nodes;
}

double lambda_of(double distance) {
  return distance > 0.0 ? 1.0 / distance : std::numeric_limits<double>::max();
}

}  // namespace

HdbscanResult hdbscan(const MetricSpace& space, std::vector<std::string> ids,
                      const HdbscanParams& params) {
  check_ids(space, ids);
  if (params.min_cluster_size < 2 || params.min_samples < 1) {
    throw Error(ErrorCode::InvalidArgument, "HDBSCAN needs min_cluster_size >= 2 and min_samples >= 1");
  }
  const std::size_t n = space.size();
  const auto mcs = static_cast<std::size_t>(params.min_cluster_size);
  HdbscanResult result;
  result.clustering.ids = std::move(ids);
  result.clustering.assignment.assign(n, kNoise);
  if (n < mcs || n < 2) {
    result.core_distances = core_distances(space, params.min_samples);
    return result;
  }

  result.core_distances = core_distances(space, params.min_samples);
  result.mst = prim_mst(space, result.core_distances);
  const auto tree = single_linkage(n, result.mst);
  auto node = [&](std::size_t id) -> const DendrogramNode& { return tree[id - n]; };
  auto node_size = [&](std::size_t id) { return id < n ? std::size_t{1} : node(id).size; };
  auto leaves = [&](std::size_t id) {
    std::vector<std::size_t> out;
    std::vector<std::size_t> stack{id};
    while (!stack.empty()) {
      const std::size_t x = stack.back();
      stack.pop_back();
      if (x < n) {
        out.push_back(x);
      } else {
        stack.push_back(node(x).left);
        stack.push_back(node(x).right);
      }
    }
    return out;
  };

  // Condense the hierarchy top-down.
  const std::size_t root = 2 * n - 2;
  std::vector<std::size_t> relabel(2 * n - 1, 0);
  relabel[root] = n;
  std::size_t next_label = n + 1;
  auto& condensed = result.condensed_tree;
  std::deque<std::size_t> pending{root};
  while (!pending.empty()) {
    const std::size_t id = pending.front();
    pending.pop_front();
    const DendrogramNode& nd = node(id);
    const double lambda = lambda_of(nd.distance);
    const std::size_t parent_label = relabel[id];
    const std::size_t ls = node_size(nd.left);
    const std::size_t rs = node_size(nd.right);
    auto fall_out = [&](std::size_t child) {
      for (std::size_t p : leaves(child)) condensed.push_back({parent_label, p, lambda, 1});
    };
    auto carry_on = [&](std::size_t child, std::size_t label) {
      relabel[child] = label;
      if (child >= n) pending.push_back(child);
    };
    if (ls >= mcs && rs >= mcs) {
      for (std::size_t child : {nd.left, nd.right}) {
        const std::size_t label = next_label++;
        condensed.push_back({parent_label, label, lambda, node_size(child)});
        carry_on(child, label);
      }
    } else if (ls < mcs && rs < mcs) {
      fall_out(nd.left);
      fall_out(nd.right);
    } else if (ls < mcs) {
      fall_out(nd.left);
      carry_on(nd.right, parent_label);
    } else {
      fall_out(nd.right);
      carry_on(nd.left, parent_label);
    }
  }

  // Stability of each condensed cluster.
  std::map<std::size_t, double> birth{{n, 0.0}};
  std::map<std::size_t, std::vector<std::size_t>> children;
  for (const auto& e : condensed) {
    if (e.child >= n) {
      birth[e.child] = e.lambda;
      children[e.parent].push_back(e.child);
    }
  }
  auto& stability = result.stability;
  for (const auto& [c, _] : birth) stability[c] = 0.0;
  for (const auto& e : condensed) {
    stability[e.parent] += (e.lambda - birth.at(e.parent)) * static_cast<double>(e.child_size);
  }

  // Excess of mass, bottom-up; children always carry larger labels.
  std::map<std::size_t, bool> is_cluster;
  std::map<std::size_t, double> subtree = stability;
  for (auto it = stability.rbegin(); it != stability.rend(); ++it) {
    const std::size_t c = it->first;
    if (c == n) continue;
    double child_sum = 0.0;
    for (std::size_t ch : children[c]) child_sum += subtree[ch];
    if (child_sum > stability.at(c)) {
      is_cluster[c] = false;
      subtree[c] = child_sum;
    } else {
      is_cluster[c] = true;
      std::vector<std::size_t> stack(children[c].begin(), children[c].end());
      while (!stack.empty()) {
        const std::size_t d = stack.back();
        stack.pop_back();
        is_cluster[d] = false;
        stack.insert(stack.end(), children[d].begin(), children[d].end());
      }
    }
  }
  for (const auto& [c, keep] : is_cluster) {
    if (keep) result.selected.push_back(c);
  }

  // A point belongs to the nearest selected ancestor of the cluster it left.
  std::map<std::size_t, std::size_t> parent_of;
  for (const auto& e : condensed) parent_of[e.child] = e.parent;
  std::map<std::size_t, int> selected_id;
  for (std::size_t c : result.selected) selected_id.emplace(c, static_cast<int>(selected_id.size()));
  for (std::size_t p = 0; p < n; ++p) {
    auto up = parent_of.find(p);
    while (up != parent_of.end()) {
      const std::size_t c = up->second;
      if (const auto s = selected_id.find(c); s != selected_id.end()) {
        result.clustering.assignment[p] = s->second;
        break;
      }
      up = parent_of.find(c);
    }
  }
  result.clustering.normalize();
  return result;
}

std::size_t medoid(const MetricSpace& space, std::span<const std::size_t> members,
                   std::span<const std::string> ids) {
  if (members.empty()) throw Error(ErrorCode::InvalidArgument, "medoid of an empty cluster");
  std::size_t best = members.front();
  double best_sum = std::numeric_limits<double>::infinity();
  for (std::size_t a : members) {
    double sum = 0.0;
    for (std::size_t b : members) sum += space.distance(a, b);
    if (sum < best_sum || (sum == best_sum && ids[a] < ids[best])) {
      best = a;
      best_sum = sum;
    }
  }
  return best;
}

void compute_medoids(Clustering& clustering, const MetricSpace& space) {
  for (auto& c : clustering.clusters) c.medoid = medoid(space, c.members, clustering.ids);
}

void annotate_majority(Clustering& clustering, const std::map<std::string, TemplateLabel>& labeled) {
  for (auto& c : clustering.clusters) {
    std::map<std::string, int> counts;
    int total = 0;
    for (std::size_t m : c.members) {
      const auto it = labeled.find(clustering.ids[m]);
      if (it == labeled.end() || it->second.is_templateless()) continue;
      ++counts[it->second.template_id()];
      ++total;
    }
    if (total == 0) {
      c.assigned = TemplateLabel::templateless();
      c.support = 0.0;
      continue;
    }
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    c.assigned = TemplateLabel::of(best->first);
    c.support = static_cast<double>(best->second) / total;
  }
}

void annotate_medoid(Clustering& clustering, std::span<const PerceptualHash> point_hashes,
                     std::span<const LabeledHash> labeled, int delta) {
  if (point_hashes.size() != clustering.ids.size()) {
    throw Error(ErrorCode::InvalidArgument, "one hash per clustered point is required");
  }
  std::map<std::string, std::vector<PerceptualHash>> by_template;
  for (const auto& l : labeled) by_template[l.template_id].push_back(l.hash);
  for (std::size_t ci = 0; ci < clustering.clusters.size(); ++ci) {
    auto& c = clustering.clusters[ci];
    if (!c.medoid) throw Error(ErrorCode::MissingMedoid, "cluster " + std::to_string(ci));
    const PerceptualHash h = point_hashes[*c.medoid];
    const std::string* best = nullptr;
    double best_p = 0.0;
    for (const auto& [tmpl, hashes] : by_template) {
      std::size_t hits = 0;
      for (const auto& other : hashes) hits += hamming(h, other) <= delta ? 1 : 0;
      const double p = static_cast<double>(hits) / static_cast<double>(hashes.size());
      if (p > best_p) {
        best_p = p;
        best = &tmpl;
      }
    }
    if (best == nullptr) {
      c.assigned = TemplateLabel::templateless();
      c.support = 0.0;
    } else {
      c.assigned = TemplateLabel::of(*best);
      c.support = best_p;
    }
  }
}

std::vector<Prediction> cluster_predict(const Clustering& clustering,
                                        std::span<const std::string> query_ids,
                                        const std::string& method) {
  std::map<std::string_view, std::size_t> position;
  for (std::size_t i = 0; i < clustering.ids.size(); ++i) position.emplace(clustering.ids[i], i);
  std::vector<Prediction> out;
  out.reserve(query_ids.size());
  for (const auto& q : query_ids) {
    const auto it = position.find(q);
    if (it == position.end()) throw Error(ErrorCode::UnknownId, q);
    const int c = clustering.assignment[it->second];
    if (c == kNoise) {
      out.push_back(Prediction::rejected(q, method));
      continue;
    }
    const auto& info = clustering.clusters[static_cast<std::size_t>(c)];
    if (!info.assigned || info.assigned->is_templateless()) {
      out.push_back(Prediction::rejected(q, method));
      continue;
    }
    out.push_back(Prediction{q, *info.assigned, info.support, method});
  }
  return out;
}

}  // namespace memeforge

namespace memeforge {

PcaProjection pca_fit(std::span<const FeatureVector> vectors, int out_dim, std::uint64_t seed) {
  if (out_dim < 1) throw Error(ErrorCode::InvalidArgument, "out_dim must be >= 1");
  const std::size_t n = vectors.size();
  if (n < static_cast<std::size_t>(out_dim) || n < 2) {
    throw Error(ErrorCode::TooFewSamples, "PCA needs at least " + std::to_string(std::max(out_dim, 2)) +
                                              " samples, got " + std::to_string(n));
  }
  const std::size_t dim = vectors.front().values.size();
  for (const auto& v : vectors) {
    if (v.values.size() != dim) throw Error(ErrorCode::DimensionMismatch, "PCA inputs differ in dimension");
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i].values[j];
    }
  }
  PcaProjection out;
  out.requested_dim = out_dim;
  out.mean = x.colwise().mean().transpose();
  x.rowwise() -= out.mean.transpose();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  out.total_variance = cov.trace();

  const auto k = static_cast<Eigen::Index>(std::min<std::size_t>(static_cast<std::size_t>(out_dim), dim));
  Rng rng(seed);
  Eigen::MatrixXd q(static_cast<Eigen::Index>(dim), k);
  for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(q.rows(), k);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::MatrixXd z = cov * q;
    Eigen::MatrixXd next =
        Eigen::HouseholderQR<Eigen::MatrixXd>(z).householderQ() * Eigen::MatrixXd::Identity(z.rows(), k);
    // Converged when the spanned subspace stops moving.
    const double change = (next - q * (q.transpose() * next)).norm();
    q = std::move(next);
    if (change < 1e-9) break;
  }
  const Eigen::MatrixXd small = q.transpose() * cov * q;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(small);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return eig.eigenvalues()(a) > eig.eigenvalues()(b);
  });
  const double floor = 1e-10 * std::max(out.total_variance, std::numeric_limits<double>::min());
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> values;
  for (Eigen::Index idx : order) {
    const double lambda = eig.eigenvalues()(idx);
    if (!(lambda > floor)) continue;
    Eigen::VectorXd c = q * eig.eigenvectors().col(idx);
    c.normalize();
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c(arg) < 0) c = -c;
    rows.push_back(std::move(c));
    values.push_back(lambda);
  }
  out.components.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  out.eigenvalues.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.components.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    out.eigenvalues(static_cast<Eigen::Index>(i)) = values[i];
  }
  out.shrunk = static_cast<int>(rows.size()) < out_dim;
  if (out.shrunk) {
    std::fprintf(stderr, "warning: PCA rank %zu is below requested dimension %d\n", rows.size(), out_dim);
  }
  return out;
}

FeatureVector pca_transform(const PcaProjection& projection, const FeatureVector& v) {
  if (static_cast<Eigen::Index>(v.values.size()) != projection.mean.size()) {
    throw Error(ErrorCode::DimensionMismatch, "vector dimension " + std::to_string(v.values.size()) +
                                                  " does not match projection");
  }
  Eigen::VectorXd x(projection.mean.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = v.values[static_cast<std::size_t>(i)];
  const Eigen::VectorXd y = projection.components * (x - projection.mean);
  FeatureVector out{FeatureKind::reduced, {}};
  out.values.assign(y.data(), y.data() + y.size());
  return out;
}

}  // namespace memeforge
