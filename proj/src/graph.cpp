#include "wnlab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>

namespace wnlab {

namespace {
constexpr double kSigmaFloor = 1e-12;
constexpr double kResidualTol = 1e-8;
constexpr double kCgTol = 1e-10;
}  // namespace

void TemplateSet::validate(long n) const {
  if (indices.empty()) throw std::invalid_argument("TemplateSet: empty template");
  if (num_classes < 1) throw std::invalid_argument("TemplateSet: num_classes must be >= 1");
  if (labels.rows() != static_cast<long>(indices.size()) || labels.cols() != num_classes)
    throw std::invalid_argument("TemplateSet: label matrix is " + std::to_string(labels.rows()) + "x" + std::to_string(labels.cols()) + ", expected " + std::to_string(indices.size()) + "x" + std::to_string(num_classes));
  std::vector<char> seen(n, 0);
  std::vector<char> class_seen(num_classes, 0);
  for (size_t i = 0; i < indices.size(); ++i) {
    int idx = indices[i];
    if (idx < 0 || idx >= n)
      throw std::invalid_argument("TemplateSet: index " + std::to_string(idx) + " out of range [0," + std::to_string(n) + ")");
    if (seen[idx]) throw std::invalid_argument("TemplateSet: duplicate index " + std::to_string(idx));
    seen[idx] = 1;
    int ones = 0, hot = -1;
    for (int c = 0; c < num_classes; ++c) {
      double v = labels(static_cast<long>(i), c);
      if (v == 1.0) {
        ++ones;
        hot = c;
      } else if (v != 0.0) {
        throw std::invalid_argument("TemplateSet: row " + std::to_string(i) + " is not one-hot");
      }
    }
    if (ones != 1) throw std::invalid_argument("TemplateSet: row " + std::to_string(i) + " is not one-hot");
    class_seen[hot] = 1;
  }
  for (int c = 0; c < num_classes; ++c)
    if (!class_seen[c])
      throw std::invalid_argument("TemplateSet: class " + std::to_string(c) + " has no template example");
}

WeightGraph build_knn_graph(const PointCloud& points, int k, int k_sigma) {
  long n = points.n();
  if (n < 2) throw std::invalid_argument("build_knn_graph: need at least 2 points, got " + std::to_string(n));
  if (k < 1 || k >= n)
    throw std::invalid_argument("build_knn_graph: k=" + std::to_string(k) + " must be in [1," + std::to_string(n) + ")");
  if (k_sigma < 1 || k_sigma > k)
    throw std::invalid_argument("build_knn_graph: k_sigma=" + std::to_string(k_sigma) + " must be in [1," + std::to_string(k) + "]");
  if (!points.features.allFinite())
    throw std::invalid_argument("build_knn_graph: non-finite feature entries");

  WeightGraph g;
  g.k = k;
  g.edges.resize(n);
  g.sigma.resize(n);
  std::vector<std::pair<double, int>> cand;
  cand.reserve(n - 1);
  for (long i = 0; i < n; ++i) {
    cand.clear();
    for (long j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = (points.features.row(i) - points.features.row(j)).squaredNorm();
      cand.emplace_back(d2, static_cast<int>(j));
    }
    // ties at equal distance break toward the lower index
    std::stable_sort(cand.begin(), cand.end());
    double sigma = std::max(std::sqrt(cand[k_sigma - 1].first), kSigmaFloor);
    g.sigma[i] = sigma;
    g.edges[i].reserve(k);
    for (int e = 0; e < k; ++e)
      g.edges[i].push_back({cand[e].second, std::exp(-cand[e].first / (sigma * sigma))});
  }
  return g;
}

double dirichlet_energy(const WeightGraph& graph, const InterpolationField& field) {
  if (field.u.rows() != graph.n())
    throw std::invalid_argument("dirichlet_energy: field has " + std::to_string(field.u.rows()) + " rows, graph has " + std::to_string(graph.n()) + " nodes");
  double e = 0.0;
  for (long x = 0; x < graph.n(); ++x)
    for (const Edge& ed : graph.edges[x])
      e += ed.weight * (field.u.row(x) - field.u.row(ed.neighbor)).squaredNorm();
  return 0.5 * e;
}

namespace {

// Shared assembly and solve for the Euler-Lagrange and WNLL systems.
// boost = 0 gives the harmonic extension; boost = |X|/|X^te| - 1 gives WNLL.
InterpolationField solve_interpolation(const WeightGraph& graph, const TemplateSet& tpl,
                                       double boost) {
  long n = graph.n();
  tpl.validate(n);
  int m = tpl.num_classes;

  std::vector<int> tpl_row(n, -1);
  for (size_t i = 0; i < tpl.indices.size(); ++i) tpl_row[tpl.indices[i]] = static_cast<int>(i);

  // Symmetrized weights w(x,y) + w(y,x) over the union of directed edges.
  std::vector<std::vector<Edge>> sym(n);
  {
    std::vector<std::map<int, double>> acc(n);
    for (long x = 0; x < n; ++x)
      for (const Edge& ed : graph.edges[x]) {
        acc[x][ed.neighbor] += ed.weight;
        acc[ed.neighbor][static_cast<int>(x)] += ed.weight;
      }
    for (long x = 0; x < n; ++x) {
      sym[x].reserve(acc[x].size());
      for (const auto& [y, w] : acc[x]) sym[x].push_back({y, w});
    }
  }

  // Every unlabeled node must reach a template node.
  {
    std::vector<char> reached(n, 0);
    std::deque<int> queue;
    for (int idx : tpl.indices) {
      reached[idx] = 1;
      queue.push_back(idx);
    }
    while (!queue.empty()) {
      int x = queue.front();
      queue.pop_front();
      for (const Edge& ed : sym[x])
        if (!reached[ed.neighbor]) {
          reached[ed.neighbor] = 1;
          queue.push_back(ed.neighbor);
        }
    }
    for (long x = 0; x < n; ++x)
      if (!reached[x])
        throw std::runtime_error("interpolation: node " + std::to_string(x) + " has no path to any template node (singular system)");
  }

  InterpolationField field;
  field.u.setZero(n, m);
  for (size_t i = 0; i < tpl.indices.size(); ++i) field.u.row(tpl.indices[i]) = tpl.labels.row(static_cast<long>(i));

  std::vector<int> unlabeled;
  std::vector<int> compact(n, -1);
  for (long x = 0; x < n; ++x)
    if (tpl_row[x] < 0) {
      compact[x] = static_cast<int>(unlabeled.size());
      unlabeled.push_back(static_cast<int>(x));
    }
  long nu = static_cast<long>(unlabeled.size());
  if (nu == 0) return field;  // boundary-only system

  // Directed template->unlabeled weights for the boost term.
  std::vector<std::vector<Edge>> into(n);
  if (boost != 0.0) {
    for (int ti : tpl.indices)
      for (const Edge& ed : graph.edges[ti])
        if (tpl_row[ed.neighbor] < 0) into[ed.neighbor].push_back({ti, ed.weight});
  }

  std::vector<Eigen::Triplet<double>> trips;
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nu, m);
  for (long r = 0; r < nu; ++r) {
    int x = unlabeled[r];
    double diag = 0.0;
    for (const Edge& ed : sym[x]) {
      diag += ed.weight;
      if (tpl_row[ed.neighbor] >= 0)
        rhs.row(r) += ed.weight * tpl.labels.row(tpl_row[ed.neighbor]);
      else
        trips.emplace_back(static_cast<int>(r), compact[ed.neighbor], -ed.weight);
    }
    for (const Edge& ed : into[x]) {
      diag += boost * ed.weight;
      rhs.row(r) += boost * ed.weight * tpl.labels.row(tpl_row[ed.neighbor]);
    }
    trips.emplace_back(static_cast<int>(r), static_cast<int>(r), diag);
  }
  Eigen::SparseMatrix<double> a(nu, nu);
  a.setFromTriplets(trips.begin(), trips.end());

  int max_iter = static_cast<int>(10 * n);
  for (int c = 0; c < m; ++c) {
    Eigen::VectorXd sol = solve_sparse_cg(a, rhs.col(c), kCgTol, max_iter);
    for (long r = 0; r < nu; ++r) field.u(unlabeled[r], c) = sol[r];
  }

  // Residual audit of the full system before the field leaves the module.
  double res = 0.0;
  for (long r = 0; r < nu; ++r) {
    int x = unlabeled[r];
    Eigen::RowVectorXd lhs = Eigen::RowVectorXd::Zero(m);
    for (const Edge& ed : sym[x]) lhs += ed.weight * (field.u.row(x) - field.u.row(ed.neighbor));
    for (const Edge& ed : into[x]) lhs += boost * ed.weight * (field.u.row(x) - field.u.row(ed.neighbor));
    res = std::max(res, lhs.cwiseAbs().maxCoeff());
  }
  if (res > kResidualTol)
    throw std::runtime_error("interpolation: residual " + std::to_string(res) + " exceeds tolerance");
  return field;
}

}  // namespace

InterpolationField harmonic_extend(const WeightGraph& graph, const TemplateSet& tpl) {
  return solve_interpolation(graph, tpl, 0.0);
}

InterpolationField wnll_interpolate(const WeightGraph& graph, const TemplateSet& tpl) {
  double boost = static_cast<double>(graph.n()) / static_cast<double>(tpl.indices.size()) - 1.0;
  return solve_interpolation(graph, tpl, boost);
}

Eigen::VectorXd solve_sparse_cg(const Eigen::SparseMatrix<double>& a,
                                const Eigen::VectorXd& b, double tol, int max_iter) {
  if (a.rows() != a.cols() || a.rows() != b.size())
    throw std::invalid_argument("solve_sparse_cg: dimension mismatch");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  if (r.lpNorm<Eigen::Infinity>() <= tol) return x;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd ap = a * p;
    double pap = p.dot(ap);
    if (pap <= 0.0)
      throw std::runtime_error("solve_sparse_cg: matrix is not positive definite (p'Ap = " + std::to_string(pap) + ")");
    double alpha = rs / pap;
    x += alpha * p;
    r -= alpha * ap;
    if (r.lpNorm<Eigen::Infinity>() <= tol) {
      // recompute the true residual; accumulated r can drift
      Eigen::VectorXd true_r = b - a * x;
      if (true_r.lpNorm<Eigen::Infinity>() <= tol) return x;
      r = true_r;
      rs = r.squaredNorm();
      p = r;
      continue;
    }
    double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  double final_res = (b - a * x).lpNorm<Eigen::Infinity>();
  if (final_res <= tol) return x;
  throw std::runtime_error("solve_sparse_cg: no convergence after " + std::to_string(max_iter) + " iterations, residual " + std::to_string(final_res));
}

std::vector<int> predict_labels(const InterpolationField& field) {
  std::vector<int> out(field.u.rows());
  for (long i = 0; i < field.u.rows(); ++i) {
    int best = 0;
    for (long c = 1; c < field.u.cols(); ++c)
      if (field.u(i, c) > field.u(i, best)) best = static_cast<int>(c);
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace wnlab
