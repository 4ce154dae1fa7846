#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <vector>

namespace wnlab {

// n points in d dimensions, one row per point.
struct PointCloud {
  Eigen::MatrixXd features;
  long n() const { return features.rows(); }
  long d() const { return features.cols(); }
};

// Reserved labeled points with one-hot labels covering every class.
struct TemplateSet {
  std::vector<int> indices;      // distinct, in [0, n)
  Eigen::MatrixXd labels;        // |indices| x m, exactly one-hot rows
  int num_classes = 0;

  void validate(long n) const;
};

struct Edge {
  int neighbor;
  double weight;  // in (0, 1]
};

// kNN adjacency with Gaussian weights w(x,y) = exp(-|x-y|^2 / sigma(x)^2),
// sigma(x) the distance to the k_sigma-th nearest neighbor of x.
struct WeightGraph {
  std::vector<std::vector<Edge>> edges;  // no self-edges, k per node
  Eigen::VectorXd sigma;
  int k = 0;
  long n() const { return static_cast<long>(edges.size()); }
};

// Interpolated label values, one row per point, one column per class.
struct InterpolationField {
  Eigen::MatrixXd u;
};

WeightGraph build_knn_graph(const PointCloud& points, int k, int k_sigma);

// 1/2 sum over stored edges and classes of w(x,y) (u(x) - u(y))^2.
double dirichlet_energy(const WeightGraph& graph, const InterpolationField& field);

InterpolationField harmonic_extend(const WeightGraph& graph, const TemplateSet& tpl);
InterpolationField wnll_interpolate(const WeightGraph& graph, const TemplateSet& tpl);

// Conjugate gradients on a sparse SPD system; returns x with
// |A x - b|_inf <= tol, or throws reporting the final residual.
Eigen::VectorXd solve_sparse_cg(const Eigen::SparseMatrix<double>& a,
                                const Eigen::VectorXd& b, double tol,
                                int max_iter);

// Per-point argmax over classes, ties broken toward the lowest class index.
std::vector<int> predict_labels(const InterpolationField& field);

}  // namespace wnlab
