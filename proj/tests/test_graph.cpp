#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "wnlab/graph.hpp"
#include "wnlab/rng.hpp"

using namespace wnlab;

namespace {

Eigen::MatrixXd random_cloud(long n, long d, Rng& rng) {
  Eigen::MatrixXd x(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) x(i, j) = rng.uniform();
  return x;
}

// Independent dense assembly of the interpolation system directly from the
// stored graph: for every non-template x,
//   sum_y (w(x,y) + w(y,x)) (u(x) - u(y))
//     + boost * sum_{y in tpl} w(y,x) (u(x) - u(y)) = 0,
// solved by partial-pivot LU.
Eigen::MatrixXd dense_oracle(const WeightGraph& graph, const TemplateSet& tpl,
                             double boost) {
  long n = graph.n();
  int m = tpl.num_classes;
  std::vector<char> is_tpl(n, 0);
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(n, m);
  for (size_t t = 0; t < tpl.indices.size(); ++t) {
    is_tpl[tpl.indices[t]] = 1;
    u.row(tpl.indices[t]) = tpl.labels.row(t);
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (long i = 0; i < n; ++i)
    for (const Edge& e : graph.edges[i]) w(i, e.neighbor) = e.weight;

  std::vector<long> unknown;
  for (long i = 0; i < n; ++i)
    if (!is_tpl[i]) unknown.push_back(i);
  std::vector<long> pos(n, -1);
  for (size_t q = 0; q < unknown.size(); ++q) pos[unknown[q]] = static_cast<long>(q);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(unknown.size(), unknown.size());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(unknown.size(), m);
  for (long x : unknown) {
    long r = pos[x];
    for (long y = 0; y < n; ++y) {
      if (y == x) continue;
      double wxy = w(x, y) + w(y, x);
      if (is_tpl[y]) wxy += boost * w(y, x);
      if (wxy == 0.0) continue;
      a(r, r) += wxy;
      if (is_tpl[y])
        b.row(r) += wxy * u.row(y);
      else
        a(r, pos[y]) -= wxy;
    }
  }
  Eigen::MatrixXd sol = a.partialPivLu().solve(b);
  for (long x : unknown) u.row(x) = sol.row(pos[x]);
  return u;
}

PointCloud fixed_cloud() {
  Eigen::MatrixXd x(6, 2);
  x << 0.10, 0.20,
       0.15, 0.25,
       0.90, 0.80,
       0.85, 0.75,
       0.50, 0.55,
       0.20, 0.90;
  return {x};
}

TemplateSet fixed_template() {
  TemplateSet tpl;
  tpl.indices = {0, 2};
  tpl.labels = Eigen::MatrixXd::Zero(2, 2);
  tpl.labels(0, 0) = 1.0;
  tpl.labels(1, 1) = 1.0;
  tpl.num_classes = 2;
  return tpl;
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("knn graph matches a brute-force oracle") {
  Rng rng(21);
  PointCloud cloud{random_cloud(40, 3, rng)};
  int k = 5, k_sigma = 4;
  WeightGraph g = build_knn_graph(cloud, k, k_sigma);
  REQUIRE(g.n() == 40);
  for (long i = 0; i < 40; ++i) {
    // brute force: sort all others by (distance, index)
    std::vector<std::pair<double, long>> cand;
    for (long j = 0; j < 40; ++j)
      if (j != i) cand.push_back({(cloud.features.row(i) - cloud.features.row(j)).norm(), j});
    std::stable_sort(cand.begin(), cand.end());
    double sigma = std::max(cand[k_sigma - 1].first, 1e-12);
    REQUIRE(g.edges[i].size() == static_cast<size_t>(k));
    CHECK(g.sigma[i] == doctest::Approx(sigma).epsilon(1e-14));
    for (int q = 0; q < k; ++q) {
      CHECK(g.edges[i][q].neighbor == cand[q].second);
      double expect = std::exp(-cand[q].first * cand[q].first / (sigma * sigma));
      CHECK(g.edges[i][q].weight == doctest::Approx(expect).epsilon(1e-13));
    }
  }
}

TEST_CASE("distance ties resolve toward the lower index") {
  Eigen::MatrixXd x(4, 1);
  x << 0.0, 1.0, -1.0, 5.0;  // points 1 and 2 equidistant from 0
  WeightGraph g = build_knn_graph({x}, 2, 2);
  CHECK(g.edges[0][0].neighbor == 1);
  CHECK(g.edges[0][1].neighbor == 2);
}

TEST_CASE("harmonic extension matches the frozen oracle on the fixed cloud") {
  // derived by an independent dense solve of the balance equations
  WeightGraph g = build_knn_graph(fixed_cloud(), 3, 3);
  InterpolationField f = harmonic_extend(g, fixed_template());
  Eigen::MatrixXd expect(6, 2);
  expect << 1, 0,
      0.7600554100898238, 0.23994458991017634,
      0, 1,
      0.23700265525025524, 0.76299734474974501,
      0.47837209765623773, 0.52162790234376266,
      0.4940420208487597, 0.50595797915124074;
  CHECK((f.u - expect).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("weighted interpolation matches the frozen oracle on the fixed cloud") {
  // derived by an independent dense solve with boost |X|/|X^te| - 1 = 2
  WeightGraph g = build_knn_graph(fixed_cloud(), 3, 3);
  InterpolationField f = wnll_interpolate(g, fixed_template());
  Eigen::MatrixXd expect(6, 2);
  expect << 1, 0,
      0.84301679516503703, 0.15698320483496275,
      0, 1,
      0.1561018032051163, 0.84389819679488365,
      0.47368420351118434, 0.52631579648881543,
      0.4955479762970752, 0.50445202370292475;
  CHECK((f.u - expect).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("iterative solver agrees with the dense oracle on random clouds") {
  for (uint64_t seed : {31u, 32u, 33u}) {
    Rng rng(seed);
    long n = 50;
    PointCloud cloud{random_cloud(n, 4, rng)};
    WeightGraph g = build_knn_graph(cloud, 6, 5);
    TemplateSet tpl;
    tpl.indices = {0, 1, 2, 3, 4, 5};
    tpl.num_classes = 3;
    tpl.labels = Eigen::MatrixXd::Zero(6, 3);
    for (int i = 0; i < 6; ++i) tpl.labels(i, i % 3) = 1.0;

    double boost = static_cast<double>(n) / 6.0 - 1.0;
    InterpolationField fh = harmonic_extend(g, tpl);
    CHECK((fh.u - dense_oracle(g, tpl, 0.0)).cwiseAbs().maxCoeff() <= 1e-8);
    InterpolationField fw = wnll_interpolate(g, tpl);
    CHECK((fw.u - dense_oracle(g, tpl, boost)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("interpolation invariants") {
  Rng rng(41);
  PointCloud cloud{random_cloud(60, 3, rng)};
  WeightGraph g = build_knn_graph(cloud, 7, 6);
  TemplateSet tpl;
  tpl.indices = {3, 17, 42, 55};
  tpl.num_classes = 2;
  tpl.labels = Eigen::MatrixXd::Zero(4, 2);
  tpl.labels(0, 0) = tpl.labels(1, 1) = tpl.labels(2, 0) = tpl.labels(3, 1) = 1.0;

  for (const InterpolationField& f : {harmonic_extend(g, tpl), wnll_interpolate(g, tpl)}) {
    // template rows reproduced exactly
    CHECK(f.u(3, 0) == 1.0);
    CHECK(f.u(17, 1) == 1.0);
    CHECK(f.u(42, 1) == 0.0);
    // maximum principle: values within the template range
    CHECK(f.u.minCoeff() >= -1e-9);
    CHECK(f.u.maxCoeff() <= 1.0 + 1e-9);
    // full class coverage means the constant row-sum is interpolated too
    CHECK((f.u.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("harmonic extension minimizes the symmetrized energy") {
  Rng rng(51);
  PointCloud cloud{random_cloud(30, 2, rng)};
  WeightGraph g = build_knn_graph(cloud, 5, 4);
  TemplateSet tpl;
  tpl.indices = {0, 29};
  tpl.num_classes = 2;
  tpl.labels = Eigen::MatrixXd::Identity(2, 2);
  InterpolationField f = harmonic_extend(g, tpl);
  double base = dirichlet_energy(g, f);
  for (int trial = 0; trial < 5; ++trial) {
    InterpolationField pert = f;
    for (long i = 0; i < 30; ++i) {
      if (i == 0 || i == 29) continue;  // keep the template rows
      pert.u(i, 0) += rng.uniform(-0.05, 0.05);
      pert.u(i, 1) += rng.uniform(-0.05, 0.05);
    }
    CHECK(dirichlet_energy(g, pert) >= base - 1e-12);
  }
}

TEST_CASE("dirichlet energy of a constant field is zero") {
  Rng rng(52);
  PointCloud cloud{random_cloud(20, 2, rng)};
  WeightGraph g = build_knn_graph(cloud, 4, 3);
  InterpolationField f{Eigen::MatrixXd::Ones(20, 2)};
  CHECK(dirichlet_energy(g, f) == 0.0);
}

TEST_CASE("nodes unreachable from every template are rejected") {
  // two tight, far-apart clusters; k = 2 keeps all edges inside a cluster
  Eigen::MatrixXd x(6, 2);
  x << 0.0, 0.0, 0.01, 0.0, 0.0, 0.01, 100.0, 100.0, 100.01, 100.0, 100.0, 100.01;
  WeightGraph g = build_knn_graph({x}, 2, 2);
  TemplateSet tpl;
  tpl.indices = {0, 1};
  tpl.num_classes = 2;
  tpl.labels = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(harmonic_extend(g, tpl), std::runtime_error);
}

TEST_CASE("template validation catches malformed inputs") {
  TemplateSet tpl;
  tpl.indices = {0, 0};
  tpl.num_classes = 2;
  tpl.labels = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(tpl.validate(6), std::invalid_argument);  // duplicate index
  tpl.indices = {0, 1};
  tpl.labels(0, 0) = 0.5;
  CHECK_THROWS_AS(tpl.validate(6), std::invalid_argument);  // not one-hot
  tpl.labels = Eigen::MatrixXd::Zero(2, 2);
  tpl.labels(0, 0) = tpl.labels(1, 0) = 1.0;
  CHECK_THROWS_AS(tpl.validate(6), std::invalid_argument);  // class 1 uncovered
}

TEST_CASE("sparse cg solves an spd system to tolerance") {
  Rng rng(61);
  long n = 25;
  Eigen::MatrixXd m(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < n; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd spd = m * m.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
  Eigen::SparseMatrix<double> a = spd.sparseView();
  Eigen::VectorXd b(n);
  for (long i = 0; i < n; ++i) b[i] = rng.uniform(-1.0, 1.0);
  Eigen::VectorXd x = solve_sparse_cg(a, b, 1e-10, 10 * static_cast<int>(n));
  CHECK((spd * x - b).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("argmax prediction breaks ties toward the lower class") {
  InterpolationField f{Eigen::MatrixXd(2, 3)};
  f.u << 0.2, 0.5, 0.5, 0.4, 0.4, 0.1;
  std::vector<int> p = predict_labels(f);
  CHECK(p[0] == 1);
  CHECK(p[1] == 0);
}

}  // TEST_SUITE
