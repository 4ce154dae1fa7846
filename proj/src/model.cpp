#include "wnlab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace wnlab {

NetworkSpec NetworkSpec::tiny_cnn(int c, int h, int w, int m) {
  NetworkSpec s;
  s.name = "tiny-cnn";
  s.in_c = c;
  s.in_h = h;
  s.in_w = w;
  s.dnn_layers = {
      {LayerDesc::Kind::Conv3x3, 8},  {LayerDesc::Kind::Relu, 0},
      {LayerDesc::Kind::AvgPool2, 0}, {LayerDesc::Kind::Conv3x3, 16},
      {LayerDesc::Kind::Relu, 0},     {LayerDesc::Kind::AvgPool2, 0},
      {LayerDesc::Kind::Flatten, 0},  {LayerDesc::Kind::Dense, 64},
  };
  s.feature_dim = 64;
  s.num_classes = m;
  return s;
}

NetworkSpec NetworkSpec::mlp(int in_dim, int hidden, int feature_dim, int m) {
  NetworkSpec s;
  s.name = "mlp";
  s.in_c = 1;
  s.in_h = 1;
  s.in_w = in_dim;
  s.dnn_layers = {
      {LayerDesc::Kind::Flatten, 0},
      {LayerDesc::Kind::Dense, hidden},
      {LayerDesc::Kind::Relu, 0},
      {LayerDesc::Kind::Dense, feature_dim},
  };
  s.feature_dim = feature_dim;
  s.num_classes = m;
  return s;
}

namespace {

Tensor init_param(Shape shape, double stddev, Rng& rng) {
  Vec v(shape_numel(shape));
  for (long i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
  return Tensor::leaf(std::move(shape), std::move(v));
}

}  // namespace

TwoBranchModel TwoBranchModel::init(const NetworkSpec& spec, Rng& rng) {
  TwoBranchModel m;
  m.spec = spec;
  Rng init = rng.substream("init");
  int c = spec.in_c, h = spec.in_h, w = spec.in_w;
  long flat = static_cast<long>(c) * h * w;
  for (size_t i = 0; i < spec.dnn_layers.size(); ++i) {
    const LayerDesc& ld = spec.dnn_layers[i];
    std::string base = "dnn." + std::to_string(i);
    switch (ld.kind) {
      case LayerDesc::Kind::Conv3x3: {
        double std = std::sqrt(2.0 / (9.0 * c));
        m.theta.add(base + ".w", init_param({ld.width, c, 3, 3}, std, init));
        m.theta.add(base + ".b", Tensor::leaf({ld.width}, Vec::Zero(ld.width)));
        c = ld.width;
        flat = static_cast<long>(c) * h * w;
        break;
      }
      case LayerDesc::Kind::Dense: {
        double std = std::sqrt(2.0 / static_cast<double>(flat));
        m.theta.add(base + ".w", init_param({static_cast<int>(flat), ld.width}, std, init));
        m.theta.add(base + ".b", Tensor::leaf({ld.width}, Vec::Zero(ld.width)));
        flat = ld.width;
        break;
      }
      case LayerDesc::Kind::AvgPool2:
        if (h % 2 != 0 || w % 2 != 0)
          throw std::invalid_argument("NetworkSpec: avgpool on odd spatial size " + std::to_string(h) + "x" + std::to_string(w));
        h /= 2;
        w /= 2;
        flat = static_cast<long>(c) * h * w;
        break;
      case LayerDesc::Kind::Relu:
      case LayerDesc::Kind::Flatten:
        break;
    }
  }
  if (flat != spec.feature_dim)
    throw std::invalid_argument("NetworkSpec: DNN block produces width " + std::to_string(flat) + ", expected feature_dim " + std::to_string(spec.feature_dim));
  double bstd = std::sqrt(2.0 / spec.feature_dim);
  m.w_buffer.add("buffer.w", init_param({spec.feature_dim, spec.feature_dim}, bstd, init));
  m.w_buffer.add("buffer.b", Tensor::leaf({spec.feature_dim}, Vec::Zero(spec.feature_dim)));
  m.w_linear.add("head.w", init_param({spec.feature_dim, spec.num_classes}, bstd, init));
  m.w_linear.add("head.b", Tensor::leaf({spec.num_classes}, Vec::Zero(spec.num_classes)));
  return m;
}

namespace {

Tensor forward_dnn(const TwoBranchModel& m, Tensor t) {
  for (size_t i = 0; i < m.spec.dnn_layers.size(); ++i) {
    const LayerDesc& ld = m.spec.dnn_layers[i];
    std::string base = "dnn." + std::to_string(i);
    switch (ld.kind) {
      case LayerDesc::Kind::Conv3x3:
        t = conv2d_3x3(t, m.theta.at(base + ".w"), m.theta.at(base + ".b"));
        break;
      case LayerDesc::Kind::Dense:
        t = dense(t, m.theta.at(base + ".w"), m.theta.at(base + ".b"));
        break;
      case LayerDesc::Kind::Relu:
        t = relu(t);
        break;
      case LayerDesc::Kind::AvgPool2:
        t = avgpool2(t);
        break;
      case LayerDesc::Kind::Flatten:
        t = flatten(t);
        break;
    }
  }
  return t;
}

Tensor forward_buffer(const TwoBranchModel& m, const Tensor& x_tilde) {
  return relu(dense(x_tilde, m.w_buffer.at("buffer.w"), m.w_buffer.at("buffer.b")));
}

void check_input(const TwoBranchModel& m, const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != m.spec.in_c || s[2] != m.spec.in_h || s[3] != m.spec.in_w)
    throw std::invalid_argument("forward: input " + shape_str(s) + " does not match spec input (N," + std::to_string(m.spec.in_c) + "," + std::to_string(m.spec.in_h) + "," + std::to_string(m.spec.in_w) + ")");
}

}  // namespace

ForwardTrace forward_linear(const TwoBranchModel& model, const Tensor& x) {
  check_input(model, x);
  ForwardTrace tr;
  tr.x_tilde = forward_dnn(model, x);
  tr.x_hat = forward_buffer(model, tr.x_tilde);
  tr.logits = dense(tr.x_hat, model.w_linear.at("head.w"), model.w_linear.at("head.b"));
  tr.y_tilde = softmax(tr.logits);
  return tr;
}

ForwardTrace forward_wnll(const TwoBranchModel& model, const Tensor& x,
                          const Dataset& tpl, int k) {
  check_input(model, x);
  if (tpl.n() < 1) throw std::invalid_argument("forward_wnll: empty template");
  long nq = x.shape()[0];
  long nt = tpl.n();

  // Joint forward over query batch + template images. The buffer block is
  // merged into the feature map unconditionally.
  Vec joint(x.numel() + nt * tpl.dim());
  joint.head(x.numel()) = x.value();
  for (long i = 0; i < nt; ++i)
    joint.segment(x.numel() + i * tpl.dim(), tpl.dim()) = tpl.x.row(i).transpose();
  Tensor jx = Tensor::constant({static_cast<int>(nq + nt), model.spec.in_c, model.spec.in_h, model.spec.in_w}, std::move(joint));

  ForwardTrace tr = forward_linear(model, jx);

  PointCloud cloud;
  cloud.features.resize(nq + nt, model.spec.feature_dim);
  const Vec& feats = tr.x_hat.value();
  for (long i = 0; i < nq + nt; ++i)
    cloud.features.row(i) = feats.segment(i * model.spec.feature_dim, model.spec.feature_dim).transpose();

  TemplateSet ts;
  ts.num_classes = model.spec.num_classes;
  ts.indices.reserve(nt);
  ts.labels.setZero(nt, ts.num_classes);
  for (long i = 0; i < nt; ++i) {
    ts.indices.push_back(static_cast<int>(nq + i));
    ts.labels(i, tpl.y[i]) = 1.0;
  }

  int kk = std::min<long>(k, nq + nt - 1);
  WeightGraph g = build_knn_graph(cloud, kk, kk);
  InterpolationField field = wnll_interpolate(g, ts);
  tr.y_hat = field.u.topRows(nq);
  tr.has_y_hat = true;
  return tr;
}

double wnll_loss_value(const Eigen::MatrixXd& y_hat, const std::vector<int>& labels) {
  if (y_hat.rows() != static_cast<long>(labels.size()))
    throw std::invalid_argument("wnll_loss_value: row/label count mismatch");
  double acc = 0.0;
  for (long i = 0; i < y_hat.rows(); ++i) {
    Eigen::RowVectorXd row = y_hat.row(i).cwiseMax(1e-12).cwiseMin(1.0);
    row /= row.sum();
    acc -= std::log(row[labels[static_cast<size_t>(i)]]);
  }
  return acc / static_cast<double>(y_hat.rows());
}

void straight_through_update(TwoBranchModel& model, const Tensor& x,
                             const std::vector<int>& labels, const Dataset& tpl,
                             double lr, int k) {
  ForwardTrace wnll_tr = forward_wnll(model, x, tpl, k);
  double l_wnll = wnll_loss_value(wnll_tr.y_hat, labels);

  ForwardTrace lin_tr = forward_linear(model, x);
  Tensor l_linear = cross_entropy(lin_tr.y_tilde, labels);

  model.theta.zero_grad();
  model.w_buffer.zero_grad();
  model.w_linear.zero_grad();

  // Substituting the WNLL loss value for the linear loss scales the whole
  // linear-branch gradient by the ratio of loss values.
  double lv = l_linear.value()[0];
  double seed = std::abs(lv) > 1e-300 ? l_wnll / lv : 1.0;
  backward(l_linear, seed);

  for (auto& [name, p] : model.w_buffer.params) {
    p.value() -= lr * p.grad();
    p.zero_grad();
  }
  model.theta.zero_grad();
  model.w_linear.zero_grad();
}

std::vector<int> predict_linear(const TwoBranchModel& model, const Dataset& data,
                                long batch_size) {
  std::vector<int> out;
  out.reserve(data.n());
  for (long b = 0; b < data.n(); b += batch_size) {
    long count = std::min(batch_size, data.n() - b);
    ForwardTrace tr = forward_linear(model, data.batch_tensor(b, count));
    long m = model.spec.num_classes;
    for (long i = 0; i < count; ++i) {
      const double* row = tr.y_tilde.value().data() + i * m;
      int best = 0;
      for (long c = 1; c < m; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
      out.push_back(best);
    }
  }
  return out;
}

std::vector<int> predict_wnll(const TwoBranchModel& model, const Dataset& data,
                              const Dataset& tpl, int k, long batch_size) {
  std::vector<int> out;
  out.reserve(data.n());
  for (long b = 0; b < data.n(); b += batch_size) {
    long count = std::min(batch_size, data.n() - b);
    ForwardTrace tr = forward_wnll(model, data.batch_tensor(b, count), tpl, k);
    InterpolationField f;
    f.u = tr.y_hat;
    for (int p : predict_labels(f)) out.push_back(p);
  }
  return out;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("accuracy: size mismatch or empty");
  long hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace wnlab
