#include "wnlab/attacks.hpp"

#include "wnlab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace wnlab {

namespace {

constexpr double kAuditSlack = 1e-12;

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor batch_tensor_from(const Mat& x, const NetworkSpec& spec, bool attached) {
  long n = x.rows(), dim = x.cols();
  if (dim != static_cast<long>(spec.in_c) * spec.in_h * spec.in_w)
    throw std::invalid_argument("attack: input width " + std::to_string(dim) + " does not match model input");
  Vec v(n * dim);
  for (long i = 0; i < n; ++i) v.segment(i * dim, dim) = x.row(i).transpose();
  Shape s = {static_cast<int>(n), spec.in_c, spec.in_h, spec.in_w};
  return attached ? Tensor::leaf(std::move(s), std::move(v)) : Tensor::constant(std::move(s), std::move(v));
}

Mat grad_as_mat(const Tensor& t, long n, long dim) {
  Mat g(n, dim);
  for (long i = 0; i < n; ++i) g.row(i) = t.grad().segment(i * dim, dim).transpose();
  return g;
}

// Recompute audit data and the success flag; reject any budget violation
// before the batch leaves the module.
void finalize(AdversarialBatch& b, const std::vector<int>& y,
              const AttackConfig& cfg, const Predictor& predict, bool linf_budget) {
  long n = b.originals.rows();
  b.linf_distance.resize(n);
  b.l2_distance.resize(n);
  for (long i = 0; i < n; ++i) {
    Eigen::RowVectorXd d = b.perturbed.row(i) - b.originals.row(i);
    b.linf_distance[i] = d.cwiseAbs().maxCoeff();
    b.l2_distance[i] = d.norm();
  }
  if (linf_budget && (b.linf_distance.array() > cfg.epsilon + kAuditSlack).any())
    throw AuditError("attack audit: l_inf distance " + std::to_string(b.linf_distance.maxCoeff()) + " exceeds epsilon " + std::to_string(cfg.epsilon));
  if (b.perturbed.minCoeff() < cfg.clip_lo - kAuditSlack || b.perturbed.maxCoeff() > cfg.clip_hi + kAuditSlack)
    throw AuditError("attack audit: pixel outside [" + std::to_string(cfg.clip_lo) + "," + std::to_string(cfg.clip_hi) + "]");
  std::vector<int> pred = predict(b.perturbed);
  b.success.resize(n);
  for (long i = 0; i < n; ++i)
    b.success[i] = cfg.target >= 0 ? pred[i] == cfg.target : pred[i] != y[i];
}

}  // namespace

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
  if (iters < 0) throw std::invalid_argument("AttackConfig: iters must be >= 0");
  if (clip_lo >= clip_hi) throw std::invalid_argument("AttackConfig: clip_lo must be < clip_hi");
}

AdversarialBatch fgsm(const GradientOracle& oracle, const Mat& x,
                      const std::vector<int>& y, const AttackConfig& config,
                      const Predictor& predict) {
  config.validate();
  Mat grad = oracle(x, y);
  AdversarialBatch b;
  b.originals = x;
  b.perturbed = x;
  for (long i = 0; i < x.rows(); ++i)
    for (long j = 0; j < x.cols(); ++j)
      b.perturbed(i, j) = std::clamp(x(i, j) + config.epsilon * sign0(grad(i, j)),
                                     config.clip_lo, config.clip_hi);
  finalize(b, y, config, predict, true);
  return b;
}

AdversarialBatch ifgsm(const GradientOracle& oracle, const Mat& x,
                       const std::vector<int>& y, const AttackConfig& config,
                       const Predictor& predict) {
  config.validate();
  if (config.iters < 1) throw std::invalid_argument("ifgsm: iters must be >= 1");
  if (config.alpha < 0.0) throw std::invalid_argument("ifgsm: alpha must be >= 0");
  AdversarialBatch b;
  b.originals = x;
  b.perturbed = x;
  for (int m = 0; m < config.iters; ++m) {
    Mat grad = oracle(b.perturbed, y);
    for (long i = 0; i < x.rows(); ++i)
      for (long j = 0; j < x.cols(); ++j) {
        double v = b.perturbed(i, j) + config.alpha * sign0(grad(i, j));
        // project into the epsilon-ball around the ORIGINAL x, then the box
        v = std::clamp(v, x(i, j) - config.epsilon, x(i, j) + config.epsilon);
        b.perturbed(i, j) = std::clamp(v, config.clip_lo, config.clip_hi);
      }
  }
  finalize(b, y, config, predict, true);
  return b;
}

AdversarialBatch cw_l2(const TwoBranchModel& model, const Mat& x,
                       const std::vector<int>& y, const AttackConfig& config,
                       const Predictor& predict) {
  config.validate();
  if (config.c < 0.0) throw std::invalid_argument("cw_l2: c must be >= 0");
  long n = x.rows(), dim = x.cols();
  double lo = config.clip_lo, hi = config.clip_hi;

  if (config.iters == 0) {
    // identity attack: skip the box reparameterization so the inputs come
    // back bit-exact, not within one rounding of themselves
    AdversarialBatch b;
    b.originals = x;
    b.perturbed = x;
    finalize(b, y, config, predict, false);
    return b;
  }

  // Target selection: explicit target, or the runner-up class of the clean
  // logits for the untargeted protocol.
  std::vector<int> targets(n);
  {
    Tensor xt = batch_tensor_from(x, model.spec, false);
    ForwardTrace tr = forward_linear(model, xt);
    long m = model.spec.num_classes;
    for (long i = 0; i < n; ++i) {
      if (config.target >= 0) {
        targets[i] = config.target;
        if (config.target == y[i])
          throw std::invalid_argument("cw_l2: target equals true label for example " + std::to_string(i));
        continue;
      }
      const double* row = tr.logits.value().data() + i * m;
      int best = 0;
      for (long c = 1; c < m; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
      int second = best == 0 ? 1 : 0;
      for (long c = 0; c < m; ++c)
        if (c != best && row[c] > row[second]) second = static_cast<int>(c);
      targets[i] = second;
    }
  }

  // w0 = arctanh mapped so the initial perturbation is ~0
  Vec w0(n * dim);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < dim; ++j) {
      double xv = std::clamp(x(i, j), lo + 1e-6, hi - 1e-6);
      w0[i * dim + j] = std::atanh(2.0 * (xv - lo) / (hi - lo) - 1.0);
    }

  ParamStore ps;
  ps.add("w", Tensor::leaf({static_cast<int>(n), static_cast<int>(dim)}, w0));

  Vec x_flat(n * dim);
  for (long i = 0; i < n; ++i) x_flat.segment(i * dim, dim) = x.row(i).transpose();
  Tensor x_const = Tensor::constant({static_cast<int>(n), static_cast<int>(dim)}, x_flat);
  Tensor lo_const = Tensor::constant({static_cast<int>(n), static_cast<int>(dim)}, Vec::Constant(n * dim, lo));

  auto adv_from_w = [&](const Tensor& w) {
    // x_adv = lo + (hi - lo) * (tanh(w) + 1) / 2
    Tensor t = tanh_op(w);
    Tensor ones = Tensor::constant(w.shape(), Vec::Constant(w.numel(), 1.0));
    return add(scale(add(t, ones), 0.5 * (hi - lo)), lo_const);
  };

  auto objective = [&](const Tensor& w) {
    Tensor x_adv = adv_from_w(w);
    Tensor delta = sub(x_adv, x_const);
    Tensor img = make_op({static_cast<int>(n), model.spec.in_c, model.spec.in_h, model.spec.in_w},
                         x_adv.value(), {x_adv}, [](TensorNode& nd) {
                           auto& p = nd.parents[0];
                           if (!p->requires_grad) return;
                           p->ensure_grad();
                           p->grad += nd.grad;
                         });
    ForwardTrace tr = forward_linear(model, img);
    Tensor hinge = cw_hinge(tr.logits, targets, config.kappa);
    return std::make_pair(add(l2_squared(delta), scale(hinge, config.c)), x_adv);
  };

  Mat best = Mat::Zero(n, dim);
  Eigen::VectorXd best_l2 = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  std::vector<char> have_best(n, 0);

  Mat last(n, dim);
  int adam_iters = config.iters;
  for (int it = 0; it <= adam_iters; ++it) {
    auto [obj, x_adv] = objective(ps.at("w"));
    if (!std::isfinite(obj.value()[0]))
      throw std::runtime_error("cw_l2: non-finite objective");
    for (long i = 0; i < n; ++i) last.row(i) = x_adv.value().segment(i * dim, dim).transpose();
    if (config.cw_best) {
      std::vector<int> pred = predict(last);
      for (long i = 0; i < n; ++i) {
        double d = (last.row(i) - x.row(i)).norm();
        bool ok = config.target >= 0 ? pred[i] == config.target : pred[i] != y[i];
        if (ok && d < best_l2[i]) {
          best_l2[i] = d;
          best.row(i) = last.row(i);
          have_best[i] = 1;
        }
      }
    }
    if (it == adam_iters) break;
    ps.zero_grad();
    backward(obj);
    adam_step(ps, config.adam_lr);
  }

  AdversarialBatch b;
  b.originals = x;
  b.perturbed = last;
  if (config.cw_best)
    for (long i = 0; i < n; ++i)
      if (have_best[i]) b.perturbed.row(i) = best.row(i);
  finalize(b, y, config, predict, false);
  return b;
}

Mat approx_wnll_gradient(const TwoBranchModel& model, const Mat& x,
                         const std::vector<int>& y, const Dataset& tpl, int k) {
  long n = x.rows(), dim = x.cols();
  Tensor input = batch_tensor_from(x, model.spec, true);

  ForwardTrace wnll_tr = forward_wnll(model, input.detach(), tpl, k);
  double l_wnll = wnll_loss_value(wnll_tr.y_hat, y);

  ForwardTrace lin_tr = forward_linear(model, input);
  Tensor l_linear = cross_entropy(lin_tr.y_tilde, y);

  double lv = l_linear.value()[0];
  double seed = std::abs(lv) > 1e-300 ? l_wnll / lv : 1.0;
  input.zero_grad();
  backward(l_linear, seed);
  Mat g = grad_as_mat(input, n, dim);

  // gradients flow to the input only; the model stays frozen
  const_cast<TwoBranchModel&>(model).theta.zero_grad();
  const_cast<TwoBranchModel&>(model).w_buffer.zero_grad();
  const_cast<TwoBranchModel&>(model).w_linear.zero_grad();
  return g;
}

GradientOracle make_linear_oracle(const TwoBranchModel& model) {
  return [&model](const Mat& x, const std::vector<int>& y) {
    long n = x.rows(), dim = x.cols();
    Tensor input = batch_tensor_from(x, model.spec, true);
    ForwardTrace tr = forward_linear(model, input);
    Tensor loss = cross_entropy(tr.y_tilde, y);
    input.zero_grad();
    backward(loss);
    Mat g = grad_as_mat(input, n, dim);
    const_cast<TwoBranchModel&>(model).theta.zero_grad();
    const_cast<TwoBranchModel&>(model).w_buffer.zero_grad();
    const_cast<TwoBranchModel&>(model).w_linear.zero_grad();
    return g;
  };
}

GradientOracle make_wnll_oracle(const TwoBranchModel& model, const Dataset& tpl, int k) {
  return [&model, tpl, k](const Mat& x, const std::vector<int>& y) {
    return approx_wnll_gradient(model, x, y, tpl, k);
  };
}

Predictor make_linear_predictor(const TwoBranchModel& model) {
  return [&model](const Mat& x) {
    Dataset d;
    d.x = x;
    d.c = model.spec.in_c;
    d.h = model.spec.in_h;
    d.w = model.spec.in_w;
    d.num_classes = model.spec.num_classes;
    d.y.assign(x.rows(), 0);
    return predict_linear(model, d);
  };
}

Predictor make_wnll_predictor(const TwoBranchModel& model, const Dataset& tpl, int k) {
  return [&model, tpl, k](const Mat& x) {
    Dataset d;
    d.x = x;
    d.c = model.spec.in_c;
    d.h = model.spec.in_h;
    d.w = model.spec.in_w;
    d.num_classes = model.spec.num_classes;
    d.y.assign(x.rows(), 0);
    return predict_wnll(model, d, tpl, k);
  };
}

}  // namespace wnlab
