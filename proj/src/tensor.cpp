#include "wnlab/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace wnlab {

long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {

void check_shape(const Shape& s, const Vec& v, const char* what) {
  for (int d : s)
    if (d <= 0) throw std::invalid_argument(std::string(what) + ": non-positive dimension in " + shape_str(s));
  if (shape_numel(s) != v.size())
    throw std::invalid_argument(std::string(what) + ": shape " + shape_str(s) + " does not match data length " + std::to_string(v.size()));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Eigen::Map<const Mat> as_mat(const Vec& v, long rows, long cols) {
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

Eigen::Map<Mat> as_mat(Vec& v, long rows, long cols) {
  return Eigen::Map<Mat>(v.data(), rows, cols);
}

}  // namespace

Tensor make_op(Shape shape, Vec value, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  check_shape(shape, value, "make_op");
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || p.attached();
  node->requires_grad = any;
  if (any) {
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backprop = std::move(backprop);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::constant(Shape shape, Vec value) {
  auto node = std::make_shared<TensorNode>();
  check_shape(shape, value, "Tensor::constant");
  node->shape = std::move(shape);
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::leaf(Shape shape, Vec value) {
  auto node = std::make_shared<TensorNode>();
  check_shape(shape, value, "Tensor::leaf");
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  long n = shape_numel(shape);
  return constant(std::move(shape), Vec::Zero(n));
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  return make_op(a.shape(), a.value() + b.value(), {a, b}, [](TensorNode& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) {
        p->ensure_grad();
        p->grad += n.grad;
      }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  return make_op(a.shape(), a.value() - b.value(), {a, b}, [](TensorNode& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      pa->grad += n.grad;
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      pb->grad -= n.grad;
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  return make_op(a.shape(), (a.value().array() * b.value().array()).matrix(), {a, b},
                 [](TensorNode& n) {
                   auto& pa = n.parents[0];
                   auto& pb = n.parents[1];
                   if (pa->requires_grad) {
                     pa->ensure_grad();
                     pa->grad.array() += n.grad.array() * pb->value.array();
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     pb->grad.array() += n.grad.array() * pa->value.array();
                   }
                 });
}

Tensor scale(const Tensor& a, double c) {
  return make_op(a.shape(), a.value() * c, {a}, [c](TensorNode& n) {
    auto& p = n.parents[0];
    if (p->requires_grad) {
      p->ensure_grad();
      p->grad += c * n.grad;
    }
  });
}

Tensor relu(const Tensor& a) {
  return make_op(a.shape(), a.value().cwiseMax(0.0), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad.array() += n.grad.array() * (p->value.array() > 0.0).cast<double>();
  });
}

Tensor tanh_op(const Tensor& a) {
  Vec v = a.value().array().tanh();
  return make_op(a.shape(), std::move(v), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad.array() += n.grad.array() * (1.0 - n.value.array().square());
  });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  Vec v(1);
  v[0] = a.value().sum();
  return make_op({1}, std::move(v), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad.array() += n.grad[0];
  });
}

Tensor l2_squared(const Tensor& a) {
  Vec v(1);
  v[0] = a.value().squaredNorm();
  return make_op({1}, std::move(v), {a}, [](TensorNode& n) {
    auto& p = n.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    p->grad += 2.0 * n.grad[0] * p->value;
  });
}

// ---- layers ----

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
    throw std::invalid_argument("dense: expected x(N,in) w(in,out) b(out), got " + shape_str(x.shape()) + " " + shape_str(w.shape()) + " " + shape_str(b.shape()));
  long n = x.shape()[0], in = x.shape()[1], out = w.shape()[1];
  if (w.shape()[0] != in || b.shape()[0] != out)
    throw std::invalid_argument("dense: incompatible shapes x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()));
  Vec v(n * out);
  as_mat(v, n, out) = as_mat(x.value(), n, in) * as_mat(w.value(), in, out);
  as_mat(v, n, out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out);
  return make_op({static_cast<int>(n), static_cast<int>(out)}, std::move(v), {x, w, b},
                 [n, in, out](TensorNode& nd) {
                   auto gy = as_mat(nd.grad, n, out);
                   auto& px = nd.parents[0];
                   auto& pw = nd.parents[1];
                   auto& pb = nd.parents[2];
                   if (px->requires_grad) {
                     px->ensure_grad();
                     as_mat(px->grad, n, in) += gy * as_mat(pw->value, in, out).transpose();
                   }
                   if (pw->requires_grad) {
                     pw->ensure_grad();
                     as_mat(pw->grad, in, out) += as_mat(px->value, n, in).transpose() * gy;
                   }
                   if (pb->requires_grad) {
                     pb->ensure_grad();
                     pb->grad += gy.colwise().sum().transpose();
                   }
                 });
}

namespace {

// im2col for a 3x3 kernel with zero padding 1: (C*9) x (H*W)
Mat im2col3(const double* img, long C, long H, long W) {
  Mat cols = Mat::Zero(C * 9, H * W);
  for (long c = 0; c < C; ++c) {
    const double* plane = img + c * H * W;
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        long row = c * 9 + (dy + 1) * 3 + (dx + 1);
        for (long y = 0; y < H; ++y) {
          long sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (long x = 0; x < W; ++x) {
            long sx = x + dx;
            if (sx < 0 || sx >= W) continue;
            cols(row, y * W + x) = plane[sy * W + sx];
          }
        }
      }
    }
  }
  return cols;
}

void col2im3_add(const Mat& cols, double* img, long C, long H, long W) {
  for (long c = 0; c < C; ++c) {
    double* plane = img + c * H * W;
    for (long dy = -1; dy <= 1; ++dy) {
      for (long dx = -1; dx <= 1; ++dx) {
        long row = c * 9 + (dy + 1) * 3 + (dx + 1);
        for (long y = 0; y < H; ++y) {
          long sy = y + dy;
          if (sy < 0 || sy >= H) continue;
          for (long x = 0; x < W; ++x) {
            long sx = x + dx;
            if (sx < 0 || sx >= W) continue;
            plane[sy * W + sx] += cols(row, y * W + x);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 4 || w.shape().size() != 4 || b.shape().size() != 1)
    throw std::invalid_argument("conv2d_3x3: expected x(N,C,H,W) w(F,C,3,3) b(F), got " + shape_str(x.shape()) + " " + shape_str(w.shape()) + " " + shape_str(b.shape()));
  long N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  long F = w.shape()[0];
  if (w.shape()[1] != C || w.shape()[2] != 3 || w.shape()[3] != 3 || b.shape()[0] != F)
    throw std::invalid_argument("conv2d_3x3: incompatible shapes x" + shape_str(x.shape()) + " w" + shape_str(w.shape()) + " b" + shape_str(b.shape()));
  Vec v(N * F * H * W);
  auto kernel = as_mat(w.value(), F, C * 9);
  for (long n = 0; n < N; ++n) {
    Mat cols = im2col3(x.value().data() + n * C * H * W, C, H, W);
    Mat y = kernel * cols;
    y.colwise() += b.value();
    Eigen::Map<Mat>(v.data() + n * F * H * W, F, H * W) = y;
  }
  return make_op({static_cast<int>(N), static_cast<int>(F), static_cast<int>(H), static_cast<int>(W)},
                 std::move(v), {x, w, b}, [N, C, H, W, F](TensorNode& nd) {
                   auto& px = nd.parents[0];
                   auto& pw = nd.parents[1];
                   auto& pb = nd.parents[2];
                   auto kernel = as_mat(pw->value, F, C * 9);
                   if (px->requires_grad) px->ensure_grad();
                   if (pw->requires_grad) pw->ensure_grad();
                   if (pb->requires_grad) pb->ensure_grad();
                   for (long n = 0; n < N; ++n) {
                     Eigen::Map<const Mat> gy(nd.grad.data() + n * F * H * W, F, H * W);
                     if (pw->requires_grad || px->requires_grad) {
                       Mat cols = im2col3(px->value.data() + n * C * H * W, C, H, W);
                       if (pw->requires_grad)
                         as_mat(pw->grad, F, C * 9) += gy * cols.transpose();
                       if (px->requires_grad) {
                         Mat gcols = kernel.transpose() * gy;
                         col2im3_add(gcols, px->grad.data() + n * C * H * W, C, H, W);
                       }
                     }
                     if (pb->requires_grad) pb->grad += gy.rowwise().sum();
                   }
                 });
}

Tensor avgpool2(const Tensor& x) {
  if (x.shape().size() != 4)
    throw std::invalid_argument("avgpool2: expected (N,C,H,W), got " + shape_str(x.shape()));
  long N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("avgpool2: odd spatial size " + shape_str(x.shape()));
  long Ho = H / 2, Wo = W / 2;
  Vec v(N * C * Ho * Wo);
  for (long p = 0; p < N * C; ++p) {
    const double* in = x.value().data() + p * H * W;
    double* out = v.data() + p * Ho * Wo;
    for (long y = 0; y < Ho; ++y)
      for (long xw = 0; xw < Wo; ++xw)
        out[y * Wo + xw] = 0.25 * (in[2 * y * W + 2 * xw] + in[2 * y * W + 2 * xw + 1] +
                                   in[(2 * y + 1) * W + 2 * xw] + in[(2 * y + 1) * W + 2 * xw + 1]);
  }
  return make_op({static_cast<int>(N), static_cast<int>(C), static_cast<int>(Ho), static_cast<int>(Wo)},
                 std::move(v), {x}, [N, C, H, W, Ho, Wo](TensorNode& nd) {
                   auto& p = nd.parents[0];
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   for (long pl = 0; pl < N * C; ++pl) {
                     double* gin = p->grad.data() + pl * H * W;
                     const double* gout = nd.grad.data() + pl * Ho * Wo;
                     for (long y = 0; y < Ho; ++y)
                       for (long xw = 0; xw < Wo; ++xw) {
                         double g = 0.25 * gout[y * Wo + xw];
                         gin[2 * y * W + 2 * xw] += g;
                         gin[2 * y * W + 2 * xw + 1] += g;
                         gin[(2 * y + 1) * W + 2 * xw] += g;
                         gin[(2 * y + 1) * W + 2 * xw + 1] += g;
                       }
                   }
                 });
}

Tensor flatten(const Tensor& x) {
  if (x.shape().size() < 2)
    throw std::invalid_argument("flatten: expected batch dimension, got " + shape_str(x.shape()));
  long n = x.shape()[0];
  long rest = x.numel() / n;
  return make_op({static_cast<int>(n), static_cast<int>(rest)}, x.value(), {x},
                 [](TensorNode& nd) {
                   auto& p = nd.parents[0];
                   if (!p->requires_grad) return;
                   p->ensure_grad();
                   p->grad += nd.grad;
                 });
}

// ---- classification ----

Tensor softmax(const Tensor& x) {
  if (x.shape().size() != 2)
    throw std::invalid_argument("softmax: expected (N,m), got " + shape_str(x.shape()));
  long n = x.shape()[0], m = x.shape()[1];
  Vec v(n * m);
  for (long i = 0; i < n; ++i) {
    Eigen::Map<const Vec> row(x.value().data() + i * m, m);
    double mx = row.maxCoeff();
    Eigen::Map<Vec> out(v.data() + i * m, m);
    out = (row.array() - mx).exp();
    out /= out.sum();
  }
  return make_op(x.shape(), std::move(v), {x}, [n, m](TensorNode& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (long i = 0; i < n; ++i) {
      Eigen::Map<const Vec> s(nd.value.data() + i * m, m);
      Eigen::Map<const Vec> gy(nd.grad.data() + i * m, m);
      double dot = s.dot(gy);
      Eigen::Map<Vec> gx(p->grad.data() + i * m, m);
      gx.array() += s.array() * (gy.array() - dot);
    }
  });
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.shape().size() != 2)
    throw std::invalid_argument("cross_entropy: expected (N,m), got " + shape_str(probs.shape()));
  long n = probs.shape()[0], m = probs.shape()[1];
  if (static_cast<long>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: batch " + std::to_string(n) + " vs " + std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= m) throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of range for m=" + std::to_string(m));
  static constexpr double kFloor = 1e-300;
  Vec v(1);
  double acc = 0.0;
  for (long i = 0; i < n; ++i) acc -= std::log(std::max(probs.value()[i * m + labels[i]], kFloor));
  v[0] = acc / static_cast<double>(n);
  auto lab = labels;
  return make_op({1}, std::move(v), {probs}, [n, m, lab](TensorNode& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    double g = nd.grad[0] / static_cast<double>(n);
    for (long i = 0; i < n; ++i) {
      double pv = std::max(p->value[i * m + lab[i]], kFloor);
      p->grad[i * m + lab[i]] -= g / pv;
    }
  });
}

Tensor cw_hinge(const Tensor& logits, const std::vector<int>& targets, double kappa) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("cw_hinge: expected (N,m), got " + shape_str(logits.shape()));
  long n = logits.shape()[0], m = logits.shape()[1];
  if (static_cast<long>(targets.size()) != n)
    throw std::invalid_argument("cw_hinge: batch " + std::to_string(n) + " vs " + std::to_string(targets.size()) + " targets");
  if (m < 2) throw std::invalid_argument("cw_hinge: need at least 2 classes");
  Vec v(1);
  double acc = 0.0;
  std::vector<int> best(n);
  for (long i = 0; i < n; ++i) {
    int t = targets[i];
    double mx = -std::numeric_limits<double>::infinity();
    int arg = -1;
    for (long j = 0; j < m; ++j) {
      if (j == t) continue;
      double z = logits.value()[i * m + j];
      if (z > mx) {
        mx = z;
        arg = static_cast<int>(j);
      }
    }
    best[i] = arg;
    acc += std::max(-kappa, mx - logits.value()[i * m + t]);
  }
  v[0] = acc;
  auto tg = targets;
  return make_op({1}, std::move(v), {logits}, [n, m, tg, best, kappa](TensorNode& nd) {
    auto& p = nd.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    double g = nd.grad[0];
    for (long i = 0; i < n; ++i) {
      double margin = p->value[i * m + best[i]] - p->value[i * m + tg[i]];
      if (margin > -kappa) {
        p->grad[i * m + best[i]] += g;
        p->grad[i * m + tg[i]] -= g;
      }
    }
  });
}

void backward(const Tensor& loss, double seed) {
  if (!loss.valid() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  if (!loss.attached()) throw std::invalid_argument("backward: loss is detached from the tape");

  // Iterative post-order DFS gives a deterministic reverse topological order.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      TensorNode* par = node->parents[idx++].get();
      if (par->requires_grad && !visited.count(par)) {
        visited.insert(par);
        stack.emplace_back(par, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch space for this sweep; only leaves accumulate
  // across sweeps. Without the reset a second sweep would double-count the
  // stale seed left on the loss node.
  for (TensorNode* n : order)
    if (n->backprop) n->grad.resize(0);

  loss.node()->ensure_grad();
  loss.node()->grad[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

}  // namespace wnlab
