#include "wnlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wnlab {

void TrainConfig::validate() const {
  if (alternations < 0 || epochs_linear < 0 || epochs_wnll < 0 || ifgsm_iters < 0)
    throw std::invalid_argument("TrainConfig: counts must be >= 0");
  if (epsilon < 0.0) throw std::invalid_argument("TrainConfig: epsilon must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (augmentation != "original" && augmentation != "tvm" && augmentation != "original_plus_tvm")
    throw std::invalid_argument("TrainConfig: unknown augmentation '" + augmentation + "'");
}

int TrainConfig::effective_template_size(long n, int m) const {
  if (template_size > 0) return std::min<long>(template_size, n);
  long sz = std::max<long>(2L * m, n / 5);
  return static_cast<int>(std::min<long>(std::max<long>(sz, 1), std::max<long>(n - 1, 1)));
}

namespace {

double phase_lr(const TrainConfig& cfg, int epoch_in_phase, int phase_epochs) {
  if (!cfg.lr_decay || phase_epochs < 1) return cfg.lr;
  double frac = static_cast<double>(epoch_in_phase) / phase_epochs;
  if (frac >= 0.75) return cfg.lr * 0.01;
  if (frac >= 0.5) return cfg.lr * 0.1;
  return cfg.lr;
}

Mat rows_of(const Dataset& d, const std::vector<int>& idx, long begin, long count) {
  Mat out(count, d.dim());
  for (long i = 0; i < count; ++i) out.row(i) = d.x.row(idx[begin + i]);
  return out;
}

std::vector<int> labels_of(const Dataset& d, const std::vector<int>& idx, long begin, long count) {
  std::vector<int> out(count);
  for (long i = 0; i < count; ++i) out[i] = d.y[idx[begin + i]];
  return out;
}

Tensor to_image_tensor(const Mat& x, const NetworkSpec& spec) {
  Vec v(x.rows() * x.cols());
  for (long i = 0; i < x.rows(); ++i) v.segment(i * x.cols(), x.cols()) = x.row(i).transpose();
  return Tensor::constant({static_cast<int>(x.rows()), spec.in_c, spec.in_h, spec.in_w}, std::move(v));
}

// Inner adversarial loop shared by both phases. Literal mode steps by
// epsilon and clips to the pixel box only; strict mode steps by alpha and
// re-projects into the epsilon-ball around the original batch.
void perturb_batch(Mat& x, const Mat& x0, const std::vector<int>& y,
                   const GradientOracle& oracle, const TrainConfig& cfg) {
  double step = cfg.strict_ifgsm ? cfg.alpha : cfg.epsilon;
  for (int it = 0; it < cfg.ifgsm_iters; ++it) {
    Mat g = oracle(x, y);
    for (long i = 0; i < x.rows(); ++i)
      for (long j = 0; j < x.cols(); ++j) {
        double s = g(i, j) > 0.0 ? 1.0 : (g(i, j) < 0.0 ? -1.0 : 0.0);
        double v = x(i, j) + step * s;
        if (cfg.strict_ifgsm)
          v = std::clamp(v, x0(i, j) - cfg.epsilon, x0(i, j) + cfg.epsilon);
        x(i, j) = std::clamp(v, 0.0, 1.0);
      }
  }
}

void checksum(TrainingLog& log, const TwoBranchModel& m, const std::string& tag) {
  log.checksums.push_back({tag, m.theta.checksum(), m.w_buffer.checksum(), m.w_linear.checksum()});
}

// One epoch of (possibly adversarial) SGD through the linear head.
LogEntry linear_epoch(TwoBranchModel& model, const Dataset& data,
                      const TrainConfig& cfg, int alternation, int epoch,
                      int global_epoch, double lr) {
  std::vector<int> order(data.n());
  for (long i = 0; i < data.n(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng = Rng(cfg.seed).substream("shuffle:linear:" + std::to_string(global_epoch));
  shuffle_rng.shuffle(order);

  GradientOracle oracle = make_linear_oracle(model);
  double loss_sum = 0.0;
  long hit = 0, total = 0, batches = 0;
  for (long b = 0; b < data.n(); b += cfg.batch_size) {
    long count = std::min<long>(cfg.batch_size, data.n() - b);
    Mat x0 = rows_of(data, order, b, count);
    std::vector<int> y = labels_of(data, order, b, count);
    Mat x = x0;
    if (cfg.ifgsm_iters > 0) perturb_batch(x, x0, y, oracle, cfg);

    ForwardTrace tr = forward_linear(model, to_image_tensor(x, model.spec));
    Tensor loss = cross_entropy(tr.y_tilde, y);
    if (!std::isfinite(loss.value()[0]))
      throw std::runtime_error("standard_train: non-finite loss (divergence)");
    loss_sum += loss.value()[0];
    long m = model.spec.num_classes;
    for (long i = 0; i < count; ++i) {
      const double* row = tr.y_tilde.value().data() + i * m;
      int best = 0;
      for (long c = 1; c < m; ++c)
        if (row[c] > row[best]) best = static_cast<int>(c);
      hit += best == y[i];
    }
    total += count;
    ++batches;

    model.theta.zero_grad();
    model.w_buffer.zero_grad();
    model.w_linear.zero_grad();
    backward(loss);
    sgd_step(model.theta, lr);
    sgd_step(model.w_buffer, lr);
    sgd_step(model.w_linear, lr);
  }
  return {"linear", alternation, epoch, batches ? loss_sum / batches : 0.0,
          total ? static_cast<double>(hit) / total : 0.0};
}

LogEntry wnll_epoch(TwoBranchModel& model, const Dataset& train, const Dataset& tpl,
                    const TrainConfig& cfg, int alternation, int epoch,
                    int global_epoch, double lr) {
  std::vector<int> order(train.n());
  for (long i = 0; i < train.n(); ++i) order[i] = static_cast<int>(i);
  Rng shuffle_rng = Rng(cfg.seed).substream("shuffle:wnll:" + std::to_string(global_epoch));
  shuffle_rng.shuffle(order);

  GradientOracle oracle = make_wnll_oracle(model, tpl, cfg.knn);
  double loss_sum = 0.0;
  long hit = 0, total = 0, batches = 0;
  for (long b = 0; b < train.n(); b += cfg.batch_size) {
    long count = std::min<long>(cfg.batch_size, train.n() - b);
    Mat x0 = rows_of(train, order, b, count);
    std::vector<int> y = labels_of(train, order, b, count);
    Mat x = x0;
    if (cfg.ifgsm_iters > 0) perturb_batch(x, x0, y, oracle, cfg);

    Tensor xt = to_image_tensor(x, model.spec);
    ForwardTrace tr = forward_wnll(model, xt, tpl, cfg.knn);
    double lw = wnll_loss_value(tr.y_hat, y);
    if (!std::isfinite(lw)) throw std::runtime_error("pgd_adv_train: non-finite WNLL loss");
    loss_sum += lw;
    InterpolationField f;
    f.u = tr.y_hat;
    std::vector<int> pred = predict_labels(f);
    for (long i = 0; i < count; ++i) hit += pred[i] == y[i];
    total += count;
    ++batches;

    straight_through_update(model, xt, y, tpl, lr, cfg.knn);
  }
  return {"wnll", alternation, epoch, batches ? loss_sum / batches : 0.0,
          total ? static_cast<double>(hit) / total : 0.0};
}

}  // namespace

Dataset augment_dataset(const Dataset& data, const std::string& mode,
                        const TvmConfig& tvm_config, const Rng& rng) {
  if (mode == "original") return data;
  if (mode == "tvm") return apply_tvm_batch(data, tvm_config, rng);
  if (mode == "original_plus_tvm") return concat(data, apply_tvm_batch(data, tvm_config, rng));
  throw std::invalid_argument("augment_dataset: unknown mode '" + mode + "'");
}

TrainingLog standard_train(TwoBranchModel& model, const Dataset& data,
                           const TrainConfig& config) {
  config.validate();
  if (data.n() < 1) throw std::invalid_argument("standard_train: empty dataset");
  TrainConfig cfg = config;
  cfg.ifgsm_iters = 0;  // no perturbation in standard training
  Dataset train = augment_dataset(data, cfg.augmentation, cfg.tvm, Rng(cfg.seed).substream("augment"));

  TrainingLog log;
  checksum(log, model, "start");
  for (int e = 0; e < cfg.epochs_linear; ++e) {
    double lr = phase_lr(cfg, e, cfg.epochs_linear);
    log.entries.push_back(linear_epoch(model, train, cfg, 0, e, e, lr));
  }
  checksum(log, model, "end");
  return log;
}

TrainingLog pgd_adv_train(TwoBranchModel& model, const Dataset& data,
                          const TrainConfig& config) {
  config.validate();
  if (data.n() < 1) throw std::invalid_argument("pgd_adv_train: empty dataset");
  Dataset train = augment_dataset(data, config.augmentation, config.tvm,
                                  Rng(config.seed).substream("augment"));

  TrainingLog log;
  checksum(log, model, "start");
  int global_linear = 0, global_wnll = 0;
  for (int alt = 0; alt < config.alternations; ++alt) {
    for (int e = 0; e < config.epochs_linear; ++e) {
      double lr = phase_lr(config, e, config.epochs_linear);
      log.entries.push_back(linear_epoch(model, train, config, alt, e, global_linear++, lr));
    }
    checksum(log, model, "alt" + std::to_string(alt) + ":after-linear");

    if (config.epochs_wnll > 0) {
      // re-split template once per alternation, stratified by class
      Rng tpl_rng = Rng(config.seed).substream("template:" + std::to_string(alt));
      int tsz = config.effective_template_size(train.n(), train.num_classes);
      TemplateSplit split = reserve_template(train, tsz, tpl_rng);
      for (int e = 0; e < config.epochs_wnll; ++e) {
        double lr = phase_lr(config, e, config.epochs_wnll);
        log.entries.push_back(wnll_epoch(model, split.remainder, split.tpl, config, alt, e, global_wnll++, lr));
      }
    }
    checksum(log, model, "alt" + std::to_string(alt) + ":after-wnll");
  }
  return log;
}

TrainingLog train_alternating(TwoBranchModel& model, const Dataset& data,
                              const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.ifgsm_iters = 0;
  cfg.epsilon = 0.0;
  return pgd_adv_train(model, data, cfg);
}

}  // namespace wnlab
