#pragma once

#include <functional>
#include <vector>

#include "wnlab/model.hpp"

namespace wnlab {

struct AttackConfig {
  double epsilon = 0.0;  // l_inf budget in pixel units
  double alpha = 0.0;    // per-iteration step
  int iters = 1;
  double c = 10.0;       // CW trade-off multiplier
  double kappa = 0.0;    // CW confidence
  double adam_lr = 0.01;
  double clip_lo = 0.0, clip_hi = 1.0;
  int target = -1;       // targeted class; < 0 means untargeted
  bool cw_best = false;  // best-by-L2-among-successful instead of last iterate

  void validate() const;
};

struct AdversarialBatch {
  Mat originals;
  Mat perturbed;
  Eigen::VectorXd linf_distance;
  Eigen::VectorXd l2_distance;
  std::vector<char> success;
};

// Maps (X, Y) to the gradient d loss / d X of the attacked head.
using GradientOracle = std::function<Mat(const Mat&, const std::vector<int>&)>;
// Classifies a batch under the attacked head's own predictor.
using Predictor = std::function<std::vector<int>(const Mat&)>;

AdversarialBatch fgsm(const GradientOracle& oracle, const Mat& x,
                      const std::vector<int>& y, const AttackConfig& config,
                      const Predictor& predict);

AdversarialBatch ifgsm(const GradientOracle& oracle, const Mat& x,
                       const std::vector<int>& y, const AttackConfig& config,
                       const Predictor& predict);

// CW-L2 with tanh box reparameterization, optimized by Adam on w. Untargeted
// protocol targets the runner-up class of the clean logits.
AdversarialBatch cw_l2(const TwoBranchModel& model, const Mat& x,
                       const std::vector<int>& y, const AttackConfig& config,
                       const Predictor& predict);

// Approximate input gradient of the WNLL head: backprop the linear branch
// with the WNLL loss value substituted for the linear loss.
Mat approx_wnll_gradient(const TwoBranchModel& model, const Mat& x,
                         const std::vector<int>& y, const Dataset& tpl,
                         int k = 15);

GradientOracle make_linear_oracle(const TwoBranchModel& model);
GradientOracle make_wnll_oracle(const TwoBranchModel& model, const Dataset& tpl,
                                int k = 15);
Predictor make_linear_predictor(const TwoBranchModel& model);
Predictor make_wnll_predictor(const TwoBranchModel& model, const Dataset& tpl,
                              int k = 15);

}  // namespace wnlab
