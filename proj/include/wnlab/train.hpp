#pragma once

#include <string>
#include <vector>

#include "wnlab/attacks.hpp"
#include "wnlab/data.hpp"
#include "wnlab/model.hpp"
#include "wnlab/tvm.hpp"

namespace wnlab {

struct TrainConfig {
  int alternations = 1;   // N
  int epochs_linear = 10; // N1
  int epochs_wnll = 0;    // N2
  int ifgsm_iters = 0;    // N_IFGSM, 0 disables the inner attack loop
  double epsilon = 0.0;
  double alpha = 0.0;          // strict-IFGSM step
  bool strict_ifgsm = false;   // step alpha + eps-ball clip instead of step eps + box clip
  double lr = 0.1;
  bool lr_decay = true;        // x0.1 at 50% and 75% of the per-phase epoch budget
  int batch_size = 32;
  std::string augmentation = "original";  // original | tvm | original_plus_tvm
  TvmConfig tvm;
  int template_size = 0;  // 0 picks a stratified default
  int knn = 15;
  uint64_t seed = 0;

  void validate() const;
  int effective_template_size(long n, int m) const;
};

struct LogEntry {
  std::string phase;  // "linear" | "wnll"
  int alternation = 0;
  int epoch = 0;
  double loss = 0.0;
  double acc = 0.0;
};

struct PhaseChecksum {
  std::string tag;
  uint64_t theta = 0, buffer = 0, linear = 0;
};

struct TrainingLog {
  std::vector<LogEntry> entries;
  std::vector<PhaseChecksum> checksums;
};

// Mini-batch SGD on cross-entropy through the linear head.
TrainingLog standard_train(TwoBranchModel& model, const Dataset& data,
                           const TrainConfig& config);

// original -> identity; tvm -> TVM-processed copies only;
// original_plus_tvm -> concatenation with duplicated labels.
Dataset augment_dataset(const Dataset& data, const std::string& mode,
                        const TvmConfig& tvm_config, const Rng& rng);

// Algorithm: alternate PGD training of the linear branch (inner IFGSM loop
// against the linear head) and of the WNLL branch (inner loop on the
// approximate gradient, straight-through outer update).
TrainingLog pgd_adv_train(TwoBranchModel& model, const Dataset& data,
                          const TrainConfig& config);

// Alternating training without adversarial perturbation.
TrainingLog train_alternating(TwoBranchModel& model, const Dataset& data,
                              const TrainConfig& config);

}  // namespace wnlab
