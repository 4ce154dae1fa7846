#pragma once

#include <set>
#include <string>
#include <vector>

#include "wnlab/attacks.hpp"
#include "wnlab/checkpoint.hpp"
#include "wnlab/report.hpp"
#include "wnlab/train.hpp"

namespace wnlab {

struct ExperimentConfig {
  std::string task = "train";  // train | attack | defend | sweep | transfer | export-features
  // dataset
  std::string dataset = "blobs";  // blobs | moons | gratings | cifar10
  std::string cifar_dir;
  std::set<int> class_subset;
  int per_class_cap = 0;
  int n_train = 400;
  int n_test = 200;
  double noise = 0.08;
  int grating_size = 16;
  // model + training
  TrainConfig train;
  bool adversarial_training = false;
  // attacks
  std::vector<std::string> attacks = {"fgsm", "ifgsm"};
  std::vector<double> eps_grid = {0.0, 0.02, 0.04, 0.06, 0.08, 0.1};
  AttackConfig attack;
  std::vector<std::string> train_modes = {"original"};
  // tvm
  TvmConfig tvm;
  std::string out_dir = "out";
  uint64_t seed = 0;

  void validate() const;
  // Canonical textual form used for the config hash.
  std::string canonical() const;
};

// Deterministic train/test pair for the configured dataset source.
struct DataSplit {
  Dataset train;
  Dataset test;
};
DataSplit load_experiment_data(const ExperimentConfig& config);

NetworkSpec spec_for(const ExperimentConfig& config, const Dataset& data);

// Path convention used by the sweep/transfer drivers.
std::string checkpoint_path(const ExperimentConfig& config, const std::string& mode);

// Trains one checkpoint per configured training-data mode.
void run_training_task(const ExperimentConfig& config);

// Per (mode, attack, epsilon, head): adversarial accuracy and TVM-defended
// adversarial accuracy, with l_inf audit columns.
ExperimentReport run_defense_sweep(const ExperimentConfig& config);

// Cross-head transfer: adversarial sets crafted against each head are
// classified by the opponent head.
ExperimentReport run_transfer_eval(const ExperimentConfig& config);

// Buffer-block features, optionally projected on the top-2 principal
// components of the sample covariance (first nonzero loading positive).
FeatureExport export_features(const TwoBranchModel& model, const Dataset& data,
                              const std::string& mode, const std::string& tag);

// Original / adversarial / TVM triples as portable pixmap files.
void dump_samples(const ExperimentConfig& config, int count);

}  // namespace wnlab
