#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace wnlab {

struct ReportRow {
  std::string attack;
  std::string mode;  // training-data mode
  std::string head;  // softmax | wnll
  double epsilon = 0.0;
  double clean_acc = 0.0;
  double adv_acc = 0.0;
  double tvm_adv_acc = 0.0;
  double linf_max = 0.0;
  uint64_t seed = 0;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> metadata;  // extra key/values
  double wall_time_sec = 0.0;  // written to timing.txt, outside the deterministic files
};

// Writes report.csv (fixed column order), metadata.json and timing.txt.
// report.csv and metadata.json are pure functions of the report content.
void emit_report(const ExperimentReport& report, const std::string& dir);

// Plot-ready feature rows: pc1/pc2 (or raw values), label, split tag.
struct FeatureExport {
  Eigen::MatrixXd projected;  // n x 2 for pca2, n x d for raw
  std::vector<int> labels;
  std::vector<std::string> tags;
  Eigen::VectorXd explained;  // top eigenvalues for pca2, empty for raw
};

void write_feature_file(const FeatureExport& fx, const std::string& path);

uint64_t config_hash_bytes(const std::string& canonical);

}  // namespace wnlab
