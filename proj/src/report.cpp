#include "wnlab/report.hpp"

#include "wnlab/errors.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace wnlab {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void validate(const ExperimentReport& r) {
  for (const auto& row : r.rows) {
    for (double acc : {row.clean_acc, row.adv_acc, row.tvm_adv_acc})
      if (acc < 0.0 || acc > 1.0)
        throw AuditError("emit_report: accuracy " + fmt(acc) + " outside [0,1]");
    if (row.linf_max > row.epsilon + 1e-12)
      throw AuditError("emit_report: linf audit " + fmt(row.linf_max) + " exceeds epsilon " + fmt(row.epsilon));
  }
}

}  // namespace

uint64_t config_hash_bytes(const std::string& canonical) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void emit_report(const ExperimentReport& report, const std::string& dir) {
  validate(report);
  std::filesystem::create_directories(dir);

  {
    std::ofstream f(dir + "/report.csv", std::ios::trunc);
    if (!f) throw std::runtime_error("emit_report: cannot write " + dir + "/report.csv");
    f << "attack,mode,head,epsilon,clean_acc,adv_acc,tvm_adv_acc,linf_max,seed\n";
    for (const auto& r : report.rows)
      f << r.attack << ',' << r.mode << ',' << r.head << ',' << fmt(r.epsilon) << ','
        << fmt(r.clean_acc) << ',' << fmt(r.adv_acc) << ',' << fmt(r.tvm_adv_acc) << ','
        << fmt(r.linf_max) << ',' << r.seed << '\n';
    if (!f) throw std::runtime_error("emit_report: write failure on report.csv");
  }
  {
    std::ofstream f(dir + "/metadata.json", std::ios::trunc);
    if (!f) throw std::runtime_error("emit_report: cannot write " + dir + "/metadata.json");
    f << "{\n  \"seed\": " << report.seed << ",\n  \"config_hash\": \"" << report.config_hash
      << "\",\n  \"rows\": " << report.rows.size();
    for (const auto& [k, v] : report.metadata) f << ",\n  \"" << k << "\": \"" << v << "\"";
    f << "\n}\n";
    if (!f) throw std::runtime_error("emit_report: write failure on metadata.json");
  }
  {
    std::ofstream f(dir + "/timing.txt", std::ios::trunc);
    f << "wall_time_sec " << fmt(report.wall_time_sec) << "\n";
  }
}

void write_feature_file(const FeatureExport& fx, const std::string& path) {
  if (fx.projected.rows() != static_cast<long>(fx.labels.size()) ||
      fx.projected.rows() != static_cast<long>(fx.tags.size()))
    throw std::invalid_argument("write_feature_file: row/label/tag count mismatch");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_feature_file: cannot write " + path);
  f << "# columns: components... label tag\n";
  for (long i = 0; i < fx.projected.rows(); ++i) {
    for (long j = 0; j < fx.projected.cols(); ++j) f << fmt(fx.projected(i, j)) << ' ';
    f << fx.labels[static_cast<size_t>(i)] << ' ' << fx.tags[static_cast<size_t>(i)] << '\n';
  }
  if (!f) throw std::runtime_error("write_feature_file: write failure on " + path);
}

}  // namespace wnlab
