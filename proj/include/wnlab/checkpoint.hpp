#pragma once

#include <string>

#include "wnlab/model.hpp"

namespace wnlab {

struct CheckpointMeta {
  uint64_t seed = 0;
  int epoch = 0;
};

// Binary format: magic, version, spec descriptor, seed/epoch, then
// length-prefixed (name, shape, little-endian f64 payload) records in name
// order, trailing FNV-1a checksum. Round trips are bit-exact.
void save_checkpoint(const TwoBranchModel& model, const std::string& path,
                     const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
  TwoBranchModel model;
  CheckpointMeta meta;
};

// expected_spec_name, when non-empty, must match the stored spec name.
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& expected_spec_name = "");

}  // namespace wnlab
