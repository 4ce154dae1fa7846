#pragma once

#include <map>
#include <string>

#include "wnlab/tensor.hpp"

namespace wnlab {

// Named parameters with per-parameter Adam moment buffers. The map is
// ordered so iteration (and therefore every update) is deterministic.
struct ParamStore {
  std::map<std::string, Tensor> params;
  std::map<std::string, Vec> adam_m;
  std::map<std::string, Vec> adam_v;
  long step = 0;

  void add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void zero_grad();
  // Concatenation of all parameter values in name order.
  Vec flat_values() const;
  // FNV-1a over the raw bytes of all parameter values, in name order.
  uint64_t checksum() const;
};

// p <- p - lr * grad(p), then grads are cleared. A parameter without a
// populated grad is an error naming that parameter.
void sgd_step(ParamStore& ps, double lr);

// Standard Adam with bias correction; rejects non-finite gradients.
void adam_step(ParamStore& ps, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

}  // namespace wnlab
