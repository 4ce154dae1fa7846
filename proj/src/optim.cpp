#include "wnlab/optim.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace wnlab {

void ParamStore::add(const std::string& name, Tensor t) {
  if (params.count(name))
    throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
  if (!t.attached())
    throw std::invalid_argument("ParamStore: parameter '" + name + "' must be an attached leaf");
  params.emplace(name, std::move(t));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params) p.zero_grad();
}

Vec ParamStore::flat_values() const {
  long total = 0;
  for (const auto& [name, p] : params) total += p.numel();
  Vec out(total);
  long off = 0;
  for (const auto& [name, p] : params) {
    out.segment(off, p.numel()) = p.value();
    off += p.numel();
  }
  return out;
}

uint64_t ParamStore::checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, p] : params) {
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.value().data());
    for (long i = 0; i < p.numel() * 8; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void sgd_step(ParamStore& ps, double lr) {
  for (auto& [name, p] : ps.params)
    if (!p.has_grad())
      throw std::runtime_error("sgd_step: parameter '" + name + "' has no gradient");
  for (auto& [name, p] : ps.params) {
    p.value() -= lr * p.grad();
    p.clear_grad();
  }
  ps.step += 1;
}

void adam_step(ParamStore& ps, double lr, double beta1, double beta2, double eps) {
  for (auto& [name, p] : ps.params) {
    if (!p.has_grad())
      throw std::runtime_error("adam_step: parameter '" + name + "' has no gradient");
    if (!p.grad().allFinite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter '" + name + "'");
  }
  ps.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(ps.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(ps.step));
  for (auto& [name, p] : ps.params) {
    Vec& m = ps.adam_m.try_emplace(name, Vec::Zero(p.numel())).first->second;
    Vec& v = ps.adam_v.try_emplace(name, Vec::Zero(p.numel())).first->second;
    m = beta1 * m + (1.0 - beta1) * p.grad();
    v = beta2 * v + (1.0 - beta2) * p.grad().cwiseProduct(p.grad());
    Vec mhat = m / bc1;
    Vec vhat = v / bc2;
    p.value().array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    p.zero_grad();
  }
}

}  // namespace wnlab
