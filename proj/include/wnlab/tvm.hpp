#pragma once

#include <vector>

#include "wnlab/data.hpp"
#include "wnlab/rng.hpp"
#include "wnlab/tensor.hpp"

namespace wnlab {

struct TvmConfig {
  double keep_prob = 0.5;    // Bernoulli parameter of the mask (1 = kept)
  double lambda_tv = 0.03;
  int iters = 100;
  double step = 0.1;
  double eps_tv = 1e-6;      // gradient smoothing for the TV term

  void validate() const;
};

// mask entry 1 means the pixel is kept and fidelity-enforced.
struct MaskedImage {
  Vec image;
  Vec mask;
};

Vec sample_mask(long size, double keep_prob, Rng& rng);

// Smoothed isotropic total variation over (c, h, w) planes: sum of
// sqrt(dh^2 + dv^2 + eps^2) - eps, forward differences, replicate boundary.
double tv2(const Vec& z, int c, int h, int w, double eps_tv = 1e-6);

struct TvmResult {
  Vec z;
  std::vector<double> objective_trace;  // non-increasing by the halving rule
};

TvmResult tvm_reconstruct(const Vec& x, const Vec& mask, int c, int h, int w,
                          const TvmConfig& config);

// Independent mask per image, deterministic per-image seed streams.
Dataset apply_tvm_batch(const Dataset& images, const TvmConfig& config, const Rng& rng);

}  // namespace wnlab
