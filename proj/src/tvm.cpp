#include "wnlab/tvm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace wnlab {

void TvmConfig::validate() const {
  if (keep_prob <= 0.0 || keep_prob > 1.0)
    throw std::invalid_argument("TvmConfig: keep_prob must be in (0,1]");
  if (lambda_tv < 0.0) throw std::invalid_argument("TvmConfig: lambda_tv must be >= 0");
  if (eps_tv <= 0.0) throw std::invalid_argument("TvmConfig: eps_tv must be > 0");
  if (iters < 0) throw std::invalid_argument("TvmConfig: iters must be >= 0");
  if (step <= 0.0) throw std::invalid_argument("TvmConfig: step must be > 0");
}

Vec sample_mask(long size, double keep_prob, Rng& rng) {
  if (keep_prob <= 0.0 || keep_prob > 1.0)
    throw std::invalid_argument("sample_mask: keep_prob must be in (0,1]");
  Vec m(size);
  for (long i = 0; i < size; ++i) m[i] = rng.bernoulli(keep_prob) ? 1.0 : 0.0;
  return m;
}

double tv2(const Vec& z, int c, int h, int w, double eps_tv) {
  if (h < 2 || w < 2) throw std::invalid_argument("tv2: image must be at least 2x2");
  if (z.size() != static_cast<long>(c) * h * w)
    throw std::invalid_argument("tv2: data length does not match (c,h,w)");
  double tv = 0.0;
  for (int pl = 0; pl < c; ++pl) {
    const double* p = z.data() + static_cast<long>(pl) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double gh = x + 1 < w ? p[y * w + x + 1] - p[y * w + x] : 0.0;
        double gv = y + 1 < h ? p[(y + 1) * w + x] - p[y * w + x] : 0.0;
        tv += std::sqrt(gh * gh + gv * gv + eps_tv * eps_tv) - eps_tv;
      }
  }
  return tv;
}

namespace {

// Fidelity is the squared norm on kept pixels; the unsquared value the
// objective is reported with elsewhere is derivable from it.
double objective(const Vec& z, const Vec& x, const Vec& mask, int c, int h, int w,
                 const TvmConfig& cfg) {
  double fid = (mask.array() * (z - x).array().square()).sum();
  return fid + cfg.lambda_tv * tv2(z, c, h, w, cfg.eps_tv);
}

Vec gradient(const Vec& z, const Vec& x, const Vec& mask, int c, int h, int w,
             const TvmConfig& cfg) {
  Vec g = 2.0 * (mask.array() * (z - x).array()).matrix();
  for (int pl = 0; pl < c; ++pl) {
    const double* p = z.data() + static_cast<long>(pl) * h * w;
    double* gp = g.data() + static_cast<long>(pl) * h * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        double gh = xx + 1 < w ? p[y * w + xx + 1] - p[y * w + xx] : 0.0;
        double gv = y + 1 < h ? p[(y + 1) * w + xx] - p[y * w + xx] : 0.0;
        double denom = std::sqrt(gh * gh + gv * gv + cfg.eps_tv * cfg.eps_tv);
        double ch = cfg.lambda_tv * gh / denom;
        double cv = cfg.lambda_tv * gv / denom;
        gp[y * w + xx] -= ch + cv;
        if (xx + 1 < w) gp[y * w + xx + 1] += ch;
        if (y + 1 < h) gp[(y + 1) * w + xx] += cv;
      }
  }
  return g;
}

}  // namespace

TvmResult tvm_reconstruct(const Vec& x, const Vec& mask, int c, int h, int w,
                          const TvmConfig& config) {
  config.validate();
  if (mask.size() != x.size())
    throw std::invalid_argument("tvm_reconstruct: mask not congruent to image");
  TvmResult res;
  res.z = x;
  double step = config.step;
  double obj = objective(res.z, x, mask, c, h, w, config);
  if (!std::isfinite(obj)) throw std::runtime_error("tvm_reconstruct: non-finite objective");
  res.objective_trace.push_back(obj);
  for (int it = 0; it < config.iters; ++it) {
    Vec g = gradient(res.z, x, mask, c, h, w, config);
    bool moved = false;
    for (int halving = 0; halving <= 20; ++halving) {
      Vec cand = res.z - step * g;
      double cobj = objective(cand, x, mask, c, h, w, config);
      if (!std::isfinite(cobj)) throw std::runtime_error("tvm_reconstruct: non-finite objective");
      if (cobj <= obj) {
        res.z = std::move(cand);
        obj = cobj;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    res.objective_trace.push_back(obj);
    if (!moved) break;  // no descent direction at this resolution
  }
  res.z = res.z.cwiseMax(0.0).cwiseMin(1.0);
  return res;
}

Dataset apply_tvm_batch(const Dataset& images, const TvmConfig& config, const Rng& rng) {
  config.validate();
  Dataset out = images;
  for (long i = 0; i < images.n(); ++i) {
    Rng img_rng = rng.substream("mask:" + std::to_string(i));
    Vec x = images.x.row(i).transpose();
    Vec mask = sample_mask(x.size(), config.keep_prob, img_rng);
    TvmResult r = tvm_reconstruct(x, mask, images.c, images.h, images.w, config);
    out.x.row(i) = r.z.transpose();
  }
  return out;
}

}  // namespace wnlab
