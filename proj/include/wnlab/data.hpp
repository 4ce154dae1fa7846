#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "wnlab/rng.hpp"
#include "wnlab/tensor.hpp"

namespace wnlab {

// In-memory dataset: one flattened example per row, pixel values in [0,1]
// for image data. Flat 2-D feature data uses c = h = 1, w = dim.
struct Dataset {
  Mat x;
  std::vector<int> y;
  int c = 1, h = 1, w = 1;
  int num_classes = 0;

  long n() const { return x.rows(); }
  long dim() const { return x.cols(); }
  Shape image_shape(long batch) const { return {static_cast<int>(batch), c, h, w}; }

  Dataset subset(const std::vector<int>& indices) const;
  // Batch rows [begin, begin+count) as a detached (count, c, h, w) tensor.
  Tensor batch_tensor(long begin, long count) const;
  std::vector<int> batch_labels(long begin, long count) const;
};

Dataset concat(const Dataset& a, const Dataset& b);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes
// (row-major R, G, B planes), pixels scaled to [0,1]. class_subset empty
// means all 10 classes; otherwise labels are remapped to 0..|subset|-1 in
// ascending class order. per_class_cap <= 0 means no cap.
Dataset load_cifar10(const std::vector<std::string>& paths,
                     const std::set<int>& class_subset = {},
                     int per_class_cap = 0);

// Deterministic 2-D, 2-class synthetic sets on [0,1]^2, balanced.
Dataset gen_synthetic(const std::string& kind, int n, double noise, uint64_t seed);

// Deterministic 2-class image set (1 x size x size): horizontal vs vertical
// gratings plus Gaussian noise. A no-download stand-in for image experiments.
Dataset gen_grating_images(int n, int size, double noise, uint64_t seed);

// Stratified split covering every class; per-class counts differ by at most
// one for balanced input. Warns (returned flag) when size < m ln m.
struct TemplateSplit {
  Dataset tpl;
  Dataset remainder;
  std::vector<int> template_indices;  // into the input dataset
  bool size_warning = false;
};
TemplateSplit reserve_template(const Dataset& data, int size, Rng& rng);

}  // namespace wnlab
