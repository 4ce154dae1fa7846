#include "wnlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <stdexcept>

namespace wnlab {

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.c = c;
  out.h = h;
  out.w = w;
  out.num_classes = num_classes;
  out.x.resize(static_cast<long>(indices.size()), dim());
  out.y.reserve(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    int idx = indices[i];
    if (idx < 0 || idx >= n())
      throw std::invalid_argument("Dataset::subset: index " + std::to_string(idx) + " out of range");
    out.x.row(static_cast<long>(i)) = x.row(idx);
    out.y.push_back(y[idx]);
  }
  return out;
}

Tensor Dataset::batch_tensor(long begin, long count) const {
  if (begin < 0 || count < 1 || begin + count > n())
    throw std::invalid_argument("Dataset::batch_tensor: range [" + std::to_string(begin) + "," + std::to_string(begin + count) + ") out of [0," + std::to_string(n()) + ")");
  Vec v(count * dim());
  for (long i = 0; i < count; ++i)
    v.segment(i * dim(), dim()) = x.row(begin + i).transpose();
  return Tensor::constant(image_shape(count), std::move(v));
}

std::vector<int> Dataset::batch_labels(long begin, long count) const {
  return std::vector<int>(y.begin() + begin, y.begin() + begin + count);
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim() || a.num_classes != b.num_classes || a.c != b.c || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat: incompatible datasets");
  Dataset out;
  out.c = a.c;
  out.h = a.h;
  out.w = a.w;
  out.num_classes = a.num_classes;
  out.x.resize(a.n() + b.n(), a.dim());
  out.x.topRows(a.n()) = a.x;
  out.x.bottomRows(b.n()) = b.x;
  out.y = a.y;
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  return out;
}

Dataset load_cifar10(const std::vector<std::string>& paths,
                     const std::set<int>& class_subset, int per_class_cap) {
  constexpr long kRecord = 3073;
  std::vector<int> remap(10, -1);
  int m;
  if (class_subset.empty()) {
    m = 10;
    for (int i = 0; i < 10; ++i) remap[i] = i;
  } else {
    m = 0;
    for (int cls : class_subset) {
      if (cls < 0 || cls > 9)
        throw std::invalid_argument("load_cifar10: class " + std::to_string(cls) + " out of range");
      remap[cls] = m++;
    }
  }

  std::vector<Vec> images;
  std::vector<int> labels;
  std::vector<int> per_class(m, 0);
  std::vector<unsigned char> record(kRecord);
  for (const auto& path : paths) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_cifar10: cannot open " + path);
    f.seekg(0, std::ios::end);
    long size = static_cast<long>(f.tellg());
    if (size % kRecord != 0)
      throw std::runtime_error("load_cifar10: " + path + " has " + std::to_string(size) + " bytes, not a multiple of " + std::to_string(kRecord));
    f.seekg(0);
    long count = size / kRecord;
    for (long r = 0; r < count; ++r) {
      f.read(reinterpret_cast<char*>(record.data()), kRecord);
      int raw = record[0];
      if (raw > 9) throw std::runtime_error("load_cifar10: " + path + " record " + std::to_string(r) + " has label byte " + std::to_string(raw));
      int cls = remap[raw];
      if (cls < 0) continue;
      if (per_class_cap > 0 && per_class[cls] >= per_class_cap) continue;
      ++per_class[cls];
      Vec img(3072);
      for (int i = 0; i < 3072; ++i) img[i] = static_cast<double>(record[i + 1]) / 255.0;
      images.push_back(std::move(img));
      labels.push_back(cls);
    }
  }

  Dataset out;
  out.c = 3;
  out.h = 32;
  out.w = 32;
  out.num_classes = m;
  out.x.resize(static_cast<long>(images.size()), 3072);
  for (size_t i = 0; i < images.size(); ++i) out.x.row(static_cast<long>(i)) = images[i].transpose();
  out.y = std::move(labels);
  return out;
}

Dataset gen_synthetic(const std::string& kind, int n, double noise, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_synthetic: n must be >= 2");
  Rng rng = Rng(seed).substream("data");
  Dataset out;
  out.c = 1;
  out.h = 1;
  out.w = 2;
  out.num_classes = 2;
  out.x.resize(n, 2);
  out.y.resize(n);
  if (kind == "blobs") {
    for (int i = 0; i < n; ++i) {
      int cls = i % 2;
      double cx = cls == 0 ? 0.3 : 0.7;
      double cy = cls == 0 ? 0.3 : 0.7;
      out.x(i, 0) = std::clamp(cx + noise * rng.normal(), 0.0, 1.0);
      out.x(i, 1) = std::clamp(cy + noise * rng.normal(), 0.0, 1.0);
      out.y[i] = cls;
    }
  } else if (kind == "moons") {
    for (int i = 0; i < n; ++i) {
      int cls = i % 2;
      double t = M_PI * rng.uniform();
      double px, py;
      if (cls == 0) {
        px = 0.5 + 0.35 * std::cos(t);
        py = 0.45 + 0.35 * std::sin(t);
      } else {
        px = 0.5 - 0.35 * std::cos(t) + 0.175;
        py = 0.55 - 0.35 * std::sin(t) - 0.0875;
      }
      out.x(i, 0) = std::clamp(px + noise * rng.normal(), 0.0, 1.0);
      out.x(i, 1) = std::clamp(py + noise * rng.normal(), 0.0, 1.0);
      out.y[i] = cls;
    }
  } else {
    throw std::invalid_argument("gen_synthetic: unknown kind '" + kind + "'");
  }
  return out;
}

Dataset gen_grating_images(int n, int size, double noise, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_grating_images: n must be >= 2");
  if (size < 4) throw std::invalid_argument("gen_grating_images: size must be >= 4");
  Rng rng = Rng(seed).substream("data");
  Dataset out;
  out.c = 1;
  out.h = size;
  out.w = size;
  out.num_classes = 2;
  out.x.resize(n, static_cast<long>(size) * size);
  out.y.resize(n);
  for (int i = 0; i < n; ++i) {
    int cls = i % 2;
    double phase = 2.0 * M_PI * rng.uniform();
    double freq = 2.0 * M_PI * (1.5 + rng.uniform());  // 1.5 to 2.5 cycles
    for (int r = 0; r < size; ++r)
      for (int cc = 0; cc < size; ++cc) {
        double coord = static_cast<double>(cls == 0 ? r : cc) / size;
        double v = 0.5 + 0.25 * std::sin(freq * coord + phase) + noise * rng.normal();
        out.x(i, static_cast<long>(r) * size + cc) = std::clamp(v, 0.0, 1.0);
      }
    out.y[i] = cls;
  }
  return out;
}

TemplateSplit reserve_template(const Dataset& data, int size, Rng& rng) {
  if (size < 1 || size > data.n())
    throw std::invalid_argument("reserve_template: size " + std::to_string(size) + " out of [1," + std::to_string(data.n()) + "]");
  int m = data.num_classes;
  std::vector<std::vector<int>> by_class(m);
  for (long i = 0; i < data.n(); ++i) by_class[data.y[i]].push_back(static_cast<int>(i));
  for (int c = 0; c < m; ++c)
    if (by_class[c].empty())
      throw std::invalid_argument("reserve_template: class " + std::to_string(c) + " absent from dataset");
  for (int c = 0; c < m; ++c) rng.shuffle(by_class[c]);

  // Round-robin over classes keeps per-class counts within one of each other.
  std::vector<int> chosen;
  std::vector<size_t> cursor(m, 0);
  int c = 0;
  while (static_cast<int>(chosen.size()) < size) {
    bool advanced = false;
    for (int tries = 0; tries < m && static_cast<int>(chosen.size()) < size; ++tries) {
      int cls = (c + tries) % m;
      if (cursor[cls] < by_class[cls].size()) {
        chosen.push_back(by_class[cls][cursor[cls]++]);
        c = (cls + 1) % m;
        advanced = true;
        break;
      }
    }
    if (!advanced) break;
  }
  std::sort(chosen.begin(), chosen.end());

  TemplateSplit split;
  split.size_warning = static_cast<double>(size) < m * std::log(static_cast<double>(m));
  if (split.size_warning)
    std::cerr << "warning: template size " << size << " is below m ln m = " << m * std::log(static_cast<double>(m)) << "\n";
  split.template_indices = chosen;
  split.tpl = data.subset(chosen);
  std::vector<char> in_tpl(data.n(), 0);
  for (int i : chosen) in_tpl[i] = 1;
  std::vector<int> rest;
  for (long i = 0; i < data.n(); ++i)
    if (!in_tpl[i]) rest.push_back(static_cast<int>(i));
  split.remainder = data.subset(rest);
  return split;
}

}  // namespace wnlab
