#include "wnlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace wnlab {

namespace {

constexpr char kMagic[8] = {'W', 'N', 'L', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf += s;
}

void put_f64(std::string& buf, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  double f64() {
    uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

uint64_t fnv1a_bytes(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void put_store(std::string& buf, const std::string& prefix, const ParamStore& ps) {
  put_u32(buf, static_cast<uint32_t>(ps.params.size()));
  for (const auto& [name, p] : ps.params) {
    put_string(buf, prefix + "/" + name);
    put_u32(buf, static_cast<uint32_t>(p.shape().size()));
    for (int d : p.shape()) put_u32(buf, static_cast<uint32_t>(d));
    put_u64(buf, static_cast<uint64_t>(p.numel()));
    for (long i = 0; i < p.numel(); ++i) put_f64(buf, p.value()[i]);
  }
}

void read_store(Reader& r, const std::string& prefix, ParamStore& ps) {
  uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string full = r.str();
    if (full.rfind(prefix + "/", 0) != 0)
      throw std::runtime_error("checkpoint: parameter '" + full + "' does not belong to store '" + prefix + "'");
    std::string name = full.substr(prefix.size() + 1);
    uint32_t ndim = r.u32();
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(r.u32());
    uint64_t numel = r.u64();
    if (static_cast<long>(numel) != shape_numel(shape))
      throw std::runtime_error("checkpoint: parameter '" + full + "' shape/length mismatch");
    Vec v(static_cast<long>(numel));
    for (uint64_t j = 0; j < numel; ++j) v[static_cast<long>(j)] = r.f64();
    auto it = ps.params.find(name);
    if (it == ps.params.end())
      throw std::runtime_error("checkpoint: unexpected parameter '" + full + "' for this spec");
    if (it->second.shape() != shape)
      throw std::runtime_error("checkpoint: parameter '" + full + "' has shape " + shape_str(shape) + ", spec expects " + shape_str(it->second.shape()));
    it->second.value() = v;
  }
}

std::string encode_spec(const NetworkSpec& s) {
  std::string buf;
  put_string(buf, s.name);
  put_u32(buf, static_cast<uint32_t>(s.in_c));
  put_u32(buf, static_cast<uint32_t>(s.in_h));
  put_u32(buf, static_cast<uint32_t>(s.in_w));
  put_u32(buf, static_cast<uint32_t>(s.feature_dim));
  put_u32(buf, static_cast<uint32_t>(s.num_classes));
  put_u32(buf, static_cast<uint32_t>(s.dnn_layers.size()));
  for (const auto& ld : s.dnn_layers) {
    put_u32(buf, static_cast<uint32_t>(ld.kind));
    put_u32(buf, static_cast<uint32_t>(ld.width));
  }
  return buf;
}

NetworkSpec decode_spec(Reader& r) {
  NetworkSpec s;
  s.name = r.str();
  s.in_c = static_cast<int>(r.u32());
  s.in_h = static_cast<int>(r.u32());
  s.in_w = static_cast<int>(r.u32());
  s.feature_dim = static_cast<int>(r.u32());
  s.num_classes = static_cast<int>(r.u32());
  uint32_t nl = r.u32();
  for (uint32_t i = 0; i < nl; ++i) {
    uint32_t kind = r.u32();
    uint32_t width = r.u32();
    if (kind > static_cast<uint32_t>(LayerDesc::Kind::Dense))
      throw std::runtime_error("checkpoint: unknown layer kind " + std::to_string(kind));
    s.dnn_layers.push_back({static_cast<LayerDesc::Kind>(kind), static_cast<int>(width)});
  }
  return s;
}

}  // namespace

void save_checkpoint(const TwoBranchModel& model, const std::string& path,
                     const CheckpointMeta& meta) {
  std::string body;
  put_u32(body, kVersion);
  body += encode_spec(model.spec);
  put_u64(body, meta.seed);
  put_u32(body, static_cast<uint32_t>(meta.epoch));
  put_store(body, "theta", model.theta);
  put_store(body, "buffer", model.w_buffer);
  put_store(body, "linear", model.w_linear);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("save_checkpoint: cannot write " + path);
  f.write(kMagic, 8);
  f.write(body.data(), static_cast<long>(body.size()));
  std::string cks;
  put_u64(cks, fnv1a_bytes(body));
  f.write(cks.data(), 8);
  if (!f) throw std::runtime_error("save_checkpoint: write failure on " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::string& expected_spec_name) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string all((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (all.size() < 16 || std::memcmp(all.data(), kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  std::string body = all.substr(8, all.size() - 16);
  std::string cks_bytes = all.substr(all.size() - 8);
  Reader cr(cks_bytes);
  if (cr.u64() != fnv1a_bytes(body))
    throw std::runtime_error("load_checkpoint: checksum mismatch in " + path);

  Reader r(body);
  uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: version " + std::to_string(version) + ", expected " + std::to_string(kVersion));
  NetworkSpec spec = decode_spec(r);
  if (!expected_spec_name.empty() && spec.name != expected_spec_name)
    throw std::runtime_error("load_checkpoint: checkpoint spec '" + spec.name + "' does not match expected spec '" + expected_spec_name + "'");

  LoadedCheckpoint out{TwoBranchModel{}, {}};
  out.meta.seed = r.u64();
  out.meta.epoch = static_cast<int>(r.u32());
  Rng dummy(0);
  out.model = TwoBranchModel::init(spec, dummy);
  read_store(r, "theta", out.model.theta);
  read_store(r, "buffer", out.model.w_buffer);
  read_store(r, "linear", out.model.w_linear);
  if (r.pos != body.size()) throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
  return out;
}

}  // namespace wnlab
