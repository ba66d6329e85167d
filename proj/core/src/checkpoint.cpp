#include "protostream/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "protostream/errors.hpp"

namespace protostream {

namespace {

constexpr char kMagic[8] = {'P', 'S', 'T', 'N', 'C', 'K', 'P', '1'};

void put_u32(std::ostream& os, uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  os.write(reinterpret_cast<char*>(b), 8);
}

void put_f64(std::ostream& os, double x) {
  uint64_t bits;
  std::memcpy(&bits, &x, 8);
  put_u64(os, bits);
}

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(b[i]) << (8 * i);
  return x;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
  return x;
}

double get_f64(std::istream& is) {
  const uint64_t bits = get_u64(is);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

std::string get_str(std::istream& is) {
  const uint32_t len = get_u32(is);
  if (len > (1u << 20)) throw ConfigError("checkpoint: corrupt string length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_str(os, name);
  put_u32(os, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
  for (Real x : t.v) put_f64(os, static_cast<double>(x));
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
  std::string name = get_str(is);
  const uint32_t ndim = get_u32(is);
  if (ndim > 8) throw ConfigError("checkpoint: corrupt tensor rank");
  std::vector<int> shape(ndim);
  for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(get_u32(is));
  Tensor t = Tensor::zeros(shape);
  for (Real& x : t.v) x = static_cast<Real>(get_f64(is));
  return {std::move(name), std::move(t)};
}

CheckpointHeader read_header(std::istream& is, const std::string& path) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ConfigError("not a checkpoint file: " + path);
  CheckpointHeader h;
  h.schema_version = get_u32(is);
  if (h.schema_version != kSchemaVersion)
    throw ConfigError("checkpoint schema version " +
                      std::to_string(h.schema_version) + " != expected " +
                      std::to_string(kSchemaVersion) + ": " + path);
  h.learner = get_str(is);
  h.config_hash = get_u64(is);
  h.train_step = static_cast<int64_t>(get_u64(is));
  h.best_val_ap = get_f64(is);
  return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParameterStore& params, const Adam* optimizer) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  put_u32(os, header.schema_version);
  put_str(os, header.learner);
  put_u64(os, header.config_hash);
  put_u64(os, static_cast<uint64_t>(header.train_step));
  put_f64(os, header.best_val_ap);

  uint32_t count = static_cast<uint32_t>(params.size());
  if (optimizer) count += 2 * static_cast<uint32_t>(optimizer->state().size()) + 1;
  put_u32(os, count);
  for (const auto& e : params.entries()) put_tensor(os, e.name, e.value);
  if (optimizer) {
    for (const auto& [name, mom] : optimizer->state()) {
      put_tensor(os, "opt.m:" + name, mom.m);
      put_tensor(os, "opt.v:" + name, mom.v);
    }
    put_tensor(os, "opt.step",
               Tensor::scalar(static_cast<Real>(optimizer->step_count())));
  }
  if (!os) throw ConfigError("short write saving checkpoint: " + path);
}

CheckpointHeader load_checkpoint(const std::string& path,
                                 ParameterStore& params, Adam* optimizer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  CheckpointHeader h = read_header(is, path);
  const uint32_t count = get_u32(is);
  std::map<std::string, Adam::Moments> opt_state;
  int64_t opt_step = 0;
  size_t loaded = 0;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, t] = get_tensor(is);
    if (!is) throw ConfigError("truncated checkpoint: " + path);
    if (name.rfind("opt.m:", 0) == 0) {
      opt_state[name.substr(6)].m = std::move(t);
    } else if (name.rfind("opt.v:", 0) == 0) {
      opt_state[name.substr(6)].v = std::move(t);
    } else if (name == "opt.step") {
      opt_step = static_cast<int64_t>(t.v[0]);
    } else {
      if (!params.has(name))
        throw ConfigError("checkpoint/learner mismatch: unexpected tensor '" +
                          name + "' in " + path);
      Tensor& dst = params.value(name);
      if (!dst.same_shape(t))
        throw ConfigError("checkpoint/learner mismatch: tensor '" + name +
                          "' has shape " + t.shape_str() + ", expected " +
                          dst.shape_str());
      dst = std::move(t);
      ++loaded;
    }
  }
  if (loaded != params.size())
    throw ConfigError("checkpoint/learner mismatch: " + std::to_string(loaded) +
                      " of " + std::to_string(params.size()) +
                      " parameters present in " + path);
  if (optimizer) optimizer->restore(std::move(opt_state), opt_step);
  return h;
}

CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open checkpoint: " + path);
  return read_header(is, path);
}

}  // namespace protostream
