#include "mrdd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mrdd::ckpt {

namespace {
constexpr char kMagic[8] = {'M', 'R', 'D', 'D', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_str(std::istream& is) {
  std::uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}
}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::runtime_error("checkpoint: missing tensor " + name);
}

const std::string& Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta key " + key);
  return it->second;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_u64(os, c.meta.size());
  for (const auto& [k, v] : c.meta) {
    write_str(os, k);
    write_str(os, v);
  }
  write_u64(os, c.tensors.size());
  for (const auto& [name, t] : c.tensors) {
    write_str(os, name);
    write_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_u64(os, static_cast<std::uint64_t>(t.dim(i)));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  }
  Checkpoint c;
  std::uint64_t n_meta = read_u64(is);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = read_str(is);
    c.meta[k] = read_str(is);
  }
  std::uint64_t n_tensors = read_u64(is);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = read_str(is);
    std::uint32_t ndim = read_u32(is);
    if (ndim > 8) throw std::runtime_error(path + ": corrupt tensor header");
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u64(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!is) throw std::runtime_error(path + ": truncated checkpoint");
  return c;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_tensors(const std::vector<std::pair<std::string, Tensor*>>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : tensors) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t->data(), t->size() * sizeof(double), h);
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace mrdd::ckpt
