#ifndef MRDD_CHECKPOINT_HPP
#define MRDD_CHECKPOINT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mrdd/tensor.hpp"

namespace mrdd::ckpt {

/// Named parameter arrays plus the metadata records that rebuild the model;
/// versioned binary container.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
  const std::string& meta_at(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t h = 0xcbf29ce484222325ULL);

/// Hex digest over named tensors (names and payloads, in the given order).
std::string hash_tensors(const std::vector<std::pair<std::string, Tensor*>>& tensors);

}  // namespace mrdd::ckpt

#endif
