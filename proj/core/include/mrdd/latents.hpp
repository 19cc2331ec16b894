#ifndef MRDD_LATENTS_HPP
#define MRDD_LATENTS_HPP

#include <string>
#include <vector>

#include "mrdd/tensor.hpp"

namespace mrdd::latents {

/// Extracted representations for a whole dataset: the consistent code c
/// (n, d_c) and one specific code (n, d_s) per view, aligned by row.
struct LatentSet {
  Tensor c;
  std::vector<Tensor> s;
  std::vector<int> labels;
  std::vector<int> sample_ids;
  std::string stage1_hash;
  std::string stage2_hash;

  int n_views() const { return static_cast<int>(s.size()); }
  int n_samples() const { return c.ndim() > 0 ? c.dim(0) : 0; }
  void validate() const;
};

/// Directory layout: header.txt plus one binary array per representation.
void save_latents(const std::string& dir, const LatentSet& set);
LatentSet load_latents(const std::string& dir);

}  // namespace mrdd::latents

#endif
