#ifndef MRDD_MASKING_HPP
#define MRDD_MASKING_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mrdd/data.hpp"
#include "mrdd/rng.hpp"
#include "mrdd/tensor.hpp"

namespace mrdd::masking {

enum class Strategy { random, block, grid };

Strategy strategy_from_string(const std::string& s);
std::string strategy_to_string(Strategy s);

/// Patch-level masking parameters; patch_size must divide both image dims.
struct MaskSpec {
  Strategy strategy = Strategy::random;
  double ratio = 0.7;
  int patch_size = 4;
  double fill = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Boolean patch grid; true = masked.
struct MaskTensor {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<std::uint8_t> cells;

  bool at(int r, int c) const { return cells[static_cast<std::size_t>(r) * grid_w + c] != 0; }
  int popcount() const;
};

/// Number of patches hidden by a ratio over P patches (round half up).
int target_masked_count(double ratio, int patches);

/// Draw one mask. `random` hits target_masked_count exactly with uniform
/// placement; `block` masks a contiguous rectangular region (with a partial
/// final row when the count does not factor) of exactly the target count;
/// `grid` uses an evenly spaced deterministic lattice of the target count.
MaskTensor generate_mask(const MaskSpec& spec, int grid_h, int grid_w, RngStream& rng);

/// Masks for a whole batch: one independent mask per view per sample.
std::vector<std::vector<MaskTensor>> generate_batch_masks(
    const MaskSpec& spec, const data::MultiViewBatch& batch, RngStream& rng);

/// Replace masked patches with the fill value; the input batch is untouched.
data::MultiViewBatch apply_mask(const data::MultiViewBatch& batch,
                                const std::vector<std::vector<MaskTensor>>& masks,
                                int patch_size, double fill);

}  // namespace mrdd::masking

#endif
