#include "mrdd/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mrdd::masking {

Strategy strategy_from_string(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "block") return Strategy::block;
  if (s == "grid") return Strategy::grid;
  throw std::invalid_argument("unknown mask strategy: " + s);
}

std::string strategy_to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::block: return "block";
    case Strategy::grid: return "grid";
  }
  return "?";
}

void MaskSpec::validate() const {
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("mask: ratio must be in [0,1]");
  if (patch_size < 1) throw std::invalid_argument("mask: patch_size must be >= 1");
}

int MaskTensor::popcount() const {
  int n = 0;
  for (auto v : cells) n += v != 0;
  return n;
}

int target_masked_count(double ratio, int patches) {
  return static_cast<int>(std::floor(ratio * static_cast<double>(patches) + 0.5));
}

MaskTensor generate_mask(const MaskSpec& spec, int grid_h, int grid_w, RngStream& rng) {
  spec.validate();
  if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("mask: empty grid");
  const int patches = grid_h * grid_w;
  const int m = target_masked_count(spec.ratio, patches);

  MaskTensor mask;
  mask.grid_h = grid_h;
  mask.grid_w = grid_w;
  mask.cells.assign(static_cast<std::size_t>(patches), 0);
  if (m == 0) return mask;

  switch (spec.strategy) {
    case Strategy::random: {
      // partial Fisher-Yates: first m entries of a random permutation
      std::vector<int> idx(patches);
      for (int i = 0; i < patches; ++i) idx[i] = i;
      for (int i = 0; i < m; ++i) {
        int j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(patches - i)));
        std::swap(idx[i], idx[j]);
        mask.cells[idx[i]] = 1;
      }
      break;
    }
    case Strategy::block: {
      // rectangle rw wide, full_rows deep, plus `extra` cells in the next row
      int rw = std::min(grid_w, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m)))));
      while (rw <= grid_w) {
        int rows_needed = (m + rw - 1) / rw;
        if (rows_needed <= grid_h) break;
        ++rw;
      }
      int full_rows = m / rw;
      int extra = m - full_rows * rw;
      int height = full_rows + (extra > 0 ? 1 : 0);
      int r0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(grid_h - height + 1)));
      int c0 = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(grid_w - rw + 1)));
      for (int r = 0; r < full_rows; ++r) {
        for (int c = 0; c < rw; ++c) {
          mask.cells[static_cast<std::size_t>(r0 + r) * grid_w + c0 + c] = 1;
        }
      }
      for (int c = 0; c < extra; ++c) {
        mask.cells[static_cast<std::size_t>(r0 + full_rows) * grid_w + c0 + c] = 1;
      }
      break;
    }
    case Strategy::grid: {
      // evenly spaced lattice with exactly m cells: cell i is masked when the
      // running count floor((i+1)*m/P) advances
      long long acc = 0;
      for (int i = 0; i < patches; ++i) {
        long long next = static_cast<long long>(i + 1) * m / patches;
        if (next > acc) mask.cells[i] = 1;
        acc = next;
      }
      break;
    }
  }
  return mask;
}

std::vector<std::vector<MaskTensor>> generate_batch_masks(
    const MaskSpec& spec, const data::MultiViewBatch& batch, RngStream& rng) {
  std::vector<std::vector<MaskTensor>> masks(batch.views.size());
  for (std::size_t v = 0; v < batch.views.size(); ++v) {
    const Tensor& view = batch.views[v];
    if (view.dim(1) % spec.patch_size != 0 || view.dim(2) % spec.patch_size != 0) {
      throw std::invalid_argument("mask: patch_size must divide image dims");
    }
    int gh = view.dim(1) / spec.patch_size;
    int gw = view.dim(2) / spec.patch_size;
    masks[v].reserve(batch.size());
    for (int s = 0; s < batch.size(); ++s) {
      masks[v].push_back(generate_mask(spec, gh, gw, rng));
    }
  }
  return masks;
}

data::MultiViewBatch apply_mask(const data::MultiViewBatch& batch,
                                const std::vector<std::vector<MaskTensor>>& masks,
                                int patch_size, double fill) {
  if (masks.size() != batch.views.size()) {
    throw std::invalid_argument("apply_mask: one mask set per view required");
  }
  data::MultiViewBatch out;
  out.labels = batch.labels;
  out.sample_ids = batch.sample_ids;
  for (std::size_t v = 0; v < batch.views.size(); ++v) {
    const Tensor& view = batch.views[v];
    if (static_cast<int>(masks[v].size()) != batch.size()) {
      throw std::invalid_argument("apply_mask: one mask per sample required");
    }
    const int h = view.dim(1), w = view.dim(2), c = view.dim(3);
    if (h % patch_size != 0 || w % patch_size != 0) {
      throw std::invalid_argument("apply_mask: patch_size must divide image dims");
    }
    Tensor masked = view;
    for (int s = 0; s < batch.size(); ++s) {
      const MaskTensor& mk = masks[v][s];
      if (mk.grid_h != h / patch_size || mk.grid_w != w / patch_size) {
        throw std::invalid_argument("apply_mask: mask grid does not match image");
      }
      double* img = masked.data() + static_cast<std::size_t>(s) * h * w * c;
      for (int gr = 0; gr < mk.grid_h; ++gr) {
        for (int gc = 0; gc < mk.grid_w; ++gc) {
          if (!mk.at(gr, gc)) continue;
          for (int y = gr * patch_size; y < (gr + 1) * patch_size; ++y) {
            double* row = img + (static_cast<std::size_t>(y) * w + gc * patch_size) * c;
            std::fill(row, row + static_cast<std::size_t>(patch_size) * c, fill);
          }
        }
      }
    }
    out.views.push_back(std::move(masked));
  }
  return out;
}

}  // namespace mrdd::masking
