#include <doctest.h>

#include <cmath>

#include "mrdd/masking.hpp"

using namespace mrdd;
using namespace mrdd::masking;

namespace {

data::MultiViewBatch toy_batch(int n, int h, int w, int views, double fill = 0.5) {
  data::MultiViewBatch b;
  for (int v = 0; v < views; ++v) b.views.push_back(Tensor({n, h, w, 1}, fill));
  for (int i = 0; i < n; ++i) b.sample_ids.push_back(i);
  return b;
}

}  // namespace

TEST_SUITE("masking") {

TEST_CASE("ratio endpoints") {
  RngStream rng(1);
  MaskSpec spec;
  for (auto strategy : {Strategy::random, Strategy::block, Strategy::grid}) {
    spec.strategy = strategy;
    spec.ratio = 0.0;
    CHECK(generate_mask(spec, 4, 4, rng).popcount() == 0);
    spec.ratio = 1.0;
    CHECK(generate_mask(spec, 4, 4, rng).popcount() == 16);
  }
}

TEST_CASE("random strategy masks exactly round(ratio * P) patches") {
  RngStream rng(2);
  MaskSpec spec;
  spec.strategy = Strategy::random;
  spec.ratio = 0.7;
  // the spec's pinned example: P=16, ratio 0.7 -> round(11.2) = 11
  CHECK(target_masked_count(0.7, 16) == 11);
  CHECK(generate_mask(spec, 4, 4, rng).popcount() == 11);

  for (int t = 0; t < 300; ++t) {
    double ratio = rng.uniform();
    int gh = 1 + static_cast<int>(rng.uniform_index(8));
    int gw = 1 + static_cast<int>(rng.uniform_index(8));
    spec.ratio = ratio;
    auto mask = generate_mask(spec, gh, gw, rng);
    CHECK(mask.popcount() == target_masked_count(ratio, gh * gw));
  }
}

TEST_CASE("block strategy is contiguous and hits the target count") {
  RngStream rng(3);
  MaskSpec spec;
  spec.strategy = Strategy::block;
  for (int t = 0; t < 200; ++t) {
    double ratio = rng.uniform();
    spec.ratio = ratio;
    auto mask = generate_mask(spec, 8, 8, rng);
    int m = target_masked_count(ratio, 64);
    CHECK(std::abs(mask.popcount() - m) <= 1);
    // contiguity: masked cells form one 4-connected component
    if (mask.popcount() > 0) {
      std::vector<int> stack;
      std::vector<char> seen(64, 0);
      for (int i = 0; i < 64; ++i) {
        if (mask.cells[i]) {
          stack.push_back(i);
          seen[i] = 1;
          break;
        }
      }
      int count = 0;
      while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        ++count;
        int r = cur / 8, c = cur % 8;
        const int dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int rr = r + dr[k], cc = c + dc[k];
          if (rr < 0 || rr >= 8 || cc < 0 || cc >= 8) continue;
          int j = rr * 8 + cc;
          if (!seen[j] && mask.cells[j]) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
      }
      CHECK(count == mask.popcount());
    }
  }
}

TEST_CASE("grid strategy: deterministic even lattice within 1/P of the ratio") {
  RngStream rng(4);
  MaskSpec spec;
  spec.strategy = Strategy::grid;
  for (double ratio : {0.1, 0.25, 0.5, 0.7, 0.9}) {
    spec.ratio = ratio;
    auto a = generate_mask(spec, 8, 8, rng);
    auto b = generate_mask(spec, 8, 8, rng);
    CHECK(a.cells == b.cells);  // no randomness consumed
    CHECK(std::abs(a.popcount() / 64.0 - ratio) <= 1.0 / 64.0 + 1e-12);
    // quarter density reduces to strictly periodic "every 4th"
    if (ratio == 0.25) {
      for (int i = 0; i < 64; ++i) CHECK((a.cells[i] != 0) == ((i % 4) == 3));
    }
  }
}

TEST_CASE("determinism: same spec and seed reproduce the mask") {
  MaskSpec spec;
  spec.strategy = Strategy::random;
  spec.ratio = 0.4;
  RngStream r1(99), r2(99);
  auto a = generate_mask(spec, 8, 8, r1);
  auto b = generate_mask(spec, 8, 8, r2);
  CHECK(a.cells == b.cells);
}

TEST_CASE("apply: all-false is identity, all-true is the fill value") {
  auto batch = toy_batch(3, 8, 8, 2, 0.7);
  MaskSpec spec;
  spec.patch_size = 4;
  spec.ratio = 0.0;
  RngStream rng(5);
  auto masks0 = generate_batch_masks(spec, batch, rng);
  auto out0 = apply_mask(batch, masks0, 4, 0.0);
  for (int v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < out0.views[v].size(); ++i) {
      CHECK(out0.views[v][i] == batch.views[v][i]);
    }
  }
  spec.ratio = 1.0;
  auto masks1 = generate_batch_masks(spec, batch, rng);
  auto out1 = apply_mask(batch, masks1, 4, 0.25);
  for (int v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < out1.views[v].size(); ++i) {
      CHECK(out1.views[v][i] == 0.25);
    }
  }
  // inputs untouched
  for (int v = 0; v < 2; ++v) {
    for (std::size_t i = 0; i < batch.views[v].size(); ++i) {
      CHECK(batch.views[v][i] == 0.7);
    }
  }
}

TEST_CASE("apply: a single masked patch changes exactly patch^2 pixels per channel") {
  auto batch = toy_batch(1, 8, 8, 1, 0.9);
  MaskTensor mask;
  mask.grid_h = mask.grid_w = 2;
  mask.cells = {1, 0, 0, 0};
  std::vector<std::vector<MaskTensor>> masks{{mask}};
  auto out = apply_mask(batch, masks, 4, 0.0);
  int changed = 0;
  for (std::size_t i = 0; i < out.views[0].size(); ++i) {
    changed += out.views[0][i] != batch.views[0][i];
  }
  CHECK(changed == 16);  // 4x4 patch, one channel
}

TEST_CASE("apply rejects shape mismatches") {
  auto batch = toy_batch(2, 8, 8, 1);
  MaskTensor mask;
  mask.grid_h = mask.grid_w = 4;  // wrong grid for patch 4 on 8x8
  mask.cells.assign(16, 0);
  std::vector<std::vector<MaskTensor>> masks{{mask, mask}};
  CHECK_THROWS(apply_mask(batch, masks, 4, 0.0));
  std::vector<std::vector<MaskTensor>> missing{{mask}};
  CHECK_THROWS(apply_mask(batch, missing, 4, 0.0));
}

TEST_CASE("per-view masks are independent (correlation near zero)") {
  // correlation of mask indicators between two views over many draws
  MaskSpec spec;
  spec.strategy = Strategy::random;
  spec.ratio = 0.5;
  RngStream rng(31);
  const int draws = 2000, cells = 16;
  double sum_a = 0, sum_b = 0, sum_ab = 0, n = draws * cells;
  for (int t = 0; t < draws; ++t) {
    auto a = generate_mask(spec, 4, 4, rng);
    auto b = generate_mask(spec, 4, 4, rng);
    for (int i = 0; i < cells; ++i) {
      sum_a += a.cells[i];
      sum_b += b.cells[i];
      sum_ab += a.cells[i] * b.cells[i];
    }
  }
  double ma = sum_a / n, mb = sum_b / n;
  double cov = sum_ab / n - ma * mb;
  double corr = cov / std::sqrt(ma * (1 - ma) * mb * (1 - mb));
  CHECK(std::abs(corr) < 0.05);
}

}  // TEST_SUITE
