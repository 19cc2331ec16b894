#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "mrdd/data.hpp"
#include "mrdd/digits.hpp"

using namespace mrdd;
using namespace mrdd::data;

namespace {

std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("mrdd_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

/// Direct 2-D convolution with replicated borders; the oracle for the
/// Sobel-based edge view.
double sobel_oracle_at(const std::vector<double>& img, int h, int w, int y, int x) {
  auto at = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, h - 1);
    xx = std::clamp(xx, 0, w - 1);
    return img[static_cast<std::size_t>(yy) * w + xx];
  };
  const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  double gx = 0.0, gy = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      gx += kx[dy + 1][dx + 1] * at(y + dy, x + dx);
      gy += ky[dy + 1][dx + 1] * at(y + dy, x + dx);
    }
  }
  return std::sqrt(gx * gx + gy * gy);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("edge view: constant image maps to zero") {
  Tensor img({1, 8, 8, 1}, 0.5);
  Tensor edge = synth_edge_view(img);
  CHECK(edge.same_shape(Tensor({1, 8, 8, 1})));
  for (std::size_t i = 0; i < edge.size(); ++i) CHECK(edge[i] == 0.0);
}

TEST_CASE("edge view: vertical step concentrates on the step columns") {
  const int n = 1, h = 8, w = 8;
  Tensor img({n, h, w, 1});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img[static_cast<std::size_t>(y) * w + x] = x < w / 2 ? 0.0 : 1.0;
    }
  }
  Tensor edge = synth_edge_view(img);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = edge[static_cast<std::size_t>(y) * w + x];
      if (x == w / 2 - 1 || x == w / 2) {
        CHECK(v == doctest::Approx(1.0));  // max response at the step
      } else {
        CHECK(v == doctest::Approx(0.0));
      }
    }
  }
}

TEST_CASE("edge view: single bright pixel matches the direct convolution oracle") {
  const int h = 5, w = 5;
  Tensor img({1, h, w, 1});
  img[2 * w + 2] = 1.0;
  std::vector<double> raw(img.data(), img.data() + h * w);

  double lo = 1e300, hi = -1e300;
  std::vector<double> expect(h * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      expect[static_cast<std::size_t>(y) * w + x] = sobel_oracle_at(raw, h, w, y, x);
      lo = std::min(lo, expect[static_cast<std::size_t>(y) * w + x]);
      hi = std::max(hi, expect[static_cast<std::size_t>(y) * w + x]);
    }
  }
  Tensor edge = synth_edge_view(img);
  for (int i = 0; i < h * w; ++i) {
    CHECK(edge[i] == doctest::Approx((expect[i] - lo) / (hi - lo)).epsilon(1e-12));
  }
}

TEST_CASE("edge view rejects empty and NaN inputs") {
  CHECK_THROWS(synth_edge_view(Tensor({0, 4, 4, 1})));
  Tensor bad({1, 4, 4, 1});
  bad[3] = std::nan("");
  CHECK_THROWS(synth_edge_view(bad));
}

TEST_CASE("edge view stays in [0,1] and is zero on constants (property)") {
  RngStream rng(21);
  for (int t = 0; t < 20; ++t) {
    Tensor img({1, 8, 8, 1});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
    Tensor edge = synth_edge_view(img);
    for (std::size_t i = 0; i < edge.size(); ++i) {
      CHECK(edge[i] >= 0.0);
      CHECK(edge[i] <= 1.0);
    }
  }
}

TEST_CASE("jitter: zero ranges (factors fixed at identity) reproduce the input") {
  RngStream rng(3);
  Tensor img({2, 4, 4, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  JitterRanges jr;
  jr.brightness_lo = jr.brightness_hi = 1.0;
  jr.contrast_lo = jr.contrast_hi = 1.0;
  jr.saturation_lo = jr.saturation_hi = 1.0;
  jr.hue_lo = jr.hue_hi = 0.0;
  auto views = synth_jitter_views(img, 3, 17, jr);
  REQUIRE(views.size() == 3);
  for (const auto& v : views) {
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(v[i] == doctest::Approx(img[i]).epsilon(1e-9));
  }
}

TEST_CASE("jitter: fixed brightness 1.2 scales and clips") {
  Tensor img({1, 2, 2, 3});
  double vals[4] = {0.1, 0.5, 0.9, 0.3};
  for (int p = 0; p < 4; ++p) {
    for (int ch = 0; ch < 3; ++ch) img[static_cast<std::size_t>(p) * 3 + ch] = vals[p];
  }
  JitterRanges jr;
  jr.brightness_lo = jr.brightness_hi = 1.2;
  jr.contrast_lo = jr.contrast_hi = 1.0;
  jr.saturation_lo = jr.saturation_hi = 1.0;
  jr.hue_lo = jr.hue_hi = 0.0;
  auto views = synth_jitter_views(img, 2, 5, jr);
  for (int p = 0; p < 4; ++p) {
    double expect = std::min(1.0, 1.2 * vals[p]);
    CHECK(views[1][static_cast<std::size_t>(p) * 3] == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("jitter: deterministic given seed; grayscale with hue jitter rejected") {
  RngStream rng(4);
  Tensor img({3, 4, 4, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();
  auto a = synth_jitter_views(img, 3, 123);
  auto b = synth_jitter_views(img, 3, 123);
  for (std::size_t v = 0; v < a.size(); ++v) {
    for (std::size_t i = 0; i < a[v].size(); ++i) CHECK(a[v][i] == b[v][i]);
  }
  Tensor gray({1, 4, 4, 1}, 0.5);
  CHECK_THROWS(synth_jitter_views(gray, 2, 1));  // default ranges want hue/sat
}

TEST_CASE("grouping: exact tuple counts and leftover dropping") {
  RngStream rng(5);
  // object 0: 3 images -> 1 sample; object 1: 7 images -> 2 samples (1 dropped)
  Tensor imgs({10, 4, 4, 1});
  for (std::size_t i = 0; i < imgs.size(); ++i) imgs[i] = rng.uniform();
  std::vector<int> ids = {0, 0, 0, 1, 1, 1, 1, 1, 1, 1};
  auto g = group_into_views(imgs, ids, 3, 9);
  REQUIRE(g.views.size() == 3);
  CHECK(g.labels.size() == 3);
  CHECK(std::count(g.labels.begin(), g.labels.end(), 0) == 1);
  CHECK(std::count(g.labels.begin(), g.labels.end(), 1) == 2);
}

TEST_CASE("grouping: COIL-20 geometry yields 480 samples") {
  // 20 objects x 72 images, n_views=3 -> 20*24 = 480
  const int objs = 20, per = 72;
  Tensor imgs({objs * per, 2, 2, 1});
  std::vector<int> ids;
  for (int o = 0; o < objs; ++o) {
    for (int i = 0; i < per; ++i) ids.push_back(o);
  }
  auto g = group_into_views(imgs, ids, 3, 1);
  CHECK(g.labels.size() == 480);
  CHECK(g.views[0].dim(0) == 480);
}

TEST_CASE("grouping: object with too few images is named in the error") {
  Tensor imgs({4, 2, 2, 1});
  std::vector<int> ids = {7, 7, 7, 9};
  try {
    group_into_views(imgs, ids, 3, 0);
    FAIL("expected an exception");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("9") != std::string::npos);
  }
}

TEST_CASE("grouping: every sample's views share one object") {
  // distinct constant images per object let us recover provenance
  const int objs = 4, per = 6;
  Tensor imgs({objs * per, 2, 2, 1});
  std::vector<int> ids;
  for (int o = 0; o < objs; ++o) {
    for (int i = 0; i < per; ++i) {
      ids.push_back(o);
      for (int p = 0; p < 4; ++p) {
        imgs[(static_cast<std::size_t>(o) * per + i) * 4 + p] = o * 0.2;
      }
    }
  }
  auto g = group_into_views(imgs, ids, 3, 2);
  for (std::size_t s = 0; s < g.labels.size(); ++s) {
    for (const auto& view : g.views) {
      CHECK(view[s * 4] == doctest::Approx(g.labels[s] * 0.2));
    }
  }
}

TEST_CASE("split: basic ratios") {
  auto [train, test] = split_dataset(10, nullptr, 0.8, 3);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);
}

TEST_CASE("split: stratified per-class proportions") {
  std::vector<int> labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
  auto [train, test] = split_dataset(10, &labels, 0.8, 7);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);
  int c0 = 0, c1 = 0;
  for (int i : train) (labels[i] == 0 ? c0 : c1)++;
  CHECK(c0 == 4);
  CHECK(c1 == 4);
}

TEST_CASE("split: deterministic, partitioning, and stratification tolerance") {
  RngStream rng(8);
  std::vector<int> labels;
  for (int i = 0; i < 103; ++i) labels.push_back(static_cast<int>(rng.uniform_index(5)));
  auto a = split_dataset(103, &labels, 0.8, 11);
  auto b = split_dataset(103, &labels, 0.8, 11);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);

  std::set<int> seen;
  for (int i : a.first) seen.insert(i);
  for (int i : a.second) seen.insert(i);
  CHECK(seen.size() == 103);

  // per-class train fraction within one sample of the ratio
  std::map<int, int> total, in_train;
  for (int i = 0; i < 103; ++i) total[labels[i]]++;
  for (int i : a.first) in_train[labels[i]]++;
  for (auto& [cls, tot] : total) {
    double target = 0.8 * tot;
    CHECK(std::abs(in_train[cls] - target) <= 1.0);
  }
}

TEST_CASE("split: class with fewer than 2 samples is an error") {
  std::vector<int> labels = {0, 0, 0, 1};
  CHECK_THROWS(split_dataset(4, &labels, 0.8, 1));
  CHECK_THROWS(split_dataset(10, nullptr, 1.5, 1));
}

TEST_CASE("dataset round trip is bit-identical") {
  std::string dir = temp_dir("roundtrip");
  RngStream rng(10);
  MultiViewDataset ds;
  ds.views.push_back(Tensor({6, 4, 4, 1}));
  ds.views.push_back(Tensor({6, 4, 4, 1}));
  for (auto& v : ds.views) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = rng.uniform();
  }
  ds.labels = {0, 1, 0, 1, 0, 1};
  ds.manifest.name = "toy";
  ds.manifest.n_samples = 6;
  ds.manifest.n_classes = 2;
  ds.manifest.split_seed = 3;
  for (int v = 0; v < 2; ++v) {
    ViewSpec vs;
    vs.view_index = v + 1;
    vs.height = vs.width = 4;
    vs.channels = 1;
    vs.file = "view" + std::to_string(v + 1) + ".bin";
    ds.manifest.views.push_back(vs);
  }
  auto [train, test] = split_dataset(6, &ds.labels, 0.8, 3);
  ds.manifest.train_indices = train;
  ds.manifest.test_indices = test;

  save_dataset(dir, ds);
  MultiViewDataset back = load_dataset(dir);
  CHECK(back.manifest.name == "toy");
  CHECK(back.manifest.train_indices == ds.manifest.train_indices);
  for (int v = 0; v < 2; ++v) {
    REQUIRE(back.views[v].size() == ds.views[v].size());
    for (std::size_t i = 0; i < ds.views[v].size(); ++i) {
      CHECK(back.views[v][i] == ds.views[v][i]);  // bit-identical
    }
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("batch iteration: coverage, short last batch, epoch salting") {
  MultiViewDataset ds;
  ds.views.push_back(Tensor({10, 2, 2, 1}));
  for (int i = 0; i < 10; ++i) ds.views[0][static_cast<std::size_t>(i) * 4] = i;
  ds.labels.assign(10, 0);
  ds.manifest.n_samples = 10;
  ds.manifest.n_classes = 1;
  ViewSpec vs;
  vs.height = vs.width = 2;
  vs.channels = 1;
  vs.file = "v";
  ds.manifest.views.push_back(vs);
  for (int i = 0; i < 8; ++i) ds.manifest.train_indices.push_back(i);
  ds.manifest.test_indices = {8, 9};

  BatchIterator it(ds, "all", 4, true, 55);
  it.begin_epoch(0);
  CHECK(it.batches_per_epoch() == 3);
  MultiViewBatch b;
  std::multiset<int> seen;
  std::vector<int> sizes;
  std::vector<int> first_epoch_order;
  while (it.next(b)) {
    sizes.push_back(b.size());
    for (int id : b.sample_ids) {
      seen.insert(id);
      first_epoch_order.push_back(id);
    }
  }
  CHECK(sizes == std::vector<int>{4, 4, 2});
  CHECK(seen.size() == 10);
  CHECK(std::set<int>(seen.begin(), seen.end()).size() == 10);

  // epoch-salted seed: different epochs give different orders
  it.begin_epoch(1);
  std::vector<int> second_epoch_order;
  while (it.next(b)) {
    for (int id : b.sample_ids) second_epoch_order.push_back(id);
  }
  CHECK(first_epoch_order != second_epoch_order);

  // same epoch replayed gives the identical order
  it.begin_epoch(0);
  std::vector<int> replay;
  while (it.next(b)) {
    for (int id : b.sample_ids) replay.push_back(id);
  }
  CHECK(replay == first_epoch_order);

  // unshuffled iteration is ascending
  BatchIterator plain(ds, "all", 4, false, 0);
  plain.begin_epoch(0);
  std::vector<int> order;
  while (plain.next(b)) {
    for (int id : b.sample_ids) order.push_back(id);
  }
  CHECK(std::is_sorted(order.begin(), order.end()));

  CHECK_THROWS(BatchIterator(ds, "validation", 4, false, 0));  // unknown split
}

TEST_CASE("digit source renders balanced deterministic classes") {
  std::vector<int> la, lb;
  Tensor a = digits::render_digits(40, 10, 77, {}, la);
  Tensor b = digits::render_digits(40, 10, 77, {}, lb);
  CHECK(la == lb);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= 0.0);
    CHECK(a[i] <= 1.0);
  }
  std::map<int, int> counts;
  for (int l : la) counts[l]++;
  for (auto& [cls, cnt] : counts) CHECK(cnt == 4);
}

TEST_CASE("synth recipe emnist-edge builds a two-view dataset with split") {
  std::string src = temp_dir("digit_src");
  std::string out = temp_dir("digit_ds");
  digits::write_digit_source(src, 30, 10, 3);
  SynthOptions opts;
  opts.recipe = "emnist-edge";
  opts.src_dir = src;
  opts.out_dir = out;
  opts.seed = 3;
  MultiViewDataset ds = synth_dataset(opts);
  CHECK(ds.n_views() == 2);
  CHECK(ds.manifest.n_classes == 10);
  CHECK(ds.manifest.n_samples == 30);
  CHECK(ds.views[1].dim(3) == 1);
  CHECK(ds.manifest.train_indices.size() + ds.manifest.test_indices.size() == 30);
  MultiViewDataset back = load_dataset(out);
  CHECK(back.manifest.n_samples == 30);
  std::filesystem::remove_all(src);
  std::filesystem::remove_all(out);
}

}  // TEST_SUITE
