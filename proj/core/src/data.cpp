#include "mrdd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mrdd::data {

namespace fs = std::filesystem;

// ----------------------------------------------------------- validation

void ViewSpec::validate() const {
  if (view_index < 1) throw std::invalid_argument("view: index must be >= 1");
  if (height <= 0 || width <= 0) throw std::invalid_argument("view: bad dimensions");
  if (channels != 1 && channels != 3) {
    throw std::invalid_argument("view: channels must be 1 or 3");
  }
}

void DatasetManifest::validate() const {
  if (n_samples <= 0) throw std::invalid_argument("manifest: n_samples must be > 0");
  if (views.empty()) throw std::invalid_argument("manifest: no views");
  for (const auto& v : views) {
    v.validate();
    if (v.height != views[0].height || v.width != views[0].width) {
      throw std::invalid_argument("manifest: views must share height and width");
    }
  }
  std::vector<char> seen(n_samples, 0);
  for (int i : train_indices) {
    if (i < 0 || i >= n_samples || seen[i]) {
      throw std::invalid_argument("manifest: bad train index " + std::to_string(i));
    }
    seen[i] = 1;
  }
  for (int i : test_indices) {
    if (i < 0 || i >= n_samples || seen[i]) {
      throw std::invalid_argument("manifest: bad test index " + std::to_string(i));
    }
    seen[i] = 1;
  }
  if (static_cast<int>(train_indices.size() + test_indices.size()) != n_samples) {
    throw std::invalid_argument("manifest: split does not partition the samples");
  }
}

const std::vector<int>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train_indices;
  if (name == "test") return test_indices;
  throw std::invalid_argument("unknown split name: " + name);
}

void MultiViewBatch::validate() const {
  for (const auto& v : views) {
    if (v.dim(0) != size()) throw std::invalid_argument("batch: view length mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] < 0.0 || v[i] > 1.0 || !std::isfinite(v[i])) {
        throw std::invalid_argument("batch: pixel outside [0,1]");
      }
    }
  }
}

// ------------------------------------------------------------- array io

namespace {
constexpr char kArrayMagic[8] = {'M', 'R', 'D', 'D', 'A', 'R', 'R', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace

void save_array(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.write(kArrayMagic, sizeof(kArrayMagic));
  write_u64(os, static_cast<std::uint64_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u64(os, static_cast<std::uint64_t>(t.dim(i)));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!os) throw std::runtime_error("short write to " + path);
}

Tensor load_array(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kArrayMagic, sizeof(magic)) != 0) {
    throw std::runtime_error(path + ": not an array file");
  }
  std::uint64_t ndim = read_u64(is);
  if (ndim > 8) throw std::runtime_error(path + ": corrupt header");
  std::vector<int> shape(ndim);
  for (auto& d : shape) d = static_cast<int>(read_u64(is));
  Tensor t(shape);
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!is) throw std::runtime_error(path + ": truncated payload");
  return t;
}

void save_labels(const std::string& path, const std::vector<int>& labels) {
  Tensor t({static_cast<int>(labels.size())});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i];
  save_array(path, t);
}

std::vector<int> load_labels(const std::string& path) {
  Tensor t = load_array(path);
  std::vector<int> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<int>(t[i]);
  return out;
}

namespace {

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << v[i];
  }
  return os.str();
}

std::vector<int> parse_ints(const std::string& s) {
  std::istringstream is(s);
  std::vector<int> out;
  int v;
  while (is >> v) out.push_back(v);
  return out;
}

}  // namespace

void save_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "name = " << m.name << "\n";
  os << "n_samples = " << m.n_samples << "\n";
  os << "n_classes = " << m.n_classes << "\n";
  os << "split_seed = " << m.split_seed << "\n";
  os << "labels.file = " << m.labels_file << "\n";
  os << "n_views = " << m.views.size() << "\n";
  for (std::size_t i = 0; i < m.views.size(); ++i) {
    const auto& v = m.views[i];
    std::string p = "view." + std::to_string(i + 1) + ".";
    os << p << "height = " << v.height << "\n";
    os << p << "width = " << v.width << "\n";
    os << p << "channels = " << v.channels << "\n";
    os << p << "synthesis = " << v.synthesis << "\n";
    os << p << "file = " << v.file << "\n";
  }
  os << "split.train = " << join_ints(m.train_indices) << "\n";
  os << "split.test = " << join_ints(m.test_indices) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(path + ": bad line: " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      auto last = s.find_last_not_of(" \t\r");
      s.erase(last == std::string::npos ? 0 : last + 1);
    };
    strip(key);
    strip(val);
    kv[key] = val;
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(path + ": missing key " + key);
    return it->second;
  };
  DatasetManifest m;
  m.name = need("name");
  m.n_samples = std::stoi(need("n_samples"));
  m.n_classes = std::stoi(need("n_classes"));
  m.split_seed = std::stoull(need("split_seed"));
  m.labels_file = need("labels.file");
  int n_views = std::stoi(need("n_views"));
  for (int i = 1; i <= n_views; ++i) {
    std::string p = "view." + std::to_string(i) + ".";
    ViewSpec v;
    v.view_index = i;
    v.height = std::stoi(need(p + "height"));
    v.width = std::stoi(need(p + "width"));
    v.channels = std::stoi(need(p + "channels"));
    v.synthesis = need(p + "synthesis");
    v.file = need(p + "file");
    m.views.push_back(v);
  }
  m.train_indices = parse_ints(need("split.train"));
  m.test_indices = parse_ints(need("split.test"));
  m.validate();
  return m;
}

void save_dataset(const std::string& dir, const MultiViewDataset& ds) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    save_array(dir + "/" + ds.manifest.views[i].file, ds.views[i]);
  }
  save_labels(dir + "/" + ds.manifest.labels_file, ds.labels);
  save_manifest(dir + "/manifest", ds.manifest);
}

MultiViewDataset load_dataset(const std::string& dir) {
  MultiViewDataset ds;
  ds.manifest = load_manifest(dir + "/manifest");
  for (const auto& v : ds.manifest.views) {
    Tensor t = load_array(dir + "/" + v.file);
    if (t.dim(0) != ds.manifest.n_samples) {
      throw std::runtime_error("dataset: view " + v.file + " row count mismatch");
    }
    ds.views.push_back(std::move(t));
  }
  ds.labels = load_labels(dir + "/" + ds.manifest.labels_file);
  if (static_cast<int>(ds.labels.size()) != ds.manifest.n_samples) {
    throw std::runtime_error("dataset: label count mismatch");
  }
  return ds;
}

// ------------------------------------------------------------ synthesis

namespace {

double luminance(const double* px, int channels) {
  if (channels == 1) return px[0];
  return 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
}

}  // namespace

Tensor synth_edge_view(const Tensor& images) {
  if (images.ndim() != 4 || images.dim(0) == 0) {
    throw std::invalid_argument("edge: empty or malformed input");
  }
  if (!all_finite(images)) throw std::invalid_argument("edge: NaN pixels in input");
  const int n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  Tensor out({n, h, w, 1});

  // 3x3 Sobel with replicated borders, on luminance
  std::vector<double> gray(static_cast<std::size_t>(h) * w);
  for (int s = 0; s < n; ++s) {
    const double* img = images.data() + static_cast<std::size_t>(s) * h * w * c;
    for (int i = 0; i < h * w; ++i) gray[i] = luminance(img + static_cast<std::size_t>(i) * c, c);
    double* dst = out.data() + static_cast<std::size_t>(s) * h * w;
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        auto at = [&](int yy, int xx) {
          yy = std::clamp(yy, 0, h - 1);
          xx = std::clamp(xx, 0, w - 1);
          return gray[static_cast<std::size_t>(yy) * w + xx];
        };
        double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                    (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
        double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                    (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
        double mag = std::sqrt(gx * gx + gy * gy);
        dst[static_cast<std::size_t>(y) * w + x] = mag;
        lo = std::min(lo, mag);
        hi = std::max(hi, mag);
      }
    }
    double range = hi - lo;
    if (range > 0.0) {
      for (int i = 0; i < h * w; ++i) dst[i] = (dst[i] - lo) / range;
    } else {
      for (int i = 0; i < h * w; ++i) dst[i] = 0.0;
    }
  }
  return out;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& hh, double& ss, double& vv) {
  double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  vv = mx;
  double d = mx - mn;
  ss = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    hh = 0.0;
  } else if (mx == r) {
    hh = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    hh = ((b - r) / d + 2.0) / 6.0;
  } else {
    hh = ((r - g) / d + 4.0) / 6.0;
  }
  if (hh < 0.0) hh += 1.0;
}

void hsv_to_rgb(double hh, double ss, double vv, double& r, double& g, double& b) {
  double h6 = hh * 6.0;
  int i = static_cast<int>(std::floor(h6)) % 6;
  if (i < 0) i += 6;
  double f = h6 - std::floor(h6);
  double p = vv * (1.0 - ss);
  double q = vv * (1.0 - ss * f);
  double t = vv * (1.0 - ss * (1.0 - f));
  switch (i) {
    case 0: r = vv; g = t; b = p; break;
    case 1: r = q; g = vv; b = p; break;
    case 2: r = p; g = vv; b = t; break;
    case 3: r = p; g = q; b = vv; break;
    case 4: r = t; g = p; b = vv; break;
    default: r = vv; g = p; b = q; break;
  }
}

}  // namespace

std::vector<Tensor> synth_jitter_views(const Tensor& images, int n_views,
                                       std::uint64_t seed, const JitterRanges& jr) {
  if (n_views < 2) throw std::invalid_argument("jitter: n_views must be >= 2");
  if (images.ndim() != 4) throw std::invalid_argument("jitter: malformed input");
  const int n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  bool wants_color = jr.saturation_lo != 1.0 || jr.saturation_hi != 1.0 ||
                     jr.hue_lo != 0.0 || jr.hue_hi != 0.0;
  if (c == 1 && wants_color) {
    throw std::invalid_argument("jitter: hue/saturation jitter requires RGB input");
  }

  std::vector<Tensor> out;
  out.push_back(images);  // view 1 is the identity
  for (int v = 2; v <= n_views; ++v) {
    RngStream rng(derive_seed(seed, {0x6a69747465ULL, static_cast<std::uint64_t>(v)}));
    Tensor view(images.shape());
    for (int s = 0; s < n; ++s) {
      double fb = rng.uniform(jr.brightness_lo, jr.brightness_hi);
      double fc = rng.uniform(jr.contrast_lo, jr.contrast_hi);
      double fs = rng.uniform(jr.saturation_lo, jr.saturation_hi);
      double fh = rng.uniform(jr.hue_lo, jr.hue_hi);
      const double* src = images.data() + static_cast<std::size_t>(s) * h * w * c;
      double* dst = view.data() + static_cast<std::size_t>(s) * h * w * c;

      // contrast pivots on the image's mean luminance
      double mean_lum = 0.0;
      for (int i = 0; i < h * w; ++i) mean_lum += luminance(src + static_cast<std::size_t>(i) * c, c);
      mean_lum /= static_cast<double>(h * w);

      for (int i = 0; i < h * w; ++i) {
        const double* px = src + static_cast<std::size_t>(i) * c;
        double* qx = dst + static_cast<std::size_t>(i) * c;
        double rgb[3] = {px[0], px[c > 1 ? 1 : 0], px[c > 1 ? 2 : 0]};
        for (double& ch : rgb) ch = std::clamp(ch * fb, 0.0, 1.0);
        for (double& ch : rgb) ch = std::clamp((ch - mean_lum) * fc + mean_lum, 0.0, 1.0);
        if (c == 3) {
          double hh, ss, vv;
          rgb_to_hsv(rgb[0], rgb[1], rgb[2], hh, ss, vv);
          ss = std::clamp(ss * fs, 0.0, 1.0);
          hh = hh + fh;
          hh -= std::floor(hh);
          hsv_to_rgb(hh, ss, vv, rgb[0], rgb[1], rgb[2]);
          for (int ch = 0; ch < 3; ++ch) qx[ch] = std::clamp(rgb[ch], 0.0, 1.0);
        } else {
          qx[0] = std::clamp(rgb[0], 0.0, 1.0);
        }
      }
    }
    out.push_back(std::move(view));
  }
  return out;
}

GroupedViews group_into_views(const Tensor& images, const std::vector<int>& object_ids,
                              int n_views, std::uint64_t seed) {
  if (images.ndim() != 4 || images.dim(0) != static_cast<int>(object_ids.size())) {
    throw std::invalid_argument("group: images/object_ids mismatch");
  }
  if (n_views < 1) throw std::invalid_argument("group: n_views must be >= 1");
  const int h = images.dim(1), w = images.dim(2), c = images.dim(3);
  const std::size_t px = static_cast<std::size_t>(h) * w * c;

  std::map<int, std::vector<int>> by_object;
  for (std::size_t i = 0; i < object_ids.size(); ++i) {
    by_object[object_ids[i]].push_back(static_cast<int>(i));
  }
  int total = 0;
  for (auto& [obj, idx] : by_object) {
    if (static_cast<int>(idx.size()) < n_views) {
      throw std::invalid_argument("group: object " + std::to_string(obj) + " has " +
                                  std::to_string(idx.size()) + " images, needs >= " +
                                  std::to_string(n_views));
    }
    total += static_cast<int>(idx.size()) / n_views;
  }

  GroupedViews out;
  out.views.assign(n_views, Tensor({total, h, w, c}));
  out.labels.reserve(total);
  int row = 0;
  for (auto& [obj, idx] : by_object) {
    RngStream rng(derive_seed(seed, {0x67726f7570ULL, static_cast<std::uint64_t>(obj)}));
    rng.shuffle(idx);
    int tuples = static_cast<int>(idx.size()) / n_views;  // leftovers dropped
    for (int t = 0; t < tuples; ++t) {
      for (int v = 0; v < n_views; ++v) {
        const double* src = images.data() + static_cast<std::size_t>(idx[t * n_views + v]) * px;
        std::copy(src, src + px, out.views[v].data() + static_cast<std::size_t>(row) * px);
      }
      out.labels.push_back(obj);
      ++row;
    }
  }
  return out;
}

std::pair<std::vector<int>, std::vector<int>> split_dataset(
    int n, const std::vector<int>* labels, double ratio, std::uint64_t seed) {
  if (ratio <= 0.0 || ratio >= 1.0) throw std::invalid_argument("split: ratio must be in (0,1)");
  if (n <= 0) throw std::invalid_argument("split: empty dataset");
  std::vector<int> train, test;
  if (labels) {
    if (static_cast<int>(labels->size()) != n) {
      throw std::invalid_argument("split: label count mismatch");
    }
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[(*labels)[i]].push_back(i);
    for (auto& [cls, idx] : by_class) {
      if (idx.size() < 2) {
        throw std::invalid_argument("split: class " + std::to_string(cls) +
                                    " has fewer than 2 samples");
      }
      RngStream rng(derive_seed(seed, {0x73706c6974ULL, static_cast<std::uint64_t>(cls)}));
      rng.shuffle(idx);
      int k = static_cast<int>(std::floor(ratio * static_cast<double>(idx.size()) + 0.5));
      k = std::clamp(k, 1, static_cast<int>(idx.size()) - 1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        (static_cast<int>(i) < k ? train : test).push_back(idx[i]);
      }
    }
  } else {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    RngStream rng(derive_seed(seed, {0x73706c6974ULL}));
    rng.shuffle(idx);
    int k = static_cast<int>(std::floor(ratio * n + 0.5));
    k = std::clamp(k, 1, n - 1);
    train.assign(idx.begin(), idx.begin() + k);
    test.assign(idx.begin() + k, idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

// -------------------------------------------------------------- batching

BatchIterator::BatchIterator(const MultiViewDataset& ds, const std::string& split,
                             int batch_size, bool shuffle, std::uint64_t seed)
    : ds_(ds), batch_size_(batch_size), shuffle_(shuffle), seed_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
  if (split == "all") {
    indices_.resize(ds.manifest.n_samples);
    for (int i = 0; i < ds.manifest.n_samples; ++i) indices_[i] = i;
  } else {
    indices_ = ds.manifest.split(split);  // throws on unknown name
  }
  order_ = indices_;
}

void BatchIterator::begin_epoch(int epoch) {
  order_ = indices_;
  if (shuffle_) {
    RngStream rng(derive_seed(seed_, {0x7065726dULL, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order_);
  }
  cursor_ = 0;
}

int BatchIterator::batches_per_epoch() const {
  return static_cast<int>((order_.size() + batch_size_ - 1) / batch_size_);
}

bool BatchIterator::next(MultiViewBatch& out) {
  if (cursor_ >= order_.size()) return false;
  std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<int> ids(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                       order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  out = gather_batch(ds_, ids);
  return true;
}

MultiViewBatch gather_batch(const MultiViewDataset& ds, const std::vector<int>& ids) {
  MultiViewBatch batch;
  batch.sample_ids = ids;
  int b = static_cast<int>(ids.size());
  for (const auto& view : ds.views) {
    const int h = view.dim(1), w = view.dim(2), c = view.dim(3);
    const std::size_t px = static_cast<std::size_t>(h) * w * c;
    Tensor t({b, h, w, c});
    for (int i = 0; i < b; ++i) {
      const double* src = view.data() + static_cast<std::size_t>(ids[i]) * px;
      std::copy(src, src + px, t.data() + static_cast<std::size_t>(i) * px);
    }
    batch.views.push_back(std::move(t));
  }
  if (!ds.labels.empty()) {
    batch.labels.reserve(b);
    for (int id : ids) batch.labels.push_back(ds.labels[id]);
  }
  return batch;
}

// --------------------------------------------------------------- recipes

MultiViewDataset synth_dataset(const SynthOptions& opts) {
  Tensor images = load_array(opts.src_dir + "/images.bin");
  std::vector<int> labels = load_labels(opts.src_dir + "/labels.bin");
  if (images.dim(0) != static_cast<int>(labels.size())) {
    throw std::runtime_error("source: images/labels row mismatch");
  }

  MultiViewDataset ds;
  if (opts.recipe == "emnist-edge" || opts.recipe == "efmnist-edge") {
    Tensor edges = synth_edge_view(images);
    ds.views.push_back(std::move(images));
    ds.views.push_back(std::move(edges));
    ds.labels = labels;
    ds.manifest.views.resize(2);
    ds.manifest.views[0].synthesis = "identity";
    ds.manifest.views[1].synthesis = "edge";
  } else if (opts.recipe == "coil-group") {
    GroupedViews g = group_into_views(images, labels, 3, opts.seed);
    ds.views = std::move(g.views);
    ds.labels = std::move(g.labels);
    ds.manifest.views.resize(3);
    for (auto& v : ds.manifest.views) v.synthesis = "grouped";
  } else if (opts.recipe == "jitter3") {
    ds.views = synth_jitter_views(images, 3, opts.seed, opts.jitter);
    ds.labels = labels;
    ds.manifest.views.resize(3);
    ds.manifest.views[0].synthesis = "identity";
    ds.manifest.views[1].synthesis = "jitter";
    ds.manifest.views[2].synthesis = "jitter";
  } else {
    throw std::invalid_argument("unknown recipe: " + opts.recipe);
  }

  // relabel to a contiguous range for clustering/classification
  {
    std::map<int, int> remap;
    for (int l : ds.labels) remap.emplace(l, 0);
    int next = 0;
    for (auto& [k, v] : remap) v = next++;
    for (auto& l : ds.labels) l = remap[l];
    ds.manifest.n_classes = next;
  }

  ds.manifest.name = opts.recipe;
  ds.manifest.n_samples = ds.views[0].dim(0);
  ds.manifest.split_seed = opts.seed;
  for (std::size_t i = 0; i < ds.views.size(); ++i) {
    auto& v = ds.manifest.views[i];
    v.view_index = static_cast<int>(i) + 1;
    v.height = ds.views[i].dim(1);
    v.width = ds.views[i].dim(2);
    v.channels = ds.views[i].dim(3);
    v.file = "view" + std::to_string(i + 1) + ".bin";
  }
  auto [train, test] = split_dataset(ds.manifest.n_samples, &ds.labels,
                                     opts.split_ratio, opts.seed);
  ds.manifest.train_indices = std::move(train);
  ds.manifest.test_indices = std::move(test);
  ds.manifest.validate();

  save_dataset(opts.out_dir, ds);
  return ds;
}

}  // namespace mrdd::data
