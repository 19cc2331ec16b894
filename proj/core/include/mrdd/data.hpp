#ifndef MRDD_DATA_HPP
#define MRDD_DATA_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mrdd/rng.hpp"
#include "mrdd/tensor.hpp"

namespace mrdd::data {

/// Geometry and provenance of one view.
struct ViewSpec {
  int view_index = 1;  // 1-based
  int height = 0;
  int width = 0;
  int channels = 1;
  std::string synthesis = "identity";  // identity | edge | jitter | grouped
  std::string file;                    // array file name relative to dataset dir

  void validate() const;
};

/// On-disk description of a multi-view dataset: geometry, labels, and the
/// persistent train/test partition.
struct DatasetManifest {
  std::string name;
  int n_samples = 0;
  int n_classes = 0;
  std::vector<ViewSpec> views;
  std::uint64_t split_seed = 0;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  std::string labels_file = "labels.bin";

  void validate() const;
  const std::vector<int>& split(const std::string& name) const;
};

/// A loaded dataset: one (n, H, W, C) tensor per view plus labels.
struct MultiViewDataset {
  DatasetManifest manifest;
  std::vector<Tensor> views;
  std::vector<int> labels;

  int n_views() const { return static_cast<int>(views.size()); }
};

/// One minibatch of aligned per-view image tensors.
struct MultiViewBatch {
  std::vector<Tensor> views;    // each (batch, H, W, C), values in [0,1]
  std::vector<int> labels;      // may be empty at train time
  std::vector<int> sample_ids;

  int size() const { return static_cast<int>(sample_ids.size()); }
  void validate() const;
};

// ------------------------------------------------------------- array io

/// Minimal binary array container (magic, dims, little-endian f64 payload).
void save_array(const std::string& path, const Tensor& t);
Tensor load_array(const std::string& path);
void save_labels(const std::string& path, const std::vector<int>& labels);
std::vector<int> load_labels(const std::string& path);

void save_manifest(const std::string& path, const DatasetManifest& m);
DatasetManifest load_manifest(const std::string& path);

void save_dataset(const std::string& dir, const MultiViewDataset& ds);
MultiViewDataset load_dataset(const std::string& dir);

// ------------------------------------------------------------ synthesis

/// Sobel gradient-magnitude edge map, min-max normalized per image to [0,1].
/// Multi-channel inputs are converted to luminance first. Output has one
/// channel and the input's spatial dims.
Tensor synth_edge_view(const Tensor& images);

struct JitterRanges {
  double brightness_lo = 0.6, brightness_hi = 1.4;
  double contrast_lo = 0.6, contrast_hi = 1.4;
  double saturation_lo = 0.6, saturation_hi = 1.4;
  double hue_lo = -0.1, hue_hi = 0.1;
};

/// View 1 is the identity; views 2..n apply independent per-image photometric
/// perturbations. Deterministic given the seed. Grayscale inputs are rejected
/// when the configured ranges request hue or saturation changes.
std::vector<Tensor> synth_jitter_views(const Tensor& images, int n_views,
                                       std::uint64_t seed,
                                       const JitterRanges& ranges = {});

struct GroupedViews {
  std::vector<Tensor> views;  // n_views tensors, aligned by sample
  std::vector<int> labels;    // object id per sample
};

/// Randomly partition each object's images into tuples of size n_views;
/// leftovers are dropped. Throws (naming the object) if an object has fewer
/// than n_views images.
GroupedViews group_into_views(const Tensor& images, const std::vector<int>& object_ids,
                              int n_views, std::uint64_t seed);

/// Stratified (when labels are given) deterministic train/test split.
std::pair<std::vector<int>, std::vector<int>> split_dataset(
    int n, const std::vector<int>* labels, double ratio, std::uint64_t seed);

// -------------------------------------------------------------- batching

/// Deterministic epoch iteration: covers every index of the chosen split
/// exactly once; the shuffle order is salted with the epoch number.
class BatchIterator {
 public:
  BatchIterator(const MultiViewDataset& ds, const std::string& split,
                int batch_size, bool shuffle, std::uint64_t seed);

  void begin_epoch(int epoch);
  bool next(MultiViewBatch& out);
  int batches_per_epoch() const;

 private:
  const MultiViewDataset& ds_;
  std::vector<int> indices_;
  int batch_size_;
  bool shuffle_;
  std::uint64_t seed_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
};

/// Gather a batch by explicit sample ids.
MultiViewBatch gather_batch(const MultiViewDataset& ds, const std::vector<int>& ids);

// --------------------------------------------------------------- recipes

/// Source directory layout: images.bin (+ labels.bin) in the array container
/// format above.
struct SynthOptions {
  std::string recipe;  // emnist-edge | efmnist-edge | coil-group | jitter3
  std::string src_dir;
  std::string out_dir;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  JitterRanges jitter;
};

/// Build a multi-view dataset from single-view sources and persist it.
MultiViewDataset synth_dataset(const SynthOptions& opts);

}  // namespace mrdd::data

#endif
