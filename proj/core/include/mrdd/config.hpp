#ifndef MRDD_CONFIG_HPP
#define MRDD_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mrdd::config {

/// Experiment configuration parsed from a flat `key.subkey = value` text
/// file. Unknown and duplicate keys are errors so sweep definitions cannot
/// silently typo a knob.
struct ExperimentConfig {
  std::string dataset_dir;
  std::string output_dir = "runs";
  std::uint64_t seed = 0;

  int d_c = 10;
  int d_s = 10;
  int base_channels = 16;
  double dropout = 0.1;
  bool poe_fusion = false;
  std::vector<int> qnet_hidden = {256, 256};
  bool sample_c = false;

  std::string mask_strategy = "random";
  double mask_ratio = 0.7;
  int mask_patch = 4;
  double mask_fill = 0.0;

  int stage1_epochs = 200;
  int stage2_epochs = 200;
  int batch_size = 512;
  double lr = 5e-4;
  bool cosine = true;

  double beta_c = 1.0;
  double beta_s = 1.0;
  double lambda_d = 1.0;
  double lambda_r = 1.0;

  std::string train_split = "all";
  int checkpoint_every = 0;

  int eval_runs = 10;
  double svc_c = 1.0;

  bool audit_enabled = true;
  int audit_epochs = 500;
  int audit_batch = 128;
  double audit_lr = 1e-4;
  int audit_repeats = 10;
  bool audit_ema = true;
  std::vector<int> audit_hidden = {100, 100, 100};

  int threads = 0;

  void validate() const;

  /// Canonical "key = value" serialization with sorted keys; the source of
  /// the config hash, so it is independent of field order in the input file.
  std::string canonical() const;
  std::string hash() const;
  void save(const std::string& path) const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace mrdd::config

#endif
