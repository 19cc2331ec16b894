#ifndef MRDD_PIPELINE_HPP
#define MRDD_PIPELINE_HPP

#include <map>
#include <string>
#include <vector>

#include "mrdd/config.hpp"
#include "mrdd/eval.hpp"

namespace mrdd::pipeline {

/// Artifacts and summary metrics of one full run.
struct RunRecord {
  bool ok = false;
  std::string failure;
  std::string run_dir;
  std::string config_hash;
  std::string stage1_ckpt;
  std::string stage2_ckpt;
  std::string latents_dir;
  std::string stage1_hash_before;
  std::string stage1_hash_after;
  bool freeze_intact = false;
  double wall_seconds = 0.0;

  // metric key: "<selector>/<metric>", e.g. "cs1/ACC_cls"
  std::map<std::string, eval::MetricsReport> metrics;
  // mi key: view index (1-based) -> (mi, std)
  std::map<int, std::pair<double, double>> mi_per_view;

  double metric_mean(const std::string& key) const;
};

/// stage1 -> freeze -> stage2 -> extract -> eval (c and cs1) -> MI audit.
/// Never throws for stage failures; inspect `ok`/`failure`.
RunRecord run_full(const config::ExperimentConfig& cfg);

void write_record(const std::string& path, const RunRecord& rec);

struct SweepMaskRow {
  double ratio = 0.0;
  double acc_cls = 0.0;  // MRDD-cs classification accuracy, mean over runs
  std::string run_dir;
};

std::vector<SweepMaskRow> sweep_mask_ratio(const config::ExperimentConfig& base,
                                           const std::vector<double>& ratios);
void write_sweep_mask(const std::string& path, const std::vector<SweepMaskRow>& rows);

struct SweepDimsRow {
  int d_c = 0;
  int d_s = 0;
  double acc_clu = 0.0;  // MRDD-cs clustering accuracy, mean over runs
  std::string run_dir;
};

std::vector<SweepDimsRow> sweep_dims(const config::ExperimentConfig& base,
                                     const std::vector<int>& dc_list,
                                     const std::vector<int>& ds_list);
void write_sweep_dims(const std::string& path, const std::vector<int>& dc_list,
                      const std::vector<int>& ds_list, const std::vector<SweepDimsRow>& rows);

struct AblationRow {
  std::string name;
  double acc_cls = 0.0;
  std::string run_dir;
};

/// Rows: full, only-stage-1, only-stage-2, no-mcp, no-club, no-recon.
std::vector<AblationRow> ablate_components(const config::ExperimentConfig& base);

/// Rows: random, block, grid at the configured mask ratio.
std::vector<AblationRow> ablate_mask_strategy(const config::ExperimentConfig& base);

void write_ablation(const std::string& path, const std::vector<AblationRow>& rows);

}  // namespace mrdd::pipeline

#endif
