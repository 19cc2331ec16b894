#include "mrdd/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mrdd/blas.hpp"
#include "mrdd/consistency.hpp"
#include "mrdd/data.hpp"
#include "mrdd/disentangle.hpp"
#include "mrdd/masking.hpp"
#include "mrdd/mi_audit.hpp"

namespace mrdd::pipeline {

namespace fs = std::filesystem;

double RunRecord::metric_mean(const std::string& key) const {
  auto it = metrics.find(key);
  if (it == metrics.end()) throw std::runtime_error("run record: no metric " + key);
  return it->second.mean;
}

namespace {

void write_metrics_table(const std::string& path,
                         const std::map<std::string, eval::MetricsReport>& metrics) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# selector/metric\tmean\tvariance\tstd\truns...\n";
  for (const auto& [key, rep] : metrics) {
    os << key << "\t" << rep.mean << "\t" << rep.variance << "\t" << rep.stddev;
    for (double v : rep.per_run) os << "\t" << v;
    os << "\n";
  }
}

consistency::Stage1Config stage1_config(const config::ExperimentConfig& cfg,
                                        const std::string& ckpt_dir) {
  consistency::Stage1Config s1;
  s1.epochs = cfg.stage1_epochs;
  s1.batch_size = cfg.batch_size;
  s1.lr = cfg.lr;
  s1.cosine = cfg.cosine;
  s1.beta_c = cfg.beta_c;
  s1.mask.strategy = masking::strategy_from_string(cfg.mask_strategy);
  s1.mask.ratio = cfg.mask_ratio;
  s1.mask.patch_size = cfg.mask_patch;
  s1.mask.fill = cfg.mask_fill;
  s1.train_split = cfg.train_split;
  s1.seed = cfg.seed;
  s1.checkpoint_every = cfg.checkpoint_every;
  s1.checkpoint_dir = ckpt_dir;
  return s1;
}

disentangle::Stage2Config stage2_config(const config::ExperimentConfig& cfg,
                                        const std::string& ckpt_dir) {
  disentangle::Stage2Config s2;
  s2.epochs = cfg.stage2_epochs;
  s2.batch_size = cfg.batch_size;
  s2.lr = cfg.lr;
  s2.cosine = cfg.cosine;
  s2.beta_s = cfg.beta_s;
  s2.lambda_d = cfg.lambda_d;
  s2.lambda_r = cfg.lambda_r;
  s2.sample_c = cfg.sample_c;
  s2.train_split = cfg.train_split;
  s2.seed = cfg.seed;
  s2.checkpoint_every = cfg.checkpoint_every;
  s2.checkpoint_dir = ckpt_dir;
  return s2;
}

std::vector<EncoderSpec> view_specs_from(const data::MultiViewDataset& ds,
                                         const config::ExperimentConfig& cfg) {
  std::vector<EncoderSpec> specs;
  for (const auto& v : ds.manifest.views) {
    EncoderSpec s;
    s.height = v.height;
    s.width = v.width;
    s.channels = v.channels;
    s.base_channels = cfg.base_channels;
    s.dropout = cfg.dropout;
    s.latent_dim = cfg.d_c;
    specs.push_back(s);
  }
  return specs;
}

}  // namespace

RunRecord run_full(const config::ExperimentConfig& cfg) {
  RunRecord rec;
  auto t0 = std::chrono::steady_clock::now();
  try {
    cfg.validate();
    if (cfg.threads > 0) set_compute_threads(cfg.threads);
    rec.config_hash = cfg.hash();
    rec.run_dir = cfg.output_dir + "/run-" + rec.config_hash;
    fs::create_directories(rec.run_dir);
    cfg.save(rec.run_dir + "/config.txt");

    data::MultiViewDataset ds = data::load_dataset(cfg.dataset_dir);

    // stage I
    consistency::ConsistentModel stage1(view_specs_from(ds, cfg), cfg.d_c,
                                        derive_seed(cfg.seed, {0x696e6974ULL}),
                                        cfg.poe_fusion);
    auto s1res = consistency::train_stage1(stage1, ds, stage1_config(cfg, rec.run_dir));
    consistency::write_curve(rec.run_dir + "/stage1_curve.tsv", s1res.curve);
    rec.stage1_ckpt = rec.run_dir + "/stage1.ckpt";
    rec.stage1_hash_before = stage1.encoder_hash();

    // stage II
    disentangle::SpecificModel stage2(&stage1, cfg.d_s,
                                      derive_seed(cfg.seed, {0x696e697432ULL}),
                                      cfg.qnet_hidden);
    auto s2res = disentangle::train_stage2(stage2, ds, stage2_config(cfg, rec.run_dir));
    disentangle::write_stage2_curve(rec.run_dir + "/stage2_curve.tsv", s2res.curve);
    rec.stage2_ckpt = rec.run_dir + "/stage2.ckpt";

    rec.stage1_hash_after = stage1.encoder_hash();
    rec.freeze_intact = rec.stage1_hash_before == rec.stage1_hash_after;

    // extract
    latents::LatentSet set = disentangle::extract_latents(stage1, stage2, ds, cfg.batch_size);
    rec.latents_dir = rec.run_dir + "/latents";
    latents::save_latents(rec.latents_dir, set);

    // evaluate MRDD-c and MRDD-cs
    for (const std::string& sel_name : {std::string("c"), std::string("cs1")}) {
      eval::Selector sel = eval::Selector::parse(sel_name);
      auto clu = eval::cluster_eval(set, sel, ds.manifest.n_classes, cfg.eval_runs,
                                    derive_seed(cfg.seed, {0x636c75ULL}));
      auto cls = eval::classify_eval(set, sel, ds.manifest.train_indices,
                                     ds.manifest.test_indices, cfg.eval_runs,
                                     derive_seed(cfg.seed, {0x636c73ULL}), cfg.svc_c);
      for (auto& [metric, rep] : clu) rec.metrics[sel_name + "/" + metric] = rep;
      for (auto& [metric, rep] : cls) rec.metrics[sel_name + "/" + metric] = rep;
    }
    write_metrics_table(rec.run_dir + "/metrics.tsv", rec.metrics);

    // MI audit
    if (cfg.audit_enabled) {
      mi_audit::MineConfig mc;
      mc.hidden = cfg.audit_hidden;
      mc.lr = cfg.audit_lr;
      mc.batch_size = cfg.audit_batch;
      mc.epochs = cfg.audit_epochs;
      mc.repeats = cfg.audit_repeats;
      mc.ema_correction = cfg.audit_ema;
      mc.seed = derive_seed(cfg.seed, {0x6d69ULL});
      auto rows = mi_audit::audit_redundancy(set, mc);
      mi_audit::write_audit(rec.run_dir + "/mi_audit.tsv", rows);
      for (const auto& r : rows) rec.mi_per_view[r.view] = {r.mi, r.stddev};
    }

    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.failure = e.what();
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!rec.run_dir.empty()) {
    write_record(rec.run_dir + "/record.txt", rec);
  }
  return rec;
}

void write_record(const std::string& path, const RunRecord& rec) {
  std::ofstream os(path);
  if (!os) return;
  os << "ok = " << (rec.ok ? "true" : "false") << "\n";
  if (!rec.failure.empty()) os << "failure = " << rec.failure << "\n";
  os << "config_hash = " << rec.config_hash << "\n";
  os << "stage1_ckpt = " << rec.stage1_ckpt << "\n";
  os << "stage2_ckpt = " << rec.stage2_ckpt << "\n";
  os << "latents_dir = " << rec.latents_dir << "\n";
  os << "stage1_hash_before = " << rec.stage1_hash_before << "\n";
  os << "stage1_hash_after = " << rec.stage1_hash_after << "\n";
  os << "freeze_intact = " << (rec.freeze_intact ? "true" : "false") << "\n";
  os << "wall_seconds = " << rec.wall_seconds << "\n";
  for (const auto& [key, rep] : rec.metrics) {
    os << "metric." << key << " = " << rep.mean << "\n";
  }
  for (const auto& [view, mi] : rec.mi_per_view) {
    os << "mi.view" << view << " = " << mi.first << "\n";
  }
}

std::vector<SweepMaskRow> sweep_mask_ratio(const config::ExperimentConfig& base,
                                           const std::vector<double>& ratios) {
  std::vector<SweepMaskRow> rows;
  for (double ratio : ratios) {
    config::ExperimentConfig cfg = base;
    cfg.mask_ratio = ratio;
    cfg.output_dir = base.output_dir + "/sweep-mask";
    RunRecord rec = run_full(cfg);
    if (!rec.ok) throw std::runtime_error("sweep mask ratio " + std::to_string(ratio) +
                                          " failed: " + rec.failure);
    rows.push_back({ratio, rec.metric_mean("cs1/ACC_cls"), rec.run_dir});
  }
  return rows;
}

void write_sweep_mask(const std::string& path, const std::vector<SweepMaskRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# ratio\tacc_cls\trun_dir\n";
  for (const auto& r : rows) os << r.ratio << "\t" << r.acc_cls << "\t" << r.run_dir << "\n";
}

std::vector<SweepDimsRow> sweep_dims(const config::ExperimentConfig& base,
                                     const std::vector<int>& dc_list,
                                     const std::vector<int>& ds_list) {
  std::vector<SweepDimsRow> rows;
  for (int dc : dc_list) {
    for (int dsd : ds_list) {
      config::ExperimentConfig cfg = base;
      cfg.d_c = dc;
      cfg.d_s = dsd;
      cfg.output_dir = base.output_dir + "/sweep-dims";
      RunRecord rec = run_full(cfg);
      if (!rec.ok) throw std::runtime_error("sweep dims (" + std::to_string(dc) + "," +
                                            std::to_string(dsd) + ") failed: " + rec.failure);
      rows.push_back({dc, dsd, rec.metric_mean("cs1/ACC_clu"), rec.run_dir});
    }
  }
  return rows;
}

void write_sweep_dims(const std::string& path, const std::vector<int>& dc_list,
                      const std::vector<int>& ds_list, const std::vector<SweepDimsRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# d_c axis:";
  for (int v : dc_list) os << " " << v;
  os << "\n# d_s axis:";
  for (int v : ds_list) os << " " << v;
  os << "\n# d_c\td_s\tacc_clu\trun_dir\n";
  for (const auto& r : rows) {
    os << r.d_c << "\t" << r.d_s << "\t" << r.acc_clu << "\t" << r.run_dir << "\n";
  }
}

std::vector<AblationRow> ablate_components(const config::ExperimentConfig& base) {
  std::vector<AblationRow> rows;

  config::ExperimentConfig full_cfg = base;
  full_cfg.output_dir = base.output_dir + "/ablate-components";
  RunRecord full = run_full(full_cfg);
  if (!full.ok) throw std::runtime_error("ablation full run failed: " + full.failure);
  rows.push_back({"full", full.metric_mean("cs1/ACC_cls"), full.run_dir});
  // stage-1-only = evaluate the consistent code of the full run
  rows.push_back({"only-stage-1", full.metric_mean("c/ACC_cls"), full.run_dir});

  {
    // stage II on a randomly initialized frozen consistent encoder
    config::ExperimentConfig cfg = full_cfg;
    cfg.stage1_epochs = 1;  // recorded but unused on this path
    RunRecord rec;
    try {
      cfg.validate();
      rec.config_hash = cfg.hash();
      rec.run_dir = cfg.output_dir + "/run-" + rec.config_hash + "-randc";
      std::filesystem::create_directories(rec.run_dir);
      cfg.save(rec.run_dir + "/config.txt");
      data::MultiViewDataset ds = data::load_dataset(cfg.dataset_dir);
      consistency::ConsistentModel stage1(view_specs_from(ds, cfg), cfg.d_c,
                                          derive_seed(cfg.seed, {0x696e6974ULL}),
                                          cfg.poe_fusion);
      stage1.freeze();  // untrained: random prior knowledge
      disentangle::SpecificModel stage2(&stage1, cfg.d_s,
                                        derive_seed(cfg.seed, {0x696e697432ULL}),
                                        cfg.qnet_hidden);
      disentangle::train_stage2(stage2, ds, stage2_config(cfg, rec.run_dir));
      latents::LatentSet set = disentangle::extract_latents(stage1, stage2, ds, cfg.batch_size);
      auto cls = eval::classify_eval(set, eval::Selector::parse("cs1"),
                                     ds.manifest.train_indices, ds.manifest.test_indices,
                                     cfg.eval_runs, derive_seed(cfg.seed, {0x636c73ULL}),
                                     cfg.svc_c);
      rows.push_back({"only-stage-2", cls.at("ACC_cls").mean, rec.run_dir});
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("ablation only-stage-2 failed: ") + e.what());
    }
  }

  auto variant = [&](const std::string& name,
                     const std::function<void(config::ExperimentConfig&)>& tweak) {
    config::ExperimentConfig cfg = full_cfg;
    tweak(cfg);
    RunRecord rec = run_full(cfg);
    if (!rec.ok) throw std::runtime_error("ablation " + name + " failed: " + rec.failure);
    rows.push_back({name, rec.metric_mean("cs1/ACC_cls"), rec.run_dir});
  };
  variant("no-mcp", [](config::ExperimentConfig& c) { c.mask_ratio = 0.0; });
  variant("no-club", [](config::ExperimentConfig& c) { c.lambda_d = 0.0; });
  variant("no-recon", [](config::ExperimentConfig& c) { c.lambda_r = 0.0; });
  return rows;
}

std::vector<AblationRow> ablate_mask_strategy(const config::ExperimentConfig& base) {
  std::vector<AblationRow> rows;
  for (const std::string& strat : {std::string("random"), std::string("block"),
                                   std::string("grid")}) {
    config::ExperimentConfig cfg = base;
    cfg.mask_strategy = strat;
    cfg.output_dir = base.output_dir + "/ablate-strategy";
    RunRecord rec = run_full(cfg);
    if (!rec.ok) throw std::runtime_error("strategy " + strat + " failed: " + rec.failure);
    rows.push_back({strat, rec.metric_mean("cs1/ACC_cls"), rec.run_dir});
  }
  return rows;
}

void write_ablation(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# variant\tacc_cls\trun_dir\n";
  for (const auto& r : rows) os << r.name << "\t" << r.acc_cls << "\t" << r.run_dir << "\n";
}

}  // namespace mrdd::pipeline
