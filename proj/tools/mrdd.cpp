// mrdd: config-driven two-stage multi-view representation learning.
//
// Verbs: data synth | data gen-digits | train stage1 | train stage2 |
// extract | eval | audit-mi | run | sweep mask | sweep dims |
// ablate components | ablate strategy | report

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mrdd/blas.hpp"
#include "mrdd/config.hpp"
#include "mrdd/consistency.hpp"
#include "mrdd/data.hpp"
#include "mrdd/digits.hpp"
#include "mrdd/disentangle.hpp"
#include "mrdd/eval.hpp"
#include "mrdd/latents.hpp"
#include "mrdd/mi_audit.hpp"
#include "mrdd/pipeline.hpp"

namespace {

using namespace mrdd;

std::string output_root() {
  const char* env = std::getenv("MRDD_OUTPUT_ROOT");
  return env ? env : "";
}

std::string resolve_output(const std::string& dir) {
  std::string root = output_root();
  if (root.empty() || dir.empty() || dir.front() == '/') return dir;
  return root + "/" + dir;
}

config::ExperimentConfig load_cfg(const std::string& path) {
  auto cfg = config::load_config(path);
  cfg.output_dir = resolve_output(cfg.output_dir);
  if (cfg.threads > 0) set_compute_threads(cfg.threads);
  return cfg;
}

consistency::Stage1Config stage1_cfg(const config::ExperimentConfig& cfg,
                                     const std::string& out_dir) {
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
  s1.checkpoint_dir = out_dir;
  return s1;
}

disentangle::Stage2Config stage2_cfg(const config::ExperimentConfig& cfg,
                                     const std::string& out_dir) {
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
  s2.checkpoint_dir = out_dir;
  return s2;
}

std::vector<EncoderSpec> specs_for(const data::MultiViewDataset& ds,
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

void print_metrics(const std::map<std::string, eval::MetricsReport>& reports) {
  for (const auto& [name, rep] : reports) {
    std::cout << name << ": mean " << rep.mean << "  variance " << rep.variance
              << "  std " << rep.stddev << "  (" << rep.per_run.size() << " runs)\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view representation learning via masked cross-view "
               "prediction and distilled disentangling"};
  app.require_subcommand(1);

  // ---- data
  auto* data_cmd = app.add_subcommand("data", "dataset construction");
  data_cmd->require_subcommand(1);

  auto* synth = data_cmd->add_subcommand("synth", "build a multi-view dataset from a source");
  std::string recipe, src_dir, out_dir;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  synth->add_option("--recipe", recipe, "emnist-edge|efmnist-edge|coil-group|jitter3")
      ->required();
  synth->add_option("--src", src_dir, "source directory (images.bin + labels.bin)")->required();
  synth->add_option("--out", out_dir, "output dataset directory")->required();
  synth->add_option("--seed", seed, "seed for grouping/jitter/split");
  synth->add_option("--split-ratio", split_ratio, "train fraction (default 0.8)");

  auto* gen = data_cmd->add_subcommand("gen-digits", "render a synthetic digit source");
  std::string gen_out;
  int gen_n = 10000, gen_classes = 10;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output source directory")->required();
  gen->add_option("--n", gen_n, "number of images");
  gen->add_option("--classes", gen_classes, "number of digit classes (<= 10)");
  gen->add_option("--seed", gen_seed, "render seed");

  // ---- train
  auto* train = app.add_subcommand("train", "stage training");
  train->require_subcommand(1);
  std::string cfg_path, stage1_path, run_dir;

  auto* t1 = train->add_subcommand("stage1", "masked cross-view prediction pretraining");
  t1->add_option("--config", cfg_path, "experiment config file")->required();
  t1->add_option("--out", run_dir, "output directory (default from config)");

  auto* t2 = train->add_subcommand("stage2", "specific-representation distillation");
  t2->add_option("--config", cfg_path, "experiment config file")->required();
  t2->add_option("--stage1", stage1_path, "frozen stage-1 checkpoint")->required();
  t2->add_option("--out", run_dir, "output directory (default from config)");

  // ---- extract
  auto* extract = app.add_subcommand("extract", "write posterior-mean latents");
  std::string stage2_path, latents_dir;
  extract->add_option("--config", cfg_path, "experiment config file")->required();
  extract->add_option("--stage1", stage1_path, "stage-1 checkpoint")->required();
  extract->add_option("--stage2", stage2_path, "stage-2 checkpoint")->required();
  extract->add_option("--out", latents_dir, "latents output directory")->required();

  // ---- eval
  auto* evalc = app.add_subcommand("eval", "clustering / classification metrics");
  std::string selector = "cs1", task = "cluster", eval_dataset, eval_out;
  int eval_runs = 10;
  std::uint64_t eval_seed = 0;
  evalc->add_option("--latents", latents_dir, "latents directory")->required();
  evalc->add_option("--selector", selector, "c|s1|s2|s3|cs1|concat");
  evalc->add_option("--task", task, "cluster|classify");
  evalc->add_option("--dataset", eval_dataset, "dataset dir (for the classify split)");
  evalc->add_option("--runs", eval_runs, "repetitions (default 10)");
  evalc->add_option("--seed", eval_seed, "evaluation seed");
  evalc->add_option("--out", eval_out, "write a TSV report here");

  // ---- audit-mi
  auto* audit = app.add_subcommand("audit-mi", "MINE audit of MI(c, s_i)");
  std::string audit_out;
  int audit_epochs = 500, audit_batch = 128, audit_repeats = 10;
  double audit_lr = 1e-4;
  bool audit_no_ema = false;
  std::uint64_t audit_seed = 0;
  audit->add_option("--latents", latents_dir, "latents directory")->required();
  audit->add_option("--out", audit_out, "report file")->required();
  audit->add_option("--epochs", audit_epochs, "training epochs (default 500)");
  audit->add_option("--batch", audit_batch, "batch size (default 128)");
  audit->add_option("--repeats", audit_repeats, "independent repeats (default 10)");
  audit->add_option("--lr", audit_lr, "learning rate (default 1e-4)");
  audit->add_flag("--no-ema", audit_no_ema, "disable the moving-average gradient correction");
  audit->add_option("--seed", audit_seed, "audit seed");

  // ---- run / sweeps / ablations
  auto* runc = app.add_subcommand("run", "full pipeline: train, extract, eval, audit");
  runc->add_option("--config", cfg_path, "experiment config file")->required();

  auto* sweep = app.add_subcommand("sweep", "parameter sweeps");
  sweep->require_subcommand(1);
  auto* sweep_mask = sweep->add_subcommand("mask", "mask-ratio sweep");
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  sweep_mask->add_option("--config", cfg_path, "experiment config file")->required();
  sweep_mask->add_option("--ratios", ratios, "ratios to sweep");
  auto* sweep_dims = sweep->add_subcommand("dims", "latent-dimension grid");
  std::vector<int> dc_list{5, 10, 15, 20};
  std::vector<int> ds_list{5, 10, 15, 20, 40};
  sweep_dims->add_option("--config", cfg_path, "experiment config file")->required();
  sweep_dims->add_option("--dc", dc_list, "consistent dims");
  sweep_dims->add_option("--ds", ds_list, "specific dims");

  auto* ablate = app.add_subcommand("ablate", "ablation studies");
  ablate->require_subcommand(1);
  auto* ablate_comp = ablate->add_subcommand("components", "component ablation");
  ablate_comp->add_option("--config", cfg_path, "experiment config file")->required();
  auto* ablate_strat = ablate->add_subcommand("strategy", "mask-strategy ablation");
  ablate_strat->add_option("--config", cfg_path, "experiment config file")->required();

  auto* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      data::SynthOptions opts;
      opts.recipe = recipe;
      opts.src_dir = src_dir;
      opts.out_dir = resolve_output(out_dir);
      opts.seed = seed;
      opts.split_ratio = split_ratio;
      auto ds = data::synth_dataset(opts);
      std::cout << "dataset '" << ds.manifest.name << "': " << ds.manifest.n_samples
                << " samples, " << ds.n_views() << " views, " << ds.manifest.n_classes
                << " classes -> " << opts.out_dir << "\n";
    } else if (gen->parsed()) {
      digits::write_digit_source(resolve_output(gen_out), gen_n, gen_classes, gen_seed);
      std::cout << "digit source: " << gen_n << " images, " << gen_classes
                << " classes -> " << resolve_output(gen_out) << "\n";
    } else if (t1->parsed()) {
      auto cfg = load_cfg(cfg_path);
      std::string out = run_dir.empty() ? cfg.output_dir + "/stage1-" + cfg.hash()
                                        : resolve_output(run_dir);
      std::filesystem::create_directories(out);
      auto ds = data::load_dataset(cfg.dataset_dir);
      consistency::ConsistentModel model(specs_for(ds, cfg), cfg.d_c,
                                         derive_seed(cfg.seed, {0x696e6974ULL}),
                                         cfg.poe_fusion);
      auto res = consistency::train_stage1(model, ds, stage1_cfg(cfg, out));
      consistency::write_curve(out + "/stage1_curve.tsv", res.curve);
      std::cout << "stage 1 done: " << out << "/stage1.ckpt (encoder hash "
                << model.encoder_hash() << ")\n";
    } else if (t2->parsed()) {
      auto cfg = load_cfg(cfg_path);
      std::string out = run_dir.empty() ? cfg.output_dir + "/stage2-" + cfg.hash()
                                        : resolve_output(run_dir);
      std::filesystem::create_directories(out);
      auto ds = data::load_dataset(cfg.dataset_dir);
      auto stage1 = consistency::load_stage1(stage1_path);
      disentangle::SpecificModel model(stage1.get(), cfg.d_s,
                                       derive_seed(cfg.seed, {0x696e697432ULL}),
                                       cfg.qnet_hidden);
      auto res = disentangle::train_stage2(model, ds, stage2_cfg(cfg, out));
      disentangle::write_stage2_curve(out + "/stage2_curve.tsv", res.curve);
      std::cout << "stage 2 done: " << out << "/stage2.ckpt\n";
    } else if (extract->parsed()) {
      auto cfg = load_cfg(cfg_path);
      auto ds = data::load_dataset(cfg.dataset_dir);
      auto stage1 = consistency::load_stage1(stage1_path);
      auto stage2 = disentangle::load_stage2(stage2_path, stage1.get());
      auto set = disentangle::extract_latents(*stage1, *stage2, ds, cfg.batch_size);
      latents::save_latents(resolve_output(latents_dir), set);
      std::cout << "latents: " << set.n_samples() << " samples, d_c " << set.c.dim(1)
                << ", " << set.n_views() << " specific codes -> "
                << resolve_output(latents_dir) << "\n";
    } else if (evalc->parsed()) {
      auto set = latents::load_latents(latents_dir);
      auto sel = eval::Selector::parse(selector);
      std::map<std::string, eval::MetricsReport> reports;
      if (task == "cluster") {
        int k = 0;
        for (int l : set.labels) k = std::max(k, l + 1);
        reports = eval::cluster_eval(set, sel, k, eval_runs, eval_seed);
      } else if (task == "classify") {
        if (eval_dataset.empty()) {
          throw std::runtime_error("--dataset required for the classify task (80:20 split)");
        }
        auto manifest = data::load_manifest(eval_dataset + "/manifest");
        reports = eval::classify_eval(set, sel, manifest.train_indices,
                                      manifest.test_indices, eval_runs, eval_seed);
      } else {
        throw std::runtime_error("unknown task: " + task);
      }
      print_metrics(reports);
      if (!eval_out.empty()) {
        std::ofstream os(resolve_output(eval_out));
        os << "# selector\tmetric\tmean\tvariance\tstd\truns...\n";
        for (const auto& [name, rep] : reports) {
          os << selector << "\t" << name << "\t" << rep.mean << "\t" << rep.variance
             << "\t" << rep.stddev;
          for (double v : rep.per_run) os << "\t" << v;
          os << "\n";
        }
      }
    } else if (audit->parsed()) {
      auto set = latents::load_latents(latents_dir);
      mi_audit::MineConfig mc;
      mc.epochs = audit_epochs;
      mc.batch_size = audit_batch;
      mc.repeats = audit_repeats;
      mc.lr = audit_lr;
      mc.ema_correction = !audit_no_ema;
      mc.seed = audit_seed;
      auto rows = mi_audit::audit_redundancy(set, mc);
      mi_audit::write_audit(resolve_output(audit_out), rows);
      for (const auto& r : rows) {
        std::cout << "view " << r.view << ": MI(c, s" << r.view << ") = " << r.mi
                  << " nats (std " << r.stddev << ")\n";
      }
    } else if (runc->parsed()) {
      auto cfg = load_cfg(cfg_path);
      auto rec = pipeline::run_full(cfg);
      if (!rec.ok) {
        std::cerr << "run failed: " << rec.failure << "\n";
        return 1;
      }
      std::cout << "run " << rec.config_hash << " complete in " << rec.wall_seconds
                << " s -> " << rec.run_dir << "\n";
      for (const auto& [key, rep] : rec.metrics) {
        std::cout << "  " << key << " = " << rep.mean << "\n";
      }
      for (const auto& [view, mi] : rec.mi_per_view) {
        std::cout << "  MI(c, s" << view << ") = " << mi.first << " nats\n";
      }
      std::cout << "  freeze intact: " << (rec.freeze_intact ? "yes" : "NO") << "\n";
    } else if (sweep_mask->parsed()) {
      auto cfg = load_cfg(cfg_path);
      auto rows = pipeline::sweep_mask_ratio(cfg, ratios);
      std::string out = cfg.output_dir + "/sweep_mask.tsv";
      pipeline::write_sweep_mask(out, rows);
      for (const auto& r : rows) {
        std::cout << "ratio " << r.ratio << ": ACC_cls " << r.acc_cls << "\n";
      }
      std::cout << "table -> " << out << "\n";
    } else if (sweep_dims->parsed()) {
      auto cfg = load_cfg(cfg_path);
      auto rows = pipeline::sweep_dims(cfg, dc_list, ds_list);
      std::string out = cfg.output_dir + "/sweep_dims.tsv";
      pipeline::write_sweep_dims(out, dc_list, ds_list, rows);
      for (const auto& r : rows) {
        std::cout << "d_c " << r.d_c << " d_s " << r.d_s << ": ACC_clu " << r.acc_clu << "\n";
      }
      std::cout << "table -> " << out << "\n";
    } else if (ablate_comp->parsed()) {
      auto cfg = load_cfg(cfg_path);
      auto rows = pipeline::ablate_components(cfg);
      std::string out = cfg.output_dir + "/ablate_components.tsv";
      pipeline::write_ablation(out, rows);
      for (const auto& r : rows) {
        std::cout << r.name << ": ACC_cls " << r.acc_cls << "\n";
      }
      std::cout << "table -> " << out << "\n";
    } else if (ablate_strat->parsed()) {
      auto cfg = load_cfg(cfg_path);
      auto rows = pipeline::ablate_mask_strategy(cfg);
      std::string out = cfg.output_dir + "/ablate_strategy.tsv";
      pipeline::write_ablation(out, rows);
      for (const auto& r : rows) {
        std::cout << r.name << ": ACC_cls " << r.acc_cls << "\n";
      }
      std::cout << "table -> " << out << "\n";
    } else if (report->parsed()) {
      std::ifstream is(run_dir + "/record.txt");
      if (!is) throw std::runtime_error("no record.txt under " + run_dir);
      std::cout << is.rdbuf();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
