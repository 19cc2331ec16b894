#include "mrdd/disentangle.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "mrdd/checkpoint.hpp"
#include "mrdd/optim.hpp"

namespace mrdd::disentangle {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

struct ClubTerms {
  double value = 0.0;
  // per-dim aggregates over rows k of the conditional parameters
  std::vector<double> sum_a;   // sum_k exp(-lv_kj)
  std::vector<double> sum_b;   // sum_k mu_kj * exp(-lv_kj)
};

/// CLUB via O(N d) aggregation: positive term uses matched pairs, the
/// marginal term expands (s_l - mu_k)^2 over all N^2 pairings.
ClubTerms club_terms(const Tensor& s, const GaussianPosterior& q) {
  const int n = s.dim(0), d = s.dim(1);
  ClubTerms t;
  t.sum_a.assign(d, 0.0);
  t.sum_b.assign(d, 0.0);
  std::vector<double> sum_mu2a(d, 0.0), sum_lv(d, 0.0);
  std::vector<double> sum_s(d, 0.0), sum_s2(d, 0.0);

  double pos = 0.0;
  for (int k = 0; k < n; ++k) {
    const double* sk = s.data() + static_cast<std::size_t>(k) * d;
    const double* mu = q.mean.data() + static_cast<std::size_t>(k) * d;
    const double* lv = q.logvar.data() + static_cast<std::size_t>(k) * d;
    for (int j = 0; j < d; ++j) {
      double a = std::exp(-lv[j]);
      double diff = sk[j] - mu[j];
      pos += -0.5 * (diff * diff * a + lv[j] + kLog2Pi);
      t.sum_a[j] += a;
      t.sum_b[j] += mu[j] * a;
      sum_mu2a[j] += mu[j] * mu[j] * a;
      sum_lv[j] += lv[j];
      sum_s[j] += sk[j];
      sum_s2[j] += sk[j] * sk[j];
    }
  }
  pos /= static_cast<double>(n);

  double neg = 0.0;
  for (int j = 0; j < d; ++j) {
    double quad = sum_s2[j] * t.sum_a[j] - 2.0 * sum_s[j] * t.sum_b[j] +
                  static_cast<double>(n) * sum_mu2a[j];
    neg += -0.5 * (quad + static_cast<double>(n) * (sum_lv[j] + n * kLog2Pi));
  }
  neg /= static_cast<double>(n) * n;

  t.value = pos - neg;
  return t;
}

GaussianPosterior qnet_infer(GaussianMlp& qnet, const Tensor& c) {
  qnet.set_inference(true);
  GaussianPosterior q = qnet.forward(c);
  qnet.set_inference(false);
  return q;
}

}  // namespace

double club_loss(const Tensor& s, const Tensor& c, GaussianMlp& qnet) {
  if (s.ndim() != 2 || c.ndim() != 2 || s.dim(0) != c.dim(0)) {
    throw std::invalid_argument("club: s and c must be row-aligned matrices");
  }
  if (s.dim(0) == 0) throw std::invalid_argument("club: empty batch");
  GaussianPosterior q = qnet_infer(qnet, c);
  return club_terms(s, q).value;
}

double club_loss_grad_s(const Tensor& s, const Tensor& c, GaussianMlp& qnet,
                        Tensor& ds_out) {
  if (s.dim(0) == 0) throw std::invalid_argument("club: empty batch");
  const int n = s.dim(0), d = s.dim(1);
  GaussianPosterior q = qnet_infer(qnet, c);
  ClubTerms t = club_terms(s, q);

  ds_out = Tensor({n, d});
  double inv_n = 1.0 / static_cast<double>(n);
  double inv_n2 = inv_n * inv_n;
  for (int l = 0; l < n; ++l) {
    const double* sl = s.data() + static_cast<std::size_t>(l) * d;
    const double* mu = q.mean.data() + static_cast<std::size_t>(l) * d;
    const double* lv = q.logvar.data() + static_cast<std::size_t>(l) * d;
    double* g = ds_out.data() + static_cast<std::size_t>(l) * d;
    for (int j = 0; j < d; ++j) {
      double a = std::exp(-lv[j]);
      // d pos / d s_lj  (matched pair only)
      double gpos = -inv_n * (sl[j] - mu[j]) * a;
      // d neg / d s_lj over all conditionals k
      double gneg = -inv_n2 * (sl[j] * t.sum_a[j] - t.sum_b[j]);
      g[j] = gpos - gneg;
    }
  }
  return t.value;
}

// ---------------------------------------------------------- SpecificModel

SpecificModel::SpecificModel(consistency::ConsistentModel* frozen_stage1, int d_s,
                             std::uint64_t init_seed, std::vector<int> qnet_hidden)
    : stage1_(frozen_stage1), d_s_(d_s), qnet_hidden_(std::move(qnet_hidden)),
      dropout_rng_(derive_seed(init_seed, {0x64726f7032ULL})) {
  if (!stage1_) throw std::invalid_argument("specific model: stage-1 model required");
  if (d_s < 1) throw std::invalid_argument("specific model: d_s must be >= 1");
  RngStream init(derive_seed(init_seed, {0x73746167653261ULL}));
  for (int v = 0; v < stage1_->n_views(); ++v) {
    EncoderSpec spec = stage1_->view_specs()[v];
    spec.latent_dim = d_s;
    std::string tag = std::to_string(v + 1);
    encoders_.push_back(std::make_unique<ConvEncoder>("specific.enc" + tag, spec, init));
    decoders_.push_back(std::make_unique<ConvDecoder>("specific.dec" + tag, spec,
                                                      stage1_->d_c() + d_s, init));
    qnets_.push_back(std::make_unique<GaussianMlp>("club.q" + tag, stage1_->d_c(),
                                                   qnet_hidden_, d_s, init));
  }
  for (auto& e : encoders_) e->set_rng(&dropout_rng_);
  for (auto& d : decoders_) d->set_rng(&dropout_rng_);
}

std::vector<nn::ParamPtr> SpecificModel::main_params() {
  std::vector<nn::ParamPtr> out;
  for (auto& e : encoders_) e->params(out);
  for (auto& d : decoders_) d->params(out);
  return out;
}

std::vector<nn::ParamPtr> SpecificModel::qnet_params() {
  std::vector<nn::ParamPtr> out;
  for (auto& q : qnets_) q->params(out);
  return out;
}

void SpecificModel::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& e : encoders_) e->state(out);
  for (auto& d : decoders_) d->state(out);
  for (auto& q : qnets_) q->state(out);
}

void SpecificModel::set_training(bool train) {
  for (auto& e : encoders_) e->set_training(train);
  for (auto& d : decoders_) d->set_training(train);
  for (auto& q : qnets_) q->set_training(train);
}

void SpecificModel::reseed_dropout(std::uint64_t seed) {
  dropout_rng_ = RngStream(seed);
}

void SpecificModel::clear_cache() {
  for (auto& e : encoders_) e->clear_cache();
  for (auto& d : decoders_) d->clear_cache();
  for (auto& q : qnets_) q->clear_cache();
}

// ---------------------------------------------------------------- losses

Stage2LossComponents stage2_loss(SpecificModel& model, const data::MultiViewBatch& batch,
                                 const Tensor& c, const std::vector<Tensor>& eps,
                                 const Stage2Config& cfg, bool with_grad) {
  const int v = model.n_views();
  if (static_cast<int>(batch.views.size()) != v) {
    throw std::invalid_argument("stage2_loss: view count mismatch");
  }
  const int n = batch.views[0].dim(0);
  if (c.dim(0) != n || c.dim(1) != model.d_c()) {
    throw std::invalid_argument("stage2_loss: c dimension mismatch");
  }

  Stage2LossComponents out;
  double inv_v = 1.0 / static_cast<double>(v);
  for (int i = 0; i < v; ++i) {
    GaussianPosterior post = model.encoder(i).forward(batch.views[i]);
    Tensor s = reparameterize(post, eps[i]);

    Tensor ds_club;
    double ld = with_grad
        ? club_loss_grad_s(s, c, model.qnet(i), ds_club)
        : club_loss(s, c, model.qnet(i));

    // z = [c, s]
    Tensor z({n, model.d_c() + model.d_s()});
    for (int r = 0; r < n; ++r) {
      double* row = z.data() + static_cast<std::size_t>(r) * z.dim(1);
      const double* cr = c.data() + static_cast<std::size_t>(r) * model.d_c();
      const double* sr = s.data() + static_cast<std::size_t>(r) * model.d_s();
      std::copy(cr, cr + model.d_c(), row);
      std::copy(sr, sr + model.d_s(), row + model.d_c());
    }
    Tensor xhat = model.decoder(i).forward(z);

    const Tensor& x = batch.views[i];
    double mse = 0.0;
    for (std::size_t p = 0; p < x.size(); ++p) {
      double diff = xhat[p] - x[p];
      mse += diff * diff;
    }
    mse /= static_cast<double>(n);
    double kl = kl_diag_gaussian(post);
    double lr_i = mse + cfg.beta_s * kl;

    out.club_per_view.push_back(ld);
    out.mse_per_view.push_back(mse);
    out.kl_per_view.push_back(kl);
    out.recon_per_view.push_back(lr_i);
    out.total += inv_v * (cfg.lambda_d * ld + cfg.lambda_r * lr_i);

    if (with_grad) {
      Tensor dxhat(xhat.shape());
      double scale = cfg.lambda_r * inv_v * 2.0 / static_cast<double>(n);
      for (std::size_t p = 0; p < dxhat.size(); ++p) {
        dxhat[p] = scale * (xhat[p] - x[p]);
      }
      Tensor dz = model.decoder(i).backward(dxhat);
      Tensor ds({n, model.d_s()});
      for (int r = 0; r < n; ++r) {
        const double* dzr = dz.data() + static_cast<std::size_t>(r) * dz.dim(1);
        double* dsr = ds.data() + static_cast<std::size_t>(r) * model.d_s();
        std::copy(dzr + model.d_c(), dzr + model.d_c() + model.d_s(), dsr);
      }
      if (cfg.lambda_d != 0.0) {
        double club_scale = cfg.lambda_d * inv_v;
        for (std::size_t p = 0; p < ds.size(); ++p) ds[p] += club_scale * ds_club[p];
      }
      Tensor dmean(post.mean.shape());
      Tensor dlogvar(post.mean.shape());
      double kl_scale = cfg.lambda_r * inv_v * cfg.beta_s / static_cast<double>(n);
      for (std::size_t p = 0; p < ds.size(); ++p) {
        double sigma = std::exp(0.5 * post.logvar[p]);
        dmean[p] = ds[p] + kl_scale * post.mean[p];
        dlogvar[p] = ds[p] * eps[i][p] * 0.5 * sigma +
                     kl_scale * 0.5 * (std::exp(post.logvar[p]) - 1.0);
      }
      model.encoder(i).backward(dmean, dlogvar);
    }
  }
  return out;
}

double qnet_nll(GaussianMlp& qnet, const Tensor& s, const Tensor& c, bool with_grad) {
  const int n = s.dim(0), d = s.dim(1);
  if (!with_grad) qnet.set_inference(true);
  GaussianPosterior q = qnet.forward(c);
  if (!with_grad) qnet.set_inference(false);
  double nll = 0.0;
  Tensor dmean({n, d}), dlogvar({n, d});
  double inv_n = 1.0 / static_cast<double>(n);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < d; ++j) {
      std::size_t at = static_cast<std::size_t>(k) * d + j;
      double a = std::exp(-q.logvar[at]);
      double diff = s[at] - q.mean[at];
      nll += 0.5 * (diff * diff * a + q.logvar[at] + kLog2Pi);
      dmean[at] = -inv_n * diff * a;
      dlogvar[at] = -inv_n * 0.5 * (diff * diff * a - 1.0);
    }
  }
  nll *= inv_n;
  if (with_grad) {
    qnet.backward(dmean, dlogvar);  // input gradient discarded: c is detached
  }
  return nll;
}

Stage2Result train_stage2(SpecificModel& model, const data::MultiViewDataset& ds,
                          const Stage2Config& cfg) {
  if (!model.stage1().frozen()) {
    throw std::logic_error("train_stage2: stage-1 encoder must be frozen");
  }
  if (cfg.epochs < 1) throw std::invalid_argument("train_stage2: epochs must be >= 1");

  Adam adam_main(model.main_params(), cfg.lr);
  std::vector<std::unique_ptr<Adam>> adam_q;
  for (int i = 0; i < model.n_views(); ++i) {
    std::vector<nn::ParamPtr> qp;
    model.qnet(i).params(qp);
    adam_q.push_back(std::make_unique<Adam>(qp, cfg.lr));
  }

  data::BatchIterator batches(ds, cfg.train_split, cfg.batch_size, true,
                              derive_seed(cfg.seed, {0x7332ULL}));
  Stage2Result result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.cosine ? cosine_lr(cfg.lr, epoch, cfg.epochs) : cfg.lr;
    adam_main.set_lr(lr);
    for (auto& aq : adam_q) aq->set_lr(lr);
    model.set_training(true);

    Stage2CurveRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.club_per_view.assign(model.n_views(), 0.0);
    row.recon_per_view.assign(model.n_views(), 0.0);
    int n_batches = 0;

    batches.begin_epoch(epoch);
    data::MultiViewBatch batch;
    int batch_idx = 0;
    while (batches.next(batch)) {
      std::uint64_t salt = derive_seed(cfg.seed, {0x7332626174ULL,
                                                  static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(batch_idx)});
      RngStream eps_rng(derive_seed(salt, {1}));
      model.reseed_dropout(derive_seed(salt, {2}));

      // frozen consistent code; posterior mean unless sampling is requested
      GaussianPosterior cpost = model.stage1().encode_consistent(batch);
      Tensor c = cpost.mean;
      if (cfg.sample_c) {
        Tensor eps_c({batch.size(), model.d_c()});
        eps_rng.fill_normal(eps_c.data(), eps_c.size());
        c = reparameterize(cpost, eps_c);
      }

      std::vector<Tensor> eps(model.n_views());
      for (int i = 0; i < model.n_views(); ++i) {
        eps[i] = Tensor({batch.size(), model.d_s()});
        eps_rng.fill_normal(eps[i].data(), eps[i].size());
      }

      // (a) qnet maximum-likelihood step on detached samples
      double nll_sum = 0.0;
      for (int i = 0; i < model.n_views(); ++i) {
        model.encoder(i).set_inference(true);
        GaussianPosterior post = model.encoder(i).forward(batch.views[i]);
        model.encoder(i).set_inference(false);
        Tensor s = reparameterize(post, eps[i]);
        model.qnet(i).set_training(true);
        adam_q[i]->zero_grad();
        nll_sum += qnet_nll(model.qnet(i), s, c, true);
        adam_q[i]->step();
      }

      // (b) main step with qnets fixed
      adam_main.zero_grad();
      auto loss = stage2_loss(model, batch, c, eps, cfg, true);
      if (!std::isfinite(loss.total)) {
        if (!cfg.checkpoint_dir.empty()) {
          save_stage2(cfg.checkpoint_dir + "/stage2.diverged.ckpt", model);
        }
        throw std::runtime_error("train_stage2: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      adam_main.step();

      row.total += loss.total;
      row.qnet_nll += nll_sum / model.n_views();
      for (int i = 0; i < model.n_views(); ++i) {
        row.club_per_view[i] += loss.club_per_view[i];
        row.recon_per_view[i] += loss.recon_per_view[i];
      }
      ++n_batches;
      ++batch_idx;
    }
    row.total /= n_batches;
    row.qnet_nll /= n_batches;
    for (auto& x : row.club_per_view) x /= n_batches;
    for (auto& x : row.recon_per_view) x /= n_batches;
    result.curve.push_back(row);

    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      save_stage2(cfg.checkpoint_dir + "/stage2.epoch" + std::to_string(epoch + 1) + ".ckpt",
                  model);
    }
  }

  model.set_training(false);
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    save_stage2(cfg.checkpoint_dir + "/stage2.ckpt", model);
  }
  return result;
}

latents::LatentSet extract_latents(consistency::ConsistentModel& stage1,
                                   SpecificModel& model,
                                   const data::MultiViewDataset& ds, int batch_size) {
  latents::LatentSet set;
  const int n = ds.manifest.n_samples;
  set.c = Tensor({n, stage1.d_c()});
  for (int i = 0; i < model.n_views(); ++i) set.s.emplace_back(std::vector<int>{n, model.d_s()});
  set.labels = ds.labels;
  set.sample_ids.resize(n);

  model.set_training(false);
  data::BatchIterator batches(ds, "all", batch_size, false, 0);
  batches.begin_epoch(0);
  data::MultiViewBatch batch;
  int row = 0;
  while (batches.next(batch)) {
    GaussianPosterior cpost = stage1.encode_consistent(batch);
    std::vector<GaussianPosterior> sposts(model.n_views());
    for (int i = 0; i < model.n_views(); ++i) {
      model.encoder(i).set_inference(true);
      sposts[i] = model.encoder(i).forward(batch.views[i]);
      model.encoder(i).set_inference(false);
    }
    for (int b = 0; b < batch.size(); ++b) {
      set.sample_ids[row + b] = batch.sample_ids[b];
      std::copy(cpost.mean.data() + static_cast<std::size_t>(b) * stage1.d_c(),
                cpost.mean.data() + static_cast<std::size_t>(b + 1) * stage1.d_c(),
                set.c.data() + static_cast<std::size_t>(row + b) * stage1.d_c());
      for (int i = 0; i < model.n_views(); ++i) {
        std::copy(sposts[i].mean.data() + static_cast<std::size_t>(b) * model.d_s(),
                  sposts[i].mean.data() + static_cast<std::size_t>(b + 1) * model.d_s(),
                  set.s[i].data() + static_cast<std::size_t>(row + b) * model.d_s());
      }
    }
    row += batch.size();
  }
  set.stage1_hash = stage1.encoder_hash();
  std::vector<std::pair<std::string, Tensor*>> st;
  model.state(st);
  set.stage2_hash = ckpt::hash_tensors(st);
  return set;
}

void save_stage2(const std::string& path, SpecificModel& model) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  ckpt::Checkpoint c;
  c.meta["kind"] = "stage2";
  c.meta["n_views"] = std::to_string(model.n_views());
  c.meta["d_s"] = std::to_string(model.d_s());
  {
    std::string widths;
    for (std::size_t i = 0; i < model.qnet_hidden().size(); ++i) {
      if (i) widths += ",";
      widths += std::to_string(model.qnet_hidden()[i]);
    }
    c.meta["qnet_hidden"] = widths;
  }
  c.meta["stage1_hash"] = model.stage1().encoder_hash();
  std::vector<std::pair<std::string, Tensor*>> st;
  model.state(st);
  for (auto& [name, t] : st) c.tensors.emplace_back(name, *t);
  save_checkpoint(path, c);
}

std::unique_ptr<SpecificModel> load_stage2(const std::string& path,
                                           consistency::ConsistentModel* stage1) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(path);
  if (c.meta_at("kind") != "stage2") {
    throw std::runtime_error(path + ": not a stage-2 checkpoint");
  }
  int d_s = std::stoi(c.meta_at("d_s"));
  std::vector<int> hidden;
  {
    std::string widths = c.meta_at("qnet_hidden");
    std::size_t pos = 0;
    while (pos < widths.size()) {
      std::size_t comma = widths.find(',', pos);
      if (comma == std::string::npos) comma = widths.size();
      hidden.push_back(std::stoi(widths.substr(pos, comma - pos)));
      pos = comma + 1;
    }
  }
  auto model = std::make_unique<SpecificModel>(stage1, d_s, 0, hidden);
  std::vector<std::pair<std::string, Tensor*>> st;
  model->state(st);
  for (auto& [name, t] : st) {
    const Tensor& saved = c.tensor(name);
    if (!saved.same_shape(*t)) {
      throw std::runtime_error(path + ": shape mismatch for " + name);
    }
    *t = saved;
  }
  model->set_training(false);
  return model;
}

void write_stage2_curve(const std::string& path, const std::vector<Stage2CurveRow>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# epoch\tlr\ttotal\tqnet_nll";
  if (!curve.empty()) {
    for (std::size_t v = 0; v < curve[0].club_per_view.size(); ++v) os << "\tclub_v" << (v + 1);
    for (std::size_t v = 0; v < curve[0].recon_per_view.size(); ++v) os << "\trecon_v" << (v + 1);
  }
  os << "\n";
  for (const auto& row : curve) {
    os << row.epoch << "\t" << row.lr << "\t" << row.total << "\t" << row.qnet_nll;
    for (double x : row.club_per_view) os << "\t" << x;
    for (double x : row.recon_per_view) os << "\t" << x;
    os << "\n";
  }
}

}  // namespace mrdd::disentangle
