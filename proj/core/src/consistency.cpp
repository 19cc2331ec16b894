#include "mrdd/consistency.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mrdd/checkpoint.hpp"
#include "mrdd/optim.hpp"

namespace mrdd::consistency {

namespace {

bool specs_equal(const EncoderSpec& a, const EncoderSpec& b) {
  return a.height == b.height && a.width == b.width && a.channels == b.channels &&
         a.base_channels == b.base_channels && a.dropout == b.dropout;
}

void clamp_split(const Tensor& out, int d, GaussianPosterior& post, Tensor& mask) {
  int n = out.dim(0);
  post.mean = Tensor({n, d});
  post.logvar = Tensor({n, d});
  mask = Tensor({n, d});
  for (int r = 0; r < n; ++r) {
    const double* row = out.data() + static_cast<std::size_t>(r) * 2 * d;
    for (int j = 0; j < d; ++j) {
      std::size_t at = static_cast<std::size_t>(r) * d + j;
      post.mean[at] = row[j];
      double lv = row[d + j];
      post.logvar[at] = std::clamp(lv, kLogVarMin, kLogVarMax);
      mask[at] = (lv > kLogVarMin && lv < kLogVarMax) ? 1.0 : 0.0;
    }
  }
}

Tensor merge_split_grad(const Tensor& dmean, const Tensor& dlogvar, const Tensor& mask) {
  int n = dmean.dim(0), d = dmean.dim(1);
  Tensor dout({n, 2 * d});
  for (int r = 0; r < n; ++r) {
    double* row = dout.data() + static_cast<std::size_t>(r) * 2 * d;
    for (int j = 0; j < d; ++j) {
      std::size_t at = static_cast<std::size_t>(r) * d + j;
      row[j] = dmean[at];
      row[d + j] = dlogvar[at] * mask[at];
    }
  }
  return dout;
}

}  // namespace

ConsistentModel::ConsistentModel(std::vector<EncoderSpec> view_specs, int d_c,
                                 std::uint64_t init_seed, bool poe_fusion)
    : specs_(std::move(view_specs)), d_c_(d_c), poe_(poe_fusion),
      dropout_rng_(derive_seed(init_seed, {0x64726f70ULL})) {
  if (specs_.empty()) throw std::invalid_argument("consistent model: no views");
  if (d_c < 1) throw std::invalid_argument("consistent model: d_c must be >= 1");
  for (auto& s : specs_) {
    s.latent_dim = d_c;
    s.validate();
  }
  shared_trunk_ = true;
  for (const auto& s : specs_) shared_trunk_ &= specs_equal(s, specs_[0]);

  RngStream init(derive_seed(init_seed, {0x73746167653161ULL}));
  if (shared_trunk_) {
    trunks_.push_back(std::make_unique<ConvTrunk>("encoder.trunk", specs_[0], init));
  } else {
    for (int v = 0; v < n_views(); ++v) {
      trunks_.push_back(std::make_unique<ConvTrunk>(
          "encoder.trunk" + std::to_string(v + 1), specs_[v], init));
    }
  }
  if (poe_) {
    for (int v = 0; v < n_views(); ++v) {
      poe_heads_.push_back(std::make_unique<nn::Linear>(
          "encoder.head" + std::to_string(v + 1), specs_[v].feature_dim(), 2 * d_c_, init));
    }
  } else {
    int fused_dim = 0;
    for (const auto& s : specs_) fused_dim += s.feature_dim();
    fusion_ = std::make_unique<nn::Linear>("encoder.fusion", fused_dim, 2 * d_c_, init);
  }
  for (int v = 0; v < n_views(); ++v) {
    decoders_.push_back(std::make_unique<ConvDecoder>(
        "decoder" + std::to_string(v + 1), specs_[v], d_c_, init));
  }
  for (auto& t : trunks_) t->set_rng(&dropout_rng_);
  for (auto& d : decoders_) d->set_rng(&dropout_rng_);
}

GaussianPosterior ConsistentModel::encode(const std::vector<Tensor>& views) {
  if (static_cast<int>(views.size()) != n_views()) {
    throw std::invalid_argument("encode: expected " + std::to_string(n_views()) +
                                " views, got " + std::to_string(views.size()));
  }
  std::vector<Tensor> feats;
  feats.reserve(views.size());
  for (int v = 0; v < n_views(); ++v) {
    ConvTrunk& trunk = shared_trunk_ ? *trunks_[0] : *trunks_[v];
    Tensor f = trunk.forward(views[v]);
    f.reshape({f.dim(0), specs_[v].feature_dim()});
    feats.push_back(std::move(f));
  }

  GaussianPosterior post;
  if (!poe_) {
    int n = feats[0].dim(0);
    int fused_dim = 0;
    for (const auto& s : specs_) fused_dim += s.feature_dim();
    Tensor fused({n, fused_dim});
    for (int r = 0; r < n; ++r) {
      double* row = fused.data() + static_cast<std::size_t>(r) * fused_dim;
      for (int v = 0; v < n_views(); ++v) {
        int fd = specs_[v].feature_dim();
        const double* src = feats[v].data() + static_cast<std::size_t>(r) * fd;
        std::copy(src, src + fd, row);
        row += fd;
      }
    }
    Tensor out = fusion_->forward(fused);
    Tensor mask;
    clamp_split(out, d_c_, post, mask);
    if (!fusion_->inference()) clamp_mask_.push_back(std::move(mask));
  } else {
    // product of experts with the standard normal prior expert
    int n = feats[0].dim(0);
    PoeCache cache;
    std::vector<GaussianPosterior> view_posts(n_views());
    for (int v = 0; v < n_views(); ++v) {
      Tensor out = poe_heads_[v]->forward(feats[v]);
      Tensor mask;
      clamp_split(out, d_c_, view_posts[v], mask);
      cache.head_clamp.push_back(std::move(mask));
    }
    Tensor prec({n, d_c_});
    Tensor musum({n, d_c_});
    for (std::size_t i = 0; i < prec.size(); ++i) prec[i] = 1.0;
    for (int v = 0; v < n_views(); ++v) {
      Tensor lambda({n, d_c_});
      for (std::size_t i = 0; i < lambda.size(); ++i) {
        lambda[i] = std::exp(-view_posts[v].logvar[i]);
        prec[i] += lambda[i];
        musum[i] += view_posts[v].mean[i] * lambda[i];
      }
      cache.lambda.push_back(std::move(lambda));
      cache.mu.push_back(view_posts[v].mean);
    }
    post.mean = Tensor({n, d_c_});
    post.logvar = Tensor({n, d_c_});
    for (std::size_t i = 0; i < prec.size(); ++i) {
      post.mean[i] = musum[i] / prec[i];
      post.logvar[i] = -std::log(prec[i]);
    }
    cache.mu_comb = post.mean;
    cache.prec_comb = prec;
    if (!poe_heads_[0]->inference()) poe_cache_.push_back(std::move(cache));
  }
  return post;
}

void ConsistentModel::encode_backward(const Tensor& dmean, const Tensor& dlogvar) {
  std::vector<Tensor> dfeats(n_views());
  if (!poe_) {
    if (clamp_mask_.empty()) throw std::logic_error("encode_backward without encode");
    Tensor mask = std::move(clamp_mask_.back());
    clamp_mask_.pop_back();
    Tensor dout = merge_split_grad(dmean, dlogvar, mask);
    Tensor dfused = fusion_->backward(dout);
    int n = dfused.dim(0);
    int offset = 0;
    for (int v = 0; v < n_views(); ++v) {
      int fd = specs_[v].feature_dim();
      Tensor df({n, fd});
      int fused_dim = dfused.dim(1);
      for (int r = 0; r < n; ++r) {
        const double* src = dfused.data() + static_cast<std::size_t>(r) * fused_dim + offset;
        std::copy(src, src + fd, df.data() + static_cast<std::size_t>(r) * fd);
      }
      offset += fd;
      dfeats[v] = std::move(df);
    }
  } else {
    if (poe_cache_.empty()) throw std::logic_error("encode_backward without encode");
    PoeCache cache = std::move(poe_cache_.back());
    poe_cache_.pop_back();
    int n = dmean.dim(0);
    for (int v = n_views() - 1; v >= 0; --v) {
      Tensor dmu_v({n, d_c_});
      Tensor dlv_v({n, d_c_});
      for (std::size_t i = 0; i < dmu_v.size(); ++i) {
        double prec = cache.prec_comb[i];
        double dprec = -dlogvar[i] / prec - dmean[i] * cache.mu_comb[i] / prec;
        double lam = cache.lambda[v][i];
        dmu_v[i] = dmean[i] * lam / prec;
        double dlam = dmean[i] * cache.mu[v][i] / prec + dprec;
        dlv_v[i] = -dlam * lam;
      }
      Tensor dout = merge_split_grad(dmu_v, dlv_v, cache.head_clamp[v]);
      dfeats[v] = poe_heads_[v]->backward(dout);
    }
  }
  // reverse view order so shared-trunk cache stacks unwind correctly
  for (int v = n_views() - 1; v >= 0; --v) {
    ConvTrunk& trunk = shared_trunk_ ? *trunks_[0] : *trunks_[v];
    Tensor df = dfeats[v];
    df.reshape({df.dim(0), 8, 8, specs_[v].trunk_channels()});
    trunk.backward(df);
  }
}

GaussianPosterior ConsistentModel::encode_consistent(const data::MultiViewBatch& batch) {
  if (static_cast<int>(batch.views.size()) != n_views()) {
    throw std::invalid_argument("encode_consistent: missing view");
  }
  set_training(false);
  for (auto& t : trunks_) t->set_inference(true);
  if (fusion_) fusion_->set_inference(true);
  for (auto& h : poe_heads_) h->set_inference(true);
  GaussianPosterior post = encode(batch.views);
  for (auto& t : trunks_) t->set_inference(false);
  if (fusion_) fusion_->set_inference(false);
  for (auto& h : poe_heads_) h->set_inference(false);
  return post;
}

ConsistentModel::LossComponents ConsistentModel::mcp_loss(
    const data::MultiViewBatch& masked, const data::MultiViewBatch& original,
    const Tensor& eps, double beta_c, bool with_grad) {
  if (masked.views.size() != original.views.size() ||
      static_cast<int>(masked.views.size()) != n_views()) {
    throw std::invalid_argument("mcp_loss: view count mismatch");
  }
  for (int v = 0; v < n_views(); ++v) {
    if (!masked.views[v].same_shape(original.views[v])) {
      throw std::invalid_argument("mcp_loss: masked/original shape mismatch");
    }
  }
  const int n = masked.views[0].dim(0);

  GaussianPosterior post = encode(masked.views);
  Tensor z = reparameterize(post, eps);

  LossComponents out;
  std::vector<Tensor> xhat(n_views());
  for (int v = 0; v < n_views(); ++v) {
    xhat[v] = decoders_[v]->forward(z);
    const Tensor& x = original.views[v];
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double d = xhat[v][i] - x[i];
      acc += d * d;
    }
    out.recon_per_view.push_back(acc / static_cast<double>(n));
  }
  out.kl = kl_diag_gaussian(post);
  out.total = beta_c * out.kl;
  for (double r : out.recon_per_view) out.total += r;

  if (with_grad) {
    Tensor dz({n, d_c_});
    for (int v = n_views() - 1; v >= 0; --v) {
      Tensor dxhat(xhat[v].shape());
      const Tensor& x = original.views[v];
      double scale = 2.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < dxhat.size(); ++i) {
        dxhat[i] = scale * (xhat[v][i] - x[i]);
      }
      Tensor dzv = decoders_[v]->backward(dxhat);
      nn::add_inplace(dz, dzv);
    }
    Tensor dmean(post.mean.shape());
    Tensor dlogvar(post.mean.shape());
    double kl_scale = beta_c / static_cast<double>(n);
    for (std::size_t i = 0; i < dz.size(); ++i) {
      double sigma = std::exp(0.5 * post.logvar[i]);
      dmean[i] = dz[i] + kl_scale * post.mean[i];
      dlogvar[i] = dz[i] * eps[i] * 0.5 * sigma +
                   kl_scale * 0.5 * (std::exp(post.logvar[i]) - 1.0);
    }
    encode_backward(dmean, dlogvar);
  }
  return out;
}

void ConsistentModel::set_training(bool train) {
  if (frozen_ && train) {
    throw std::logic_error("consistent model: frozen encoder cannot re-enter training");
  }
  for (auto& t : trunks_) t->set_training(train);
  if (fusion_) fusion_->set_training(train);
  for (auto& h : poe_heads_) h->set_training(train);
  for (auto& d : decoders_) d->set_training(train);
}

void ConsistentModel::reseed_dropout(std::uint64_t seed) {
  dropout_rng_ = RngStream(seed);
}

void ConsistentModel::clear_cache() {
  for (auto& t : trunks_) t->clear_cache();
  if (fusion_) fusion_->clear_cache();
  for (auto& h : poe_heads_) h->clear_cache();
  for (auto& d : decoders_) d->clear_cache();
  clamp_mask_.clear();
  poe_cache_.clear();
}

void ConsistentModel::freeze() {
  set_training(false);
  frozen_ = true;
}

std::vector<nn::ParamPtr> ConsistentModel::encoder_params() {
  std::vector<nn::ParamPtr> out;
  for (auto& t : trunks_) t->params(out);
  if (fusion_) fusion_->params(out);
  for (auto& h : poe_heads_) h->params(out);
  return out;
}

std::vector<nn::ParamPtr> ConsistentModel::trainable_params() {
  auto out = encoder_params();
  for (auto& d : decoders_) d->params(out);
  return out;
}

void ConsistentModel::encoder_state(std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& t : trunks_) t->state(out);
  if (fusion_) fusion_->state(out);
  for (auto& h : poe_heads_) h->state(out);
}

void ConsistentModel::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  encoder_state(out);
  for (auto& d : decoders_) d->state(out);
}

std::string ConsistentModel::encoder_hash() {
  std::vector<std::pair<std::string, Tensor*>> st;
  encoder_state(st);
  return ckpt::hash_tensors(st);
}

// ----------------------------------------------------------------- train

Stage1Result train_stage1(ConsistentModel& model, const data::MultiViewDataset& ds,
                          const Stage1Config& cfg) {
  if (model.frozen()) throw std::logic_error("train_stage1: model already frozen");
  if (cfg.epochs < 1) throw std::invalid_argument("train_stage1: epochs must be >= 1");
  cfg.mask.validate();

  Adam adam(model.trainable_params(), cfg.lr);
  data::BatchIterator batches(ds, cfg.train_split, cfg.batch_size, true,
                              derive_seed(cfg.seed, {0x7331ULL}));
  Stage1Result result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.cosine ? cosine_lr(cfg.lr, epoch, cfg.epochs) : cfg.lr;
    adam.set_lr(lr);
    model.set_training(true);

    CurveRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.recon_per_view.assign(model.n_views(), 0.0);
    int n_batches = 0;

    batches.begin_epoch(epoch);
    data::MultiViewBatch batch;
    int batch_idx = 0;
    while (batches.next(batch)) {
      std::uint64_t salt = derive_seed(cfg.seed, {0x7331626174ULL,
                                                  static_cast<std::uint64_t>(epoch),
                                                  static_cast<std::uint64_t>(batch_idx)});
      RngStream mask_rng(derive_seed(salt, {1}));
      RngStream eps_rng(derive_seed(salt, {2}));
      model.reseed_dropout(derive_seed(salt, {3}));

      auto masks = masking::generate_batch_masks(cfg.mask, batch, mask_rng);
      auto masked = masking::apply_mask(batch, masks, cfg.mask.patch_size, cfg.mask.fill);

      Tensor eps({batch.size(), model.d_c()});
      eps_rng.fill_normal(eps.data(), eps.size());

      adam.zero_grad();
      auto loss = model.mcp_loss(masked, batch, eps, cfg.beta_c, true);
      if (!std::isfinite(loss.total)) {
        if (!cfg.checkpoint_dir.empty()) {
          save_stage1(cfg.checkpoint_dir + "/stage1.diverged.ckpt", model);
        }
        throw std::runtime_error("train_stage1: non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      adam.step();

      row.total += loss.total;
      row.kl += loss.kl;
      for (int v = 0; v < model.n_views(); ++v) row.recon_per_view[v] += loss.recon_per_view[v];
      ++n_batches;
      ++batch_idx;
    }
    row.total /= n_batches;
    row.kl /= n_batches;
    for (auto& r : row.recon_per_view) r /= n_batches;
    result.curve.push_back(row);

    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
        (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
      save_stage1(cfg.checkpoint_dir + "/stage1.epoch" + std::to_string(epoch + 1) + ".ckpt",
                  model);
    }
  }

  model.freeze();
  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    save_stage1(cfg.checkpoint_dir + "/stage1.ckpt", model);
  }
  return result;
}

void save_stage1(const std::string& path, ConsistentModel& model) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  ckpt::Checkpoint c;
  c.meta["kind"] = "stage1";
  c.meta["n_views"] = std::to_string(model.n_views());
  c.meta["d_c"] = std::to_string(model.d_c());
  c.meta["poe"] = model.poe_fusion() ? "1" : "0";
  c.meta["frozen"] = model.frozen() ? "1" : "0";
  for (int v = 0; v < model.n_views(); ++v) {
    const auto& s = model.view_specs()[v];
    std::string p = "view." + std::to_string(v + 1) + ".";
    c.meta[p + "height"] = std::to_string(s.height);
    c.meta[p + "width"] = std::to_string(s.width);
    c.meta[p + "channels"] = std::to_string(s.channels);
    c.meta[p + "base_channels"] = std::to_string(s.base_channels);
    c.meta[p + "dropout"] = std::to_string(s.dropout);
  }
  c.meta["encoder_hash"] = model.encoder_hash();
  std::vector<std::pair<std::string, Tensor*>> st;
  model.state(st);
  for (auto& [name, t] : st) c.tensors.emplace_back(name, *t);
  save_checkpoint(path, c);
}

std::unique_ptr<ConsistentModel> load_stage1(const std::string& path) {
  ckpt::Checkpoint c = ckpt::load_checkpoint(path);
  if (c.meta_at("kind") != "stage1") {
    throw std::runtime_error(path + ": not a stage-1 checkpoint");
  }
  int n_views = std::stoi(c.meta_at("n_views"));
  int d_c = std::stoi(c.meta_at("d_c"));
  bool poe = c.meta_at("poe") == "1";
  std::vector<EncoderSpec> specs;
  for (int v = 1; v <= n_views; ++v) {
    std::string p = "view." + std::to_string(v) + ".";
    EncoderSpec s;
    s.height = std::stoi(c.meta_at(p + "height"));
    s.width = std::stoi(c.meta_at(p + "width"));
    s.channels = std::stoi(c.meta_at(p + "channels"));
    s.base_channels = std::stoi(c.meta_at(p + "base_channels"));
    s.dropout = std::stod(c.meta_at(p + "dropout"));
    s.latent_dim = d_c;
    specs.push_back(s);
  }
  auto model = std::make_unique<ConsistentModel>(specs, d_c, 0, poe);
  std::vector<std::pair<std::string, Tensor*>> st;
  model->state(st);
  for (auto& [name, t] : st) {
    const Tensor& saved = c.tensor(name);
    if (!saved.same_shape(*t)) {
      throw std::runtime_error(path + ": shape mismatch for " + name);
    }
    *t = saved;
  }
  if (c.meta_at("frozen") == "1") model->freeze();
  return model;
}

void write_curve(const std::string& path, const std::vector<CurveRow>& curve) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# epoch\tlr\ttotal\tkl";
  if (!curve.empty()) {
    for (std::size_t v = 0; v < curve[0].recon_per_view.size(); ++v) {
      os << "\trecon_v" << (v + 1);
    }
  }
  os << "\n";
  for (const auto& row : curve) {
    os << row.epoch << "\t" << row.lr << "\t" << row.total << "\t" << row.kl;
    for (double r : row.recon_per_view) os << "\t" << r;
    os << "\n";
  }
}

}  // namespace mrdd::consistency
