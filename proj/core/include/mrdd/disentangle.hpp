#ifndef MRDD_DISENTANGLE_HPP
#define MRDD_DISENTANGLE_HPP

#include <memory>
#include <string>
#include <vector>

#include "mrdd/consistency.hpp"
#include "mrdd/data.hpp"
#include "mrdd/latents.hpp"
#include "mrdd/nets.hpp"

namespace mrdd::disentangle {

/// CLUB value: (1/N) sum_k log q(s_k|c_k) - (1/N^2) sum_k sum_l log q(s_l|c_k),
/// with q the diagonal Gaussian emitted by qnet. The marginal term uses all
/// N^2 pairings. Exactly zero for a batch of one; throws on an empty batch.
double club_loss(const Tensor& s, const Tensor& c, GaussianMlp& qnet);

/// CLUB value plus its gradient with respect to s (qnet held fixed).
double club_loss_grad_s(const Tensor& s, const Tensor& c, GaussianMlp& qnet,
                        Tensor& ds_out);

/// Mean negative log-likelihood of joint pairs under q(s|c); the qnet
/// fitting objective. When with_grad is set, gradients are accumulated into
/// the qnet parameters (inputs are treated as constants).
double qnet_nll(GaussianMlp& qnet, const Tensor& s, const Tensor& c, bool with_grad);

/// Stage-II model: per-view specific encoders, per-view decoders consuming
/// z = [c, s_i], and per-view CLUB variational nets q(s_i | c). Holds a
/// non-owning reference to the frozen stage-I model.
class SpecificModel {
 public:
  SpecificModel(consistency::ConsistentModel* frozen_stage1, int d_s,
                std::uint64_t init_seed, std::vector<int> qnet_hidden = {256, 256});

  int n_views() const { return static_cast<int>(encoders_.size()); }
  int d_c() const { return stage1_->d_c(); }
  int d_s() const { return d_s_; }
  const std::vector<int>& qnet_hidden() const { return qnet_hidden_; }

  consistency::ConsistentModel& stage1() { return *stage1_; }
  ConvEncoder& encoder(int view) { return *encoders_[view]; }
  ConvDecoder& decoder(int view) { return *decoders_[view]; }
  GaussianMlp& qnet(int view) { return *qnets_[view]; }

  std::vector<nn::ParamPtr> main_params();   // encoders + decoders
  std::vector<nn::ParamPtr> qnet_params();
  void state(std::vector<std::pair<std::string, Tensor*>>& out);

  void set_training(bool train);
  void reseed_dropout(std::uint64_t seed);
  void clear_cache();

 private:
  consistency::ConsistentModel* stage1_;
  int d_s_;
  std::vector<int> qnet_hidden_;
  std::vector<std::unique_ptr<ConvEncoder>> encoders_;
  std::vector<std::unique_ptr<ConvDecoder>> decoders_;
  std::vector<std::unique_ptr<GaussianMlp>> qnets_;
  RngStream dropout_rng_;

  friend std::unique_ptr<SpecificModel> load_stage2(
      const std::string& path, consistency::ConsistentModel* stage1);
};

struct Stage2Config {
  int epochs = 200;
  int batch_size = 512;
  double lr = 5e-4;
  bool cosine = true;
  double beta_s = 1.0;
  double lambda_d = 1.0;
  double lambda_r = 1.0;
  bool sample_c = false;  // feed sampled c instead of the posterior mean
  std::string train_split = "all";
  std::uint64_t seed = 0;
  int checkpoint_every = 0;
  std::string checkpoint_dir;
};

struct Stage2LossComponents {
  double total = 0.0;                 // L_s = (1/v) sum_i (ld_i + lr_i)
  std::vector<double> club_per_view;  // ld_i
  std::vector<double> recon_per_view; // lr_i = mse_i + beta_s * kl_i
  std::vector<double> mse_per_view;
  std::vector<double> kl_per_view;
};

/// L_s on one batch; when with_grad is set, gradients flow into the specific
/// encoders/decoders only (qnets and the frozen stage-I encoder are fixed).
Stage2LossComponents stage2_loss(SpecificModel& model, const data::MultiViewBatch& batch,
                                 const Tensor& c, const std::vector<Tensor>& eps,
                                 const Stage2Config& cfg, bool with_grad);

struct Stage2CurveRow {
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  std::vector<double> club_per_view;
  std::vector<double> recon_per_view;
  double qnet_nll = 0.0;
};

struct Stage2Result {
  std::vector<Stage2CurveRow> curve;
};

/// Alternating optimization: per batch, one maximum-likelihood step on each
/// qnet (encoders fixed) followed by one step on the specific encoders and
/// decoders (qnets fixed). The stage-I encoder only ever runs inference.
Stage2Result train_stage2(SpecificModel& model, const data::MultiViewDataset& ds,
                          const Stage2Config& cfg);

/// Posterior means (no sampling) for every sample: c plus one s_i per view.
latents::LatentSet extract_latents(consistency::ConsistentModel& stage1,
                                   SpecificModel& model,
                                   const data::MultiViewDataset& ds,
                                   int batch_size = 512);

void save_stage2(const std::string& path, SpecificModel& model);
std::unique_ptr<SpecificModel> load_stage2(const std::string& path,
                                           consistency::ConsistentModel* stage1);

void write_stage2_curve(const std::string& path, const std::vector<Stage2CurveRow>& curve);

}  // namespace mrdd::disentangle

#endif
