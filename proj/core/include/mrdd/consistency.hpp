#ifndef MRDD_CONSISTENCY_HPP
#define MRDD_CONSISTENCY_HPP

#include <memory>
#include <string>
#include <vector>

#include "mrdd/data.hpp"
#include "mrdd/masking.hpp"
#include "mrdd/nets.hpp"

namespace mrdd::consistency {

/// Stage-I model: a consistent encoder (shared conv trunk per view + fusion
/// head -> posterior over c) and one prediction decoder per view. After
/// stage-I training the encoder is frozen; the decoders exist only for the
/// masked cross-view prediction pretext task.
class ConsistentModel {
 public:
  ConsistentModel(std::vector<EncoderSpec> view_specs, int d_c,
                  std::uint64_t init_seed, bool poe_fusion = false);

  int n_views() const { return static_cast<int>(specs_.size()); }
  int d_c() const { return d_c_; }
  bool shared_trunk() const { return shared_trunk_; }
  bool poe_fusion() const { return poe_; }
  bool frozen() const { return frozen_; }
  const std::vector<EncoderSpec>& view_specs() const { return specs_; }

  /// Trainable encoding path; all views must be present.
  GaussianPosterior encode(const std::vector<Tensor>& views);
  void encode_backward(const Tensor& dmean, const Tensor& dlogvar);

  /// Inference path (no caches, running statistics); accepts masked or
  /// unmasked inputs and never touches the decoders.
  GaussianPosterior encode_consistent(const data::MultiViewBatch& batch);

  struct LossComponents {
    double total = 0.0;
    double kl = 0.0;
    std::vector<double> recon_per_view;
  };

  /// ELBO-style objective: sum of per-view reconstructions of the full
  /// original views from c encoded off the masked views, plus beta_c times
  /// the KL of q(c | masked views) to the standard normal prior.
  LossComponents mcp_loss(const data::MultiViewBatch& masked,
                          const data::MultiViewBatch& original, const Tensor& eps,
                          double beta_c, bool with_grad);

  void set_training(bool train);
  void reseed_dropout(std::uint64_t seed);
  void clear_cache();

  /// Mark stage-I training complete; the encoder is treated as immutable.
  void freeze();

  std::vector<nn::ParamPtr> encoder_params();
  std::vector<nn::ParamPtr> trainable_params();
  void encoder_state(std::vector<std::pair<std::string, Tensor*>>& out);
  void state(std::vector<std::pair<std::string, Tensor*>>& out);

  /// Digest of encoder parameters and running statistics; stable across
  /// stage II by the freeze contract.
  std::string encoder_hash();

  std::vector<std::unique_ptr<ConvDecoder>>& decoders() { return decoders_; }

 private:
  Tensor fuse_forward(const std::vector<Tensor>& feats);

  std::vector<EncoderSpec> specs_;
  int d_c_;
  bool poe_;
  bool shared_trunk_;
  bool frozen_ = false;

  std::vector<std::unique_ptr<ConvTrunk>> trunks_;   // one, or one per view
  std::unique_ptr<nn::Linear> fusion_;               // concat fusion head
  std::vector<std::unique_ptr<nn::Linear>> poe_heads_;  // per-view heads (PoE)
  std::vector<std::unique_ptr<ConvDecoder>> decoders_;
  RngStream dropout_rng_;

  // caches for backward
  std::vector<Tensor> clamp_mask_;
  struct PoeCache {
    std::vector<Tensor> mu, lambda;  // per view, clamped precision
    Tensor mu_comb, prec_comb;
    std::vector<Tensor> head_clamp;
  };
  std::vector<PoeCache> poe_cache_;
};

struct Stage1Config {
  int epochs = 200;
  int batch_size = 512;
  double lr = 5e-4;
  bool cosine = true;
  double beta_c = 1.0;
  masking::MaskSpec mask;
  std::string train_split = "all";  // all | train
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  std::string checkpoint_dir;
};

struct CurveRow {
  int epoch = 0;
  double lr = 0.0;
  double total = 0.0;
  double kl = 0.0;
  std::vector<double> recon_per_view;
};

struct Stage1Result {
  std::vector<CurveRow> curve;
};

/// Train stage I with fresh masks per batch, then freeze the encoder.
/// Aborts with a diagnostic checkpoint on non-finite loss.
Stage1Result train_stage1(ConsistentModel& model, const data::MultiViewDataset& ds,
                          const Stage1Config& cfg);

void save_stage1(const std::string& path, ConsistentModel& model);
std::unique_ptr<ConsistentModel> load_stage1(const std::string& path);

void write_curve(const std::string& path, const std::vector<CurveRow>& curve);

}  // namespace mrdd::consistency

#endif
