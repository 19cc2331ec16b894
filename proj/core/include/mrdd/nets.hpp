#ifndef MRDD_NETS_HPP
#define MRDD_NETS_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mrdd/nn.hpp"
#include "mrdd/rng.hpp"
#include "mrdd/tensor.hpp"

namespace mrdd {

/// Log-variance heads are clamped to this range before exponentiation.
constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

/// Convolutional encoder geometry. Inputs are square, 32 or 64 pixels;
/// 32-pixel inputs use 3 blocks, 64-pixel inputs 4 blocks, and the last
/// block keeps stride 1 so the feature plane in front of the latent head
/// is always 8x8.
struct EncoderSpec {
  int height = 32;
  int width = 32;
  int channels = 1;
  int base_channels = 16;
  double dropout = 0.1;
  int latent_dim = 10;

  int n_blocks() const;
  int trunk_channels() const { return base_channels << (n_blocks() - 1); }
  int feature_dim() const { return 8 * 8 * trunk_channels(); }
  void validate() const;
};

/// Diagonal Gaussian over a batch: mean and log-variance, each (batch, dim).
struct GaussianPosterior {
  Tensor mean;
  Tensor logvar;

  int batch() const { return mean.ndim() > 0 ? mean.dim(0) : 0; }
  int dim() const { return mean.ndim() > 1 ? mean.dim(1) : 0; }
};

/// z = mu + sigma * eps with sigma = exp(logvar / 2).
Tensor reparameterize(const GaussianPosterior& post, const Tensor& eps);

/// KL(N(mu, sigma^2) || N(0, I)) per batch row, in nats.
std::vector<double> kl_per_row(const GaussianPosterior& post);

/// Batch mean of kl_per_row. Throws on non-finite parameters.
double kl_diag_gaussian(const GaussianPosterior& post);

/// Stack of conv blocks (conv-bn-relu-conv-bn-relu-dropout), NHWC in/out.
class ConvTrunk {
 public:
  ConvTrunk(const std::string& name, const EncoderSpec& spec, RngStream& init_rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dfeat);

  void set_training(bool train) { seq_.set_training(train); }
  void set_inference(bool inf) { seq_.set_inference(inf); }
  void set_rng(RngStream* rng);
  void clear_cache() { seq_.clear_cache(); }
  void params(std::vector<nn::ParamPtr>& out) { seq_.params(out); }
  void state(std::vector<std::pair<std::string, Tensor*>>& out) { seq_.state(out); }
  std::vector<nn::BatchNorm2d*>& batch_norms() { return bns_; }

  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  nn::Sequential seq_;
  std::vector<nn::Dropout*> dropouts_;
  std::vector<nn::BatchNorm2d*> bns_;
};

/// Trunk + affine head emitting a clamped diagonal Gaussian posterior.
class ConvEncoder {
 public:
  ConvEncoder(const std::string& name, const EncoderSpec& spec, RngStream& init_rng);

  GaussianPosterior forward(const Tensor& x);
  Tensor backward(const Tensor& dmean, const Tensor& dlogvar);

  void set_training(bool train);
  void set_inference(bool inf);
  void set_rng(RngStream* rng) { trunk_.set_rng(rng); }
  void clear_cache();
  void params(std::vector<nn::ParamPtr>& out);
  void state(std::vector<std::pair<std::string, Tensor*>>& out);
  ConvTrunk& trunk() { return trunk_; }

  const EncoderSpec& spec() const { return spec_; }

 private:
  EncoderSpec spec_;
  ConvTrunk trunk_;
  nn::Linear head_;
  std::vector<Tensor> clamp_mask_;
};

/// Mirror of ConvEncoder built from transposed convolutions; sigmoid output.
class ConvDecoder {
 public:
  ConvDecoder(const std::string& name, const EncoderSpec& image_spec, int latent_dim,
              RngStream& init_rng);

  Tensor forward(const Tensor& z);
  Tensor backward(const Tensor& dimg);

  void set_training(bool train);
  void set_inference(bool inf);
  void set_rng(RngStream* rng);
  void clear_cache();
  void params(std::vector<nn::ParamPtr>& out);
  void state(std::vector<std::pair<std::string, Tensor*>>& out);

  int latent_dim() const { return latent_dim_; }
  std::size_t forward_calls() const { return forward_calls_; }

 private:
  EncoderSpec image_spec_;
  int latent_dim_;
  nn::Linear stem_;
  nn::Sequential seq_;
  std::vector<nn::Dropout*> dropouts_;
  std::size_t forward_calls_ = 0;
};

/// MLP with two affine heads emitting a clamped diagonal Gaussian; used as
/// the CLUB variational net q(s | c).
class GaussianMlp {
 public:
  GaussianMlp(const std::string& name, int in_dim, std::vector<int> hidden,
              int out_dim, RngStream& init_rng);

  GaussianPosterior forward(const Tensor& x);
  Tensor backward(const Tensor& dmean, const Tensor& dlogvar);

  void set_training(bool train);
  void set_inference(bool inf);
  void clear_cache();
  void params(std::vector<nn::ParamPtr>& out);
  void state(std::vector<std::pair<std::string, Tensor*>>& out);

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  nn::Linear& mean_head() { return mean_head_; }
  nn::Linear& logvar_head() { return logvar_head_; }

 private:
  int in_dim_, out_dim_;
  nn::Sequential trunk_;
  nn::Linear mean_head_, logvar_head_;
  std::vector<Tensor> trunk_out_;
  std::vector<Tensor> clamp_mask_;
};

/// MLP with a single scalar output; used as the MINE statistic network.
class ScalarMlp {
 public:
  ScalarMlp(const std::string& name, int in_dim, std::vector<int> hidden,
            RngStream& init_rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

  void clear_cache() { seq_.clear_cache(); }
  void params(std::vector<nn::ParamPtr>& out) { seq_.params(out); }
  void state(std::vector<std::pair<std::string, Tensor*>>& out) { seq_.state(out); }
  int in_dim() const { return in_dim_; }

 private:
  int in_dim_;
  nn::Sequential seq_;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int coords_checked = 0;
  int coords_skipped = 0;  // probes that straddled an activation kink
};

/// Compare analytic gradients against central differences on sampled
/// coordinates. loss_and_grad() must zero the grads, run forward/backward
/// and return the loss; loss_only() must return the loss without touching
/// gradients. The relative error denominator is floored at 1e-2 so
/// negligible gradient entries are judged on absolute error.
GradCheckReport finite_diff_check(const std::function<double()>& loss_and_grad,
                                  const std::function<double()>& loss_only,
                                  const std::vector<nn::ParamPtr>& params,
                                  int coords_per_param, std::uint64_t seed,
                                  double h_scale = 1e-6);

}  // namespace mrdd

#endif
