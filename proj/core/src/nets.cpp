#include "mrdd/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace mrdd {

int EncoderSpec::n_blocks() const {
  if (height == 32) return 3;
  if (height == 64) return 4;
  throw std::invalid_argument("encoder: unsupported input size " +
                              std::to_string(height) + " (expected 32 or 64)");
}

void EncoderSpec::validate() const {
  if (height != width) throw std::invalid_argument("encoder: input must be square");
  n_blocks();
  if (channels < 1) throw std::invalid_argument("encoder: channels must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("encoder: base_channels must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("encoder: latent_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("encoder: bad dropout rate");
}

Tensor reparameterize(const GaussianPosterior& post, const Tensor& eps) {
  if (!post.mean.same_shape(post.logvar) || !post.mean.same_shape(eps)) {
    throw std::invalid_argument("reparameterize: dimension mismatch");
  }
  Tensor z(post.mean.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = post.mean[i] + std::exp(0.5 * post.logvar[i]) * eps[i];
  }
  return z;
}

std::vector<double> kl_per_row(const GaussianPosterior& post) {
  if (!post.mean.same_shape(post.logvar)) {
    throw std::invalid_argument("kl: mean/logvar shape mismatch");
  }
  if (!all_finite(post.mean) || !all_finite(post.logvar)) {
    throw std::invalid_argument("kl: non-finite posterior parameters");
  }
  int n = post.batch(), d = post.dim();
  std::vector<double> out(n, 0.0);
  for (int r = 0; r < n; ++r) {
    const double* mu = post.mean.data() + static_cast<std::size_t>(r) * d;
    const double* lv = post.logvar.data() + static_cast<std::size_t>(r) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      acc += mu[j] * mu[j] + std::exp(lv[j]) - 1.0 - lv[j];
    }
    out[r] = 0.5 * acc;
  }
  return out;
}

double kl_diag_gaussian(const GaussianPosterior& post) {
  auto rows = kl_per_row(post);
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (double v : rows) s += v;
  return s / static_cast<double>(rows.size());
}

// ------------------------------------------------------------- ConvTrunk

ConvTrunk::ConvTrunk(const std::string& name, const EncoderSpec& spec,
                     RngStream& init_rng)
    : spec_(spec) {
  spec_.validate();
  int blocks = spec_.n_blocks();
  int in_c = spec_.channels;
  for (int b = 0; b < blocks; ++b) {
    int out_c = spec_.base_channels << b;
    int stride = (b == blocks - 1) ? 1 : 2;
    std::string bn = name + ".block" + std::to_string(b + 1);
    seq_.add(std::make_unique<nn::Conv2d>(bn + ".conv1", in_c, out_c, 3, stride, 1, init_rng));
    auto bn1 = std::make_unique<nn::BatchNorm2d>(bn + ".bn1", out_c);
    bns_.push_back(bn1.get());
    seq_.add(std::move(bn1));
    seq_.add(std::make_unique<nn::ReLU>());
    seq_.add(std::make_unique<nn::Conv2d>(bn + ".conv2", out_c, out_c, 3, 1, 1, init_rng));
    auto bn2 = std::make_unique<nn::BatchNorm2d>(bn + ".bn2", out_c);
    bns_.push_back(bn2.get());
    seq_.add(std::move(bn2));
    seq_.add(std::make_unique<nn::ReLU>());
    auto drop = std::make_unique<nn::Dropout>(spec_.dropout);
    dropouts_.push_back(drop.get());
    seq_.add(std::move(drop));
    in_c = out_c;
  }
}

Tensor ConvTrunk::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(1) != spec_.height || x.dim(2) != spec_.width ||
      x.dim(3) != spec_.channels) {
    throw std::invalid_argument("trunk: input shape " + x.shape_str() +
                                " does not match spec");
  }
  return seq_.forward(x);
}

Tensor ConvTrunk::backward(const Tensor& dfeat) { return seq_.backward(dfeat); }

void ConvTrunk::set_rng(RngStream* rng) {
  for (auto* d : dropouts_) d->set_rng(rng);
}

// ----------------------------------------------------------- ConvEncoder

ConvEncoder::ConvEncoder(const std::string& name, const EncoderSpec& spec,
                         RngStream& init_rng)
    : spec_(spec), trunk_(name + ".trunk", spec, init_rng),
      head_(name + ".head", spec.feature_dim(), 2 * spec.latent_dim, init_rng) {}

GaussianPosterior ConvEncoder::forward(const Tensor& x) {
  Tensor feat = trunk_.forward(x);
  int n = feat.dim(0);
  feat.reshape({n, spec_.feature_dim()});
  Tensor out = head_.forward(feat);

  int d = spec_.latent_dim;
  GaussianPosterior post;
  post.mean = Tensor({n, d});
  post.logvar = Tensor({n, d});
  Tensor mask({n, d});
  for (int r = 0; r < n; ++r) {
    const double* row = out.data() + static_cast<std::size_t>(r) * 2 * d;
    for (int j = 0; j < d; ++j) {
      post.mean[static_cast<std::size_t>(r) * d + j] = row[j];
      double lv = row[d + j];
      double clamped = lv < kLogVarMin ? kLogVarMin : (lv > kLogVarMax ? kLogVarMax : lv);
      post.logvar[static_cast<std::size_t>(r) * d + j] = clamped;
      mask[static_cast<std::size_t>(r) * d + j] = (lv > kLogVarMin && lv < kLogVarMax) ? 1.0 : 0.0;
    }
  }
  if (!head_.inference()) clamp_mask_.push_back(std::move(mask));
  return post;
}

Tensor ConvEncoder::backward(const Tensor& dmean, const Tensor& dlogvar) {
  if (clamp_mask_.empty()) throw std::logic_error("encoder: backward without forward");
  Tensor mask = std::move(clamp_mask_.back());
  clamp_mask_.pop_back();
  int n = dmean.dim(0), d = spec_.latent_dim;
  Tensor dout({n, 2 * d});
  for (int r = 0; r < n; ++r) {
    double* row = dout.data() + static_cast<std::size_t>(r) * 2 * d;
    for (int j = 0; j < d; ++j) {
      row[j] = dmean[static_cast<std::size_t>(r) * d + j];
      row[d + j] = dlogvar[static_cast<std::size_t>(r) * d + j] *
                   mask[static_cast<std::size_t>(r) * d + j];
    }
  }
  Tensor dfeat = head_.backward(dout);
  int hw = 8;
  dfeat.reshape({n, hw, hw, spec_.trunk_channels()});
  return trunk_.backward(dfeat);
}

void ConvEncoder::set_training(bool train) {
  trunk_.set_training(train);
  head_.set_training(train);
}

void ConvEncoder::set_inference(bool inf) {
  trunk_.set_inference(inf);
  head_.set_inference(inf);
}

void ConvEncoder::clear_cache() {
  trunk_.clear_cache();
  head_.clear_cache();
  clamp_mask_.clear();
}

void ConvEncoder::params(std::vector<nn::ParamPtr>& out) {
  trunk_.params(out);
  head_.params(out);
}

void ConvEncoder::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  trunk_.state(out);
  head_.state(out);
}

// ----------------------------------------------------------- ConvDecoder

ConvDecoder::ConvDecoder(const std::string& name, const EncoderSpec& image_spec,
                         int latent_dim, RngStream& init_rng)
    : image_spec_(image_spec), latent_dim_(latent_dim),
      stem_(name + ".stem", latent_dim, image_spec.feature_dim(), init_rng) {
  image_spec_.validate();
  if (latent_dim < 1) throw std::invalid_argument("decoder: latent_dim must be >= 1");
  int blocks = image_spec_.n_blocks();
  for (int b = blocks - 1; b >= 0; --b) {
    int in_c = image_spec_.base_channels << b;
    int stride = (b == blocks - 1) ? 1 : 2;
    std::string bn = name + ".deblock" + std::to_string(b + 1);
    seq_.add(std::make_unique<nn::ConvTranspose2d>(bn + ".deconv1", in_c, in_c, 3, 1, 1, 0, init_rng));
    seq_.add(std::make_unique<nn::BatchNorm2d>(bn + ".bn1", in_c));
    seq_.add(std::make_unique<nn::ReLU>());
    if (b > 0) {
      int out_c = image_spec_.base_channels << (b - 1);
      seq_.add(std::make_unique<nn::ConvTranspose2d>(bn + ".deconv2", in_c, out_c, 3,
                                                     stride, 1, stride - 1, init_rng));
      seq_.add(std::make_unique<nn::BatchNorm2d>(bn + ".bn2", out_c));
      seq_.add(std::make_unique<nn::ReLU>());
      auto drop = std::make_unique<nn::Dropout>(image_spec_.dropout);
      dropouts_.push_back(drop.get());
      seq_.add(std::move(drop));
    } else {
      seq_.add(std::make_unique<nn::ConvTranspose2d>(bn + ".deconv2", in_c,
                                                     image_spec_.channels, 3, stride,
                                                     1, stride - 1, init_rng));
      seq_.add(std::make_unique<nn::Sigmoid>());
    }
  }
}

Tensor ConvDecoder::forward(const Tensor& z) {
  if (z.ndim() != 2 || z.dim(1) != latent_dim_) {
    throw std::invalid_argument("decoder: expected (batch, " +
                                std::to_string(latent_dim_) + ") latents, got " +
                                z.shape_str());
  }
  ++forward_calls_;
  Tensor feat = stem_.forward(z);
  int n = z.dim(0);
  feat.reshape({n, 8, 8, image_spec_.trunk_channels()});
  return seq_.forward(feat);
}

Tensor ConvDecoder::backward(const Tensor& dimg) {
  Tensor dfeat = seq_.backward(dimg);
  int n = dfeat.dim(0);
  dfeat.reshape({n, image_spec_.feature_dim()});
  return stem_.backward(dfeat);
}

void ConvDecoder::set_training(bool train) {
  stem_.set_training(train);
  seq_.set_training(train);
}

void ConvDecoder::set_inference(bool inf) {
  stem_.set_inference(inf);
  seq_.set_inference(inf);
}

void ConvDecoder::set_rng(RngStream* rng) {
  for (auto* d : dropouts_) d->set_rng(rng);
}

void ConvDecoder::clear_cache() {
  stem_.clear_cache();
  seq_.clear_cache();
}

void ConvDecoder::params(std::vector<nn::ParamPtr>& out) {
  stem_.params(out);
  seq_.params(out);
}

void ConvDecoder::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  stem_.state(out);
  seq_.state(out);
}

// ----------------------------------------------------------- GaussianMlp

GaussianMlp::GaussianMlp(const std::string& name, int in_dim,
                         std::vector<int> hidden, int out_dim, RngStream& init_rng)
    : in_dim_(in_dim), out_dim_(out_dim),
      mean_head_(name + ".mean", hidden.empty() ? in_dim : hidden.back(), out_dim, init_rng),
      logvar_head_(name + ".logvar", hidden.empty() ? in_dim : hidden.back(), out_dim, init_rng) {
  if (hidden.empty()) throw std::invalid_argument("mlp: at least one hidden layer required");
  int prev = in_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    trunk_.add(std::make_unique<nn::Linear>(name + ".fc" + std::to_string(i + 1), prev,
                                            hidden[i], init_rng));
    trunk_.add(std::make_unique<nn::ReLU>());
    prev = hidden[i];
  }
}

GaussianPosterior GaussianMlp::forward(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(1) != in_dim_) {
    throw std::invalid_argument("gaussian mlp: bad input shape " + x.shape_str());
  }
  Tensor h = trunk_.forward(x);
  if (!mean_head_.inference()) trunk_out_.push_back(h);
  GaussianPosterior post;
  post.mean = mean_head_.forward(h);
  Tensor lv = logvar_head_.forward(h);
  int n = lv.dim(0), d = out_dim_;
  post.logvar = Tensor({n, d});
  Tensor mask({n, d});
  for (std::size_t i = 0; i < lv.size(); ++i) {
    double v = lv[i];
    post.logvar[i] = v < kLogVarMin ? kLogVarMin : (v > kLogVarMax ? kLogVarMax : v);
    mask[i] = (v > kLogVarMin && v < kLogVarMax) ? 1.0 : 0.0;
  }
  if (!mean_head_.inference()) clamp_mask_.push_back(std::move(mask));
  return post;
}

Tensor GaussianMlp::backward(const Tensor& dmean, const Tensor& dlogvar) {
  if (clamp_mask_.empty()) throw std::logic_error("gaussian mlp: backward without forward");
  Tensor mask = std::move(clamp_mask_.back());
  clamp_mask_.pop_back();
  trunk_out_.pop_back();
  Tensor dlv(dlogvar.shape());
  for (std::size_t i = 0; i < dlv.size(); ++i) dlv[i] = dlogvar[i] * mask[i];
  Tensor dh = mean_head_.backward(dmean);
  nn::add_inplace(dh, logvar_head_.backward(dlv));
  return trunk_.backward(dh);
}

void GaussianMlp::set_training(bool train) {
  trunk_.set_training(train);
  mean_head_.set_training(train);
  logvar_head_.set_training(train);
}

void GaussianMlp::set_inference(bool inf) {
  trunk_.set_inference(inf);
  mean_head_.set_inference(inf);
  logvar_head_.set_inference(inf);
}

void GaussianMlp::clear_cache() {
  trunk_.clear_cache();
  mean_head_.clear_cache();
  logvar_head_.clear_cache();
  trunk_out_.clear();
  clamp_mask_.clear();
}

void GaussianMlp::params(std::vector<nn::ParamPtr>& out) {
  trunk_.params(out);
  mean_head_.params(out);
  logvar_head_.params(out);
}

void GaussianMlp::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  trunk_.state(out);
  mean_head_.state(out);
  logvar_head_.state(out);
}

// ------------------------------------------------------------- ScalarMlp

ScalarMlp::ScalarMlp(const std::string& name, int in_dim, std::vector<int> hidden,
                     RngStream& init_rng)
    : in_dim_(in_dim) {
  if (hidden.empty()) throw std::invalid_argument("mlp: at least one hidden layer required");
  int prev = in_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    seq_.add(std::make_unique<nn::Linear>(name + ".fc" + std::to_string(i + 1), prev,
                                          hidden[i], init_rng));
    seq_.add(std::make_unique<nn::ReLU>());
    prev = hidden[i];
  }
  seq_.add(std::make_unique<nn::Linear>(name + ".out", prev, 1, init_rng));
}

Tensor ScalarMlp::forward(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(1) != in_dim_) {
    throw std::invalid_argument("scalar mlp: bad input shape " + x.shape_str());
  }
  return seq_.forward(x);
}

Tensor ScalarMlp::backward(const Tensor& dy) { return seq_.backward(dy); }

// ------------------------------------------------------ finite difference

GradCheckReport finite_diff_check(const std::function<double()>& loss_and_grad,
                                  const std::function<double()>& loss_only,
                                  const std::vector<nn::ParamPtr>& params,
                                  int coords_per_param, std::uint64_t seed,
                                  double h_scale) {
  double base = loss_and_grad();
  if (!std::isfinite(base)) throw std::runtime_error("gradient check: non-finite loss");

  // snapshot analytic gradients before the probing evaluations overwrite them
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  RngStream rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::size_t n = p->value.size();
    if (n == 0) continue;
    int coords = std::min<std::size_t>(n, static_cast<std::size_t>(coords_per_param));
    for (int ci = 0; ci < coords; ++ci) {
      std::size_t idx = (coords == static_cast<int>(n))
          ? static_cast<std::size_t>(ci)
          : rng.uniform_index(n);
      double saved = p->value[idx];
      double h = h_scale * std::max(1.0, std::abs(saved));
      auto central = [&](double step) {
        p->value[idx] = saved + step;
        double lp = loss_only();
        p->value[idx] = saved - step;
        double lm = loss_only();
        p->value[idx] = saved;
        if (!std::isfinite(lp) || !std::isfinite(lm)) {
          throw std::runtime_error("gradient check: non-finite loss at " + p->name);
        }
        return (lp - lm) / (2.0 * step);
      };
      double n1 = central(h);
      double n2 = central(0.5 * h);
      // two step sizes disagreeing flags a ReLU kink inside the probe window,
      // where a central difference does not estimate the (sub)gradient
      if (std::abs(n1 - n2) > 1e-4 * std::max({std::abs(n1), std::abs(n2), 1e-2})) {
        ++report.coords_skipped;
        continue;
      }
      double a = analytic[pi][idx];
      double rel = std::abs(a - n2) / std::max({std::abs(a), std::abs(n2), 1e-2});
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name + "[" + std::to_string(idx) + "]";
      }
    }
  }
  return report;
}

}  // namespace mrdd
