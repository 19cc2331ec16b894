#include "mrdd/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mrdd/blas.hpp"

namespace mrdd::nn {

namespace {

constexpr int kChunkSamples = 32;   // samples per conv GEMM chunk
constexpr int kReduceChunk = 8192;  // positions per reduction chunk

thread_local std::vector<double> tl_cols;

int n_chunks_for(int batch) { return (batch + kChunkSamples - 1) / kChunkSamples; }

/// Gather patches of `img` (NHWC, one sample) into a column matrix.
/// Column l = grid position (gh, gw); rows ordered (kh, kw, channel).
/// Grid position g maps to image row g*stride - pad + kh.
void im2col_sample(const double* img, int img_h, int img_w, int c, int grid_h,
                   int grid_w, int k, int stride, int pad, double* cols) {
  const int col_len = k * k * c;
  for (int gh = 0; gh < grid_h; ++gh) {
    for (int gw = 0; gw < grid_w; ++gw) {
      double* col = cols + (static_cast<std::size_t>(gh) * grid_w + gw) * col_len;
      for (int kh = 0; kh < k; ++kh) {
        int ih = gh * stride - pad + kh;
        for (int kw = 0; kw < k; ++kw) {
          int iw = gw * stride - pad + kw;
          double* dst = col + (kh * k + kw) * c;
          if (ih < 0 || ih >= img_h || iw < 0 || iw >= img_w) {
            std::memset(dst, 0, sizeof(double) * c);
          } else {
            std::memcpy(dst, img + (static_cast<std::size_t>(ih) * img_w + iw) * c,
                        sizeof(double) * c);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col_sample: scatter-add columns back into the image.
void col2im_sample(const double* cols, int img_h, int img_w, int c, int grid_h,
                   int grid_w, int k, int stride, int pad, double* img) {
  const int col_len = k * k * c;
  for (int gh = 0; gh < grid_h; ++gh) {
    for (int gw = 0; gw < grid_w; ++gw) {
      const double* col = cols + (static_cast<std::size_t>(gh) * grid_w + gw) * col_len;
      for (int kh = 0; kh < k; ++kh) {
        int ih = gh * stride - pad + kh;
        if (ih < 0 || ih >= img_h) continue;
        for (int kw = 0; kw < k; ++kw) {
          int iw = gw * stride - pad + kw;
          if (iw < 0 || iw >= img_w) continue;
          const double* src = col + (kh * k + kw) * c;
          double* dst = img + (static_cast<std::size_t>(ih) * img_w + iw) * c;
          for (int j = 0; j < c; ++j) dst[j] += src[j];
        }
      }
    }
  }
}

void he_normal_init(Tensor& w, int fan_in, RngStream& rng) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std * rng.normal();
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_c, int out_c, int kernel,
               int stride, int pad, RngStream& init_rng)
    : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad) {
  weight = std::make_shared<Param>(name + ".weight",
                                   std::vector<int>{kernel, kernel, in_c, out_c});
  bias = std::make_shared<Param>(name + ".bias", std::vector<int>{out_c});
  he_normal_init(weight->value, kernel * kernel * in_c, init_rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(3) != in_c_) {
    throw std::invalid_argument("conv2d: bad input shape " + x.shape_str());
  }
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = out_size(h), ow = out_size(w);
  const int kcols = k_ * k_ * in_c_;
  Tensor y({n, oh, ow, out_c_});

  const double* b = bias->value.data();
  parallel_chunks(n_chunks_for(n), [&](int ci) {
    int s0 = ci * kChunkSamples;
    int s1 = std::min(n, s0 + kChunkSamples);
    std::size_t positions = static_cast<std::size_t>(oh) * ow;
    tl_cols.resize(static_cast<std::size_t>(kcols) * positions * (s1 - s0));
    for (int s = s0; s < s1; ++s) {
      im2col_sample(x.data() + static_cast<std::size_t>(s) * h * w * in_c_, h, w,
                    in_c_, oh, ow, k_, stride_, pad_,
                    tl_cols.data() + static_cast<std::size_t>(s - s0) * kcols * positions);
    }
    std::size_t l = positions * (s1 - s0);
    double* out = y.data() + static_cast<std::size_t>(s0) * positions * out_c_;
    gemm(false, false, out_c_, static_cast<int>(l), kcols, 1.0,
         weight->value.data(), out_c_, tl_cols.data(), kcols, 0.0, out, out_c_);
    for (std::size_t i = 0; i < l; ++i) {
      double* row = out + i * out_c_;
      for (int c = 0; c < out_c_; ++c) row[c] += b[c];
    }
  });

  if (!inference_) cache_.push_back(x);
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  if (cache_.empty()) throw std::logic_error("conv2d: backward without forward");
  Tensor x = std::move(cache_.back());
  cache_.pop_back();
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = dy.dim(1), ow = dy.dim(2);
  const int kcols = k_ * k_ * in_c_;
  Tensor dx(x.shape());

  int chunks = n_chunks_for(n);
  std::vector<Tensor> dw_parts(chunks);
  std::vector<std::vector<double>> db_parts(chunks);
  parallel_chunks(chunks, [&](int ci) {
    int s0 = ci * kChunkSamples;
    int s1 = std::min(n, s0 + kChunkSamples);
    std::size_t positions = static_cast<std::size_t>(oh) * ow;
    std::size_t l = positions * (s1 - s0);
    const double* dyp = dy.data() + static_cast<std::size_t>(s0) * positions * out_c_;

    // dW and db partials from recomputed columns
    tl_cols.resize(static_cast<std::size_t>(kcols) * l);
    for (int s = s0; s < s1; ++s) {
      im2col_sample(x.data() + static_cast<std::size_t>(s) * h * w * in_c_, h, w,
                    in_c_, oh, ow, k_, stride_, pad_,
                    tl_cols.data() + static_cast<std::size_t>(s - s0) * kcols * positions);
    }
    dw_parts[ci] = Tensor(weight->value.shape());
    gemm(false, true, out_c_, kcols, static_cast<int>(l), 1.0, dyp, out_c_,
         tl_cols.data(), kcols, 0.0, dw_parts[ci].data(), out_c_);
    db_parts[ci].assign(out_c_, 0.0);
    for (std::size_t i = 0; i < l; ++i) {
      const double* row = dyp + i * out_c_;
      for (int c = 0; c < out_c_; ++c) db_parts[ci][c] += row[c];
    }

    // dx = scatter(W^T * dy)
    gemm(true, false, kcols, static_cast<int>(l), out_c_, 1.0,
         weight->value.data(), out_c_, dyp, out_c_, 0.0, tl_cols.data(), kcols);
    for (int s = s0; s < s1; ++s) {
      col2im_sample(tl_cols.data() + static_cast<std::size_t>(s - s0) * kcols * positions,
                    h, w, in_c_, oh, ow, k_, stride_, pad_,
                    dx.data() + static_cast<std::size_t>(s) * h * w * in_c_);
    }
  });

  for (int ci = 0; ci < chunks; ++ci) {
    add_inplace(weight->grad, dw_parts[ci]);
    for (int c = 0; c < out_c_; ++c) bias->grad[c] += db_parts[ci][c];
  }
  return dx;
}

void Conv2d::params(std::vector<ParamPtr>& out) {
  out.push_back(weight);
  out.push_back(bias);
}

void Layer::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  std::vector<ParamPtr> ps;
  params(ps);
  for (auto& p : ps) out.emplace_back(p->name, &p->value);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(const std::string& name, int in_c, int out_c,
                                 int kernel, int stride, int pad, int output_pad,
                                 RngStream& init_rng)
    : in_c_(in_c), out_c_(out_c), k_(kernel), stride_(stride), pad_(pad),
      out_pad_(output_pad) {
  weight = std::make_shared<Param>(name + ".weight",
                                   std::vector<int>{in_c, kernel, kernel, out_c});
  bias = std::make_shared<Param>(name + ".bias", std::vector<int>{out_c});
  he_normal_init(weight->value, kernel * kernel * in_c, init_rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.dim(3) != in_c_) {
    throw std::invalid_argument("conv_transpose2d: bad input shape " + x.shape_str());
  }
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = out_size(h), ow = out_size(w);
  const int krows = k_ * k_ * out_c_;
  Tensor y({n, oh, ow, out_c_});

  const double* b = bias->value.data();
  parallel_chunks(n_chunks_for(n), [&](int ci) {
    int s0 = ci * kChunkSamples;
    int s1 = std::min(n, s0 + kChunkSamples);
    std::size_t in_positions = static_cast<std::size_t>(h) * w;
    std::size_t out_positions = static_cast<std::size_t>(oh) * ow;
    for (int s = s0; s < s1; ++s) {
      tl_cols.resize(static_cast<std::size_t>(krows) * in_positions);
      // columns over input positions = W^T applied to each input pixel vector
      gemm(false, false, krows, static_cast<int>(in_positions), in_c_, 1.0,
           weight->value.data(), krows,
           x.data() + static_cast<std::size_t>(s) * in_positions * in_c_, in_c_,
           0.0, tl_cols.data(), krows);
      double* out = y.data() + static_cast<std::size_t>(s) * out_positions * out_c_;
      col2im_sample(tl_cols.data(), oh, ow, out_c_, h, w, k_, stride_, pad_, out);
      for (std::size_t i = 0; i < out_positions; ++i) {
        double* row = out + i * out_c_;
        for (int c = 0; c < out_c_; ++c) row[c] += b[c];
      }
    }
  });

  if (!inference_) cache_.push_back(x);
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
  if (cache_.empty())
    throw std::logic_error("conv_transpose2d: backward without forward");
  Tensor x = std::move(cache_.back());
  cache_.pop_back();
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = dy.dim(1), ow = dy.dim(2);
  const int krows = k_ * k_ * out_c_;
  Tensor dx(x.shape());

  int chunks = n_chunks_for(n);
  std::vector<Tensor> dw_parts(chunks);
  std::vector<std::vector<double>> db_parts(chunks);
  parallel_chunks(chunks, [&](int ci) {
    int s0 = ci * kChunkSamples;
    int s1 = std::min(n, s0 + kChunkSamples);
    std::size_t in_positions = static_cast<std::size_t>(h) * w;
    std::size_t out_positions = static_cast<std::size_t>(oh) * ow;
    dw_parts[ci] = Tensor(weight->value.shape());
    db_parts[ci].assign(out_c_, 0.0);
    for (int s = s0; s < s1; ++s) {
      const double* dyp = dy.data() + static_cast<std::size_t>(s) * out_positions * out_c_;
      tl_cols.resize(static_cast<std::size_t>(krows) * in_positions);
      im2col_sample(dyp, oh, ow, out_c_, h, w, k_, stride_, pad_, tl_cols.data());
      // dx = W * cols(dy)
      gemm(true, false, in_c_, static_cast<int>(in_positions), krows, 1.0,
           weight->value.data(), krows, tl_cols.data(), krows, 0.0,
           dx.data() + static_cast<std::size_t>(s) * in_positions * in_c_, in_c_);
      // dW += cols(dy) * x^T
      gemm(false, true, krows, in_c_, static_cast<int>(in_positions), 1.0,
           tl_cols.data(), krows,
           x.data() + static_cast<std::size_t>(s) * in_positions * in_c_, in_c_,
           1.0, dw_parts[ci].data(), krows);
      for (std::size_t i = 0; i < out_positions; ++i) {
        const double* row = dyp + i * out_c_;
        for (int c = 0; c < out_c_; ++c) db_parts[ci][c] += row[c];
      }
    }
  });

  for (int ci = 0; ci < chunks; ++ci) {
    add_inplace(weight->grad, dw_parts[ci]);
    for (int c = 0; c < out_c_; ++c) bias->grad[c] += db_parts[ci][c];
  }
  return dx;
}

void ConvTranspose2d::params(std::vector<ParamPtr>& out) {
  out.push_back(weight);
  out.push_back(bias);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(const std::string& name, int channels, double momentum,
                         double eps)
    : name_(name), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma = std::make_shared<Param>(name + ".gamma", std::vector<int>{channels});
  beta = std::make_shared<Param>(name + ".beta", std::vector<int>{channels});
  gamma->value.fill(1.0);
  running_mean = Tensor({channels});
  running_var = Tensor({channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  if (x.dim(x.ndim() - 1) != channels_) {
    throw std::invalid_argument("batchnorm: channel mismatch");
  }
  std::size_t positions = x.size() / channels_;
  Tensor y(x.shape());
  std::vector<double> mean(channels_);
  Cache cache;
  cache.invstd.assign(channels_, 0.0);
  cache.batch_stats = training_;

  int chunks = static_cast<int>((positions + kReduceChunk - 1) / kReduceChunk);
  if (training_) {
    // deterministic chunked reduction for per-channel sum and sum of squares
    std::vector<std::vector<double>> parts(chunks);
    parallel_chunks(chunks, [&](int ci) {
      std::size_t lo = static_cast<std::size_t>(ci) * kReduceChunk;
      std::size_t hi = std::min(positions, lo + kReduceChunk);
      parts[ci].assign(2 * channels_, 0.0);
      for (std::size_t l = lo; l < hi; ++l) {
        const double* xr = x.data() + l * channels_;
        for (int c = 0; c < channels_; ++c) {
          parts[ci][c] += xr[c];
          parts[ci][channels_ + c] += xr[c] * xr[c];
        }
      }
    });
    std::vector<double> sum(channels_, 0.0), sumsq(channels_, 0.0);
    for (auto& p : parts) {
      for (int c = 0; c < channels_; ++c) {
        sum[c] += p[c];
        sumsq[c] += p[channels_ + c];
      }
    }
    double inv_m = 1.0 / static_cast<double>(positions);
    double unbias = positions > 1
        ? static_cast<double>(positions) / static_cast<double>(positions - 1)
        : 1.0;
    for (int c = 0; c < channels_; ++c) {
      mean[c] = sum[c] * inv_m;
      double var = std::max(0.0, sumsq[c] * inv_m - mean[c] * mean[c]);
      cache.invstd[c] = 1.0 / std::sqrt(var + eps_);
      running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean[c];
      running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * var * unbias;
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      mean[c] = running_mean[c];
      cache.invstd[c] = 1.0 / std::sqrt(running_var[c] + eps_);
    }
  }

  if (!inference_) cache.xhat = Tensor(x.shape());
  const double* g = gamma->value.data();
  const double* bt = beta->value.data();
  parallel_chunks(chunks, [&](int ci) {
    std::size_t lo = static_cast<std::size_t>(ci) * kReduceChunk;
    std::size_t hi = std::min(positions, lo + kReduceChunk);
    for (std::size_t l = lo; l < hi; ++l) {
      const double* xr = x.data() + l * channels_;
      double* yr = y.data() + l * channels_;
      double* xh = inference_ ? nullptr : cache.xhat.data() + l * channels_;
      for (int c = 0; c < channels_; ++c) {
        double v = (xr[c] - mean[c]) * cache.invstd[c];
        if (xh) xh[c] = v;
        yr[c] = g[c] * v + bt[c];
      }
    }
  });
  if (!inference_) cache_.push_back(std::move(cache));
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  if (cache_.empty()) throw std::logic_error("batchnorm: backward without forward");
  Cache cache = std::move(cache_.back());
  cache_.pop_back();
  std::size_t positions = dy.size() / channels_;
  Tensor dx(dy.shape());

  // dgamma = sum(dy * xhat), dbeta = sum(dy)
  std::vector<double> dg(channels_, 0.0), db(channels_, 0.0);
  int chunks = static_cast<int>((positions + kReduceChunk - 1) / kReduceChunk);
  {
    std::vector<std::vector<double>> parts(chunks);
    parallel_chunks(chunks, [&](int ci) {
      std::size_t lo = static_cast<std::size_t>(ci) * kReduceChunk;
      std::size_t hi = std::min(positions, lo + kReduceChunk);
      parts[ci].assign(2 * channels_, 0.0);
      for (std::size_t l = lo; l < hi; ++l) {
        const double* dyr = dy.data() + l * channels_;
        const double* xh = cache.xhat.data() + l * channels_;
        for (int c = 0; c < channels_; ++c) {
          parts[ci][c] += dyr[c] * xh[c];
          parts[ci][channels_ + c] += dyr[c];
        }
      }
    });
    for (auto& p : parts) {
      for (int c = 0; c < channels_; ++c) {
        dg[c] += p[c];
        db[c] += p[channels_ + c];
      }
    }
  }
  for (int c = 0; c < channels_; ++c) {
    gamma->grad[c] += dg[c];
    beta->grad[c] += db[c];
  }

  const double* g = gamma->value.data();
  double inv_m = 1.0 / static_cast<double>(positions);
  parallel_chunks(chunks, [&](int ci) {
    std::size_t lo = static_cast<std::size_t>(ci) * kReduceChunk;
    std::size_t hi = std::min(positions, lo + kReduceChunk);
    for (std::size_t l = lo; l < hi; ++l) {
      const double* dyr = dy.data() + l * channels_;
      const double* xh = cache.xhat.data() + l * channels_;
      double* dxr = dx.data() + l * channels_;
      for (int c = 0; c < channels_; ++c) {
        if (cache.batch_stats) {
          dxr[c] = g[c] * cache.invstd[c] *
                   (dyr[c] - inv_m * db[c] - xh[c] * inv_m * dg[c]);
        } else {
          dxr[c] = g[c] * cache.invstd[c] * dyr[c];
        }
      }
    }
  });
  return dx;
}

void BatchNorm2d::params(std::vector<ParamPtr>& out) {
  out.push_back(gamma);
  out.push_back(beta);
}

void BatchNorm2d::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  Layer::state(out);
  out.emplace_back(name_ + ".running_mean", &running_mean);
  out.emplace_back(name_ + ".running_var", &running_var);
}

// ------------------------------------------------------------ activations

Tensor ReLU::forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (!inference_) cache_.push_back(y);
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  if (cache_.empty()) throw std::logic_error("relu: backward without forward");
  Tensor y = std::move(cache_.back());
  cache_.pop_back();
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  if (!inference_) cache_.push_back(y);
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy) {
  if (cache_.empty()) throw std::logic_error("sigmoid: backward without forward");
  Tensor y = std::move(cache_.back());
  cache_.pop_back();
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dx;
}

Tensor Dropout::forward(const Tensor& x) {
  if (!training_ || rate_ <= 0.0) {
    if (!inference_) cache_.emplace_back();  // identity marker
    return x;
  }
  if (!rng_) throw std::logic_error("dropout: rng not set");
  double keep = 1.0 - rate_;
  Tensor mask(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    mask[i] = rng_->uniform() < keep ? 1.0 / keep : 0.0;
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
  if (!inference_) cache_.push_back(std::move(mask));
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (cache_.empty()) throw std::logic_error("dropout: backward without forward");
  Tensor mask = std::move(cache_.back());
  cache_.pop_back();
  if (mask.empty()) return dy;
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

// ----------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in_f, int out_f, RngStream& init_rng)
    : in_f_(in_f), out_f_(out_f) {
  weight = std::make_shared<Param>(name + ".weight", std::vector<int>{in_f, out_f});
  bias = std::make_shared<Param>(name + ".bias", std::vector<int>{out_f});
  he_normal_init(weight->value, in_f, init_rng);
}

Tensor Linear::forward(const Tensor& x) {
  std::size_t features = x.dim(0) > 0 ? x.size() / x.dim(0) : 0;
  if (static_cast<int>(features) != in_f_) {
    throw std::invalid_argument("linear: expected " + std::to_string(in_f_) +
                                " features, got " + std::to_string(features));
  }
  int batch = x.dim(0);
  Tensor y({batch, out_f_});
  gemm(false, false, out_f_, batch, in_f_, 1.0, weight->value.data(), out_f_,
       x.data(), in_f_, 0.0, y.data(), out_f_);
  const double* b = bias->value.data();
  for (int s = 0; s < batch; ++s) {
    double* row = y.data() + static_cast<std::size_t>(s) * out_f_;
    for (int c = 0; c < out_f_; ++c) row[c] += b[c];
  }
  if (!inference_) cache_.push_back(x);
  return y;
}

Tensor Linear::backward(const Tensor& dy) {
  if (cache_.empty()) throw std::logic_error("linear: backward without forward");
  Tensor x = std::move(cache_.back());
  cache_.pop_back();
  int batch = dy.dim(0);
  gemm(false, true, out_f_, in_f_, batch, 1.0, dy.data(), out_f_, x.data(),
       in_f_, 1.0, weight->grad.data(), out_f_);
  for (int s = 0; s < batch; ++s) {
    const double* row = dy.data() + static_cast<std::size_t>(s) * out_f_;
    for (int c = 0; c < out_f_; ++c) bias->grad[c] += row[c];
  }
  Tensor dx(x.shape());
  gemm(true, false, in_f_, batch, out_f_, 1.0, weight->value.data(), out_f_,
       dy.data(), out_f_, 0.0, dx.data(), in_f_);
  return dx;
}

void Linear::params(std::vector<ParamPtr>& out) {
  out.push_back(weight);
  out.push_back(bias);
}

// ------------------------------------------------------------- Sequential

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::params(std::vector<ParamPtr>& out) {
  for (auto& layer : layers_) layer->params(out);
}

void Sequential::state(std::vector<std::pair<std::string, Tensor*>>& out) {
  for (auto& layer : layers_) layer->state(out);
}

void Sequential::clear_cache() {
  for (auto& layer : layers_) layer->clear_cache();
}

void Sequential::set_training(bool train) {
  training_ = train;
  for (auto& layer : layers_) layer->set_training(train);
}

void Sequential::set_inference(bool inf) {
  inference_ = inf;
  for (auto& layer : layers_) layer->set_inference(inf);
}

// ---------------------------------------------------------------- helpers

void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

void scale_inplace(Tensor& a, double s) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
}

}  // namespace mrdd::nn
