#ifndef MRDD_NN_HPP
#define MRDD_NN_HPP

#include <memory>
#include <string>
#include <vector>

#include "mrdd/rng.hpp"
#include "mrdd/tensor.hpp"

namespace mrdd::nn {

/// A learnable tensor plus its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  explicit Param(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(std::move(shape)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParamPtr = std::shared_ptr<Param>;

/// Base class for layers. Each forward() pushes the state backward() needs
/// onto a cache stack and backward() pops it, so one layer instance can be
/// applied to several inputs per step (the consistent trunk sees every view)
/// as long as backward passes run in reverse order of the forwards.
/// Inference mode skips caching entirely.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;

  virtual void params(std::vector<ParamPtr>& out) { (void)out; }

  /// Named persistent tensors (parameters plus running statistics).
  virtual void state(std::vector<std::pair<std::string, Tensor*>>& out);

  virtual void clear_cache() {}

  /// Training mode: batch-norm batch statistics, dropout active.
  virtual void set_training(bool train) { training_ = train; }
  bool training() const { return training_; }

  virtual void set_inference(bool inf) { inference_ = inf; }
  bool inference() const { return inference_; }

 protected:
  bool training_ = true;
  bool inference_ = false;
};

/// 2-D convolution over NHWC batches with zero padding.
/// Weight layout: (kh, kw, in_c, out_c).
class Conv2d : public Layer {
 public:
  Conv2d(const std::string& name, int in_c, int out_c, int kernel, int stride,
         int pad, RngStream& init_rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<ParamPtr>& out) override;
  void clear_cache() override { cache_.clear(); }

  int out_size(int in_size) const { return (in_size + 2 * pad_ - k_) / stride_ + 1; }

  ParamPtr weight, bias;

 private:
  int in_c_, out_c_, k_, stride_, pad_;
  std::vector<Tensor> cache_;
};

/// Transposed 2-D convolution (the adjoint of Conv2d), NHWC.
/// Weight layout: (in_c, kh, kw, out_c).
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(const std::string& name, int in_c, int out_c, int kernel,
                  int stride, int pad, int output_pad, RngStream& init_rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<ParamPtr>& out) override;
  void clear_cache() override { cache_.clear(); }

  int out_size(int in_size) const {
    return (in_size - 1) * stride_ - 2 * pad_ + k_ + out_pad_;
  }

  ParamPtr weight, bias;

 private:
  int in_c_, out_c_, k_, stride_, pad_, out_pad_;
  std::vector<Tensor> cache_;
};

/// Batch normalization over (N,H,W) per channel. In eval mode the running
/// statistics are used both forward and backward, which is what the
/// finite-difference checks require ("frozen-statistics mode").
class BatchNorm2d : public Layer {
 public:
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1,
              double eps = 1e-5);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<ParamPtr>& out) override;
  void state(std::vector<std::pair<std::string, Tensor*>>& out) override;
  void clear_cache() override { cache_.clear(); }

  ParamPtr gamma, beta;
  Tensor running_mean, running_var;  // persisted with checkpoints

 private:
  struct Cache {
    Tensor xhat;
    std::vector<double> invstd;
    bool batch_stats;
  };
  std::string name_;
  int channels_;
  double momentum_, eps_;
  std::vector<Cache> cache_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void clear_cache() override { cache_.clear(); }

 private:
  std::vector<Tensor> cache_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void clear_cache() override { cache_.clear(); }

 private:
  std::vector<Tensor> cache_;
};

/// Inverted dropout; identity in eval mode. Mask randomness comes from the
/// stream set via set_rng (owned by the enclosing model).
class Dropout : public Layer {
 public:
  explicit Dropout(double rate) : rate_(rate) {}

  void set_rng(RngStream* rng) { rng_ = rng; }
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void clear_cache() override { cache_.clear(); }

 private:
  double rate_;
  RngStream* rng_ = nullptr;
  std::vector<Tensor> cache_;  // mask per pass; empty tensor = identity pass
};

/// Fully connected layer on (batch, features) tensors.
/// Weight layout: (in_features, out_features).
class Linear : public Layer {
 public:
  Linear(const std::string& name, int in_f, int out_f, RngStream& init_rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<ParamPtr>& out) override;
  void clear_cache() override { cache_.clear(); }

  ParamPtr weight, bias;

 private:
  int in_f_, out_f_;
  std::vector<Tensor> cache_;
};

/// A plain layer pipeline.
class Sequential : public Layer {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer* at(std::size_t i) { return layers_[i].get(); }

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& dy) override;
  void params(std::vector<ParamPtr>& out) override;
  void state(std::vector<std::pair<std::string, Tensor*>>& out) override;
  void clear_cache() override;
  void set_training(bool train) override;
  void set_inference(bool inf) override;

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

void add_inplace(Tensor& a, const Tensor& b);
void scale_inplace(Tensor& a, double s);

}  // namespace mrdd::nn

#endif
