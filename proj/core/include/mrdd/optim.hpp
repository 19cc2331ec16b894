#ifndef MRDD_OPTIM_HPP
#define MRDD_OPTIM_HPP

#include <cmath>
#include <vector>

#include "mrdd/nn.hpp"

namespace mrdd {

/// Adam with bias correction. Duplicate parameter pointers (weight sharing)
/// are collapsed so a shared tensor is stepped once per update.
class Adam {
 public:
  explicit Adam(std::vector<nn::ParamPtr> params, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  std::vector<nn::ParamPtr> params_;
  std::vector<Tensor> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

inline Adam::Adam(std::vector<nn::ParamPtr> params, double lr, double beta1,
                  double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (auto& p : params) {
    bool seen = false;
    for (auto& q : params_) {
      if (q.get() == p.get()) { seen = true; break; }
    }
    if (!seen) params_.push_back(p);
  }
  for (auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

inline void Adam::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

inline void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto& p = *params_[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * g;
      v[i] = b2_ * v[i] + (1.0 - b2_) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

/// Cosine annealing from lr0 at epoch 0 down to 0 at epoch total.
inline double cosine_lr(double lr0, int epoch, int total) {
  if (total <= 0) return lr0;
  double frac = static_cast<double>(epoch) / static_cast<double>(total);
  if (frac > 1.0) frac = 1.0;
  return lr0 * 0.5 * (1.0 + std::cos(M_PI * frac));
}

}  // namespace mrdd

#endif
