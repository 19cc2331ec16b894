#ifndef MRDD_MI_AUDIT_HPP
#define MRDD_MI_AUDIT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mrdd/latents.hpp"
#include "mrdd/nets.hpp"
#include "mrdd/tensor.hpp"

namespace mrdd::mi_audit {

/// Donsker-Varadhan objective V = mean T(joint) - log mean exp T(marginal).
/// When with_grad is set, d(-V)/dparams is accumulated into the statistic
/// net (the exact objective gradient, no moving-average correction).
double dv_objective(ScalarMlp& tnet, const Tensor& joint, const Tensor& marginal,
                    bool with_grad);

struct MineConfig {
  std::vector<int> hidden = {100, 100, 100};
  double lr = 1e-4;
  int batch_size = 128;
  int epochs = 500;
  int repeats = 10;
  bool ema_correction = true;  // moving-average bias correction of the
                               // log-partition gradient; off = vanilla DV
  double ema_rate = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

struct MineResult {
  double estimate = 0.0;              // mean of per-repeat finals
  double stddev = 0.0;                // spread across repeats
  std::vector<double> per_repeat;     // final estimate per repeat
  std::vector<std::pair<int, double>> curve;  // sparse (epoch, estimate), first repeat
};

/// Donsker-Varadhan MI estimate between row-aligned samples, averaged over
/// seeded repeats. Marginal samples come from a within-batch derangement
/// shuffle of s. A repeat whose objective turns non-finite is restarted with
/// a fresh seed at most 3 times.
MineResult mine_estimate(const Tensor& c, const Tensor& s, const MineConfig& cfg);

struct AuditRow {
  int view = 0;       // 1-based
  double mi = 0.0;    // nats
  double stddev = 0.0;
};

/// MI(c, s_i) for every view of an extracted latent set.
std::vector<AuditRow> audit_redundancy(const latents::LatentSet& set,
                                       const MineConfig& cfg);

void write_audit(const std::string& path, const std::vector<AuditRow>& rows);

}  // namespace mrdd::mi_audit

#endif
