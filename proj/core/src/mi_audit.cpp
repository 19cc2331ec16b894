#include "mrdd/mi_audit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mrdd/blas.hpp"
#include "mrdd/nets.hpp"
#include "mrdd/optim.hpp"
#include "mrdd/rng.hpp"

namespace mrdd::mi_audit {

void MineConfig::validate() const {
  if (hidden.empty()) throw std::invalid_argument("mine: at least one hidden layer");
  if (batch_size < 2) throw std::invalid_argument("mine: batch_size must be >= 2");
  if (epochs < 1 || repeats < 1) throw std::invalid_argument("mine: epochs/repeats must be >= 1");
}

namespace {

Tensor pair_rows(const Tensor& c, const Tensor& s, const std::vector<std::size_t>& c_rows,
                 const std::vector<std::size_t>& s_rows) {
  const int dc = c.dim(1), ds = s.dim(1);
  Tensor out({static_cast<int>(c_rows.size()), dc + ds});
  for (std::size_t i = 0; i < c_rows.size(); ++i) {
    double* row = out.data() + i * (dc + ds);
    const double* cr = c.data() + c_rows[i] * dc;
    const double* sr = s.data() + s_rows[i] * ds;
    std::copy(cr, cr + dc, row);
    std::copy(sr, sr + ds, row + dc);
  }
  return out;
}

/// DV estimate on explicit joint/marginal statistic values, log-sum-exp safe.
double dv_value(const Tensor& t_joint, const Tensor& t_marg) {
  double mean_joint = 0.0;
  for (std::size_t i = 0; i < t_joint.size(); ++i) mean_joint += t_joint[i];
  mean_joint /= static_cast<double>(t_joint.size());
  double mx = t_marg[0];
  for (std::size_t i = 1; i < t_marg.size(); ++i) mx = std::max(mx, t_marg[i]);
  double acc = 0.0;
  for (std::size_t i = 0; i < t_marg.size(); ++i) acc += std::exp(t_marg[i] - mx);
  double log_mean_exp = mx + std::log(acc / static_cast<double>(t_marg.size()));
  return mean_joint - log_mean_exp;
}

}  // namespace

double dv_objective(ScalarMlp& tnet, const Tensor& joint, const Tensor& marginal,
                    bool with_grad) {
  Tensor tj = tnet.forward(joint);
  Tensor tm = tnet.forward(marginal);
  double bsz = static_cast<double>(tj.size());
  double mean_joint = 0.0;
  for (std::size_t i = 0; i < tj.size(); ++i) mean_joint += tj[i];
  mean_joint /= bsz;
  double mx = tm[0];
  for (std::size_t i = 1; i < tm.size(); ++i) mx = std::max(mx, tm[i]);
  double sum_exp = 0.0;
  for (std::size_t i = 0; i < tm.size(); ++i) sum_exp += std::exp(tm[i] - mx);
  double v = mean_joint - (mx + std::log(sum_exp / static_cast<double>(tm.size())));
  if (with_grad) {
    Tensor dtj(tj.shape()), dtm(tm.shape());
    for (std::size_t i = 0; i < dtj.size(); ++i) dtj[i] = -1.0 / bsz;
    for (std::size_t i = 0; i < dtm.size(); ++i) dtm[i] = std::exp(tm[i] - mx) / sum_exp;
    tnet.backward(dtm);  // reverse order of the forwards
    tnet.backward(dtj);
  } else {
    tnet.clear_cache();
  }
  return v;
}

namespace {

struct RepeatOutcome {
  bool ok = false;
  double final_estimate = 0.0;
  std::vector<std::pair<int, double>> curve;
};

RepeatOutcome run_repeat(const Tensor& c, const Tensor& s, const MineConfig& cfg,
                         std::uint64_t seed) {
  const int n = c.dim(0);
  const int dc = c.dim(1), ds = s.dim(1);
  RngStream init(derive_seed(seed, {0x6d696e65ULL}));
  ScalarMlp tnet("mine.t", dc + ds, cfg.hidden, init);
  std::vector<nn::ParamPtr> params;
  tnet.params(params);
  Adam adam(params, cfg.lr);
  RngStream rng(derive_seed(seed, {0x6d696e6532ULL}));

  RepeatOutcome out;
  double ema = 1.0;
  bool ema_started = false;

  std::vector<std::size_t> order(n);
  for (int i = 0; i < n; ++i) order[i] = static_cast<std::size_t>(i);

  std::vector<double> tail;
  const int tail_epochs = std::min(10, cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int b0 = 0; b0 + cfg.batch_size <= n; b0 += cfg.batch_size) {
      std::vector<std::size_t> joint(order.begin() + b0, order.begin() + b0 + cfg.batch_size);
      auto perm = rng.derangement(joint.size());
      std::vector<std::size_t> marg(joint.size());
      for (std::size_t i = 0; i < joint.size(); ++i) marg[i] = joint[perm[i]];

      Tensor xj = pair_rows(c, s, joint, joint);
      Tensor xm = pair_rows(c, s, joint, marg);
      Tensor tj = tnet.forward(xj);
      Tensor tm = tnet.forward(xm);

      double bsz = static_cast<double>(joint.size());
      double mx = tm[0];
      for (std::size_t i = 1; i < tm.size(); ++i) mx = std::max(mx, tm[i]);
      double sum_exp = 0.0;
      for (std::size_t i = 0; i < tm.size(); ++i) sum_exp += std::exp(tm[i] - mx);
      double mean_exp = std::exp(mx) * sum_exp / bsz;  // may overflow -> restart
      if (!std::isfinite(mean_exp)) return out;

      // maximize V = mean(tj) - log(mean(exp(tm)))
      Tensor dtj(tj.shape()), dtm(tm.shape());
      for (std::size_t i = 0; i < dtj.size(); ++i) dtj[i] = -1.0 / bsz;
      if (cfg.ema_correction) {
        if (!ema_started) {
          ema = mean_exp;
          ema_started = true;
        } else {
          ema = (1.0 - cfg.ema_rate) * ema + cfg.ema_rate * mean_exp;
        }
        for (std::size_t i = 0; i < dtm.size(); ++i) {
          dtm[i] = std::exp(tm[i]) / (bsz * ema);
        }
      } else {
        for (std::size_t i = 0; i < dtm.size(); ++i) {
          dtm[i] = std::exp(tm[i] - mx) / (sum_exp);
        }
      }
      if (!all_finite(dtm)) return out;

      adam.zero_grad();
      tnet.backward(dtm);  // reverse order of the forwards
      tnet.backward(dtj);
      adam.step();
    }

    bool record_curve = epoch % 25 == 0 || epoch == cfg.epochs - 1;
    bool in_tail = epoch >= cfg.epochs - tail_epochs;
    if (record_curve || in_tail) {
      // full-data estimate with a fresh derangement
      auto perm = rng.derangement(static_cast<std::size_t>(n));
      std::vector<std::size_t> all(n), marg(n);
      for (int i = 0; i < n; ++i) {
        all[i] = static_cast<std::size_t>(i);
        marg[i] = perm[i];
      }
      Tensor xj = pair_rows(c, s, all, all);
      Tensor xm = pair_rows(c, s, all, marg);
      Tensor tj = tnet.forward(xj);
      Tensor tm = tnet.forward(xm);
      tnet.clear_cache();
      double v = dv_value(tj, tm);
      if (!std::isfinite(v)) return out;
      if (record_curve) out.curve.emplace_back(epoch, v);
      if (in_tail) tail.push_back(v);
    }
  }

  double final = 0.0;
  for (double v : tail) final += v;
  out.final_estimate = final / static_cast<double>(tail.size());
  out.ok = true;
  return out;
}

}  // namespace

MineResult mine_estimate(const Tensor& c, const Tensor& s, const MineConfig& cfg) {
  cfg.validate();
  if (c.ndim() != 2 || s.ndim() != 2 || c.dim(0) != s.dim(0)) {
    throw std::invalid_argument("mine: c and s must be row-aligned matrices");
  }
  if (c.dim(0) < 2 * cfg.batch_size) {
    throw std::invalid_argument("mine: need at least 2*batch_size samples, got " +
                                std::to_string(c.dim(0)));
  }

  MineResult result;
  result.per_repeat.assign(cfg.repeats, 0.0);
  std::vector<RepeatOutcome> outcomes(cfg.repeats);

  // repeats are independent; run them on worker threads
  parallel_chunks(cfg.repeats, [&](int r) {
    for (int attempt = 0; attempt < 4; ++attempt) {
      std::uint64_t seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(r),
                                                  static_cast<std::uint64_t>(attempt)});
      outcomes[r] = run_repeat(c, s, cfg, seed);
      if (outcomes[r].ok) return;
    }
  });

  for (int r = 0; r < cfg.repeats; ++r) {
    if (!outcomes[r].ok) {
      throw std::runtime_error("mine: repeat " + std::to_string(r) +
                               " diverged after 3 restarts");
    }
    result.per_repeat[r] = outcomes[r].final_estimate;
  }
  result.curve = outcomes[0].curve;
  for (double v : result.per_repeat) result.estimate += v;
  result.estimate /= static_cast<double>(cfg.repeats);
  for (double v : result.per_repeat) {
    result.stddev += (v - result.estimate) * (v - result.estimate);
  }
  result.stddev = std::sqrt(result.stddev / static_cast<double>(cfg.repeats));
  return result;
}

std::vector<AuditRow> audit_redundancy(const latents::LatentSet& set,
                                       const MineConfig& cfg) {
  if (set.n_samples() < 2 * cfg.batch_size) {
    throw std::invalid_argument("audit: fewer samples than 2*batch_size");
  }
  std::vector<AuditRow> rows;
  for (int v = 0; v < set.n_views(); ++v) {
    MineConfig per_view = cfg;
    per_view.seed = derive_seed(cfg.seed, {0x6175646974ULL, static_cast<std::uint64_t>(v)});
    MineResult res = mine_estimate(set.c, set.s[v], per_view);
    rows.push_back({v + 1, res.estimate, res.stddev});
  }
  return rows;
}

void write_audit(const std::string& path, const std::vector<AuditRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "# view\tmi_nats\tstd\n";
  for (const auto& r : rows) {
    os << r.view << "\t" << r.mi << "\t" << r.stddev << "\n";
  }
}

}  // namespace mrdd::mi_audit
