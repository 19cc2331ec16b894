#include <doctest.h>

#include <cmath>

#include "mrdd/mi_audit.hpp"
#include "mrdd/nets.hpp"

using namespace mrdd;
using namespace mrdd::mi_audit;

namespace {

void sample_gaussian_pair(int n, double rho, std::uint64_t seed, Tensor& c, Tensor& s) {
  RngStream rng(seed);
  c = Tensor({n, 1});
  s = Tensor({n, 1});
  double slack = std::sqrt(1.0 - rho * rho);
  for (int i = 0; i < n; ++i) {
    double cv = rng.normal();
    c[i] = cv;
    s[i] = rho * cv + slack * rng.normal();
  }
}

}  // namespace

TEST_SUITE("mine") {

TEST_CASE("constant statistic net gives an exactly zero objective") {
  // T == t0 for all inputs: V = t0 - log(e^{t0}) = 0
  RngStream rng(1);
  ScalarMlp tnet("t", 2, {8}, rng);
  std::vector<nn::ParamPtr> params;
  tnet.params(params);
  for (auto& p : params) p->value.fill(0.0);
  // bias of the output layer = t0
  params.back()->value[0] = 1.7;

  Tensor x({16, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.37 * static_cast<double>(i));
  Tensor t = tnet.forward(x);
  tnet.clear_cache();
  double mean = 0.0, mx = t[0];
  for (std::size_t i = 0; i < t.size(); ++i) {
    mean += t[i];
    mx = std::max(mx, t[i]);
  }
  mean /= static_cast<double>(t.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += std::exp(t[i] - mx);
  double v = mean - (mx + std::log(acc / static_cast<double>(t.size())));
  CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("estimate is invariant to a constant shift of the statistic net") {
  Tensor c, s;
  sample_gaussian_pair(512, 0.6, 5, c, s);
  MineConfig cfg;
  cfg.epochs = 3;
  cfg.repeats = 1;
  cfg.batch_size = 128;
  cfg.seed = 11;
  // Two runs with identical seeds but the final eval done on shifted nets is
  // not directly reachable through the public API; instead verify on a fixed
  // net that shifting the output bias leaves the DV value unchanged.
  RngStream rng(2);
  ScalarMlp tnet("t", 2, {32, 32}, rng);
  auto dv = [&](double shift) {
    std::vector<nn::ParamPtr> params;
    tnet.params(params);
    double saved = params.back()->value[0];
    params.back()->value[0] = saved + shift;
    Tensor xj({256, 2}), xm({256, 2});
    RngStream prng(7);
    for (std::size_t i = 0; i < xj.size(); ++i) {
      xj[i] = prng.normal();
      xm[i] = prng.normal();
    }
    Tensor tj = tnet.forward(xj);
    Tensor tm = tnet.forward(xm);
    tnet.clear_cache();
    double mean = 0.0;
    for (std::size_t i = 0; i < tj.size(); ++i) mean += tj[i];
    mean /= static_cast<double>(tj.size());
    double mx = tm[0];
    for (std::size_t i = 0; i < tm.size(); ++i) mx = std::max(mx, tm[i]);
    double acc = 0.0;
    for (std::size_t i = 0; i < tm.size(); ++i) acc += std::exp(tm[i] - mx);
    double v = mean - (mx + std::log(acc / static_cast<double>(tm.size())));
    params.back()->value[0] = saved;
    return v;
  };
  CHECK(std::abs(dv(0.0) - dv(3.0)) < 1e-6);
}

TEST_CASE("independent pair estimates near zero (reduced protocol)") {
  Tensor c, s;
  sample_gaussian_pair(1024, 0.0, 21, c, s);
  MineConfig cfg;
  cfg.epochs = 60;
  cfg.repeats = 2;
  cfg.seed = 3;
  auto res = mine_estimate(c, s, cfg);
  CHECK(res.per_repeat.size() == 2);
  CHECK(res.estimate > -0.05);
  CHECK(res.estimate < 0.10);
}

TEST_CASE("correlated pair recovers most of the analytic MI (reduced protocol)") {
  const double rho = 0.8;
  double mi_true = -0.5 * std::log(1.0 - rho * rho);  // 0.5108
  Tensor c, s;
  sample_gaussian_pair(2048, rho, 23, c, s);
  MineConfig cfg;
  cfg.epochs = 250;
  cfg.repeats = 2;
  cfg.lr = 5e-4;  // faster than the audit default; this is a smoke check
  cfg.seed = 5;
  auto res = mine_estimate(c, s, cfg);
  CHECK(res.estimate > mi_true - 0.2);
  CHECK(res.estimate < mi_true + 0.05);
}

TEST_CASE("reported value is the mean of per-repeat finals") {
  Tensor c, s;
  sample_gaussian_pair(512, 0.5, 31, c, s);
  MineConfig cfg;
  cfg.epochs = 5;
  cfg.repeats = 3;
  cfg.seed = 7;
  auto res = mine_estimate(c, s, cfg);
  double mean = 0.0;
  for (double v : res.per_repeat) mean += v;
  mean /= static_cast<double>(res.per_repeat.size());
  CHECK(res.estimate == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("input contracts") {
  Tensor c({100, 1}), s({100, 1});
  MineConfig cfg;  // batch 128 -> needs >= 256 rows
  CHECK_THROWS(mine_estimate(c, s, cfg));
  Tensor c2({300, 1}), s2({299, 1});
  CHECK_THROWS(mine_estimate(c2, s2, cfg));
}

}  // TEST_SUITE
