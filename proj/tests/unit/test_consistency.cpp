#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mrdd/consistency.hpp"
#include "mrdd/optim.hpp"
#include "toy.hpp"

using namespace mrdd;
using namespace mrdd::consistency;

namespace {

data::MultiViewBatch first_batch(const data::MultiViewDataset& ds, int size) {
  std::vector<int> ids;
  for (int i = 0; i < size; ++i) ids.push_back(i);
  return data::gather_batch(ds, ids);
}

}  // namespace

TEST_SUITE("consistency") {

TEST_CASE("encode emits one posterior row per sample") {
  auto ds = toy::digit_dataset(4, 1);
  ConsistentModel model(toy::toy_specs(2, 6), 6, 42);
  model.set_training(false);
  auto batch = first_batch(ds, 1);
  auto post = model.encode_consistent(batch);
  CHECK(post.mean.dim(0) == 1);
  CHECK(post.mean.dim(1) == 6);
}

TEST_CASE("missing view is an error") {
  auto ds = toy::digit_dataset(4, 2);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 1);
  std::vector<Tensor> one_view{ds.views[0].reshaped({4, 32, 32, 1})};
  CHECK_THROWS(model.encode(one_view));
}

TEST_CASE("duplicated samples give identical posterior rows (stochastic layers off)") {
  auto ds = toy::digit_dataset(4, 3);
  ConsistentModel model(toy::toy_specs(2, 5), 5, 7);
  auto batch = data::gather_batch(ds, {0, 0, 2});
  auto post = model.encode_consistent(batch);
  for (int j = 0; j < 5; ++j) {
    CHECK(post.mean[j] == doctest::Approx(post.mean[5 + j]).epsilon(1e-12));
    CHECK(post.logvar[j] == doctest::Approx(post.logvar[5 + j]).epsilon(1e-12));
  }
}

TEST_CASE("permuting the batch permutes posterior rows identically") {
  auto ds = toy::digit_dataset(6, 4);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 9);
  auto batch_a = data::gather_batch(ds, {0, 1, 2});
  auto batch_b = data::gather_batch(ds, {2, 0, 1});
  auto pa = model.encode_consistent(batch_a);
  auto pb = model.encode_consistent(batch_b);
  int perm[3] = {2, 0, 1};  // row i of b corresponds to row perm[i] of a
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      CHECK(pb.mean[static_cast<std::size_t>(i) * 4 + j] ==
            doctest::Approx(pa.mean[static_cast<std::size_t>(perm[i]) * 4 + j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("elbo decomposition: total = sum(recon) + beta_c * kl, exactly") {
  auto ds = toy::digit_dataset(8, 5);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 11);
  model.set_training(false);
  auto batch = first_batch(ds, 8);
  Tensor eps({8, 4});
  RngStream rng(3);
  rng.fill_normal(eps.data(), eps.size());
  for (double beta : {1.0, 0.37}) {
    auto loss = model.mcp_loss(batch, batch, eps, beta, false);
    model.clear_cache();
    double recon_sum = 0.0;
    for (double r : loss.recon_per_view) recon_sum += r;
    CHECK(std::abs(loss.total - (recon_sum + beta * loss.kl)) < 1e-9);
    CHECK(loss.kl >= 0.0);
  }
}

TEST_CASE("loss is deterministic given fixed inputs and noise") {
  auto ds = toy::digit_dataset(6, 6);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 13);
  model.set_training(false);
  auto batch = first_batch(ds, 6);
  Tensor eps({6, 4});
  RngStream rng(5);
  rng.fill_normal(eps.data(), eps.size());
  auto a = model.mcp_loss(batch, batch, eps, 1.0, false);
  model.clear_cache();
  auto b = model.mcp_loss(batch, batch, eps, 1.0, false);
  model.clear_cache();
  CHECK(a.total == b.total);
  CHECK(a.kl == b.kl);
}

TEST_CASE("mcp gradient flows: one adam step reduces the loss on a fixed batch") {
  auto ds = toy::digit_dataset(8, 7);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 17);
  model.set_training(false);  // deterministic path, running stats fixed
  auto batch = first_batch(ds, 8);
  Tensor eps({8, 4});  // zero noise
  Adam adam(model.trainable_params(), 1e-3);
  auto before = model.mcp_loss(batch, batch, eps, 1.0, true);
  adam.step();
  auto after = model.mcp_loss(batch, batch, eps, 1.0, false);
  model.clear_cache();
  CHECK(after.total < before.total);
}

TEST_CASE("inference never touches the prediction decoders") {
  auto ds = toy::digit_dataset(4, 8);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 19);
  auto batch = first_batch(ds, 4);
  auto calls_before = model.decoders()[0]->forward_calls();
  model.encode_consistent(batch);
  CHECK(model.decoders()[0]->forward_calls() == calls_before);
  CHECK(model.decoders()[1]->forward_calls() == calls_before);
}

TEST_CASE("product-of-experts fusion emits valid posteriors and trains") {
  auto ds = toy::digit_dataset(8, 9);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 23, /*poe=*/true);
  model.set_training(false);
  auto batch = first_batch(ds, 8);
  auto post = model.encode_consistent(batch);
  CHECK(post.mean.dim(1) == 4);
  // combined precision >= prior precision 1 => logvar <= 0
  for (std::size_t i = 0; i < post.logvar.size(); ++i) CHECK(post.logvar[i] <= 1e-12);

  Tensor eps({8, 4});
  Adam adam(model.trainable_params(), 1e-3);
  auto before = model.mcp_loss(batch, batch, eps, 1.0, true);
  adam.step();
  auto after = model.mcp_loss(batch, batch, eps, 1.0, false);
  model.clear_cache();
  CHECK(after.total < before.total);
}

TEST_CASE("poe fusion gradients match finite differences") {
  // generic-point batch: strictly interior pixel values keep every ReLU away
  // from its kink, which central differences cannot cross
  data::MultiViewBatch batch;
  RngStream xr(10);
  for (int v = 0; v < 2; ++v) {
    Tensor view({4, 32, 32, 1});
    for (std::size_t i = 0; i < view.size(); ++i) view[i] = xr.uniform(0.05, 0.95);
    batch.views.push_back(std::move(view));
  }
  batch.sample_ids = {0, 1, 2, 3};
  ConsistentModel model(toy::toy_specs(2, 3, 4, 0.0), 3, 29, /*poe=*/true);
  model.set_training(false);
  Tensor eps({4, 3});
  RngStream erng(31);
  erng.fill_normal(eps.data(), eps.size());

  auto params = model.trainable_params();
  // generic parameter point: zero-initialized biases leave dead-region
  // pre-activations exactly on the ReLU kink, where central differences
  // measure half-slopes; positive shifts keep units active
  RngStream nudge(77);
  for (auto& p : params) {
    bool is_shift = p->name.find("bias") != std::string::npos ||
                    p->name.find("beta") != std::string::npos;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->value[i] += is_shift ? nudge.uniform(0.05, 0.25) : nudge.uniform(-0.02, 0.02);
    }
  }
  auto loss_and_grad = [&]() {
    for (auto& p : params) p->zero_grad();
    auto l = model.mcp_loss(batch, batch, eps, 1.0, true);
    return l.total;
  };
  auto loss_only = [&]() {
    auto l = model.mcp_loss(batch, batch, eps, 1.0, false);
    model.clear_cache();
    return l.total;
  };
  auto report = finite_diff_check(loss_and_grad, loss_only, params, 4, 37);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("smoke train: two epochs on a toy set lowers the loss in >= 9/10 seeds") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto ds = toy::digit_dataset(64, 100 + seed);
    ConsistentModel model(toy::toy_specs(2, 4), 4, 1000 + seed);
    Stage1Config cfg;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.lr = 2e-3;
    cfg.seed = seed;
    cfg.mask.ratio = 0.5;
    cfg.mask.patch_size = 4;
    auto result = train_stage1(model, ds, cfg);
    REQUIRE(result.curve.size() == 2);
    if (result.curve.back().total < result.curve.front().total) ++improved;
    CHECK(model.frozen());
  }
  CHECK(improved >= 9);
}

TEST_CASE("mask ratio zero reduces stage 1 to a plain multi-view vae") {
  auto ds = toy::digit_dataset(8, 11);
  auto batch = first_batch(ds, 8);
  masking::MaskSpec spec;
  spec.ratio = 0.0;
  spec.patch_size = 4;
  RngStream rng(1);
  auto masks = masking::generate_batch_masks(spec, batch, rng);
  auto masked = masking::apply_mask(batch, masks, 4, 0.0);
  for (std::size_t v = 0; v < batch.views.size(); ++v) {
    for (std::size_t i = 0; i < batch.views[v].size(); ++i) {
      CHECK(masked.views[v][i] == batch.views[v][i]);
    }
  }
}

TEST_CASE("frozen encoder parameters are bit-identical after further gradient steps") {
  auto ds = toy::digit_dataset(16, 12);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 31);
  Stage1Config cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 2;
  train_stage1(model, ds, cfg);
  CHECK(model.frozen());
  std::string hash_before = model.encoder_hash();
  CHECK_THROWS(model.set_training(true));  // freeze contract
  CHECK(model.encoder_hash() == hash_before);
}

TEST_CASE("checkpoint round trip preserves every parameter and the hash") {
  auto ds = toy::digit_dataset(8, 13);
  ConsistentModel model(toy::toy_specs(2, 4), 4, 37);
  Stage1Config cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.seed = 3;
  train_stage1(model, ds, cfg);
  std::string path = (std::filesystem::temp_directory_path() / "mrdd_s1.ckpt").string();
  save_stage1(path, model);
  auto loaded = load_stage1(path);
  CHECK(loaded->frozen());
  CHECK(loaded->encoder_hash() == model.encoder_hash());
  std::filesystem::remove(path);
}

}  // TEST_SUITE
