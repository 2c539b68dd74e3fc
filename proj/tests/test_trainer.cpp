#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "tmpa/serialize.hpp"
#include "tmpa/trainer.hpp"

using namespace tmpa;

namespace {

SynthSpec micro_spec(uint64_t seed = 5) {
  SynthSpec spec;
  spec.num_train_ids = 4;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  spec.height = 24;
  spec.width = 12;
  spec.seed = seed;
  spec.noise_sigma = 0.02;
  return spec;
}

TrainConfig micro_cfg(uint64_t seed = 5) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 2;
  cfg.lr0 = 0.05;
  cfg.pk_p = 2;
  cfg.pk_k = 2;
  cfg.patch_size = 6;
  cfg.seed = seed;
  return cfg;
}

bool models_bitwise_equal(Model& a, Model& b) {
  bool ok = true;
  std::map<std::string, Tensor*> pa;
  a.for_each_param([&](const std::string& n, Tensor& t) { pa[n] = &t; });
  b.for_each_param([&](const std::string& n, Tensor& t) {
    if (!pa.count(n) || !bitwise_equal(*pa[n], t)) ok = false;
  });
  std::map<std::string, BnState*> ba;
  a.for_each_bn([&](const std::string& n, BnState& s) { ba[n] = &s; });
  b.for_each_bn([&](const std::string& n, BnState& s) {
    if (!ba.count(n) || !bitwise_equal(ba[n]->running_mean, s.running_mean) ||
        !bitwise_equal(ba[n]->running_var, s.running_var))
      ok = false;
  });
  return ok;
}

bool checkpoints_bitwise_equal(Checkpoint& a, Checkpoint& b) {
  if (a.epoch != b.epoch) return false;
  if (a.momentum.size() != b.momentum.size()) return false;
  for (auto& [n, t] : a.momentum) {
    auto it = b.momentum.find(n);
    if (it == b.momentum.end() || !bitwise_equal(t, it->second)) return false;
  }
  return models_bitwise_equal(a.model, b.model);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("lr schedule follows the milestones") {
  TrainConfig cfg;  // lr0=0.1, factors 0.1@20 and 0.01@50
  CHECK(lr_at(0, cfg) == doctest::Approx(0.1));
  CHECK(lr_at(19, cfg) == doctest::Approx(0.1));
  CHECK(lr_at(20, cfg) == doctest::Approx(0.01));
  CHECK(lr_at(49, cfg) == doctest::Approx(0.01));
  CHECK(lr_at(50, cfg) == doctest::Approx(0.001));
  CHECK(lr_at(120, cfg) == doctest::Approx(0.001));
  CHECK_THROWS_AS(lr_at(-1, cfg), ContractViolation);
}

TEST_CASE("config keys round trip through TrainConfig") {
  KvConfig kv = KvConfig::defaults();
  TrainConfig cfg = train_config_from(kv);
  CHECK(cfg.epochs == 60);
  CHECK(cfg.steps_per_epoch == 8);
  CHECK(cfg.lr0 == 0.1);
  CHECK(cfg.momentum == 0.9);
  REQUIRE(cfg.milestones.size() == 2);
  CHECK(cfg.milestones[0] == std::pair<int, double>{20, 0.1});
  CHECK(cfg.milestones[1] == std::pair<int, double>{50, 0.01});
  CHECK(cfg.weights.alpha == 0.8);
  CHECK(cfg.weights.beta == 0.4);
  CHECK(cfg.ratios.a_c == 0.65);
  CHECK(cfg.phi1.first == doctest::Approx(2.0 / 3.0));
  CHECK(cfg.pk_p == 8);
  CHECK(cfg.pk_k == 4);
  CHECK(cfg.enable_pedmix);
  CHECK(cfg.enable_mft);
  CHECK_FALSE(cfg.enable_channel_aug);

  // snapshot and re-parse reproduces the same TrainConfig
  KvConfig snap = to_kv(cfg, synth_spec_from(kv));
  TrainConfig cfg2 = train_config_from(snap);
  CHECK(cfg2.milestones == cfg.milestones);
  CHECK(cfg2.weights.rho == cfg.weights.rho);
  CHECK(cfg2.seed == cfg.seed);
}

TEST_CASE("config validation rejects bad milestones") {
  KvConfig kv = KvConfig::defaults();
  kv.set("lr_milestones", "50:0.1,20:0.01");
  CHECK_THROWS_AS(train_config_from(kv), ContractViolation);
  kv.set("lr_milestones", "20:1.5");
  CHECK_THROWS_AS(train_config_from(kv), ContractViolation);
}

TEST_CASE("one training step is bitwise reproducible") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  auto run_once = [&]() {
    ModelConfig mc;
    mc.num_classes = ds.spec.num_train_ids;
    Model m = Model::init(mc, cfg.seed);
    std::map<std::string, Tensor> mom;
    Rng rng(derive_seed(cfg.seed, {hash_string("step"), 0, 0}));
    Batch batch = pk_sample(ds, cfg.pk_p, cfg.pk_k, rng);
    train_step(m, mom, batch, cfg, 0.05, rng);
    return m;
  };
  Model a = run_once();
  Model b = run_once();
  CHECK(models_bitwise_equal(a, b));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  ModelConfig mc;
  mc.num_classes = ds.spec.num_train_ids;
  Model m = Model::init(mc, cfg.seed);
  Model before = m;
  std::map<std::string, Tensor> mom;
  Rng rng(123);
  Batch batch = pk_sample(ds, cfg.pk_p, cfg.pk_k, rng);
  train_step(m, mom, batch, cfg, 0.0, rng);
  bool params_equal = true;
  std::map<std::string, Tensor*> pb;
  before.for_each_param([&](const std::string& n, Tensor& t) { pb[n] = &t; });
  m.for_each_param([&](const std::string& n, Tensor& t) {
    if (!bitwise_equal(*pb[n], t)) params_equal = false;
  });
  CHECK(params_equal);
}

TEST_CASE("a small step decreases the loss on the same batch in >=95% of seeds") {
  SynthDataset ds = generate(micro_spec());
  int improved = 0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    TrainConfig cfg = micro_cfg(100 + static_cast<uint64_t>(trial));
    ModelConfig mc;
    mc.num_classes = ds.spec.num_train_ids;
    Model m = Model::init(mc, cfg.seed);
    Rng rng(derive_seed(cfg.seed, {hash_string("descent")}));
    Batch batch = pk_sample(ds, cfg.pk_p, cfg.pk_k, rng);
    // measure -> step -> measure, with augmentation RNG state cloned so all
    // three passes see the identical mixed batch
    const uint64_t aug_seed = derive_seed(cfg.seed, {hash_string("aug")});
    Model probe = m;
    std::map<std::string, Tensor> scratch;
    Rng r1(aug_seed);
    const double before = train_step(probe, scratch, batch, cfg, 0.0, r1).l_total;
    std::map<std::string, Tensor> mom;
    Rng r2(aug_seed);
    train_step(m, mom, batch, cfg, 1e-3, r2);
    Model probe2 = m;
    std::map<std::string, Tensor> scratch2;
    Rng r3(aug_seed);
    const double after = train_step(probe2, scratch2, batch, cfg, 0.0, r3).l_total;
    if (after < before) ++improved;
  }
  INFO("improved in ", improved, "/", trials, " trials");
  CHECK(improved >= 19);
}

TEST_CASE("baseline configuration leaves the transfer stack untouched") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  cfg.enable_mft = false;
  ModelConfig mc;
  mc.num_classes = ds.spec.num_train_ids;
  Model m = Model::init(mc, cfg.seed);
  Model before = m;
  std::map<std::string, Tensor> mom;
  Rng rng(9);
  Batch batch = pk_sample(ds, cfg.pk_p, cfg.pk_k, rng);
  train_step(m, mom, batch, cfg, 0.05, rng);
  // no momentum entries and no parameter drift for MFE/MFT-only parts
  for (const auto& [name, t] : mom) {
    CHECK(name.rfind("e_sp", 0) != 0);
    CHECK(name.rfind("proj.q", 0) != 0);
    CHECK(name.rfind("proj.k", 0) != 0);
    CHECK(name.rfind("conv_v", 0) != 0);
    CHECK(name.rfind("conv_i", 0) != 0);
    CHECK(name.rfind("cls_v", 0) != 0);
    CHECK(name.rfind("cls_i", 0) != 0);
  }
  CHECK(bitwise_equal(before.e_sp_v.blocks[0].w, m.e_sp_v.blocks[0].w));
  CHECK(bitwise_equal(before.w_q_v, m.w_q_v));
  CHECK(bitwise_equal(before.cls_v.w, m.cls_v.w));
  // while the shared path did move
  CHECK_FALSE(bitwise_equal(before.e_sh.blocks[0].w, m.e_sh.blocks[0].w));
}

TEST_CASE("epochs=0 returns the initialization") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  cfg.epochs = 0;
  Checkpoint ckpt = train(ds, cfg, "");
  ModelConfig mc;
  mc.num_classes = ds.spec.num_train_ids;
  Model fresh = Model::init(mc, cfg.seed);
  CHECK(models_bitwise_equal(ckpt.model, fresh));
  CHECK(ckpt.epoch == 0);
}

TEST_CASE("full training run is bitwise deterministic") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  Checkpoint a = train(ds, cfg, "");
  Checkpoint b = train(ds, cfg, "");
  CHECK(checkpoints_bitwise_equal(a, b));
}

TEST_CASE("checkpoint serialization round trips bitwise") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  Checkpoint ckpt = train(ds, cfg, "");
  auto path = (std::filesystem::temp_directory_path() / "tmpa_ckpt_test.tmpa").string();
  save_checkpoint(ckpt, path);
  Checkpoint back = load_checkpoint(path);
  CHECK(checkpoints_bitwise_equal(ckpt, back));
  CHECK(back.config_text == ckpt.config_text);
  std::filesystem::remove(path);
}

TEST_CASE("save/load/resume equals uninterrupted training") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  cfg.epochs = 4;
  Checkpoint straight = train(ds, cfg, "");

  TrainConfig head = cfg;
  head.epochs = 2;
  Checkpoint part = train(ds, head, "");
  auto path = (std::filesystem::temp_directory_path() / "tmpa_resume_test.tmpa").string();
  save_checkpoint(part, path);
  Checkpoint loaded = load_checkpoint(path);
  Checkpoint resumed = train(ds, cfg, "", &loaded);
  CHECK(checkpoints_bitwise_equal(straight, resumed));
  std::filesystem::remove(path);
}

TEST_CASE("training writes the loss CSV with the documented columns") {
  SynthDataset ds = generate(micro_spec());
  TrainConfig cfg = micro_cfg();
  cfg.epochs = 1;
  auto dir = (std::filesystem::temp_directory_path() / "tmpa_train_out").string();
  std::filesystem::remove_all(dir);
  train(ds, cfg, dir);
  std::ifstream csv(dir + "/loss.csv");
  REQUIRE(csv.good());
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,step,l_id,l_wrt,l_mss,l_msi,l_mft,l_total");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.epochs * cfg.steps_per_epoch);
  CHECK(std::filesystem::exists(dir + "/final.tmpa"));
  CHECK(std::filesystem::exists(dir + "/ckpt_epoch_001.tmpa"));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
