#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "tmpa/synthdata.hpp"

using namespace tmpa;

namespace {

double l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (int64_t e = 0; e < a.size(); ++e) {
    double d = a[e] - b[e];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("generation is bitwise deterministic") {
  SynthSpec spec;
  spec.num_train_ids = 4;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  SynthDataset a = generate(spec);
  SynthDataset b = generate(spec);
  REQUIRE(a.images.size() == b.images.size());
  for (size_t i = 0; i < a.images.size(); ++i)
    CHECK(bitwise_equal(a.images[i].pixels, b.images[i].pixels));
}

TEST_CASE("image counts follow the spec") {
  SynthSpec spec;  // defaults: 32 train + 16 test ids, 8 imgs/id/modality
  SynthDataset ds = generate(spec);
  CHECK(ds.images.size() == static_cast<size_t>((32 + 16) * 8 * 2));
  CHECK(ds.select_train(Modality::visible).size() == 256);
  CHECK(ds.select_train(Modality::infrared).size() == 256);
  auto qv = ds.select(Split::query, Modality::visible);
  auto gv = ds.select(Split::gallery, Modality::visible);
  CHECK(qv.size() == 64);
  CHECK(gv.size() == 64);
}

TEST_CASE("train and test identity sets are disjoint") {
  SynthSpec spec;
  spec.num_train_ids = 6;
  spec.num_test_ids = 3;
  spec.imgs_per_id = 2;
  SynthDataset ds = generate(spec);
  std::set<int> train, test;
  for (const auto& im : ds.images)
    (im.split == Split::train ? train : test).insert(im.identity);
  for (int id : train) CHECK(test.count(id) == 0);
  CHECK(train.size() == 6);
  CHECK(test.size() == 3);
}

TEST_CASE("all pixels are finite and inside [0,1]") {
  SynthSpec spec;
  spec.num_train_ids = 4;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  spec.noise_sigma = 0.3;  // exaggerated noise still clamps
  SynthDataset ds = generate(spec);
  for (const auto& im : ds.images) {
    CHECK(im.pixels.all_finite());
    for (int64_t e = 0; e < im.pixels.size(); ++e) {
      CHECK(im.pixels[e] >= 0.0);
      CHECK(im.pixels[e] <= 1.0);
    }
  }
}

TEST_CASE("noise_sigma=0 leaves only the modality transform and jitter") {
  SynthSpec spec;
  spec.num_train_ids = 3;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  spec.noise_sigma = 0.0;
  SynthDataset ds = generate(spec);
  for (const auto& im : ds.images) {
    auto jit = synthdetail::sample_jitter(spec.seed, im.identity, im.index, im.modality);
    Tensor canvas = synthdetail::render_canvas(spec, im.identity, im.index, jit);
    if (im.modality == Modality::infrared) {
      auto params = synthdetail::identity_params(spec.seed, im.identity);
      canvas = synthdetail::to_infrared(canvas, params.ir_offset);
    }
    CHECK(bitwise_equal(im.pixels, canvas));
  }
}

TEST_CASE("pk_sample composition and determinism") {
  SynthSpec spec;
  SynthDataset ds = generate(spec);
  Rng rng(77);
  Batch batch = pk_sample(ds, 8, 4, rng);
  CHECK(batch.x_v.shape() == Shape{32, 3, 48, 24});
  CHECK(batch.x_i.shape() == Shape{32, 3, 48, 24});
  REQUIRE(batch.labels.size() == 32);
  std::map<int, int> counts;
  for (int l : batch.labels) counts[l]++;
  CHECK(counts.size() == 8);
  for (auto& [id, c] : counts) {
    CHECK(c == 4);
    CHECK(id >= 0);
    CHECK(id < 32);
  }
  Rng rng2(77);
  Batch again = pk_sample(ds, 8, 4, rng2);
  CHECK(bitwise_equal(batch.x_v, again.x_v));
  CHECK(bitwise_equal(batch.x_i, again.x_i));
  CHECK(batch.labels == again.labels);
}

TEST_CASE("pk_sample rejects infeasible requests") {
  SynthSpec spec;
  spec.num_train_ids = 4;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  SynthDataset ds = generate(spec);
  Rng rng(1);
  CHECK_THROWS_AS(pk_sample(ds, 1, 2, rng), ContractViolation);  // triplets need negatives
  CHECK_THROWS_AS(pk_sample(ds, 5, 2, rng), ContractViolation);
  CHECK_THROWS_AS(pk_sample(ds, 2, 3, rng), ContractViolation);
}

TEST_CASE("raw-pixel nearest neighbour is above chance but imperfect across modalities") {
  SynthSpec spec;  // default desk-scale spec
  SynthDataset ds = generate(spec);
  auto queries = ds.select(Split::query, Modality::infrared);
  auto gallery = ds.select(Split::gallery, Modality::visible);
  REQUIRE(!queries.empty());
  REQUIRE(!gallery.empty());
  int hits = 0;
  for (const auto* q : queries) {
    double best = 1e300;
    int best_id = -1;
    for (const auto* g : gallery) {
      double d = l2(q->pixels, g->pixels);
      if (d < best) {
        best = d;
        best_id = g->identity;
      }
    }
    if (best_id == q->identity) ++hits;
  }
  double rank1 = static_cast<double>(hits) / static_cast<double>(queries.size());
  INFO("raw-pixel cross-modality rank-1 = ", rank1);
  CHECK(rank1 > 1.0 / 16.0);
  CHECK(rank1 < 0.9);
}

TEST_CASE("dataset directory round trip preserves structure and quantized pixels") {
  SynthSpec spec;
  spec.num_train_ids = 3;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  SynthDataset ds = generate(spec);
  std::string dir = (std::filesystem::temp_directory_path() / "tmpa_ds_test").string();
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  SynthDataset back = load_dataset(dir);
  REQUIRE(back.images.size() == ds.images.size());
  CHECK(back.spec.num_train_ids == 3);
  CHECK(back.spec.seed == ds.spec.seed);
  for (size_t i = 0; i < ds.images.size(); ++i) {
    CHECK(back.images[i].identity == ds.images[i].identity);
    CHECK(back.images[i].modality == ds.images[i].modality);
    CHECK(back.images[i].split == ds.images[i].split);
    CHECK(back.images[i].index == ds.images[i].index);
    CHECK(testutil::max_abs_diff(back.images[i].pixels, ds.images[i].pixels) <= 0.5 / 255.0 + 1e-12);
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
