#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "tmpa/evalkit.hpp"
#include "tmpa/trainer.hpp"

using namespace tmpa;
using testutil::random_tensor;

namespace {

// Brute-force average precision, independent of cmc_map's incremental pass.
double ap_oracle(const std::vector<double>& dist, const std::vector<int>& gallery_labels,
                 int query_label) {
  const int ng = static_cast<int>(dist.size());
  std::vector<int> order(static_cast<size_t>(ng));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (dist[static_cast<size_t>(a)] != dist[static_cast<size_t>(b)])
      return dist[static_cast<size_t>(a)] < dist[static_cast<size_t>(b)];
    return a < b;
  });
  double ap = 0.0;
  int total_relevant = 0;
  for (int g : gallery_labels)
    if (g == query_label) ++total_relevant;
  for (int r = 1; r <= ng; ++r) {
    if (gallery_labels[static_cast<size_t>(order[static_cast<size_t>(r - 1)])] != query_label)
      continue;
    int rel_in_prefix = 0;
    for (int j = 0; j < r; ++j)
      if (gallery_labels[static_cast<size_t>(order[static_cast<size_t>(j)])] == query_label)
        ++rel_in_prefix;
    ap += static_cast<double>(rel_in_prefix) / r;
  }
  return ap / total_relevant;
}

EmbeddingSet make_set(Tensor vectors, std::vector<int> labels, Modality m) {
  EmbeddingSet s;
  s.vectors = std::move(vectors);
  s.labels = std::move(labels);
  s.modality = m;
  return s;
}

SynthSpec micro_spec() {
  SynthSpec spec;
  spec.num_train_ids = 4;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  spec.height = 24;
  spec.width = 12;
  spec.seed = 7;
  return spec;
}

}  // namespace

TEST_SUITE("evalkit") {

TEST_CASE("embeddings are unit-norm, 2d-wide and bitwise reproducible") {
  SynthDataset ds = generate(micro_spec());
  ModelConfig mc;
  mc.num_classes = 4;
  Model m = Model::init(mc, 11);
  auto queries = ds.select(Split::query, Modality::infrared);
  EmbeddingSet a = embed(m, true, 0.25, 0.25, queries, Modality::infrared);
  EmbeddingSet b = embed(m, true, 0.25, 0.25, queries, Modality::infrared);
  CHECK(a.vectors.dim(1) == 128);  // 2d complete-feature channels
  CHECK(bitwise_equal(a.vectors, b.vectors));
  for (int i = 0; i < a.vectors.dim(0); ++i) {
    double n = 0.0;
    for (int e = 0; e < a.vectors.dim(1); ++e) n += a.vectors.at2(i, e) * a.vectors.at2(i, e);
    CHECK(std::fabs(std::sqrt(n) - 1.0) < 1e-9);
  }
  // multithreaded extraction gives the identical answer
  EmbeddingSet c = embed(m, true, 0.25, 0.25, queries, Modality::infrared, 4);
  CHECK(bitwise_equal(a.vectors, c.vectors));
}

TEST_CASE("embed without the transfer stack uses the shared branch only") {
  SynthDataset ds = generate(micro_spec());
  ModelConfig mc;
  mc.num_classes = 4;
  Model m = Model::init(mc, 11);
  auto queries = ds.select(Split::query, Modality::visible);
  EmbeddingSet a = embed(m, false, 0.25, 0.25, queries, Modality::visible);
  CHECK(a.vectors.dim(1) == 128);
  // changing the specific extractor must not affect baseline embeddings
  Model m2 = m;
  for (int64_t i = 0; i < m2.e_sp_v.blocks[0].w.size(); ++i) m2.e_sp_v.blocks[0].w[i] += 1.0;
  EmbeddingSet b = embed(m2, false, 0.25, 0.25, queries, Modality::visible);
  CHECK(bitwise_equal(a.vectors, b.vectors));
}

TEST_CASE("embed rejects mismatched modalities") {
  SynthDataset ds = generate(micro_spec());
  ModelConfig mc;
  mc.num_classes = 4;
  Model m = Model::init(mc, 11);
  auto queries = ds.select(Split::query, Modality::visible);
  CHECK_THROWS_AS(embed(m, true, 0.25, 0.25, queries, Modality::infrared), ContractViolation);
}

TEST_CASE("perfect retrieval gives CMC[1]=1 and mAP=1") {
  Tensor q(Shape{3, 2}, {1, 0, 0, 1, -1, 0});
  Tensor g(Shape{3, 2}, {1, 0, 0, 1, -1, 0});
  Metrics m = cmc_map(make_set(q, {0, 1, 2}, Modality::visible),
                      make_set(g, {0, 1, 2}, Modality::infrared));
  CHECK(m.rank(1) == doctest::Approx(1.0));
  CHECK(m.map == doctest::Approx(1.0));
  CHECK(m.mode == "visible->infrared");
}

TEST_CASE("hand-ranked gallery of four: correct match at rank 3") {
  Tensor q(Shape{1, 1}, {0.0});
  Tensor g(Shape{4, 1}, {1.0, 2.0, 3.0, 4.0});
  Metrics m = cmc_map(make_set(q, {7}, Modality::infrared),
                      make_set(g, {1, 2, 7, 3}, Modality::visible));
  REQUIRE(m.cmc.size() == 4);
  CHECK(m.cmc[0] == 0.0);
  CHECK(m.cmc[1] == 0.0);
  CHECK(m.cmc[2] == 1.0);
  CHECK(m.cmc[3] == 1.0);
  CHECK(m.map == doctest::Approx(1.0 / 3.0));
  CHECK(m.mode == "infrared->visible");
}

TEST_CASE("cmc is monotone nondecreasing") {
  Rng rng(3);
  Tensor q = random_tensor({6, 4}, rng);
  Tensor g = random_tensor({10, 4}, rng);
  std::vector<int> ql = {0, 1, 2, 0, 1, 2};
  std::vector<int> gl = {0, 0, 1, 1, 2, 2, 3, 3, 4, 4};
  Metrics m = cmc_map(make_set(q, ql, Modality::visible), make_set(g, gl, Modality::infrared));
  for (size_t k = 1; k < m.cmc.size(); ++k) CHECK(m.cmc[k] >= m.cmc[k - 1]);
  CHECK(m.cmc.back() <= 1.0);
  CHECK(m.map <= 1.0);
}

TEST_CASE("mAP matches the brute-force oracle on random instances") {
  Rng rng(17);
  for (int iter = 0; iter < 300; ++iter) {
    const int ng = 2 + rng.uniform_int(11);  // up to 12 gallery items
    const int nq = 1 + rng.uniform_int(6);
    const int d = 3;
    Tensor gv = random_tensor({ng, d}, rng);
    std::vector<int> gl(static_cast<size_t>(ng));
    for (int i = 0; i < ng; ++i) gl[static_cast<size_t>(i)] = rng.uniform_int(3);
    Tensor qv = random_tensor({nq, d}, rng);
    std::vector<int> ql(static_cast<size_t>(nq));
    for (int i = 0; i < nq; ++i)
      ql[static_cast<size_t>(i)] = gl[static_cast<size_t>(rng.uniform_int(ng))];
    Metrics m = cmc_map(make_set(qv, ql, Modality::visible), make_set(gv, gl, Modality::infrared));
    double expect = 0.0;
    for (int q = 0; q < nq; ++q) {
      std::vector<double> dist(static_cast<size_t>(ng));
      for (int g = 0; g < ng; ++g) {
        double s = 0.0;
        for (int e = 0; e < d; ++e) {
          double diff = qv.at2(q, e) - gv.at2(g, e);
          s += diff * diff;
        }
        dist[static_cast<size_t>(g)] = std::sqrt(s);
      }
      expect += ap_oracle(dist, gl, ql[static_cast<size_t>(q)]);
    }
    expect /= nq;
    CHECK(std::fabs(m.map - expect) < 1e-12);
  }
}

TEST_CASE("query identities must appear in the gallery") {
  Tensor q(Shape{1, 2}, {0, 0});
  Tensor g(Shape{2, 2}, {1, 0, 0, 1});
  CHECK_THROWS_AS(cmc_map(make_set(q, {5}, Modality::visible),
                          make_set(g, {1, 2}, Modality::infrared)),
                  ContractViolation);
  CHECK_THROWS_AS(cmc_map(make_set(q, {1}, Modality::visible),
                          make_set(g, {1, 2}, Modality::visible)),
                  ContractViolation);
}

TEST_CASE("metrics rendering") {
  Tensor q(Shape{1, 1}, {0.0});
  Tensor g(Shape{2, 1}, {1.0, 2.0});
  Metrics m = cmc_map(make_set(q, {0}, Modality::infrared), make_set(g, {0, 1}, Modality::visible));
  std::string table = render_metrics_table(m);
  CHECK(table.find("Rank-1") != std::string::npos);
  CHECK(table.find("mAP") != std::string::npos);
  std::string csv = metrics_csv(m);
  CHECK(csv.find("mode,rank1,rank10,rank20,map") == 0);
}

}  // TEST_SUITE
