#include "tmpa/gradsuite.hpp"

#include "tmpa/trainer.hpp"

namespace tmpa {

namespace {

Tensor rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

void run_case(GradSuiteResult& result, const std::string& name, const GradCheckFn& fn,
              std::vector<GradCheckInput> inputs) {
  GradCheckReport report = grad_check(fn, std::move(inputs));
  double worst = 0.0;
  for (const auto& e : report.entries) worst = std::max(worst, e.max_rel_err);
  result.items.push_back({name, worst, report.passed});
}

// Full objective on a 2-identity micro-batch with a reduced-width model.
void run_total_loss_case(GradSuiteResult& result) {
  ModelConfig mc;
  mc.widths = {4, 6, 8};
  mc.attn_dim = 8;
  mc.num_classes = 2;
  Model model = Model::init(mc, 17);

  SynthSpec spec;
  spec.num_train_ids = 2;
  spec.num_test_ids = 2;
  spec.imgs_per_id = 2;
  spec.height = 24;
  spec.width = 12;
  spec.seed = 23;
  spec.noise_sigma = 0.02;
  SynthDataset ds = generate(spec);

  TrainConfig cfg;
  cfg.pk_p = 2;
  cfg.pk_k = 1;
  cfg.patch_size = 6;
  cfg.seed = 23;
  Rng rng(derive_seed(cfg.seed, {hash_string("gradsuite")}));
  Batch batch = pk_sample(ds, cfg.pk_p, cfg.pk_k, rng);

  // Pre-mix the batch once so the checked function is a pure map from
  // parameters to the loss.
  RegionMap map = partition_regions(spec.height, spec.width, cfg.patch_size, cfg.phi1, cfg.phi2);
  std::vector<Tensor> mv, mi, ov, oi;
  const int64_t stride = static_cast<int64_t>(3) * spec.height * spec.width;
  for (int j = 0; j < batch.x_v.dim(0); ++j) {
    Tensor iv(Shape{3, spec.height, spec.width});
    Tensor ii(Shape{3, spec.height, spec.width});
    for (int64_t e = 0; e < stride; ++e) {
      iv[e] = batch.x_v[j * stride + e];
      ii[e] = batch.x_i[j * stride + e];
    }
    PatchMask mask_v = sample_masks(map, cfg.ratios, rng);
    PatchMask mask_i = sample_masks(map, cfg.ratios, rng);
    auto [a, b] = mix_pair({iv, ii, batch.labels[static_cast<size_t>(j)]}, mask_v, mask_i);
    mv.push_back(std::move(a));
    mi.push_back(std::move(b));
    ov.push_back(std::move(iv));
    oi.push_back(std::move(ii));
  }
  Tensor x_hat = concat_mixed(mv, mi);
  Tensor x_v(batch.x_v.shape()), x_i(batch.x_i.shape());
  for (int j = 0; j < batch.x_v.dim(0); ++j)
    for (int64_t e = 0; e < stride; ++e) {
      x_v[j * stride + e] = ov[static_cast<size_t>(j)][e];
      x_i[j * stride + e] = oi[static_cast<size_t>(j)][e];
    }

  std::vector<GradCheckInput> inputs;
  assemble_vars(model, true, [&](const std::string& name, Tensor& p) {
    inputs.push_back({name, p});
    return Value{};
  });

  auto fn = [&](Tape& t, const std::vector<Value>& in) {
    size_t cursor = 0;
    ModelVars vars = assemble_vars(model, true, [&](const std::string&, Tensor&) {
      return in[cursor++];
    });
    Value xh = t.leaf(x_hat);
    Value xv = t.leaf(x_v);
    Value xi = t.leaf(x_i);
    return forward_losses(t, model, vars, xh, xv, xi, batch.labels, cfg, true).l_total;
  };
  run_case(result, "L_total micro-batch (all parameters)", fn, std::move(inputs));
}

}  // namespace

GradSuiteResult run_gradient_suite() {
  GradSuiteResult result;
  Rng rng(41);

  run_case(result, "conv2d 3x3 stride 1",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::sum(t, ops::mul(t, ops::conv2d(t, in[0], in[1], 1, 1),
                                         ops::conv2d(t, in[0], in[1], 1, 1)));
           },
           {{"input", rand_t({2, 2, 5, 4}, rng)}, {"kernel", rand_t({3, 2, 3, 3}, rng)}});
  run_case(result, "conv2d 3x3 stride 2",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::sum(t, ops::conv2d(t, in[0], in[1], 2, 1));
           },
           {{"input", rand_t({1, 2, 6, 5}, rng)}, {"kernel", rand_t({2, 2, 3, 3}, rng)}});
  run_case(result, "conv2d 1x1",
           [](Tape& t, const std::vector<Value>& in) {
             Value y = ops::conv2d(t, in[0], in[1], 1, 0);
             return ops::sum(t, ops::mul(t, y, y));
           },
           {{"input", rand_t({2, 3, 3, 3}, rng)}, {"kernel", rand_t({2, 3, 1, 1}, rng)}});
  run_case(result, "matmul",
           [](Tape& t, const std::vector<Value>& in) {
             Value y = ops::matmul(t, in[0], in[1]);
             return ops::sum(t, ops::mul(t, y, y));
           },
           {{"a", rand_t({3, 4}, rng)}, {"b", rand_t({4, 2}, rng)}});
  run_case(result, "bmm + transpose_last2",
           [](Tape& t, const std::vector<Value>& in) {
             Value y = ops::bmm(t, in[0], ops::transpose_last2(t, in[1]));
             return ops::sum(t, ops::mul(t, y, y));
           },
           {{"a", rand_t({2, 3, 4}, rng)}, {"b", rand_t({2, 3, 4}, rng)}});
  run_case(result, "softmax",
           [](Tape& t, const std::vector<Value>& in) {
             Value y = ops::softmax(t, in[0]);
             return ops::sum(t, ops::mul(t, y, in[0]));
           },
           {{"x", rand_t({4, 5}, rng)}});
  run_case(result, "batch_norm [B,C] train",
           [](Tape& t, const std::vector<Value>& in) {
             BnState st(3);
             Value y = ops::batch_norm(t, in[0], in[1], in[2], st, true);
             return ops::sum(t, ops::mul(t, y, y));
           },
           {{"x", rand_t({5, 3}, rng)},
            {"gamma", rand_t({3}, rng, 0.5, 1.5)},
            {"beta", rand_t({3}, rng)}});
  run_case(result, "batch_norm [B,C,H,W] train",
           [](Tape& t, const std::vector<Value>& in) {
             BnState st(2);
             Value y = ops::batch_norm(t, in[0], in[1], in[2], st, true);
             return ops::sum(t, ops::mul(t, y, y));
           },
           {{"x", rand_t({3, 2, 2, 3}, rng)},
            {"gamma", rand_t({2}, rng, 0.5, 1.5)},
            {"beta", rand_t({2}, rng)}});
  run_case(result, "cross_entropy",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::cross_entropy(t, in[0], {1, 0, 2});
           },
           {{"logits", rand_t({3, 4}, rng, -2.0, 2.0)}});
  run_case(result, "l2_distance",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::sum(t, ops::l2_distance(t, in[0], in[1]));
           },
           {{"a", rand_t({3, 4}, rng)}, {"b", rand_t({3, 4}, rng)}});
  run_case(result, "pairwise_l2",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::sum(t, ops::pairwise_l2(t, in[0]));
           },
           {{"x", rand_t({4, 3}, rng)}});
  run_case(result, "relu / scale / add_const",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::sum(t, ops::relu(t, ops::add_const(t, ops::scale(t, in[0], -1.3), 0.11)));
           },
           {{"x", rand_t({4, 4}, rng)}});
  run_case(result, "add / sub / mul",
           [](Tape& t, const std::vector<Value>& in) {
             Value y = ops::mul(t, ops::add(t, in[0], in[1]), ops::sub(t, in[0], in[1]));
             return ops::sum(t, y);
           },
           {{"a", rand_t({3, 3}, rng)}, {"b", rand_t({3, 3}, rng)}});
  run_case(result, "global_avg_pool / concat / slice",
           [](Tape& t, const std::vector<Value>& in) {
             Value cat = ops::concat_channels(t, in[0], in[1]);
             Value batch = ops::concat_batch(t, cat, cat);
             Value sl = ops::slice_batch(t, batch, 1, 3);
             Value p = ops::global_avg_pool(t, sl);
             return ops::sum(t, ops::mul(t, p, p));
           },
           {{"a", rand_t({2, 2, 2, 3}, rng)}, {"b", rand_t({2, 1, 2, 3}, rng)}});
  run_case(result, "reshape / nchw<->nlc",
           [](Tape& t, const std::vector<Value>& in) {
             Value y = ops::nlc_to_nchw(t, ops::nchw_to_nlc(t, in[0]), 2, 3);
             Value r = ops::reshape(t, y, {2, 12});
             return ops::sum(t, ops::mul(t, r, r));
           },
           {{"x", rand_t({2, 2, 2, 3}, rng)}});
  run_case(result, "add_bias",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::cross_entropy(t, ops::add_bias(t, in[0], in[1]), {2, 0});
           },
           {{"x", rand_t({2, 3}, rng)}, {"bias", rand_t({3}, rng)}});
  run_case(result, "group_mean / hinge_sum",
           [](Tape& t, const std::vector<Value>& in) {
             Value gm = ops::group_mean(t, in[0], {0, 1, 0, 1, 2, 2}, 3);
             return ops::hinge_sum(t, ops::add_const(t, gm, -0.02));
           },
           {{"x", rand_t({6}, rng, 0.3, 1.0)}});
  run_case(result, "wrt_loss",
           [](Tape& t, const std::vector<Value>& in) {
             return ops::wrt_loss(t, ops::pairwise_l2(t, in[0]), {0, 0, 1, 1, 2, 2});
           },
           {{"x", rand_t({6, 4}, rng)}});
  run_case(result, "sum (constant gradient)",
           [](Tape& t, const std::vector<Value>& in) { return ops::sum(t, in[0]); },
           {{"x", rand_t({7}, rng)}});

  run_total_loss_case(result);

  result.passed = true;
  for (const auto& item : result.items)
    if (!item.passed) result.passed = false;
  return result;
}

void print_gradient_suite(const GradSuiteResult& r, std::ostream& out) {
  for (const auto& item : r.items) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[%s] %-42s max_rel_err=%.3e\n",
                  item.passed ? "PASS" : "FAIL", item.name.c_str(), item.max_rel_err);
    out << buf;
  }
  out << (r.passed ? "gradient suite: all checks passed\n" : "gradient suite: FAILURES\n");
}

}  // namespace tmpa
