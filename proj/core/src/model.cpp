#include "tmpa/model.hpp"

#include <cmath>

namespace tmpa {

namespace {

Tensor he_normal(Shape shape, int fan_in, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = stddev * rng.normal();
  return t;
}

ConvBnParams init_conv_bn(int ci, int co, int k, uint64_t seed, const std::string& name) {
  ConvBnParams p;
  p.w = he_normal({co, ci, k, k}, ci * k * k, derive_seed(seed, name + ".w"));
  p.gamma = Tensor::full({co}, 1.0);
  p.beta = Tensor({co});
  p.bn = BnState(co);
  return p;
}

ClassifierParams init_classifier(int d, int classes, uint64_t seed, const std::string& name) {
  ClassifierParams p;
  p.gamma = Tensor::full({d}, 1.0);
  p.beta = Tensor({d});
  p.bn = BnState(d);
  p.w = he_normal({d, classes}, d, derive_seed(seed, name + ".w"));
  p.b = Tensor({classes});
  return p;
}

}  // namespace

Model Model::init(const ModelConfig& cfg, uint64_t seed) {
  TMPA_CHECK(cfg.attn_dim == cfg.widths[2],
             "attention dimension must equal the extractor output width: the specific-feature "
             "classifiers serve both real and generated features");
  Model m;
  m.cfg = cfg;
  auto init_extractor = [&](const std::string& name) {
    ExtractorParams e;
    int ci = cfg.in_channels;
    for (int b = 0; b < 3; ++b) {
      const int co = cfg.widths[static_cast<size_t>(b)];
      e.blocks[static_cast<size_t>(b)] =
          init_conv_bn(ci, co, 3, seed, name + ".block" + std::to_string(b));
      ci = co;
    }
    return e;
  };
  m.e_sh = init_extractor("e_sh");
  m.e_sp_v = init_extractor("e_sp_v");
  m.e_sp_i = init_extractor("e_sp_i");

  const int c = cfg.feature_channels();
  const int d = cfg.attn_dim;
  m.w_q_v = he_normal({d, c, 1, 1}, c, derive_seed(seed, "proj.q_v.w"));
  m.w_q_i = he_normal({d, c, 1, 1}, c, derive_seed(seed, "proj.q_i.w"));
  m.w_k = he_normal({d, c, 1, 1}, c, derive_seed(seed, "proj.k.w"));
  m.w_v = he_normal({d, c, 1, 1}, c, derive_seed(seed, "proj.v.w"));

  auto init_branch = [&](const std::string& name, int ci, int co) {
    BranchParams b;
    b.blocks[0] = init_conv_bn(ci, co, 3, seed, name + ".block0");
    b.blocks[1] = init_conv_bn(co, co, 3, seed, name + ".block1");
    return b;
  };
  m.conv_v = init_branch("conv_v", d, d);
  m.conv_i = init_branch("conv_i", d, d);
  m.conv_sh = init_branch("conv_sh", d, 2 * d);

  m.cls_v = init_classifier(d, cfg.num_classes, seed, "cls_v");
  m.cls_i = init_classifier(d, cfg.num_classes, seed, "cls_i");
  m.cls = init_classifier(2 * d, cfg.num_classes, seed, "cls");
  return m;
}

void Model::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
  auto walk_conv_bn = [&](const std::string& name, ConvBnParams& p) {
    fn(name + ".w", p.w);
    fn(name + ".gamma", p.gamma);
    fn(name + ".beta", p.beta);
  };
  auto walk_extractor = [&](const std::string& name, ExtractorParams& e) {
    for (int b = 0; b < 3; ++b)
      walk_conv_bn(name + ".block" + std::to_string(b), e.blocks[static_cast<size_t>(b)]);
  };
  auto walk_branch = [&](const std::string& name, BranchParams& e) {
    for (int b = 0; b < 2; ++b)
      walk_conv_bn(name + ".block" + std::to_string(b), e.blocks[static_cast<size_t>(b)]);
  };
  auto walk_classifier = [&](const std::string& name, ClassifierParams& p) {
    fn(name + ".gamma", p.gamma);
    fn(name + ".beta", p.beta);
    fn(name + ".w", p.w);
    fn(name + ".b", p.b);
  };
  walk_extractor("e_sh", e_sh);
  walk_extractor("e_sp_v", e_sp_v);
  walk_extractor("e_sp_i", e_sp_i);
  fn("proj.q_v.w", w_q_v);
  fn("proj.q_i.w", w_q_i);
  fn("proj.k.w", w_k);
  fn("proj.v.w", w_v);
  walk_branch("conv_v", conv_v);
  walk_branch("conv_i", conv_i);
  walk_branch("conv_sh", conv_sh);
  walk_classifier("cls_v", cls_v);
  walk_classifier("cls_i", cls_i);
  walk_classifier("cls", cls);
}

void Model::for_each_bn(const std::function<void(const std::string&, BnState&)>& fn) {
  auto walk_extractor = [&](const std::string& name, ExtractorParams& e) {
    for (int b = 0; b < 3; ++b)
      fn(name + ".block" + std::to_string(b) + ".bn", e.blocks[static_cast<size_t>(b)].bn);
  };
  auto walk_branch = [&](const std::string& name, BranchParams& e) {
    for (int b = 0; b < 2; ++b)
      fn(name + ".block" + std::to_string(b) + ".bn", e.blocks[static_cast<size_t>(b)].bn);
  };
  walk_extractor("e_sh", e_sh);
  walk_extractor("e_sp_v", e_sp_v);
  walk_extractor("e_sp_i", e_sp_i);
  walk_branch("conv_v", conv_v);
  walk_branch("conv_i", conv_i);
  walk_branch("conv_sh", conv_sh);
  fn("cls_v.bn", cls_v.bn);
  fn("cls_i.bn", cls_i.bn);
  fn("cls.bn", cls.bn);
}

ModelVars assemble_vars(Model& m, bool with_mft,
                        const std::function<Value(const std::string&, Tensor&)>& provide) {
  ModelVars v;
  v.has_mft = with_mft;
  auto leaf = [&](const std::string& name, Tensor& p) {
    Value val = provide(name, p);
    v.named.emplace_back(name, val);
    return val;
  };
  auto conv_bn = [&](const std::string& name, ConvBnParams& p) -> ConvBnVars {
    return {leaf(name + ".w", p.w), leaf(name + ".gamma", p.gamma), leaf(name + ".beta", p.beta)};
  };
  auto extractor = [&](const std::string& name, ExtractorParams& e) {
    ExtractorVars ev;
    for (int b = 0; b < 3; ++b)
      ev.blocks[static_cast<size_t>(b)] =
          conv_bn(name + ".block" + std::to_string(b), e.blocks[static_cast<size_t>(b)]);
    return ev;
  };
  auto branch = [&](const std::string& name, BranchParams& e) {
    BranchVars bv;
    for (int b = 0; b < 2; ++b)
      bv.blocks[static_cast<size_t>(b)] =
          conv_bn(name + ".block" + std::to_string(b), e.blocks[static_cast<size_t>(b)]);
    return bv;
  };
  auto classifier = [&](const std::string& name, ClassifierParams& p) -> ClassifierVars {
    return {leaf(name + ".gamma", p.gamma), leaf(name + ".beta", p.beta), leaf(name + ".w", p.w),
            leaf(name + ".b", p.b)};
  };
  v.e_sh = extractor("e_sh", m.e_sh);
  v.w_v = leaf("proj.v.w", m.w_v);
  v.conv_sh = branch("conv_sh", m.conv_sh);
  v.cls = classifier("cls", m.cls);
  if (with_mft) {
    v.e_sp_v = extractor("e_sp_v", m.e_sp_v);
    v.e_sp_i = extractor("e_sp_i", m.e_sp_i);
    v.w_q_v = leaf("proj.q_v.w", m.w_q_v);
    v.w_q_i = leaf("proj.q_i.w", m.w_q_i);
    v.w_k = leaf("proj.k.w", m.w_k);
    v.conv_v = branch("conv_v", m.conv_v);
    v.conv_i = branch("conv_i", m.conv_i);
    v.cls_v = classifier("cls_v", m.cls_v);
    v.cls_i = classifier("cls_i", m.cls_i);
  }
  return v;
}

ModelVars make_vars(Tape& t, Model& m, bool requires_grad, bool with_mft) {
  return assemble_vars(m, with_mft, [&](const std::string&, Tensor& p) {
    return t.leaf(p, requires_grad);
  });
}

Value extractor_forward(Tape& t, const ExtractorVars& v, ExtractorParams& p, Value x,
                        bool training) {
  Value h = x;
  for (int b = 0; b < 3; ++b) {
    h = ops::conv2d(t, h, v.blocks[static_cast<size_t>(b)].w, 2, 1);
    h = ops::batch_norm(t, h, v.blocks[static_cast<size_t>(b)].gamma,
                        v.blocks[static_cast<size_t>(b)].beta, p.blocks[static_cast<size_t>(b)].bn,
                        training);
    h = ops::relu(t, h);
  }
  return h;
}

Value branch_forward(Tape& t, const BranchVars& v, BranchParams& p, Value x, bool training) {
  Value h = x;
  for (int b = 0; b < 2; ++b) {
    h = ops::conv2d(t, h, v.blocks[static_cast<size_t>(b)].w, 1, 1);
    h = ops::batch_norm(t, h, v.blocks[static_cast<size_t>(b)].gamma,
                        v.blocks[static_cast<size_t>(b)].beta, p.blocks[static_cast<size_t>(b)].bn,
                        training);
    h = ops::relu(t, h);
  }
  return h;
}

Value classifier_logits(Tape& t, const ClassifierVars& v, ClassifierParams& p, Value pooled,
                        bool training) {
  Value normed = ops::batch_norm(t, pooled, v.gamma, v.beta, p.bn, training);
  return ops::add_bias(t, ops::matmul(t, normed, v.w), v.b);
}

}  // namespace tmpa
