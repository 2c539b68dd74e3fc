#pragma once

#include <array>
#include <functional>
#include <string>

#include "tmpa/ops.hpp"
#include "tmpa/rng.hpp"

namespace tmpa {

// Parameter containers for the whole network. Parameters are plain tensors
// owned here; every training step mirrors them onto a fresh tape as leaves.

struct ConvBnParams {
  Tensor w;      // [Co,Ci,k,k]
  Tensor gamma;  // [Co]
  Tensor beta;   // [Co]
  BnState bn;
};

struct ExtractorParams {
  std::array<ConvBnParams, 3> blocks;  // stride-2, halving resolution each
};

struct BranchParams {
  std::array<ConvBnParams, 2> blocks;  // stride-1, resolution preserving
};

struct ClassifierParams {
  Tensor gamma, beta;  // feature batch norm
  BnState bn;
  Tensor w;  // [D,P]
  Tensor b;  // [P]
};

struct ModelConfig {
  int in_channels = 3;
  std::array<int, 3> widths = {16, 32, 64};
  // Attention/projection dimension. Equal to the extractor output width so
  // the specific-feature classifiers accept both real (C-channel) and
  // generated (d-channel) features and Eq-style fusion is channel-consistent.
  int attn_dim = 64;
  int num_classes = 32;

  int feature_channels() const { return widths[2]; }
  int complete_channels() const { return 2 * attn_dim; }
};

struct Model {
  ModelConfig cfg;
  ExtractorParams e_sh, e_sp_v, e_sp_i;
  Tensor w_q_v, w_q_i, w_k, w_v;  // 1x1 projection kernels [d,C,1,1]
  BranchParams conv_v, conv_i, conv_sh;
  ClassifierParams cls_v, cls_i, cls;

  // Deterministic init: every parameter derives its own stream from
  // (seed, parameter name). Conv/FC weights are fan-in scaled normals,
  // biases zero, batch-norm gamma 1 / beta 0.
  static Model init(const ModelConfig& cfg, uint64_t seed);

  // Fixed iteration order; names are stable and used by checkpoints and the
  // optimizer state.
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_bn(const std::function<void(const std::string&, BnState&)>& fn);
};

// Per-tape leaf handles for the parameters a step actually uses. Parts left
// out (e.g. the whole MFE/MFT stack in the baseline configuration) keep
// invalid handles and receive no gradient.
struct ConvBnVars {
  Value w, gamma, beta;
};
struct ExtractorVars {
  std::array<ConvBnVars, 3> blocks;
};
struct BranchVars {
  std::array<ConvBnVars, 2> blocks;
};
struct ClassifierVars {
  Value gamma, beta, w, b;
};

struct ModelVars {
  ExtractorVars e_sh, e_sp_v, e_sp_i;
  Value w_q_v, w_q_i, w_k, w_v;
  BranchVars conv_v, conv_i, conv_sh;
  ClassifierVars cls_v, cls_i, cls;
  bool has_mft = false;
  // (parameter name, leaf) for every mirrored parameter, in mirror order;
  // drives the optimizer update.
  std::vector<std::pair<std::string, Value>> named;
};

// with_mft=false mirrors only the shared path (E_sh, W_V, Conv_sh, C).
ModelVars make_vars(Tape& t, Model& m, bool requires_grad, bool with_mft);

// Same traversal as make_vars with a custom handle provider; lets the
// gradient-check harness substitute externally created leaves.
ModelVars assemble_vars(Model& m, bool with_mft,
                        const std::function<Value(const std::string&, Tensor&)>& provide);

// Building blocks. `training` selects batch-norm mode; running stats live in
// the Model and are updated as a forward side effect in training mode.
Value extractor_forward(Tape& t, const ExtractorVars& v, ExtractorParams& p, Value x,
                        bool training);
Value branch_forward(Tape& t, const BranchVars& v, BranchParams& p, Value x, bool training);
Value classifier_logits(Tape& t, const ClassifierVars& v, ClassifierParams& p, Value pooled,
                        bool training);

}  // namespace tmpa
