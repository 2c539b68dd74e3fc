#pragma once

#include "tmpa/mfe.hpp"

namespace tmpa {

// Modality feature transfer. The shared 1x1 projections are evaluated once
// per batch; their outputs feed both the cross-attention path and the
// convolution branches.

struct Projections {
  Value q_v, q_i;    // [N,d,H',W'] from the specific features
  Value k_sh, v_sh;  // [2N,d,H',W'] from the shared features
  int n = 0;         // rows per modality half
};

Projections project_qkv(Tape& t, const ModelVars& vars, const FeatureBundle& b);

struct Attention {
  Value out;      // [N,d,H',W']
  Value weights;  // [N,L,L] softmax rows
};

// Single-head scaled dot-product attention per sample over spatial
// positions: sample j's query attends only to sample j's keys/values.
Attention cross_attention(Tape& t, Value q, Value k, Value v);

struct TransferOut {
  Value f_ca_v;  // generated visible-specific intermediate (from the infrared query)
  Value f_ca_i;  // generated infrared-specific intermediate (from the visible query)
};

// Symmetric transfer: each query attends over the shared features of its own
// source image (infrared query -> infrared half of f_sh), which keeps every
// generated feature computable from a single input image at inference.
TransferOut transfer(Tape& t, const Projections& p);

struct ConvBranchOut {
  Value f_conv_v;   // [N,d,...]
  Value f_conv_i;   // [N,d,...]
  Value f_conv_sh;  // [2N,2d,...]
};

ConvBranchOut conv_branches(Tape& t, Model& m, const ModelVars& vars, const Projections& p,
                            bool training);

// Generated specific features: attention output plus the semantic branch.
std::pair<Value, Value> compose_specific(Tape& t, const TransferOut& att, Value f_conv_v,
                                         Value f_conv_i);

// Modality-complete representation. Channel order is always
// (visible-specific || infrared-specific); the visible batch half pairs real
// visible features with generated infrared ones (weight lambda3), the
// infrared half pairs generated visible with real infrared (weight lambda2),
// and the shared semantic branch is added to both.
Value fuse_complete(Tape& t, const FeatureBundle& b, Value gen_v, Value gen_i, Value f_conv_sh,
                    double lambda2, double lambda3);

// Identity cross-entropy on the generated features, through the same
// classifier instances used by the modality-specific identity loss.
Value mft_loss(Tape& t, Model& m, const ModelVars& vars, Value gen_v, Value gen_i,
               const std::vector<int>& labels, bool training);

}  // namespace tmpa
