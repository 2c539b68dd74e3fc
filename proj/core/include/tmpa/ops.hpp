#pragma once

#include <vector>

#include "tmpa/tape.hpp"

namespace tmpa {

// Batch-norm running statistics. Owned by the model, updated as a side
// effect of training-mode forwards, consumed in eval mode.
struct BnState {
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BnState(int channels = 0)
      : running_mean(Shape{channels}), running_var(Tensor::full(Shape{channels}, 1.0)) {}
  int channels() const { return running_mean.dim(0); }
};

namespace ops {

// 2-D convolution, NCHW. kernel [Co,Ci,k,k], k in {1,3}, stride in {1,2},
// zero padding. Output spatial size floor((H+2p-k)/s)+1.
Value conv2d(Tape& t, Value input, Value kernel, int stride, int padding);

Value matmul(Tape& t, Value a, Value b);          // [M,K]x[K,N] -> [M,N]
Value bmm(Tape& t, Value a, Value b);             // [B,M,K]x[B,K,N] -> [B,M,N]
Value transpose_last2(Tape& t, Value x);          // [B,M,N] -> [B,N,M]
Value softmax(Tape& t, Value x);                  // along last dim, max-stabilized

// Normalizes over all dims but dim 1. x is [B,C] or [B,C,H,W]. Training mode
// needs B >= 2 and updates `state`; eval mode reads it.
Value batch_norm(Tape& t, Value x, Value gamma, Value beta, BnState& state, bool training);

Value cross_entropy(Tape& t, Value logits, const std::vector<int>& labels);  // -> scalar
Value l2_distance(Tape& t, Value a, Value b);     // [B,D]x[B,D] -> [B], rowwise
Value pairwise_l2(Tape& t, Value x);              // [B,D] -> [B,B]

Value relu(Tape& t, Value x);
Value add(Tape& t, Value a, Value b);
Value sub(Tape& t, Value a, Value b);
Value mul(Tape& t, Value a, Value b);             // elementwise
Value scale(Tape& t, Value x, double c);
Value add_const(Tape& t, Value x, double c);
Value sum(Tape& t, Value x);                      // -> scalar
Value global_avg_pool(Tape& t, Value x);          // [B,C,H,W] -> [B,C]

Value concat_batch(Tape& t, Value a, Value b);    // along dim 0
Value concat_channels(Tape& t, Value a, Value b); // along dim 1, 4-d
Value slice_batch(Tape& t, Value x, int begin, int end);
Value reshape(Tape& t, Value x, Shape shape);
Value nchw_to_nlc(Tape& t, Value x);              // [B,C,H,W] -> [B,HW,C]
Value nlc_to_nchw(Tape& t, Value x, int h, int w);

Value add_bias(Tape& t, Value x, Value bias);     // [B,P] + [P]

// Per-group mean of a vector: x [B], groups[b] in [0,num_groups). Every
// group must be non-empty.
Value group_mean(Tape& t, Value x, const std::vector<int>& groups, int num_groups);

Value hinge_sum(Tape& t, Value x);                // sum_i max(x_i, 0) -> scalar

// Weighted regularization triplet loss over a [B,B] distance matrix.
// Per anchor: positives/negatives weighted by softmax of their distances,
// loss = softplus(weighted_pos - weighted_neg), averaged over anchors.
// Every anchor needs >=1 positive (self excluded) and >=1 negative.
Value wrt_loss(Tape& t, Value dist, const std::vector<int>& labels);

}  // namespace ops
}  // namespace tmpa
