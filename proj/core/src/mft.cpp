#include "tmpa/mft.hpp"

#include <cmath>

namespace tmpa {

Projections project_qkv(Tape& t, const ModelVars& vars, const FeatureBundle& b) {
  TMPA_CHECK(vars.has_mft, "projections need the transfer stack mirrored onto the tape");
  Projections p;
  p.n = t.val(b.f_sp_v).dim(0);
  p.q_v = ops::conv2d(t, b.f_sp_v, vars.w_q_v, 1, 0);
  p.q_i = ops::conv2d(t, b.f_sp_i, vars.w_q_i, 1, 0);
  p.k_sh = ops::conv2d(t, b.f_sh, vars.w_k, 1, 0);
  p.v_sh = ops::conv2d(t, b.f_sh, vars.w_v, 1, 0);
  return p;
}

Attention cross_attention(Tape& t, Value q, Value k, Value v) {
  const Tensor& qv = t.val(q);
  TMPA_CHECK(qv.ndim() == 4, "attention operands must be [N,d,H,W]");
  TMPA_CHECK(t.val(k).shape() == qv.shape() && t.val(v).shape() == qv.shape(),
             "attention operands must share shapes");
  const int d = qv.dim(1), h = qv.dim(2), w = qv.dim(3);
  Value qn = ops::nchw_to_nlc(t, q);  // [N,L,d]
  Value kn = ops::nchw_to_nlc(t, k);
  Value vn = ops::nchw_to_nlc(t, v);
  Value scores = ops::bmm(t, qn, ops::transpose_last2(t, kn));           // [N,L,L]
  Value weights = ops::softmax(t, ops::scale(t, scores, 1.0 / std::sqrt(static_cast<double>(d))));
  Value out = ops::nlc_to_nchw(t, ops::bmm(t, weights, vn), h, w);
  return {out, weights};
}

TransferOut transfer(Tape& t, const Projections& p) {
  const int n = p.n;
  Value k_vis = ops::slice_batch(t, p.k_sh, 0, n);
  Value k_inf = ops::slice_batch(t, p.k_sh, n, 2 * n);
  Value v_vis = ops::slice_batch(t, p.v_sh, 0, n);
  Value v_inf = ops::slice_batch(t, p.v_sh, n, 2 * n);
  TransferOut out;
  out.f_ca_v = cross_attention(t, p.q_i, k_inf, v_inf).out;
  out.f_ca_i = cross_attention(t, p.q_v, k_vis, v_vis).out;
  return out;
}

ConvBranchOut conv_branches(Tape& t, Model& m, const ModelVars& vars, const Projections& p,
                            bool training) {
  ConvBranchOut out;
  out.f_conv_v = branch_forward(t, vars.conv_v, m.conv_v, p.q_v, training);
  out.f_conv_i = branch_forward(t, vars.conv_i, m.conv_i, p.q_i, training);
  out.f_conv_sh = branch_forward(t, vars.conv_sh, m.conv_sh, p.v_sh, training);
  return out;
}

std::pair<Value, Value> compose_specific(Tape& t, const TransferOut& att, Value f_conv_v,
                                         Value f_conv_i) {
  return {ops::add(t, att.f_ca_v, f_conv_v), ops::add(t, att.f_ca_i, f_conv_i)};
}

Value fuse_complete(Tape& t, const FeatureBundle& b, Value gen_v, Value gen_i, Value f_conv_sh,
                    double lambda2, double lambda3) {
  TMPA_CHECK(lambda2 >= 0.0 && lambda3 >= 0.0, "fusion weights must be nonnegative");
  const int n = t.val(b.f_sp_v).dim(0);
  TMPA_CHECK(t.val(f_conv_sh).dim(0) == 2 * n, "shared semantic branch must cover both halves");
  TMPA_CHECK(t.val(b.f_sp_v).dim(1) == t.val(gen_i).dim(1),
             "real and generated specific features must share the channel count");
  Value sh_vis = ops::slice_batch(t, f_conv_sh, 0, n);
  Value sh_inf = ops::slice_batch(t, f_conv_sh, n, 2 * n);
  Value vis_half =
      ops::add(t, ops::scale(t, ops::concat_channels(t, b.f_sp_v, gen_i), lambda3), sh_vis);
  Value inf_half =
      ops::add(t, ops::scale(t, ops::concat_channels(t, gen_v, b.f_sp_i), lambda2), sh_inf);
  return ops::concat_batch(t, vis_half, inf_half);
}

Value mft_loss(Tape& t, Model& m, const ModelVars& vars, Value gen_v, Value gen_i,
               const std::vector<int>& labels, bool training) {
  Value logits_v =
      classifier_logits(t, vars.cls_v, m.cls_v, ops::global_avg_pool(t, gen_v), training);
  Value logits_i =
      classifier_logits(t, vars.cls_i, m.cls_i, ops::global_avg_pool(t, gen_i), training);
  Value ce_v = ops::cross_entropy(t, logits_v, labels);
  Value ce_i = ops::cross_entropy(t, logits_i, labels);
  return ops::add(t, ce_v, ce_i);
}

}  // namespace tmpa
