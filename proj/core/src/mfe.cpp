#include "tmpa/mfe.hpp"

namespace tmpa {

std::pair<std::vector<int>, int> batch_groups(const std::vector<int>& labels) {
  std::vector<int> groups(labels.size());
  std::vector<int> seen;  // label -> group id, in first-occurrence order
  for (size_t i = 0; i < labels.size(); ++i) {
    int g = -1;
    for (size_t j = 0; j < seen.size(); ++j)
      if (seen[j] == labels[i]) {
        g = static_cast<int>(j);
        break;
      }
    if (g < 0) {
      g = static_cast<int>(seen.size());
      seen.push_back(labels[i]);
    }
    groups[i] = g;
  }
  return {groups, static_cast<int>(seen.size())};
}

FeatureBundle extract(Tape& t, Model& m, const ModelVars& vars, Value x_hat, Value x_v, Value x_i,
                      const std::vector<int>& labels, bool training) {
  const int n = t.val(x_v).dim(0);
  TMPA_CHECK(t.val(x_i).dim(0) == n, "visible/infrared batches must be index-aligned");
  TMPA_CHECK(t.val(x_hat).dim(0) == 2 * n, "mixed batch must hold both modality halves");
  TMPA_CHECK(static_cast<int>(labels.size()) == n, "labels must cover the batch");
  FeatureBundle b;
  b.labels = labels;
  b.f_sh = extractor_forward(t, vars.e_sh, m.e_sh, x_hat, training);
  b.f_sp_v = extractor_forward(t, vars.e_sp_v, m.e_sp_v, x_v, training);
  b.f_sp_i = extractor_forward(t, vars.e_sp_i, m.e_sp_i, x_i, training);
  b.f_sp = ops::concat_batch(t, b.f_sp_v, b.f_sp_i);
  return b;
}

Value mss_loss(Tape& t, const FeatureBundle& b, double rho) {
  TMPA_CHECK(rho >= 0.0, "margin must be nonnegative");
  Value pool_sh = ops::global_avg_pool(t, b.f_sh);
  Value pool_v = ops::global_avg_pool(t, b.f_sp_v);
  Value pool_i = ops::global_avg_pool(t, b.f_sp_i);
  Value pool_sp = ops::concat_batch(t, pool_v, pool_i);

  auto [groups, p] = batch_groups(b.labels);
  std::vector<int> groups2(groups);  // both batch halves carry the same labels
  groups2.insert(groups2.end(), groups.begin(), groups.end());

  Value d_sp_rows = ops::l2_distance(t, pool_v, pool_i);      // [N]
  Value d_ss_rows = ops::l2_distance(t, pool_sh, pool_sp);    // [2N]
  Value d_sp = ops::group_mean(t, d_sp_rows, groups, p);      // [P]
  Value d_ss = ops::group_mean(t, d_ss_rows, groups2, p);     // [P]
  // rho - d_sp - d_ss, hinged and summed over identities
  Value margin = ops::add_const(t, ops::scale(t, ops::add(t, d_sp, d_ss), -1.0), rho);
  return ops::hinge_sum(t, margin);
}

Value msi_loss(Tape& t, Model& m, const ModelVars& vars, const FeatureBundle& b, bool training) {
  Value logits_v =
      classifier_logits(t, vars.cls_v, m.cls_v, ops::global_avg_pool(t, b.f_sp_v), training);
  Value logits_i =
      classifier_logits(t, vars.cls_i, m.cls_i, ops::global_avg_pool(t, b.f_sp_i), training);
  Value ce_v = ops::cross_entropy(t, logits_v, b.labels);
  Value ce_i = ops::cross_entropy(t, logits_i, b.labels);
  return ops::add(t, ce_v, ce_i);
}

Value mfe_loss(Tape& t, Value msi, Value mss, double lambda1) {
  TMPA_CHECK(lambda1 >= 0.0, "lambda1 must be nonnegative");
  return ops::add(t, msi, ops::scale(t, mss, lambda1));
}

}  // namespace tmpa
