#include "tmpa/objective.hpp"

namespace tmpa {

void LossWeights::validate() const {
  TMPA_CHECK(alpha >= 0 && beta >= 0 && lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0 && rho >= 0,
             "loss weights must be nonnegative");
}

Value id_loss(Tape& t, Model& m, const ModelVars& vars, Value f_c, const std::vector<int>& labels,
              bool training) {
  Value pooled = t.val(f_c).ndim() == 4 ? ops::global_avg_pool(t, f_c) : f_c;
  Value logits = classifier_logits(t, vars.cls, m.cls, pooled, training);
  return ops::cross_entropy(t, logits, labels);
}

DistanceMatrix build_distances(Tape& t, Value pooled, const std::vector<int>& labels) {
  TMPA_CHECK(t.val(pooled).ndim() == 2, "distances need pooled [B,D] features");
  TMPA_CHECK(t.val(pooled).dim(0) == static_cast<int>(labels.size()),
             "labels must cover the batch");
  return {ops::pairwise_l2(t, pooled), labels};
}

Value wrt_loss(Tape& t, const DistanceMatrix& d) { return ops::wrt_loss(t, d.dist, d.labels); }

Value total_loss(Tape& t, Value l_id, Value l_wrt, Value l_mfe, Value l_mft,
                 const LossWeights& w) {
  w.validate();
  Value base = ops::scale(t, ops::add(t, l_id, l_wrt), w.alpha);
  if (!l_mfe.valid() || !l_mft.valid()) return base;
  Value mf = ops::scale(t, ops::add(t, l_mfe, l_mft), w.beta);
  return ops::add(t, base, mf);
}

}  // namespace tmpa
