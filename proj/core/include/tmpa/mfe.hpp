#pragma once

#include <vector>

#include "tmpa/model.hpp"

namespace tmpa {

// Modality feature extraction: the mixed batch runs through the shared
// extractor, the original visible/infrared images through their own
// extractors. Batch halves of f_sh and f_sp are identity-aligned by index.
struct FeatureBundle {
  Value f_sh;    // [2N,C,H',W'] from the mixed batch
  Value f_sp_v;  // [N,C,H',W']
  Value f_sp_i;  // [N,C,H',W']
  Value f_sp;    // [2N,C,H',W'] = batch-cat(f_sp_v, f_sp_i)
  std::vector<int> labels;  // [N], shared by index across modalities
};

FeatureBundle extract(Tape& t, Model& m, const ModelVars& vars, Value x_hat, Value x_v, Value x_i,
                      const std::vector<int>& labels, bool training);

// Hinge separation loss over globally pooled features: per identity p in the
// batch, d_sp is the mean paired visible/infrared specific distance and d_ss
// the mean shared-vs-specific distance; the loss sums max(rho - d_sp - d_ss, 0).
Value mss_loss(Tape& t, const FeatureBundle& b, double rho);

// Per-modality identity cross-entropy on pooled specific features.
Value msi_loss(Tape& t, Model& m, const ModelVars& vars, const FeatureBundle& b, bool training);

Value mfe_loss(Tape& t, Value msi, Value mss, double lambda1);

// Dense batch-group ids in order of first occurrence, plus the group count.
std::pair<std::vector<int>, int> batch_groups(const std::vector<int>& labels);

}  // namespace tmpa
