#pragma once

#include <vector>

#include "tmpa/model.hpp"

namespace tmpa {

struct LossWeights {
  double alpha = 0.8;
  double beta = 0.4;
  double lambda1 = 0.2;
  double lambda2 = 0.25;
  double lambda3 = 0.25;
  double rho = 0.65;

  void validate() const;
};

// Identity classification on the complete feature. Accepts either a pooled
// [B,D] value or a [B,D,H,W] map (pooled internally).
Value id_loss(Tape& t, Model& m, const ModelVars& vars, Value f_c, const std::vector<int>& labels,
              bool training);

// Pairwise Euclidean distances over pooled complete features.
struct DistanceMatrix {
  Value dist;  // [B,B], symmetric, zero diagonal
  std::vector<int> labels;
};

DistanceMatrix build_distances(Tape& t, Value pooled, const std::vector<int>& labels);

Value wrt_loss(Tape& t, const DistanceMatrix& d);

// L_total = alpha * (l_id + l_wrt) + beta * (l_mfe + l_mft). The second term
// is dropped when the transfer stack is disabled (invalid handles).
Value total_loss(Tape& t, Value l_id, Value l_wrt, Value l_mfe, Value l_mft,
                 const LossWeights& w);

}  // namespace tmpa
