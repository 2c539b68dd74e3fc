#pragma once

#include <string>
#include <vector>

#include "tmpa/model.hpp"
#include "tmpa/synthdata.hpp"

namespace tmpa {

// L2-normalized pooled complete-feature embeddings for one modality.
struct EmbeddingSet {
  Tensor vectors;  // [M,D], unit rows
  std::vector<int> labels;
  Modality modality = Modality::visible;
};

struct Metrics {
  std::vector<double> cmc;  // cmc[k-1] = P(first correct match within rank k)
  double map = 0.0;
  std::string mode;  // e.g. "infrared->visible"

  double rank(int k) const;  // 1-based, saturates at the gallery size
};

// Single-image inference in eval mode (running statistics, no augmentation).
// With the transfer stack enabled the missing modality-specific feature is
// generated by cross attention from the image's own shared features and
// fused with the real one; otherwise the embedding is the shared semantic
// branch alone. Deterministic; `threads` parallelizes across images.
EmbeddingSet embed(Model& m, bool use_mft, double lambda2, double lambda3,
                   const std::vector<const SynthImage*>& images, Modality modality,
                   int threads = 1);

// Ranks the gallery by ascending Euclidean distance per query (ties broken
// by gallery index) and accumulates CMC and mean average precision.
Metrics cmc_map(const EmbeddingSet& query, const EmbeddingSet& gallery);

std::string render_metrics_table(const Metrics& m);
std::string metrics_csv(const Metrics& m);
void write_embeddings_csv(const std::string& path, const EmbeddingSet& set);

}  // namespace tmpa
