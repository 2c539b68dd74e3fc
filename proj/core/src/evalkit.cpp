#include "tmpa/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "tmpa/mft.hpp"

namespace tmpa {

double Metrics::rank(int k) const {
  TMPA_CHECK(k >= 1, "rank index is 1-based");
  if (cmc.empty()) return 0.0;
  const size_t idx = std::min(static_cast<size_t>(k), cmc.size()) - 1;
  return cmc[idx];
}

namespace {

// One image through the inference path; returns the unnormalized pooled
// complete feature.
Tensor embed_one(Model& m, bool use_mft, double lambda2, double lambda3, const Tensor& image,
                 Modality modality) {
  Tape t;
  ModelVars vars = make_vars(t, m, false, use_mft);
  Tensor batch1(Shape{1, 3, image.dim(1), image.dim(2)}, image.raw());
  Value x = t.leaf(std::move(batch1));
  Value f_sh = extractor_forward(t, vars.e_sh, m.e_sh, x, false);
  Value v_sh = ops::conv2d(t, f_sh, vars.w_v, 1, 0);
  Value f_conv_sh = branch_forward(t, vars.conv_sh, m.conv_sh, v_sh, false);
  Value f_c{};
  if (use_mft) {
    const bool visible = modality == Modality::visible;
    ExtractorParams& spec_params = visible ? m.e_sp_v : m.e_sp_i;
    const ExtractorVars& spec_vars = visible ? vars.e_sp_v : vars.e_sp_i;
    Value f_sp = extractor_forward(t, spec_vars, spec_params, x, false);
    Value q = ops::conv2d(t, f_sp, visible ? vars.w_q_v : vars.w_q_i, 1, 0);
    Value k_sh = ops::conv2d(t, f_sh, vars.w_k, 1, 0);
    Value f_ca = cross_attention(t, q, k_sh, v_sh).out;  // the missing-modality specific feature
    Value fused = visible ? ops::scale(t, ops::concat_channels(t, f_sp, f_ca), lambda3)
                          : ops::scale(t, ops::concat_channels(t, f_ca, f_sp), lambda2);
    f_c = ops::add(t, fused, f_conv_sh);
  } else {
    f_c = f_conv_sh;
  }
  Value pooled = ops::global_avg_pool(t, f_c);
  return t.val(pooled);
}

void l2_normalize_row(double* row, int d) {
  double norm = 0.0;
  for (int i = 0; i < d; ++i) norm += row[i] * row[i];
  norm = std::sqrt(norm);
  if (norm == 0.0) return;
  for (int i = 0; i < d; ++i) row[i] /= norm;
}

}  // namespace

EmbeddingSet embed(Model& m, bool use_mft, double lambda2, double lambda3,
                   const std::vector<const SynthImage*>& images, Modality modality, int threads) {
  TMPA_CHECK(!images.empty(), "embed needs at least one image");
  for (const auto* im : images)
    TMPA_CHECK(im->modality == modality, "image modality does not match the requested extractor");
  const int mcount = static_cast<int>(images.size());
  const int d = m.cfg.complete_channels();
  EmbeddingSet set;
  set.modality = modality;
  set.vectors = Tensor(Shape{mcount, d});
  set.labels.resize(static_cast<size_t>(mcount));

  auto work = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      Tensor row = embed_one(m, use_mft, lambda2, lambda3, images[static_cast<size_t>(i)]->pixels,
                             modality);
      TMPA_CHECK(row.size() == d, "unexpected embedding width");
      for (int e = 0; e < d; ++e) set.vectors.at2(i, e) = row[e];
      set.labels[static_cast<size_t>(i)] = images[static_cast<size_t>(i)]->identity;
    }
  };
  threads = std::max(1, std::min(threads, mcount));
  if (threads == 1) {
    work(0, mcount);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (mcount + threads - 1) / threads;
    for (int t0 = 0; t0 < mcount; t0 += chunk)
      pool.emplace_back(work, t0, std::min(mcount, t0 + chunk));
    for (auto& th : pool) th.join();
  }
  for (int i = 0; i < mcount; ++i) l2_normalize_row(set.vectors.data() + static_cast<size_t>(i) * d, d);
  return set;
}

Metrics cmc_map(const EmbeddingSet& query, const EmbeddingSet& gallery) {
  TMPA_CHECK(query.modality != gallery.modality,
             "cross-modality retrieval needs opposite query/gallery modalities");
  const int nq = query.vectors.dim(0), ng = gallery.vectors.dim(0);
  const int d = query.vectors.dim(1);
  TMPA_CHECK(gallery.vectors.dim(1) == d, "embedding dimensions must agree");
  for (int label : query.labels)
    TMPA_CHECK(std::find(gallery.labels.begin(), gallery.labels.end(), label) !=
                   gallery.labels.end(),
               "query identity " + std::to_string(label) + " absent from the gallery");

  Metrics m;
  m.mode = std::string(query.modality == Modality::infrared ? "infrared" : "visible") + "->" +
           (gallery.modality == Modality::infrared ? "infrared" : "visible");
  m.cmc.assign(static_cast<size_t>(ng), 0.0);
  double ap_sum = 0.0;
  std::vector<int> order(static_cast<size_t>(ng));
  std::vector<double> dist(static_cast<size_t>(ng));
  for (int q = 0; q < nq; ++q) {
    for (int g = 0; g < ng; ++g) {
      double s = 0.0;
      for (int e = 0; e < d; ++e) {
        double diff = query.vectors.at2(q, e) - gallery.vectors.at2(g, e);
        s += diff * diff;
      }
      dist[static_cast<size_t>(g)] = std::sqrt(s);
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (dist[static_cast<size_t>(a)] != dist[static_cast<size_t>(b)])
        return dist[static_cast<size_t>(a)] < dist[static_cast<size_t>(b)];
      return a < b;  // deterministic tie-break by gallery index
    });
    int first_correct = -1;
    int relevant_seen = 0;
    double ap = 0.0;
    int total_relevant = 0;
    for (int g = 0; g < ng; ++g)
      if (gallery.labels[static_cast<size_t>(g)] == query.labels[static_cast<size_t>(q)])
        ++total_relevant;
    for (int r = 0; r < ng; ++r) {
      if (gallery.labels[static_cast<size_t>(order[static_cast<size_t>(r)])] ==
          query.labels[static_cast<size_t>(q)]) {
        ++relevant_seen;
        ap += static_cast<double>(relevant_seen) / static_cast<double>(r + 1);
        if (first_correct < 0) first_correct = r;
      }
    }
    ap /= static_cast<double>(total_relevant);
    ap_sum += ap;
    for (int k = first_correct; k < ng; ++k) m.cmc[static_cast<size_t>(k)] += 1.0;
  }
  for (auto& v : m.cmc) v /= static_cast<double>(nq);
  m.map = ap_sum / static_cast<double>(nq);
  return m;
}

std::string render_metrics_table(const Metrics& m) {
  std::ostringstream os;
  os << "mode              Rank-1   Rank-10  Rank-20  mAP\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-17s %6.2f%%  %6.2f%%  %6.2f%%  %6.2f%%\n", m.mode.c_str(),
                100.0 * m.rank(1), 100.0 * m.rank(10), 100.0 * m.rank(20), 100.0 * m.map);
  os << buf;
  return os.str();
}

std::string metrics_csv(const Metrics& m) {
  std::ostringstream os;
  os << "mode,rank1,rank10,rank20,map\n";
  os << m.mode << "," << m.rank(1) << "," << m.rank(10) << "," << m.rank(20) << "," << m.map
     << "\n";
  return os.str();
}

void write_embeddings_csv(const std::string& path, const EmbeddingSet& set) {
  std::ofstream out(path);
  TMPA_CHECK(out.good(), "cannot open " + path + " for writing");
  const int d = set.vectors.dim(1);
  out << "id,modality";
  for (int e = 1; e <= d; ++e) out << ",v_" << e;
  out << "\n";
  for (int i = 0; i < set.vectors.dim(0); ++i) {
    out << set.labels[static_cast<size_t>(i)] << ","
        << (set.modality == Modality::visible ? "visible" : "infrared");
    for (int e = 0; e < d; ++e) out << "," << set.vectors.at2(i, e);
    out << "\n";
  }
}

}  // namespace tmpa
