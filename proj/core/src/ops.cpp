#include "tmpa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace tmpa {
namespace ops {

namespace {

double stable_softplus(double s) {
  if (s > 35.0) return s;
  if (s < -35.0) return std::exp(s);
  return std::log1p(std::exp(s));
}

double stable_sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  double e = std::exp(s);
  return e / (1.0 + e);
}

// C[M,N] += A[M,K] * B[K,N]
void mm_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
void mm_acc_bt(const double* a, const double* b, double* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * n;
    double* crow = c + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void mm_acc_at(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    const double* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

inline int conv_out_size(int in, int k, int stride, int padding) {
  return (in + 2 * padding - k) / stride + 1;
}

}  // namespace

namespace {

// Gathered input patches for one image: rows indexed by (c,m,n), columns by
// output position. Out-of-bounds taps are zero.
void im2col_one(const double* iplane, int ci, int h, int w, int k, int stride, int padding,
                int ho, int wo, double* cols) {
  const int l = ho * wo;
  for (int c = 0; c < ci; ++c) {
    const double* src = iplane + static_cast<size_t>(c) * h * w;
    for (int m = 0; m < k; ++m) {
      for (int n = 0; n < k; ++n) {
        double* row = cols + (static_cast<size_t>(c) * k * k + m * k + n) * l;
        const int off = n - padding;
        int j0 = 0;
        if (off < 0) j0 = (-off + stride - 1) / stride;
        int j1 = wo - 1;
        if (off + j1 * stride > w - 1) j1 = (w - 1 - off) / stride;
        for (int i = 0; i < ho; ++i) {
          const int y = i * stride + m - padding;
          double* dst = row + static_cast<size_t>(i) * wo;
          if (y < 0 || y >= h) {
            for (int j = 0; j < wo; ++j) dst[j] = 0.0;
            continue;
          }
          const double* irow = src + static_cast<size_t>(y) * w + off;
          for (int j = 0; j < j0; ++j) dst[j] = 0.0;
          if (stride == 1) {
            for (int j = j0; j <= j1; ++j) dst[j] = irow[j];
          } else {
            for (int j = j0; j <= j1; ++j) dst[j] = irow[2 * j];
          }
          for (int j = j1 + 1; j < wo; ++j) dst[j] = 0.0;
        }
      }
    }
  }
}

// Transposed scatter of im2col: accumulates column gradients back into the
// input gradient plane.
void col2im_acc_one(const double* cols, int ci, int h, int w, int k, int stride, int padding,
                    int ho, int wo, double* giplane) {
  const int l = ho * wo;
  for (int c = 0; c < ci; ++c) {
    double* dst_plane = giplane + static_cast<size_t>(c) * h * w;
    for (int m = 0; m < k; ++m) {
      for (int n = 0; n < k; ++n) {
        const double* row = cols + (static_cast<size_t>(c) * k * k + m * k + n) * l;
        const int off = n - padding;
        int j0 = 0;
        if (off < 0) j0 = (-off + stride - 1) / stride;
        int j1 = wo - 1;
        if (off + j1 * stride > w - 1) j1 = (w - 1 - off) / stride;
        for (int i = 0; i < ho; ++i) {
          const int y = i * stride + m - padding;
          if (y < 0 || y >= h) continue;
          double* drow = dst_plane + static_cast<size_t>(y) * w + off;
          const double* srow = row + static_cast<size_t>(i) * wo;
          if (stride == 1) {
            for (int j = j0; j <= j1; ++j) drow[j] += srow[j];
          } else {
            for (int j = j0; j <= j1; ++j) drow[2 * j] += srow[j];
          }
        }
      }
    }
  }
}

}  // namespace

Value conv2d(Tape& t, Value input, Value kernel, int stride, int padding) {
  const Tensor& in = t.val(input);
  const Tensor& ker = t.val(kernel);
  TMPA_CHECK(in.ndim() == 4, "conv2d input must be [B,C,H,W], got " + shape_str(in.shape()));
  TMPA_CHECK(ker.ndim() == 4, "conv2d kernel must be [Co,Ci,k,k], got " + shape_str(ker.shape()));
  const int k = ker.dim(2);
  TMPA_CHECK(ker.dim(3) == k, "conv2d kernel must be square");
  TMPA_CHECK(k == 1 || k == 3, "conv2d supports kernel sizes 1 and 3");
  TMPA_CHECK(stride == 1 || stride == 2, "conv2d supports strides 1 and 2");
  TMPA_CHECK(padding >= 0, "conv2d padding must be >= 0");
  TMPA_CHECK(ker.dim(1) == in.dim(1), "conv2d channel mismatch: input " + shape_str(in.shape()) +
                                          " kernel " + shape_str(ker.shape()));
  const int b_n = in.dim(0), ci = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int co = ker.dim(0);
  TMPA_CHECK(h + 2 * padding >= k && w + 2 * padding >= k, "conv2d input smaller than kernel");
  const int ho = conv_out_size(h, k, stride, padding);
  const int wo = conv_out_size(w, k, stride, padding);
  TMPA_CHECK(ho >= 1 && wo >= 1, "conv2d produces empty output");

  const int l = ho * wo;
  const int ckk = ci * k * k;
  Tensor out(Shape{b_n, co, ho, wo});
  std::vector<double> cols(static_cast<size_t>(ckk) * l);
  const size_t in_img = static_cast<size_t>(ci) * h * w;
  const size_t out_img = static_cast<size_t>(co) * l;
  for (int b = 0; b < b_n; ++b) {
    im2col_one(in.data() + b * in_img, ci, h, w, k, stride, padding, ho, wo, cols.data());
    mm_acc(ker.data(), cols.data(), out.data() + b * out_img, co, ckk, l);
  }

  const int in_id = input.id, ker_id = kernel.id;
  auto back = [in_id, ker_id, stride, padding, k, out_id = static_cast<int>(t.num_nodes())](
                  Tape& tp) {
    const Tensor& go = tp.grad_buf(out_id);
    const Tensor& in_v = tp.value_of(in_id);
    const Tensor& ker_v = tp.value_of(ker_id);
    const bool need_in = tp.node_requires_grad(in_id);
    const bool need_ker = tp.node_requires_grad(ker_id);
    const int b_n = in_v.dim(0), ci = in_v.dim(1), h = in_v.dim(2), w = in_v.dim(3);
    const int co = ker_v.dim(0);
    const int ho = go.dim(2), wo = go.dim(3);
    const int l = ho * wo;
    const int ckk = ci * k * k;
    const size_t in_img = static_cast<size_t>(ci) * h * w;
    const size_t out_img = static_cast<size_t>(co) * l;
    std::vector<double> cols(static_cast<size_t>(ckk) * l);
    std::vector<double> dcols(need_in ? static_cast<size_t>(ckk) * l : 0);
    for (int b = 0; b < b_n; ++b) {
      const double* go_b = go.data() + b * out_img;
      if (need_ker) {
        im2col_one(in_v.data() + b * in_img, ci, h, w, k, stride, padding, ho, wo, cols.data());
        mm_acc_bt(go_b, cols.data(), tp.grad_buf(ker_id).data(), co, l, ckk);
      }
      if (need_in) {
        std::fill(dcols.begin(), dcols.end(), 0.0);
        mm_acc_at(ker_v.data(), go_b, dcols.data(), co, ckk, l);
        col2im_acc_one(dcols.data(), ci, h, w, k, stride, padding, ho, wo,
                       tp.grad_buf(in_id).data() + b * in_img);
      }
    }
  };
  return t.record(OpKind::conv2d, k, std::move(out), {input.id, kernel.id}, std::move(back));
}

Value matmul(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  TMPA_CHECK(av.ndim() == 2 && bv.ndim() == 2, "matmul needs 2-d operands");
  TMPA_CHECK(av.dim(1) == bv.dim(0), "matmul inner dimension mismatch: " + shape_str(av.shape()) +
                                         " x " + shape_str(bv.shape()));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  mm_acc(av.data(), bv.data(), out.data(), m, k, n);
  const int a_id = a.id, b_id = b.id;
  auto back = [a_id, b_id, m, k, n, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const double* g = tp.grad_buf(out_id).data();
    if (tp.node_requires_grad(a_id))
      mm_acc_bt(g, tp.value_of(b_id).data(), tp.grad_buf(a_id).data(), m, n, k);
    if (tp.node_requires_grad(b_id))
      mm_acc_at(tp.value_of(a_id).data(), g, tp.grad_buf(b_id).data(), m, k, n);
  };
  return t.record(OpKind::matmul, 0, std::move(out), {a.id, b.id}, std::move(back));
}

Value bmm(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  TMPA_CHECK(av.ndim() == 3 && bv.ndim() == 3, "bmm needs 3-d operands");
  TMPA_CHECK(av.dim(0) == bv.dim(0), "bmm batch mismatch");
  TMPA_CHECK(av.dim(2) == bv.dim(1), "bmm inner dimension mismatch: " + shape_str(av.shape()) +
                                         " x " + shape_str(bv.shape()));
  const int bn = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor out(Shape{bn, m, n});
  for (int i = 0; i < bn; ++i) {
    mm_acc(av.data() + static_cast<size_t>(i) * m * k, bv.data() + static_cast<size_t>(i) * k * n,
           out.data() + static_cast<size_t>(i) * m * n, m, k, n);
  }
  const int a_id = a.id, b_id = b.id;
  auto back = [a_id, b_id, bn, m, k, n, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const double* g = tp.grad_buf(out_id).data();
    for (int i = 0; i < bn; ++i) {
      const double* gi = g + static_cast<size_t>(i) * m * n;
      if (tp.node_requires_grad(a_id))
        mm_acc_bt(gi, tp.value_of(b_id).data() + static_cast<size_t>(i) * k * n,
                  tp.grad_buf(a_id).data() + static_cast<size_t>(i) * m * k, m, n, k);
      if (tp.node_requires_grad(b_id))
        mm_acc_at(tp.value_of(a_id).data() + static_cast<size_t>(i) * m * k, gi,
                  tp.grad_buf(b_id).data() + static_cast<size_t>(i) * k * n, m, k, n);
    }
  };
  return t.record(OpKind::bmm, 0, std::move(out), {a.id, b.id}, std::move(back));
}

Value transpose_last2(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 3, "transpose_last2 needs a 3-d tensor");
  const int b = xv.dim(0), m = xv.dim(1), n = xv.dim(2);
  Tensor out(Shape{b, n, m});
  for (int i = 0; i < b; ++i) {
    const double* src = xv.data() + static_cast<size_t>(i) * m * n;
    double* dst = out.data() + static_cast<size_t>(i) * m * n;
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) dst[static_cast<size_t>(c) * m + r] = src[static_cast<size_t>(r) * n + c];
  }
  const int x_id = x.id;
  auto back = [x_id, b, m, n, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const double* g = tp.grad_buf(out_id).data();
    double* gx = tp.grad_buf(x_id).data();
    for (int i = 0; i < b; ++i) {
      const double* gsrc = g + static_cast<size_t>(i) * m * n;
      double* gdst = gx + static_cast<size_t>(i) * m * n;
      for (int c = 0; c < n; ++c)
        for (int r = 0; r < m; ++r) gdst[static_cast<size_t>(r) * n + c] += gsrc[static_cast<size_t>(c) * m + r];
    }
  };
  return t.record(OpKind::transpose_last2, 0, std::move(out), {x.id}, std::move(back));
}

Value softmax(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() >= 1, "softmax needs at least 1-d input");
  const int l = xv.dim(xv.ndim() - 1);
  const int64_t rows = xv.size() / l;
  Tensor out(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* src = xv.data() + r * l;
    double* dst = out.data() + r * l;
    double mx = src[0];
    for (int i = 1; i < l; ++i) mx = std::max(mx, src[i]);
    double denom = 0.0;
    for (int i = 0; i < l; ++i) {
      dst[i] = std::exp(src[i] - mx);
      denom += dst[i];
    }
    for (int i = 0; i < l; ++i) dst[i] /= denom;
  }
  const int x_id = x.id;
  auto back = [x_id, l, rows, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const double* y = tp.value_of(out_id).data();
    const double* g = tp.grad_buf(out_id).data();
    double* gx = tp.grad_buf(x_id).data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* yr = y + r * l;
      const double* gr = g + r * l;
      double dot = 0.0;
      for (int i = 0; i < l; ++i) dot += yr[i] * gr[i];
      double* gxr = gx + r * l;
      for (int i = 0; i < l; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
  };
  return t.record(OpKind::softmax, 0, std::move(out), {x.id}, std::move(back));
}

Value batch_norm(Tape& t, Value x, Value gamma, Value beta, BnState& state, bool training) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 2 || xv.ndim() == 4, "batch_norm input must be [B,C] or [B,C,H,W]");
  const int b = xv.dim(0), c = xv.dim(1);
  const int64_t spatial = xv.ndim() == 4 ? static_cast<int64_t>(xv.dim(2)) * xv.dim(3) : 1;
  const int64_t m = b * spatial;  // reduction count per channel
  TMPA_CHECK(t.val(gamma).shape() == Shape{c} && t.val(beta).shape() == Shape{c},
             "batch_norm gamma/beta must be [C]");
  TMPA_CHECK(state.channels() == c, "batch_norm running stats channel mismatch");
  TMPA_CHECK(!training || b >= 2, "batch_norm training mode needs batch size >= 2");

  const double eps = state.eps;
  std::vector<double> mean(c), inv_std(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int bi = 0; bi < b; ++bi) {
        const double* base = xv.data() + (static_cast<size_t>(bi) * c + ch) * spatial;
        for (int64_t k = 0; k < spatial; ++k) s += base[k];
      }
      mean[ch] = s / static_cast<double>(m);
    }
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int bi = 0; bi < b; ++bi) {
        const double* base = xv.data() + (static_cast<size_t>(bi) * c + ch) * spatial;
        for (int64_t k = 0; k < spatial; ++k) {
          double d = base[k] - mean[ch];
          s += d * d;
        }
      }
      double var = s / static_cast<double>(m);
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double mom = state.momentum;
      state.running_mean[ch] = (1.0 - mom) * state.running_mean[ch] + mom * mean[ch];
      double var_unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
      state.running_var[ch] = (1.0 - mom) * state.running_var[ch] + mom * var_unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = state.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + eps);
    }
  }

  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  const double* gp = t.val(gamma).data();
  const double* bp = t.val(beta).data();
  for (int bi = 0; bi < b; ++bi) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = xv.data() + (static_cast<size_t>(bi) * c + ch) * spatial;
      double* xh = xhat.data() + (static_cast<size_t>(bi) * c + ch) * spatial;
      double* dst = out.data() + (static_cast<size_t>(bi) * c + ch) * spatial;
      for (int64_t k = 0; k < spatial; ++k) {
        xh[k] = (src[k] - mean[ch]) * inv_std[ch];
        dst[k] = gp[ch] * xh[k] + bp[ch];
      }
    }
  }

  const int x_id = x.id, g_id = gamma.id, be_id = beta.id;
  auto back = [x_id, g_id, be_id, b, c, spatial, m, training, xhat = std::move(xhat),
               inv_std = std::move(inv_std),
               out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const double* g = tp.grad_buf(out_id).data();
    const double* gam = tp.value_of(g_id).data();
    // Per-channel reductions of g and g*xhat, shared by all three gradients.
    std::vector<double> sum_g(static_cast<size_t>(c), 0.0), sum_gx(static_cast<size_t>(c), 0.0);
    for (int bi = 0; bi < b; ++bi) {
      for (int ch = 0; ch < c; ++ch) {
        const double* gr = g + (static_cast<size_t>(bi) * c + ch) * spatial;
        const double* xh = xhat.data() + (static_cast<size_t>(bi) * c + ch) * spatial;
        double sg = 0.0, sgx = 0.0;
        for (int64_t k = 0; k < spatial; ++k) {
          sg += gr[k];
          sgx += gr[k] * xh[k];
        }
        sum_g[static_cast<size_t>(ch)] += sg;
        sum_gx[static_cast<size_t>(ch)] += sgx;
      }
    }
    if (tp.node_requires_grad(g_id)) {
      double* gg = tp.grad_buf(g_id).data();
      for (int ch = 0; ch < c; ++ch) gg[ch] += sum_gx[static_cast<size_t>(ch)];
    }
    if (tp.node_requires_grad(be_id)) {
      double* gb = tp.grad_buf(be_id).data();
      for (int ch = 0; ch < c; ++ch) gb[ch] += sum_g[static_cast<size_t>(ch)];
    }
    if (tp.node_requires_grad(x_id)) {
      double* gx = tp.grad_buf(x_id).data();
      const double inv_m = 1.0 / static_cast<double>(m);
      for (int bi = 0; bi < b; ++bi) {
        for (int ch = 0; ch < c; ++ch) {
          const size_t base = (static_cast<size_t>(bi) * c + ch) * spatial;
          const double* gr = g + base;
          const double* xh = xhat.data() + base;
          double* gxr = gx + base;
          const double a = gam[ch] * inv_std[static_cast<size_t>(ch)];
          if (training) {
            const double mg = sum_g[static_cast<size_t>(ch)] * inv_m;
            const double mgx = sum_gx[static_cast<size_t>(ch)] * inv_m;
            for (int64_t k = 0; k < spatial; ++k) gxr[k] += a * (gr[k] - mg - xh[k] * mgx);
          } else {
            for (int64_t k = 0; k < spatial; ++k) gxr[k] += a * gr[k];
          }
        }
      }
    }
  };
  return t.record(OpKind::batch_norm, 0, std::move(out), {x.id, gamma.id, beta.id},
                  std::move(back));
}

Value cross_entropy(Tape& t, Value logits, const std::vector<int>& labels) {
  const Tensor& z = t.val(logits);
  TMPA_CHECK(z.ndim() == 2, "cross_entropy logits must be [B,P]");
  const int b = z.dim(0), p = z.dim(1);
  TMPA_CHECK(static_cast<int>(labels.size()) == b, "cross_entropy labels length mismatch");
  for (int i = 0; i < b; ++i)
    TMPA_CHECK(labels[static_cast<size_t>(i)] >= 0 && labels[static_cast<size_t>(i)] < p,
               "cross_entropy label out of range [0,P)");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = z.data() + static_cast<size_t>(i) * p;
    double* pr = probs.data() + static_cast<size_t>(i) * p;
    double mx = row[0];
    for (int j = 1; j < p; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < p; ++j) {
      pr[j] = std::exp(row[j] - mx);
      denom += pr[j];
    }
    for (int j = 0; j < p; ++j) pr[j] /= denom;
    loss += -(row[labels[static_cast<size_t>(i)]] - mx - std::log(denom));
  }
  loss /= static_cast<double>(b);
  const int z_id = logits.id;
  auto back = [z_id, b, p, labels, probs = std::move(probs),
               out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(z_id)) return;
    const double g = tp.grad_buf(out_id)[0] / static_cast<double>(b);
    double* gz = tp.grad_buf(z_id).data();
    for (int i = 0; i < b; ++i) {
      const double* pr = probs.data() + static_cast<size_t>(i) * p;
      double* gr = gz + static_cast<size_t>(i) * p;
      for (int j = 0; j < p; ++j) gr[j] += g * pr[j];
      gr[labels[static_cast<size_t>(i)]] -= g;
    }
  };
  return t.record(OpKind::cross_entropy, 0, Tensor::scalar(loss), {logits.id}, std::move(back));
}

Value l2_distance(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  TMPA_CHECK(av.ndim() == 2 && av.shape() == bv.shape(), "l2_distance needs equal [B,D] shapes");
  const int bn = av.dim(0), d = av.dim(1);
  Tensor out(Shape{bn});
  for (int i = 0; i < bn; ++i) {
    const double* ar = av.data() + static_cast<size_t>(i) * d;
    const double* br = bv.data() + static_cast<size_t>(i) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      double diff = ar[j] - br[j];
      s += diff * diff;
    }
    out[i] = std::sqrt(s);
  }
  const int a_id = a.id, b_id = b.id;
  auto back = [a_id, b_id, bn, d, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const Tensor& dist = tp.value_of(out_id);
    const double* g = tp.grad_buf(out_id).data();
    const double* av = tp.value_of(a_id).data();
    const double* bv = tp.value_of(b_id).data();
    const bool na = tp.node_requires_grad(a_id), nb = tp.node_requires_grad(b_id);
    for (int i = 0; i < bn; ++i) {
      if (dist[i] == 0.0) continue;  // subgradient 0 at coincidence
      const double w = g[i] / dist[i];
      const size_t off = static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) {
        const double diff = w * (av[off + j] - bv[off + j]);
        if (na) tp.grad_buf(a_id)[static_cast<int64_t>(off + j)] += diff;
        if (nb) tp.grad_buf(b_id)[static_cast<int64_t>(off + j)] -= diff;
      }
    }
  };
  return t.record(OpKind::l2_distance, 0, std::move(out), {a.id, b.id}, std::move(back));
}

Value pairwise_l2(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 2, "pairwise_l2 needs [B,D]");
  const int b = xv.dim(0), d = xv.dim(1);
  Tensor out(Shape{b, b});
  for (int i = 0; i < b; ++i) {
    for (int j = i + 1; j < b; ++j) {
      const double* xi = xv.data() + static_cast<size_t>(i) * d;
      const double* xj = xv.data() + static_cast<size_t>(j) * d;
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        double diff = xi[k] - xj[k];
        s += diff * diff;
      }
      double dist = std::sqrt(s);
      out.at2(i, j) = dist;
      out.at2(j, i) = dist;
    }
  }
  const int x_id = x.id;
  auto back = [x_id, b, d, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& dist = tp.value_of(out_id);
    const double* g = tp.grad_buf(out_id).data();
    const double* xv = tp.value_of(x_id).data();
    double* gx = tp.grad_buf(x_id).data();
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) {
        const double dij = dist.at2(i, j);
        if (dij == 0.0) continue;
        const double w = g[static_cast<size_t>(i) * b + j] / dij;
        if (w == 0.0) continue;
        const double* xi = xv + static_cast<size_t>(i) * d;
        const double* xj = xv + static_cast<size_t>(j) * d;
        double* gi = gx + static_cast<size_t>(i) * d;
        double* gj = gx + static_cast<size_t>(j) * d;
        for (int k = 0; k < d; ++k) {
          const double diff = w * (xi[k] - xj[k]);
          gi[k] += diff;
          gj[k] -= diff;
        }
      }
    }
  };
  return t.record(OpKind::pairwise_l2, 0, std::move(out), {x.id}, std::move(back));
}

Value relu(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  const int x_id = x.id;
  auto back = [x_id, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& xv = tp.value_of(x_id);
    const Tensor& g = tp.grad_buf(out_id);
    Tensor& gx = tp.grad_buf(x_id);
    for (int64_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  };
  return t.record(OpKind::relu, 0, std::move(out), {x.id}, std::move(back));
}

namespace {

Value elementwise_binary(Tape& t, OpKind kind, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  TMPA_CHECK(av.shape() == bv.shape(), "elementwise op shape mismatch: " + shape_str(av.shape()) +
                                           " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  switch (kind) {
    case OpKind::add:
      for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case OpKind::sub:
      for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case OpKind::mul:
      for (int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
      break;
    default:
      TMPA_CHECK(false, "not an elementwise op");
  }
  const int a_id = a.id, b_id = b.id;
  auto back = [kind, a_id, b_id, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const Tensor& g = tp.grad_buf(out_id);
    const bool na = tp.node_requires_grad(a_id), nb = tp.node_requires_grad(b_id);
    switch (kind) {
      case OpKind::add:
        if (na) {
          Tensor& ga = tp.grad_buf(a_id);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nb) {
          Tensor& gb = tp.grad_buf(b_id);
          for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
        break;
      case OpKind::sub:
        if (na) {
          Tensor& ga = tp.grad_buf(a_id);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (nb) {
          Tensor& gb = tp.grad_buf(b_id);
          for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
        break;
      case OpKind::mul: {
        const Tensor& av = tp.value_of(a_id);
        const Tensor& bv = tp.value_of(b_id);
        if (na) {
          Tensor& ga = tp.grad_buf(a_id);
          for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (nb) {
          Tensor& gb = tp.grad_buf(b_id);
          for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
        break;
      }
      default:
        break;
    }
  };
  return t.record(kind, 0, std::move(out), {a.id, b.id}, std::move(back));
}

}  // namespace

Value add(Tape& t, Value a, Value b) { return elementwise_binary(t, OpKind::add, a, b); }
Value sub(Tape& t, Value a, Value b) { return elementwise_binary(t, OpKind::sub, a, b); }
Value mul(Tape& t, Value a, Value b) { return elementwise_binary(t, OpKind::mul, a, b); }

Value scale(Tape& t, Value x, double c) {
  const Tensor& xv = t.val(x);
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = c * xv[i];
  const int x_id = x.id;
  auto back = [x_id, c, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& g = tp.grad_buf(out_id);
    Tensor& gx = tp.grad_buf(x_id);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  };
  return t.record(OpKind::scale, 0, std::move(out), {x.id}, std::move(back));
}

Value add_const(Tape& t, Value x, double c) {
  const Tensor& xv = t.val(x);
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  const int x_id = x.id;
  auto back = [x_id, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& g = tp.grad_buf(out_id);
    Tensor& gx = tp.grad_buf(x_id);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return t.record(OpKind::add_const, 0, std::move(out), {x.id}, std::move(back));
}

Value sum(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  const int x_id = x.id;
  auto back = [x_id, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const double g = tp.grad_buf(out_id)[0];
    Tensor& gx = tp.grad_buf(x_id);
    for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return t.record(OpKind::sum, 0, Tensor::scalar(s), {x.id}, std::move(back));
}

Value global_avg_pool(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 4, "global_avg_pool needs [B,C,H,W]");
  const int b = xv.dim(0), c = xv.dim(1);
  const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out(Shape{b, c});
  for (int bi = 0; bi < b; ++bi) {
    for (int ch = 0; ch < c; ++ch) {
      const double* src = xv.data() + (static_cast<size_t>(bi) * c + ch) * hw;
      double s = 0.0;
      for (int64_t k = 0; k < hw; ++k) s += src[k];
      out.at2(bi, ch) = s / static_cast<double>(hw);
    }
  }
  const int x_id = x.id;
  auto back = [x_id, b, c, hw, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& g = tp.grad_buf(out_id);
    double* gx = tp.grad_buf(x_id).data();
    const double inv = 1.0 / static_cast<double>(hw);
    for (int bi = 0; bi < b; ++bi) {
      for (int ch = 0; ch < c; ++ch) {
        const double gv = g.at2(bi, ch) * inv;
        double* dst = gx + (static_cast<size_t>(bi) * c + ch) * hw;
        for (int64_t k = 0; k < hw; ++k) dst[k] += gv;
      }
    }
  };
  return t.record(OpKind::global_avg_pool, 0, std::move(out), {x.id}, std::move(back));
}

Value concat_batch(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  TMPA_CHECK(av.ndim() == bv.ndim() && av.ndim() >= 1, "concat_batch rank mismatch");
  for (int i = 1; i < av.ndim(); ++i)
    TMPA_CHECK(av.dim(i) == bv.dim(i), "concat_batch trailing dim mismatch");
  Shape s = av.shape();
  s[0] = av.dim(0) + bv.dim(0);
  Tensor out(s);
  std::memcpy(out.data(), av.data(), sizeof(double) * static_cast<size_t>(av.size()));
  std::memcpy(out.data() + av.size(), bv.data(), sizeof(double) * static_cast<size_t>(bv.size()));
  const int a_id = a.id, b_id = b.id;
  const int64_t a_n = av.size();
  auto back = [a_id, b_id, a_n, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const Tensor& g = tp.grad_buf(out_id);
    if (tp.node_requires_grad(a_id)) {
      Tensor& ga = tp.grad_buf(a_id);
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (tp.node_requires_grad(b_id)) {
      Tensor& gb = tp.grad_buf(b_id);
      for (int64_t i = 0; i < gb.size(); ++i) gb[i] += g[a_n + i];
    }
  };
  return t.record(OpKind::concat_batch, 0, std::move(out), {a.id, b.id}, std::move(back));
}

Value concat_channels(Tape& t, Value a, Value b) {
  const Tensor& av = t.val(a);
  const Tensor& bv = t.val(b);
  TMPA_CHECK(av.ndim() == 4 && bv.ndim() == 4, "concat_channels needs [B,C,H,W] operands");
  TMPA_CHECK(av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
             "concat_channels non-channel dims must match");
  const int b_n = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
  const int64_t hw = static_cast<int64_t>(av.dim(2)) * av.dim(3);
  Tensor out(Shape{b_n, ca + cb, av.dim(2), av.dim(3)});
  for (int bi = 0; bi < b_n; ++bi) {
    std::memcpy(out.data() + static_cast<size_t>(bi) * (ca + cb) * hw,
                av.data() + static_cast<size_t>(bi) * ca * hw, sizeof(double) * ca * hw);
    std::memcpy(out.data() + (static_cast<size_t>(bi) * (ca + cb) + ca) * hw,
                bv.data() + static_cast<size_t>(bi) * cb * hw, sizeof(double) * cb * hw);
  }
  const int a_id = a.id, b_id = b.id;
  auto back = [a_id, b_id, b_n, ca, cb, hw, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const double* g = tp.grad_buf(out_id).data();
    for (int bi = 0; bi < b_n; ++bi) {
      if (tp.node_requires_grad(a_id)) {
        double* ga = tp.grad_buf(a_id).data() + static_cast<size_t>(bi) * ca * hw;
        const double* gs = g + static_cast<size_t>(bi) * (ca + cb) * hw;
        for (int64_t i = 0; i < ca * hw; ++i) ga[i] += gs[i];
      }
      if (tp.node_requires_grad(b_id)) {
        double* gb = tp.grad_buf(b_id).data() + static_cast<size_t>(bi) * cb * hw;
        const double* gs = g + (static_cast<size_t>(bi) * (ca + cb) + ca) * hw;
        for (int64_t i = 0; i < cb * hw; ++i) gb[i] += gs[i];
      }
    }
  };
  return t.record(OpKind::concat_channels, 0, std::move(out), {a.id, b.id}, std::move(back));
}

Value slice_batch(Tape& t, Value x, int begin, int end) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() >= 1 && begin >= 0 && end <= xv.dim(0) && begin < end,
             "slice_batch range out of bounds");
  const int64_t row = xv.size() / xv.dim(0);
  Shape s = xv.shape();
  s[0] = end - begin;
  Tensor out(s);
  std::memcpy(out.data(), xv.data() + begin * row, sizeof(double) * static_cast<size_t>(out.size()));
  const int x_id = x.id;
  auto back = [x_id, begin, row, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& g = tp.grad_buf(out_id);
    double* gx = tp.grad_buf(x_id).data() + begin * row;
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return t.record(OpKind::slice_batch, 0, std::move(out), {x.id}, std::move(back));
}

Value reshape(Tape& t, Value x, Shape shape) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(shape_numel(shape) == xv.size(), "reshape must preserve element count");
  Tensor out(shape, xv.raw());
  const int x_id = x.id;
  auto back = [x_id, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& g = tp.grad_buf(out_id);
    Tensor& gx = tp.grad_buf(x_id);
    for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  };
  return t.record(OpKind::reshape, 0, std::move(out), {x.id}, std::move(back));
}

Value nchw_to_nlc(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 4, "nchw_to_nlc needs [B,C,H,W]");
  const int b = xv.dim(0), c = xv.dim(1);
  const int l = xv.dim(2) * xv.dim(3);
  Tensor out(Shape{b, l, c});
  for (int bi = 0; bi < b; ++bi) {
    const double* src = xv.data() + static_cast<size_t>(bi) * c * l;
    double* dst = out.data() + static_cast<size_t>(bi) * c * l;
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < l; ++k) dst[static_cast<size_t>(k) * c + ch] = src[static_cast<size_t>(ch) * l + k];
  }
  const int x_id = x.id;
  auto back = [x_id, b, c, l, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const double* g = tp.grad_buf(out_id).data();
    double* gx = tp.grad_buf(x_id).data();
    for (int bi = 0; bi < b; ++bi) {
      const double* gs = g + static_cast<size_t>(bi) * c * l;
      double* gd = gx + static_cast<size_t>(bi) * c * l;
      for (int ch = 0; ch < c; ++ch)
        for (int k = 0; k < l; ++k) gd[static_cast<size_t>(ch) * l + k] += gs[static_cast<size_t>(k) * c + ch];
    }
  };
  return t.record(OpKind::nchw_to_nlc, 0, std::move(out), {x.id}, std::move(back));
}

Value nlc_to_nchw(Tape& t, Value x, int h, int w) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 3 && xv.dim(1) == h * w, "nlc_to_nchw needs [B,h*w,C]");
  const int b = xv.dim(0), l = xv.dim(1), c = xv.dim(2);
  Tensor out(Shape{b, c, h, w});
  for (int bi = 0; bi < b; ++bi) {
    const double* src = xv.data() + static_cast<size_t>(bi) * c * l;
    double* dst = out.data() + static_cast<size_t>(bi) * c * l;
    for (int k = 0; k < l; ++k)
      for (int ch = 0; ch < c; ++ch) dst[static_cast<size_t>(ch) * l + k] = src[static_cast<size_t>(k) * c + ch];
  }
  const int x_id = x.id;
  auto back = [x_id, b, c, l, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const double* g = tp.grad_buf(out_id).data();
    double* gx = tp.grad_buf(x_id).data();
    for (int bi = 0; bi < b; ++bi) {
      const double* gs = g + static_cast<size_t>(bi) * c * l;
      double* gd = gx + static_cast<size_t>(bi) * c * l;
      for (int k = 0; k < l; ++k)
        for (int ch = 0; ch < c; ++ch) gd[static_cast<size_t>(k) * c + ch] += gs[static_cast<size_t>(ch) * l + k];
    }
  };
  return t.record(OpKind::nlc_to_nchw, 0, std::move(out), {x.id}, std::move(back));
}

Value add_bias(Tape& t, Value x, Value bias) {
  const Tensor& xv = t.val(x);
  const Tensor& bv = t.val(bias);
  TMPA_CHECK(xv.ndim() == 2 && bv.ndim() == 1 && bv.dim(0) == xv.dim(1),
             "add_bias needs [B,P] + [P]");
  const int b = xv.dim(0), p = xv.dim(1);
  Tensor out(xv.shape());
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < p; ++j) out.at2(i, j) = xv.at2(i, j) + bv[j];
  const int x_id = x.id, b_id = bias.id;
  auto back = [x_id, b_id, b, p, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    const Tensor& g = tp.grad_buf(out_id);
    if (tp.node_requires_grad(x_id)) {
      Tensor& gx = tp.grad_buf(x_id);
      for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (tp.node_requires_grad(b_id)) {
      Tensor& gb = tp.grad_buf(b_id);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < p; ++j) gb[j] += g.at2(i, j);
    }
  };
  return t.record(OpKind::add_bias, 0, std::move(out), {x.id, bias.id}, std::move(back));
}

Value group_mean(Tape& t, Value x, const std::vector<int>& groups, int num_groups) {
  const Tensor& xv = t.val(x);
  TMPA_CHECK(xv.ndim() == 1, "group_mean needs a vector input");
  const int b = xv.dim(0);
  TMPA_CHECK(static_cast<int>(groups.size()) == b, "group_mean groups length mismatch");
  std::vector<int> counts(static_cast<size_t>(num_groups), 0);
  for (int g : groups) {
    TMPA_CHECK(g >= 0 && g < num_groups, "group index out of range");
    counts[static_cast<size_t>(g)]++;
  }
  for (int c : counts) TMPA_CHECK(c > 0, "group_mean: every group must be non-empty");
  Tensor out(Shape{num_groups});
  for (int i = 0; i < b; ++i) out[groups[static_cast<size_t>(i)]] += xv[i];
  for (int g = 0; g < num_groups; ++g) out[g] /= static_cast<double>(counts[static_cast<size_t>(g)]);
  const int x_id = x.id;
  auto back = [x_id, groups, counts, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const Tensor& g = tp.grad_buf(out_id);
    Tensor& gx = tp.grad_buf(x_id);
    for (size_t i = 0; i < groups.size(); ++i)
      gx[static_cast<int64_t>(i)] += g[groups[i]] / static_cast<double>(counts[static_cast<size_t>(groups[i])]);
  };
  return t.record(OpKind::group_mean, 0, std::move(out), {x.id}, std::move(back));
}

Value hinge_sum(Tape& t, Value x) {
  const Tensor& xv = t.val(x);
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i] > 0.0 ? xv[i] : 0.0;
  const int x_id = x.id;
  auto back = [x_id, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(x_id)) return;
    const double g = tp.grad_buf(out_id)[0];
    const Tensor& xv = tp.value_of(x_id);
    Tensor& gx = tp.grad_buf(x_id);
    for (int64_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g;
  };
  return t.record(OpKind::hinge_sum, 0, Tensor::scalar(s), {x.id}, std::move(back));
}

Value wrt_loss(Tape& t, Value dist, const std::vector<int>& labels) {
  const Tensor& dv = t.val(dist);
  TMPA_CHECK(dv.ndim() == 2 && dv.dim(0) == dv.dim(1), "wrt_loss needs a square distance matrix");
  const int b = dv.dim(0);
  TMPA_CHECK(static_cast<int>(labels.size()) == b, "wrt_loss labels length mismatch");

  // Per-anchor caches reused by the backward pass.
  struct AnchorData {
    std::vector<int> pos, neg;
    std::vector<double> wp, wn;
    double sp = 0.0, sn = 0.0, s = 0.0;
  };
  auto data = std::make_shared<std::vector<AnchorData>>(static_cast<size_t>(b));

  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    AnchorData& ad = (*data)[static_cast<size_t>(i)];
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      if (labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)])
        ad.pos.push_back(j);
      else
        ad.neg.push_back(j);
    }
    TMPA_CHECK(!ad.pos.empty(), "wrt_loss: anchor without a positive sample");
    TMPA_CHECK(!ad.neg.empty(), "wrt_loss: anchor without a negative sample");
    auto softmax_weights = [&](const std::vector<int>& idx, std::vector<double>& w) {
      double mx = -1e300;
      for (int j : idx) mx = std::max(mx, dv.at2(i, j));
      double denom = 0.0;
      w.resize(idx.size());
      for (size_t k = 0; k < idx.size(); ++k) {
        w[k] = std::exp(dv.at2(i, idx[k]) - mx);
        denom += w[k];
      }
      double s = 0.0;
      for (size_t k = 0; k < idx.size(); ++k) {
        w[k] /= denom;
        s += w[k] * dv.at2(i, idx[k]);
      }
      return s;
    };
    ad.sp = softmax_weights(ad.pos, ad.wp);
    ad.sn = softmax_weights(ad.neg, ad.wn);
    ad.s = ad.sp - ad.sn;
    loss += stable_softplus(ad.s);
  }
  loss /= static_cast<double>(b);

  const int d_id = dist.id;
  auto back = [d_id, b, data, out_id = static_cast<int>(t.num_nodes())](Tape& tp) {
    if (!tp.node_requires_grad(d_id)) return;
    const double g = tp.grad_buf(out_id)[0] / static_cast<double>(b);
    const Tensor& dv = tp.value_of(d_id);
    Tensor& gd = tp.grad_buf(d_id);
    for (int i = 0; i < b; ++i) {
      const AnchorData& ad = (*data)[static_cast<size_t>(i)];
      const double sig = stable_sigmoid(ad.s) * g;
      for (size_t k = 0; k < ad.pos.size(); ++k) {
        const int j = ad.pos[k];
        gd.at2(i, j) += sig * ad.wp[k] * (1.0 + dv.at2(i, j) - ad.sp);
      }
      for (size_t k = 0; k < ad.neg.size(); ++k) {
        const int j = ad.neg[k];
        gd.at2(i, j) -= sig * ad.wn[k] * (1.0 + dv.at2(i, j) - ad.sn);
      }
    }
  };
  return t.record(OpKind::wrt_loss, 0, Tensor::scalar(loss), {dist.id}, std::move(back));
}

}  // namespace ops
}  // namespace tmpa
