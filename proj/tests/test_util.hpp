#pragma once

#include <cmath>

#include "tmpa/ops.hpp"
#include "tmpa/rng.hpp"
#include "tmpa/tensor.hpp"

namespace testutil {

inline tmpa::Tensor random_tensor(tmpa::Shape shape, tmpa::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  tmpa::Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

inline bool approx_eq(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

inline double max_abs_diff(const tmpa::Tensor& a, const tmpa::Tensor& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Direct-summation convolution, kept independent of ops::conv2d on purpose.
inline tmpa::Tensor conv2d_oracle(const tmpa::Tensor& in, const tmpa::Tensor& ker, int stride,
                                  int padding) {
  const int bn = in.dim(0), ci = in.dim(1), h = in.dim(2), w = in.dim(3);
  const int co = ker.dim(0), k = ker.dim(2);
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (w + 2 * padding - k) / stride + 1;
  tmpa::Tensor out(tmpa::Shape{bn, co, ho, wo});
  for (int b = 0; b < bn; ++b)
    for (int o = 0; o < co; ++o)
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (int c = 0; c < ci; ++c)
            for (int m = 0; m < k; ++m)
              for (int n = 0; n < k; ++n) {
                int y = i * stride + m - padding;
                int x = j * stride + n - padding;
                if (y < 0 || y >= h || x < 0 || x >= w) continue;
                acc += in.at4(b, c, y, x) * ker.at4(o, c, m, n);
              }
          out.at4(b, o, i, j) = acc;
        }
  return out;
}

}  // namespace testutil
