// Straight-line reference computations used as independent oracles. These
// deliberately do not touch adavae::Tensor or the tape; they are plain
// double loops a reader can check by hand.
#pragma once

#include <cmath>
#include <vector>

namespace testsupport {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

inline Mat pmatmul(const Mat& a, const Mat& b) {
  const std::size_t m = a.size(), k = b.size(), n = b[0].size();
  Mat c(m, Vec(n, 0.0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline Vec psoftmax(const Vec& x) {
  double mx = x[0];
  for (double v : x) mx = std::max(mx, v);
  Vec e(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - mx);
    z += e[i];
  }
  for (double& v : e) v /= z;
  return e;
}

inline Vec playernorm(const Vec& x, const Vec& gain, const Vec& bias,
                      double eps) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  var /= static_cast<double>(x.size());
  Vec y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = (x[i] - m) / std::sqrt(var + eps) * gain[i] + bias[i];
  return y;
}

inline double pgelu(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Vec pmatvec(const Mat& w_in_by_out_t, const Vec& x) {
  // y = x · W where W rows index the input dim: y[j] = sum_i x[i]·W[i][j]
  const std::size_t in = w_in_by_out_t.size(), out = w_in_by_out_t[0].size();
  Vec y(out, 0.0);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * w_in_by_out_t[i][j];
  return y;
}

}  // namespace testsupport
