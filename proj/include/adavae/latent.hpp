// Latent-space construction and use: per-feature latent attention pooling,
// reparameterization, closed-form KL against N(0, I), and the class-
// conditional Gaussian latent prior used for label-conditioned sampling.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "adavae/common.hpp"
#include "adavae/rng.hpp"
#include "adavae/tensor.hpp"

namespace adavae {

inline constexpr double kLogSigmaClamp = 8.0;

// One sentence's trip from encoder states to latent code.
struct LatentState {
  Tensor H;           // [L×d] encoder final states
  Tensor v_z;         // [d] pooled summary
  Tensor mu;          // [latent]
  Tensor log_sigma;   // [latent], clamped to [-kLogSigmaClamp, +kLogSigmaClamp]
  Tensor z;           // [latent]
  Tensor kl_per_dim;  // [latent]
};

// Identity-query latent attention, read as per-feature pooling over
// positions: K = f(H), column i of K/sqrt(d) is softmaxed over the non-pad
// positions and weights column i of H. Permutation of positions permutes
// weights and values together, so the pooled vector is invariant.
inline Tensor latent_attention(const Tensor& H, const Tensor& f_w,
                               const Tensor& f_b, int n_real) {
  if (H.ndim() != 2)
    throw DimensionError("latent_attention: H must be 2-D, got " +
                         shape_str(H.shape()));
  const int L = H.dim(0), d = H.dim(1);
  if (n_real < 1 || n_real > L)
    throw ContractError("latent_attention: n_real " + std::to_string(n_real) +
                        " invalid for L " + std::to_string(L));
  Tensor scores = scale(linear(H, f_w, f_b), 1.0 / std::sqrt(double(d)));
  if (n_real < L) {
    Tensor mask = Tensor::zeros({L, d});
    for (int i = n_real; i < L; ++i)
      for (int j = 0; j < d; ++j)
        mask.data()[static_cast<std::size_t>(i) * d + j] = kMaskScore;
    scores = add(scores, mask);
  }
  Tensor weights = softmax(scores, 0);  // over positions, per feature
  return sum_rows(mul(weights, H));     // [d]
}

// z = mu + exp(log_sigma) ⊙ eps
inline Tensor reparameterize(const Tensor& mu, const Tensor& log_sigma,
                             const std::vector<double>& eps) {
  if (static_cast<std::size_t>(mu.numel()) != eps.size())
    throw DimensionError("reparameterize: eps size " +
                         std::to_string(eps.size()) + " vs mu " +
                         shape_str(mu.shape()));
  Tensor e = Tensor::from(mu.shape(), eps);
  return add(mu, mul(adavae::exp(log_sigma), e));
}

// KL(N(mu, sigma²) ‖ N(0, 1)) per dimension:
//   0.5·(mu² + e^{2·log_sigma} − 2·log_sigma − 1)
inline Tensor kl_to_standard_normal(const Tensor& mu,
                                    const Tensor& log_sigma) {
  Tensor t = add(square(mu), adavae::exp(scale(log_sigma, 2.0)));
  t = add(t, add_scalar(scale(log_sigma, -2.0), -1.0));
  return scale(t, 0.5);
}

// --------------------------------------------------------------------------
// class-conditional Gaussian prior over latent codes (fit on mu(x))

struct ClassPrior {
  // label -> maximum-likelihood diagonal Gaussian
  std::map<int, std::vector<double>> mean;
  std::map<int, std::vector<double>> var;

  bool empty() const { return mean.empty(); }

  const std::vector<double>& mean_of(int label) const {
    auto it = mean.find(label);
    if (it == mean.end())
      throw IndexError("class prior: unseen label " + std::to_string(label));
    return it->second;
  }
  const std::vector<double>& var_of(int label) const {
    auto it = var.find(label);
    if (it == var.end())
      throw IndexError("class prior: unseen label " + std::to_string(label));
    return it->second;
  }
};

inline constexpr double kPriorVarFloor = 1e-8;

inline ClassPrior fit_class_conditional_prior(
    const std::vector<std::pair<std::vector<double>, int>>& latents) {
  std::map<int, std::vector<const std::vector<double>*>> by_label;
  for (const auto& [z, label] : latents) by_label[label].push_back(&z);
  ClassPrior prior;
  for (const auto& [label, zs] : by_label) {
    if (zs.size() < 2)
      throw ContractError("class prior: label " + std::to_string(label) +
                          " has fewer than 2 samples");
    const std::size_t d = zs[0]->size();
    std::vector<double> m(d, 0.0), v(d, 0.0);
    for (const auto* z : zs)
      for (std::size_t i = 0; i < d; ++i) m[i] += (*z)[i];
    for (auto& x : m) x /= static_cast<double>(zs.size());
    for (const auto* z : zs)
      for (std::size_t i = 0; i < d; ++i)
        v[i] += ((*z)[i] - m[i]) * ((*z)[i] - m[i]);
    for (auto& x : v)
      x = std::max(kPriorVarFloor, x / static_cast<double>(zs.size()));
    prior.mean[label] = std::move(m);
    prior.var[label] = std::move(v);
  }
  return prior;
}

inline std::vector<double> sample_conditional(const ClassPrior& prior,
                                              int label, std::uint64_t seed) {
  const auto& m = prior.mean_of(label);
  const auto& v = prior.var_of(label);
  Rng rng(seed);
  std::vector<double> z(m.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = m[i] + std::sqrt(v[i]) * rng.gauss();
  return z;
}

}  // namespace adavae
