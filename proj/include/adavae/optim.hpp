// Adam with bias correction, no weight decay, and global-norm gradient
// clipping. Moments are keyed per parameter name with per-parameter step
// counts, so components activated mid-training (two-stage schedule) start
// with fresh moments. Update order follows parameter declaration order.
#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "adavae/params.hpp"

namespace adavae {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct AdamSlot {
  std::vector<double> m, v;
  long t = 0;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::unordered_map<std::string, AdamSlot>& slots() { return slots_; }
  const std::unordered_map<std::string, AdamSlot>& slots() const {
    return slots_;
  }

  // Updates every masked-trainable parameter that accumulated a gradient.
  // Parameters without gradients are untouched, moments included.
  void step(ParamStore& params, const TrainableMask& mask, double lr) {
    std::vector<std::pair<std::string, Tensor>> live;
    double sq = 0.0;
    for (const auto& [name, t] : params.ordered()) {
      if (!mask.trainable(name) || !t.has_grad()) continue;
      for (double g : t.grad()) sq += g * g;
      live.emplace_back(name, t);
    }
    const double norm = std::sqrt(sq);
    const double scale_g =
        (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm)
            ? cfg_.clip_norm / norm
            : 1.0;
    for (auto& [name, t] : live) {
      AdamSlot& slot = slots_[name];
      if (slot.m.empty()) {
        slot.m.assign(t.numel(), 0.0);
        slot.v.assign(t.numel(), 0.0);
      }
      slot.t += 1;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, slot.t);
      const double bc2 = 1.0 - std::pow(cfg_.beta2, slot.t);
      auto& value = t.data();
      const auto& grad = t.grad();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] * scale_g;
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::unordered_map<std::string, AdamSlot> slots_;
};

}  // namespace adavae
