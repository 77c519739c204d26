// Step-indexed training schedules and the training objective. All schedule
// functions are pure in the step index: no hidden state.
#pragma once

#include <cmath>
#include <string>

#include "adavae/common.hpp"
#include "adavae/config.hpp"
#include "adavae/params.hpp"
#include "adavae/tensor.hpp"

namespace adavae {

struct TrainSchedule {
  long total_steps = 1000;
  int cycles = 4;
  double ramp_fraction = 0.5;          // fraction of a cycle spent ramping
  double warmup_fraction = 1.0 / 6.0;  // LR warmup span
  double stage_switch_fraction = 1.0 / 6.0;
  double peak_lr = 5e-5;
  double free_bit_lambda = 0.5;
  double beta_max = 1.0;

  void validate() const {
    if (total_steps < 1 || cycles < 1)
      throw ContractError("schedule: total_steps and cycles must be >= 1");
    if (ramp_fraction <= 0.0 || ramp_fraction > 1.0)
      throw ContractError("schedule: ramp_fraction must be in (0, 1]");
    if (warmup_fraction < 0.0 || warmup_fraction > 1.0 ||
        stage_switch_fraction < 0.0 || stage_switch_fraction > 1.0)
      throw ContractError("schedule: fractions must be in [0, 1]");
    if (free_bit_lambda < 0.0)
      throw ContractError("schedule: free_bit_lambda must be >= 0");
    if (beta_max < 0.0 || peak_lr < 0.0)
      throw ContractError("schedule: beta_max and peak_lr must be >= 0");
  }

  void check_step(long t) const {
    if (t < 0 || t >= total_steps)
      throw ContractError("schedule: step " + std::to_string(t) +
                          " outside [0, " + std::to_string(total_steps) + ")");
  }
};

// Cyclic annealing: within each of `cycles` equal cycles, β ramps linearly
// 0 -> beta_max over the first ramp_fraction of the cycle, then holds.
inline double beta_at_step(long t, const TrainSchedule& s) {
  s.check_step(t);
  const double cycle_len =
      static_cast<double>(s.total_steps) / static_cast<double>(s.cycles);
  const double pos =
      static_cast<double>(t) - std::floor(static_cast<double>(t) / cycle_len) *
                                   cycle_len;
  return s.beta_max * std::min(1.0, pos / (s.ramp_fraction * cycle_len));
}

// Linear warmup from 0 to peak over the first warmup_fraction of training,
// constant at peak afterwards.
inline double lr_at_step(long t, const TrainSchedule& s) {
  s.check_step(t);
  const double warm = s.warmup_fraction * static_cast<double>(s.total_steps);
  if (warm <= 0.0) return s.peak_lr;
  return s.peak_lr * std::min(1.0, static_cast<double>(t) / warm);
}

inline bool stage1_active(long t, const TrainSchedule& s) {
  s.check_step(t);
  return static_cast<double>(t) <
         s.stage_switch_fraction * static_cast<double>(s.total_steps);
}

// Two-stage activation: during stage 1 the decoder's PE components are
// additionally frozen; afterwards the base mask applies unchanged. Base
// transformer weights are never affected (FT trains everything from step 0).
inline TrainableMask stage_mask_at_step(long t, const TrainSchedule& s,
                                        const TrainableMask& base) {
  if (!stage1_active(t, s)) return base;
  TrainableMask eff = base;
  for (auto& [name, on] : eff.on)
    if (on && is_decoder_pe_param(name)) on = false;
  return eff;
}

// --------------------------------------------------------------------------
// objective

struct LossBreakdown {
  double rec_nats = 0.0;   // summed reconstruction NLL
  double kl_raw = 0.0;     // Σ_i KL_i
  double kl_hinged = 0.0;  // max(λ, kl_raw)
  double beta = 0.0;
  double total = 0.0;  // rec_nats + beta · kl_hinged
  long token_count = 0;
};

// Free-bit threshold applied to the whole KL term: max(λ, Σ_i KL_i). The
// gradient vanishes while the sum is strictly below λ; a tie passes through.
inline Tensor free_bit_kl(const Tensor& kl_per_dim, double lambda) {
  if (lambda < 0.0) throw ContractError("free_bit_kl: lambda must be >= 0");
  return hinge_at_least(sum(kl_per_dim), lambda);
}

struct TotalLoss {
  Tensor value;  // scalar, differentiable
  LossBreakdown numbers;
};

inline TotalLoss total_loss(const Tensor& rec_nats, long token_count,
                            const Tensor& kl_per_dim, double beta,
                            double lambda) {
  if (beta < 0.0) throw ContractError("total_loss: beta must be >= 0");
  Tensor kl_raw = sum(kl_per_dim);
  Tensor hinged = hinge_at_least(kl_raw, lambda);
  Tensor total = add(rec_nats, scale(hinged, beta));
  TotalLoss out;
  out.value = total;
  out.numbers.rec_nats = rec_nats.item();
  out.numbers.kl_raw = kl_raw.item();
  out.numbers.kl_hinged = hinged.item();
  out.numbers.beta = beta;
  out.numbers.total = total.item();
  out.numbers.token_count = token_count;
  return out;
}

}  // namespace adavae
