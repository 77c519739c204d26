// Parameter-efficient pieces: freeze masks by training mode and parameter
// accounting over declared layouts (no tensors needed, so paper-scale
// configs can be counted without being materialized).
#pragma once

#include <string>
#include <vector>

#include "adavae/config.hpp"
#include "adavae/params.hpp"

namespace adavae {

// FB trains task heads only; PE adds the PE components and latent-space
// parameters; FT trains everything. Embeddings stay frozen outside FT.
inline TrainableMask freeze_mask_for(const std::vector<std::string>& names,
                                     TrainMode mode) {
  TrainableMask mask;
  for (const std::string& n : names) {
    bool on = false;
    switch (mode) {
      case TrainMode::ft:
        on = true;
        break;
      case TrainMode::pe:
        on = is_pe_param(n) || is_latent_param(n) || is_head_param(n);
        break;
      case TrainMode::fb:
        on = is_head_param(n);
        break;
    }
    mask.on[n] = on;
  }
  return mask;
}

inline TrainableMask apply_freeze(const ParamStore& params, TrainMode mode) {
  std::vector<std::string> names;
  names.reserve(params.size());
  for (const auto& [n, t] : params.ordered()) names.push_back(n);
  return freeze_mask_for(names, mode);
}

struct ParamCounts {
  long trainable = 0;
  long total = 0;
  // trainable as a percentage of the full model (base transformer plus all
  // added components); fine-tuning is 100.00 by construction.
  double percent = 0.0;
};

inline ParamCounts count_params(const std::vector<ParamDecl>& decls,
                                const TrainableMask& mask) {
  ParamCounts pc;
  for (const auto& d : decls) {
    const long n = static_cast<long>(shape_numel(d.shape));
    pc.total += n;
    if (mask.trainable(d.name)) pc.trainable += n;
  }
  pc.percent = pc.total == 0
                   ? 0.0
                   : 100.0 * static_cast<double>(pc.trainable) /
                         static_cast<double>(pc.total);
  return pc;
}

}  // namespace adavae
