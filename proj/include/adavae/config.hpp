// Architecture hyperparameters and component specs.
#pragma once

#include <optional>
#include <string>

#include "adavae/common.hpp"

namespace adavae {

enum class AdapterKind { ffn_parallel, attn_parallel, attn_sequential, prefix };
enum class InfusionKind { none, atm, psa, atm_psa };
enum class MaskKind { bidirectional, causal };
enum class TrainMode { fb, pe, ft };

inline const char* to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::ffn_parallel: return "ffn_parallel";
    case AdapterKind::attn_parallel: return "attn_parallel";
    case AdapterKind::attn_sequential: return "attn_sequential";
    case AdapterKind::prefix: return "prefix";
  }
  return "?";
}

inline const char* to_string(InfusionKind k) {
  switch (k) {
    case InfusionKind::none: return "none";
    case InfusionKind::atm: return "atm";
    case InfusionKind::psa: return "psa";
    case InfusionKind::atm_psa: return "atm+psa";
  }
  return "?";
}

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::fb: return "fb";
    case TrainMode::pe: return "pe";
    case TrainMode::ft: return "ft";
  }
  return "?";
}

// Unified parameter-efficient component: h <- λ₁·h + λ₂·Δa. Adapter kinds
// use λ₁ = λ₂ = 1; prefix uses λ₁ = 1 − λ₂ with a pre-assigned λ₂.
struct AdapterSpec {
  AdapterKind kind = AdapterKind::ffn_parallel;
  int bottleneck = 16;  // α; paper uses 128 or 512
  int prefix_len = 8;   // paper uses 30
  double lambda2 = 0.1; // prefix mixing scalar

  double lambda1() const {
    return kind == AdapterKind::prefix ? 1.0 - lambda2 : 1.0;
  }
  bool is_prefix() const { return kind == AdapterKind::prefix; }
};

struct ModelConfig {
  int enc_layers = 4;
  int dec_layers = 6;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 256;
  int vocab_size = 0;  // filled in once the vocabulary is built
  int max_seq_len = 64;
  int latent_dim = 16;
  std::optional<AdapterSpec> pe;  // nullopt = fine-tuning shape (no adapters)
  InfusionKind infusion = InfusionKind::psa;
  int n_classes = 0;  // > 0 adds a linear classifier head over the latent
  bool shared_embedding = true;  // encoder and decoder share one table

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (enc_layers < 1 || dec_layers < 1)
      throw ContractError("config: enc_layers and dec_layers must be >= 1");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw ContractError("config: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " +
                          std::to_string(n_heads));
    if (vocab_size < 5)
      throw ContractError("config: vocab_size must cover the reserved ids");
    if (max_seq_len < 2 || latent_dim < 1 || d_ff < 1)
      throw ContractError("config: max_seq_len/latent_dim/d_ff out of range");
    if (!shared_embedding)
      throw ContractError("config: shared_embedding must stay true");
    if (pe) {
      if (pe->is_prefix()) {
        if (pe->prefix_len < 0)
          throw ContractError("config: prefix_len must be >= 0");
      } else if (pe->bottleneck < 1 || pe->bottleneck >= d_model) {
        throw ContractError("config: adapter bottleneck must be in [1, d_model)");
      }
    }
  }
};

// Paper-scale shape, used for parameter accounting only (never trained):
// 8/12 layers at GPT-2 width, α = 128, latent scaled to d_model.
inline ModelConfig paper_shaped_config() {
  ModelConfig c;
  c.enc_layers = 8;
  c.dec_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 3072;
  c.vocab_size = 1024;
  c.max_seq_len = 1024;
  c.latent_dim = 768;
  c.pe = AdapterSpec{AdapterKind::ffn_parallel, 128, 30, 0.1};
  c.infusion = InfusionKind::psa;
  return c;
}

}  // namespace adavae
