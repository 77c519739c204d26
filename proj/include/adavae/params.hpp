// Named parameter registry. Declaration order is fixed by construction and
// drives every order-sensitive consumer (optimizer updates, checkpoints,
// gradient clipping), so runs are reproducible.
//
// Initial values are drawn from a sub-stream keyed by the parameter's name,
// never by declaration order: two models built from the same master seed get
// bit-identical values for every parameter name they share, regardless of
// which extra components either of them carries.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adavae/common.hpp"
#include "adavae/config.hpp"
#include "adavae/rng.hpp"
#include "adavae/tensor.hpp"

namespace adavae {

enum class Init { zeros, ones, normal };  // normal = N(0, 0.02), GPT-2 style

struct ParamDecl {
  std::string name;
  Shape shape;
  Init init = Init::normal;
};

inline constexpr double kInitSd = 0.02;

class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, Init init,
             std::uint64_t master_seed) {
    if (index_.count(name))
      throw ContractError("param '" + name + "' declared twice");
    Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
    switch (init) {
      case Init::zeros:
        break;
      case Init::ones:
        for (auto& v : t.data()) v = 1.0;
        break;
      case Init::normal: {
        Rng rng(substream(master_seed, name));
        for (auto& v : t.data()) v = rng.gauss(0.0, kInitSd);
        break;
      }
    }
    index_[name] = ordered_.size();
    ordered_.emplace_back(name, t);
    return t;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw ContractError("unknown param '" + name + "'");
    return ordered_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor>>& ordered() const {
    return ordered_;
  }

  std::size_t size() const { return ordered_.size(); }

  long total_scalars() const {
    long n = 0;
    for (const auto& [name, t] : ordered_) n += static_cast<long>(t.numel());
    return n;
  }

  void zero_grads() {
    for (auto& [name, t] : ordered_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> ordered_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-parameter trainable flag; anything absent is frozen.
struct TrainableMask {
  std::unordered_map<std::string, bool> on;

  bool trainable(const std::string& name) const {
    auto it = on.find(name);
    return it != on.end() && it->second;
  }
};

// --------------------------------------------------------------------------
// parameter-name groups

inline bool is_pe_param(const std::string& name) {
  return name.find(".adapter.") != std::string::npos ||
         name.find(".prefix.") != std::string::npos;
}

inline bool is_latent_param(const std::string& name) {
  return name.rfind("latent.", 0) == 0 || name.rfind("infusion.", 0) == 0;
}

inline bool is_head_param(const std::string& name) {
  return name.rfind("head.", 0) == 0;
}

inline bool is_embedding_param(const std::string& name) {
  return name.rfind("emb.", 0) == 0;
}

// Frozen pre-trained transformer weights in PE mode: embeddings plus every
// encoder/decoder block parameter that is not an added component.
inline bool is_base_param(const std::string& name) {
  return !is_pe_param(name) && !is_latent_param(name) && !is_head_param(name);
}

inline bool is_decoder_pe_param(const std::string& name) {
  return name.rfind("dec.", 0) == 0 && is_pe_param(name);
}

}  // namespace adavae
