// The model: a bidirectional adapted-GPT-2 encoder and a causal adapted-
// GPT-2 decoder over one shared embedding table, a latent-attention
// posterior between them, and per-layer latent infusion into the decoder's
// attention memory.
//
// Blocks are pre-layer-norm GPT-2: LN → attention → residual,
// LN → FFN → residual, with a final LN per stack. Infused latent positions
// are prepended to every decoder attention layer's keys/values and are
// visible from every query position regardless of the causal mask.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adavae/adapters.hpp"
#include "adavae/config.hpp"
#include "adavae/latent.hpp"
#include "adavae/params.hpp"
#include "adavae/tensor.hpp"

namespace adavae {

struct BlockTensors {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w1, b1, w2, b2;
  // bottleneck adapter (defined iff the config uses an adapter kind)
  Tensor ad_down_w, ad_down_b, ad_up_w, ad_up_b;
  // prefix key/values (defined iff the config uses prefix tuning)
  Tensor prefix_k, prefix_v;
};

// Latent rows prepended to a layer's attention keys/values.
struct ExtraKV {
  Tensor k, v;  // [n_extra × d]
};

// Additive attention mask: 0 = visible, kMaskScore = hidden. Extra
// (prepended) positions are visible from everywhere; pad positions
// (>= n_real) are hidden as keys; causal hides strictly-future positions.
inline Tensor attention_mask(MaskKind kind, int len, int n_extra, int n_real) {
  Tensor m = Tensor::zeros({len, n_extra + len});
  auto& v = m.data();
  const int cols = n_extra + len;
  for (int t = 0; t < len; ++t)
    for (int j = 0; j < len; ++j) {
      const bool hidden =
          j >= n_real || (kind == MaskKind::causal && j > t);
      if (hidden)
        v[static_cast<std::size_t>(t) * cols + n_extra + j] = kMaskScore;
    }
  return m;
}

// delta = up(gelu(down(tap))); the up projection starts at zero, so a fresh
// adapter is an exact no-op.
inline Tensor adapter_delta(const BlockTensors& blk, const Tensor& tap) {
  return linear(gelu(linear(tap, blk.ad_down_w, blk.ad_down_b)), blk.ad_up_w,
                blk.ad_up_b);
}

// Scaled dot-product multi-head attention over x_norm [L×d] with residual
// handled by the caller. Prefix tuning adds a separately-softmaxed
// attention over the trainable prefix rows, scaled by λ₂, which keeps a
// zero-initialized prefix an exact no-op.
inline Tensor multi_head_attention(const BlockTensors& blk, int n_heads,
                                   const Tensor& x_norm, MaskKind kind,
                                   int n_real, const ExtraKV* extra,
                                   const AdapterSpec* pe) {
  const int len = x_norm.dim(0), d = x_norm.dim(1);
  const int dh = d / n_heads;
  Tensor q = linear(x_norm, blk.wq, blk.bq);
  Tensor k = linear(x_norm, blk.wk, blk.bk);
  Tensor v = linear(x_norm, blk.wv, blk.bv);
  int n_extra = 0;
  if (extra) {
    if (extra->k.dim(1) != d || extra->v.dim(1) != d)
      throw DimensionError("attention: extra kv " +
                           shape_str(extra->k.shape()) +
                           " does not match width " + std::to_string(d));
    n_extra = extra->k.dim(0);
    k = concat_rows(extra->k, k);
    v = concat_rows(extra->v, v);
  }
  const bool all_visible =
      kind == MaskKind::bidirectional && n_real == len;
  Tensor mask;
  if (!all_visible) mask = attention_mask(kind, len, n_extra, n_real);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_prefix = pe && pe->is_prefix() && blk.prefix_k.defined() &&
                          blk.prefix_k.dim(0) > 0;
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (!all_visible) scores = add(scores, mask);
    Tensor weights = softmax(scores, 1);
    Tensor oh = matmul(weights, vh);
    if (use_prefix) {
      Tensor pk = slice_cols(blk.prefix_k, h * dh, (h + 1) * dh);
      Tensor pv = slice_cols(blk.prefix_v, h * dh, (h + 1) * dh);
      Tensor pw = softmax(scale(matmul(qh, transpose(pk)), inv_sqrt), 1);
      oh = add(oh, scale(matmul(pw, pv), pe->lambda2));
    }
    heads.push_back(oh);
  }
  return linear(concat_cols(heads), blk.wo, blk.bo);
}

inline Tensor block_forward(const BlockTensors& blk, int n_heads,
                            const AdapterSpec* pe, Tensor x, MaskKind kind,
                            int n_real, const ExtraKV* extra) {
  Tensor normed = layer_norm(x, blk.ln1_g, blk.ln1_b);
  Tensor attn = multi_head_attention(blk, n_heads, normed, kind, n_real,
                                     extra, pe);
  if (pe && pe->kind == AdapterKind::attn_parallel)
    attn = add(attn, adapter_delta(blk, x));
  else if (pe && pe->kind == AdapterKind::attn_sequential)
    attn = add(attn, adapter_delta(blk, attn));
  x = add(x, attn);
  Tensor normed2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
  Tensor ff = linear(gelu(linear(normed2, blk.w1, blk.b1)), blk.w2, blk.b2);
  if (pe && pe->kind == AdapterKind::ffn_parallel)
    ff = add(ff, adapter_delta(blk, x));
  x = add(x, ff);
  return x;
}

struct InfusionTensors {
  Tensor atm_w, atm_b;      // shared key/value map (AtM)
  Tensor psa_k_w, psa_k_b;  // separate key map (PSA)
  Tensor psa_v_w, psa_v_b;  // separate value map (PSA)
};

struct AdaVae {
  ModelConfig cfg;
  ParamStore params;
  Tensor wte, wpe;
  std::vector<BlockTensors> enc, dec;
  Tensor enc_lnf_g, enc_lnf_b, dec_lnf_g, dec_lnf_b;
  Tensor lat_f_w, lat_f_b;
  Tensor mu_w, mu_b, sig_w, sig_b;
  std::vector<InfusionTensors> infusion;  // one per decoder layer
  Tensor head_w, head_b;  // classifier over latent codes (optional)

  const AdapterSpec* pe_spec() const {
    return cfg.pe.has_value() ? &*cfg.pe : nullptr;
  }
};

// --------------------------------------------------------------------------
// layout

// Every parameter of a config, in declaration order. This list is the single
// description of the model layout used for counting and (via a consistency
// test) matches what build_model registers.
inline std::vector<ParamDecl> enumerate_params(const ModelConfig& cfg) {
  std::vector<ParamDecl> out;
  auto push = [&out](std::string name, Shape shape, Init init) {
    out.push_back(ParamDecl{std::move(name), std::move(shape), init});
  };
  push("emb.wte", {cfg.vocab_size, cfg.d_model}, Init::normal);
  push("emb.wpe", {cfg.max_seq_len, cfg.d_model}, Init::normal);
  const AdapterSpec* pe = cfg.pe.has_value() ? &*cfg.pe : nullptr;
  for (const char* stack : {"enc", "dec"}) {
    const int layers =
        std::string(stack) == "enc" ? cfg.enc_layers : cfg.dec_layers;
    for (int i = 0; i < layers; ++i) {
      const std::string p = std::string(stack) + "." + std::to_string(i) + ".";
      push(p + "ln1.g", {cfg.d_model}, Init::ones);
      push(p + "ln1.b", {cfg.d_model}, Init::zeros);
      for (const char* w : {"wq", "wk", "wv", "wo"})
        push(p + "attn." + w, {cfg.d_model, cfg.d_model}, Init::normal);
      for (const char* b : {"bq", "bk", "bv", "bo"})
        push(p + "attn." + b, {cfg.d_model}, Init::zeros);
      push(p + "ln2.g", {cfg.d_model}, Init::ones);
      push(p + "ln2.b", {cfg.d_model}, Init::zeros);
      push(p + "ffn.w1", {cfg.d_model, cfg.d_ff}, Init::normal);
      push(p + "ffn.b1", {cfg.d_ff}, Init::zeros);
      push(p + "ffn.w2", {cfg.d_ff, cfg.d_model}, Init::normal);
      push(p + "ffn.b2", {cfg.d_model}, Init::zeros);
      if (pe && !pe->is_prefix()) {
        push(p + "adapter.down.w", {cfg.d_model, pe->bottleneck},
             Init::normal);
        push(p + "adapter.down.b", {pe->bottleneck}, Init::zeros);
        push(p + "adapter.up.w", {pe->bottleneck, cfg.d_model}, Init::zeros);
        push(p + "adapter.up.b", {cfg.d_model}, Init::zeros);
      }
      if (pe && pe->is_prefix() && pe->prefix_len > 0) {
        push(p + "prefix.k", {pe->prefix_len, cfg.d_model}, Init::zeros);
        push(p + "prefix.v", {pe->prefix_len, cfg.d_model}, Init::zeros);
      }
    }
    push(std::string(stack) + ".lnf.g", {cfg.d_model}, Init::ones);
    push(std::string(stack) + ".lnf.b", {cfg.d_model}, Init::zeros);
  }
  push("latent.f.w", {cfg.d_model, cfg.d_model}, Init::normal);
  push("latent.f.b", {cfg.d_model}, Init::zeros);
  push("latent.mu.w", {cfg.d_model, cfg.latent_dim}, Init::normal);
  push("latent.mu.b", {cfg.latent_dim}, Init::zeros);
  push("latent.sigma.w", {cfg.d_model, cfg.latent_dim}, Init::normal);
  push("latent.sigma.b", {cfg.latent_dim}, Init::zeros);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "infusion." + std::to_string(i) + ".";
    if (cfg.infusion == InfusionKind::atm ||
        cfg.infusion == InfusionKind::atm_psa) {
      push(p + "atm.w", {cfg.latent_dim, cfg.d_model}, Init::normal);
      push(p + "atm.b", {cfg.d_model}, Init::zeros);
    }
    if (cfg.infusion == InfusionKind::psa ||
        cfg.infusion == InfusionKind::atm_psa) {
      push(p + "psa_k.w", {cfg.latent_dim, cfg.d_model}, Init::normal);
      push(p + "psa_k.b", {cfg.d_model}, Init::zeros);
      push(p + "psa_v.w", {cfg.latent_dim, cfg.d_model}, Init::normal);
      push(p + "psa_v.b", {cfg.d_model}, Init::zeros);
    }
  }
  if (cfg.n_classes > 0) {
    push("head.w", {cfg.latent_dim, cfg.n_classes}, Init::normal);
    push("head.b", {cfg.n_classes}, Init::zeros);
  }
  return out;
}

inline ParamCounts count_params(const ModelConfig& cfg, TrainMode mode) {
  const auto decls = enumerate_params(cfg);
  std::vector<std::string> names;
  names.reserve(decls.size());
  for (const auto& d : decls) names.push_back(d.name);
  return count_params(decls, freeze_mask_for(names, mode));
}

inline AdaVae build_model(const ModelConfig& cfg, std::uint64_t master_seed) {
  cfg.validate();
  AdaVae m;
  m.cfg = cfg;
  auto reg = [&m, master_seed](const std::string& name, Shape shape,
                               Init init) {
    return m.params.add(name, std::move(shape), init, master_seed);
  };
  m.wte = reg("emb.wte", {cfg.vocab_size, cfg.d_model}, Init::normal);
  m.wpe = reg("emb.wpe", {cfg.max_seq_len, cfg.d_model}, Init::normal);
  const AdapterSpec* pe = cfg.pe.has_value() ? &*cfg.pe : nullptr;
  for (const char* stack : {"enc", "dec"}) {
    const bool is_enc = std::string(stack) == "enc";
    const int layers = is_enc ? cfg.enc_layers : cfg.dec_layers;
    auto& blocks = is_enc ? m.enc : m.dec;
    for (int i = 0; i < layers; ++i) {
      const std::string p = std::string(stack) + "." + std::to_string(i) + ".";
      BlockTensors b;
      b.ln1_g = reg(p + "ln1.g", {cfg.d_model}, Init::ones);
      b.ln1_b = reg(p + "ln1.b", {cfg.d_model}, Init::zeros);
      b.wq = reg(p + "attn.wq", {cfg.d_model, cfg.d_model}, Init::normal);
      b.wk = reg(p + "attn.wk", {cfg.d_model, cfg.d_model}, Init::normal);
      b.wv = reg(p + "attn.wv", {cfg.d_model, cfg.d_model}, Init::normal);
      b.wo = reg(p + "attn.wo", {cfg.d_model, cfg.d_model}, Init::normal);
      b.bq = reg(p + "attn.bq", {cfg.d_model}, Init::zeros);
      b.bk = reg(p + "attn.bk", {cfg.d_model}, Init::zeros);
      b.bv = reg(p + "attn.bv", {cfg.d_model}, Init::zeros);
      b.bo = reg(p + "attn.bo", {cfg.d_model}, Init::zeros);
      b.ln2_g = reg(p + "ln2.g", {cfg.d_model}, Init::ones);
      b.ln2_b = reg(p + "ln2.b", {cfg.d_model}, Init::zeros);
      b.w1 = reg(p + "ffn.w1", {cfg.d_model, cfg.d_ff}, Init::normal);
      b.b1 = reg(p + "ffn.b1", {cfg.d_ff}, Init::zeros);
      b.w2 = reg(p + "ffn.w2", {cfg.d_ff, cfg.d_model}, Init::normal);
      b.b2 = reg(p + "ffn.b2", {cfg.d_model}, Init::zeros);
      if (pe && !pe->is_prefix()) {
        b.ad_down_w =
            reg(p + "adapter.down.w", {cfg.d_model, pe->bottleneck},
                Init::normal);
        b.ad_down_b = reg(p + "adapter.down.b", {pe->bottleneck}, Init::zeros);
        b.ad_up_w =
            reg(p + "adapter.up.w", {pe->bottleneck, cfg.d_model}, Init::zeros);
        b.ad_up_b = reg(p + "adapter.up.b", {cfg.d_model}, Init::zeros);
      }
      if (pe && pe->is_prefix() && pe->prefix_len > 0) {
        b.prefix_k =
            reg(p + "prefix.k", {pe->prefix_len, cfg.d_model}, Init::zeros);
        b.prefix_v =
            reg(p + "prefix.v", {pe->prefix_len, cfg.d_model}, Init::zeros);
      }
      blocks.push_back(std::move(b));
    }
    if (is_enc) {
      m.enc_lnf_g = reg("enc.lnf.g", {cfg.d_model}, Init::ones);
      m.enc_lnf_b = reg("enc.lnf.b", {cfg.d_model}, Init::zeros);
    } else {
      m.dec_lnf_g = reg("dec.lnf.g", {cfg.d_model}, Init::ones);
      m.dec_lnf_b = reg("dec.lnf.b", {cfg.d_model}, Init::zeros);
    }
  }
  m.lat_f_w = reg("latent.f.w", {cfg.d_model, cfg.d_model}, Init::normal);
  m.lat_f_b = reg("latent.f.b", {cfg.d_model}, Init::zeros);
  m.mu_w = reg("latent.mu.w", {cfg.d_model, cfg.latent_dim}, Init::normal);
  m.mu_b = reg("latent.mu.b", {cfg.latent_dim}, Init::zeros);
  m.sig_w = reg("latent.sigma.w", {cfg.d_model, cfg.latent_dim}, Init::normal);
  m.sig_b = reg("latent.sigma.b", {cfg.latent_dim}, Init::zeros);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "infusion." + std::to_string(i) + ".";
    InfusionTensors inf;
    if (cfg.infusion == InfusionKind::atm ||
        cfg.infusion == InfusionKind::atm_psa) {
      inf.atm_w = reg(p + "atm.w", {cfg.latent_dim, cfg.d_model}, Init::normal);
      inf.atm_b = reg(p + "atm.b", {cfg.d_model}, Init::zeros);
    }
    if (cfg.infusion == InfusionKind::psa ||
        cfg.infusion == InfusionKind::atm_psa) {
      inf.psa_k_w =
          reg(p + "psa_k.w", {cfg.latent_dim, cfg.d_model}, Init::normal);
      inf.psa_k_b = reg(p + "psa_k.b", {cfg.d_model}, Init::zeros);
      inf.psa_v_w =
          reg(p + "psa_v.w", {cfg.latent_dim, cfg.d_model}, Init::normal);
      inf.psa_v_b = reg(p + "psa_v.b", {cfg.d_model}, Init::zeros);
    }
    m.infusion.push_back(std::move(inf));
  }
  if (cfg.n_classes > 0) {
    m.head_w = reg("head.w", {cfg.latent_dim, cfg.n_classes}, Init::normal);
    m.head_b = reg("head.b", {cfg.n_classes}, Init::zeros);
  }
  return m;
}

// --------------------------------------------------------------------------
// forward passes

// ids may carry right-padding; n_real counts the non-pad prefix.
inline Tensor encoder_forward(const AdaVae& m, const std::vector<int>& ids,
                              int n_real) {
  if (ids.empty() || n_real < 1)
    throw ContractError("encoder_forward: empty sequence");
  if (static_cast<int>(ids.size()) > m.cfg.max_seq_len)
    throw DimensionError("encoder_forward: length " +
                         std::to_string(ids.size()) + " exceeds max_seq_len " +
                         std::to_string(m.cfg.max_seq_len));
  const int len = static_cast<int>(ids.size());
  Tensor x = add(embedding_lookup(m.wte, ids), slice_rows(m.wpe, 0, len));
  for (const BlockTensors& blk : m.enc)
    x = block_forward(blk, m.cfg.n_heads, m.pe_spec(), x,
                      MaskKind::bidirectional, n_real, nullptr);
  return layer_norm(x, m.enc_lnf_g, m.enc_lnf_b);
}

// Per-layer latent rows for the decoder. AtM uses one shared map, so its key
// and value rows are the same tensor; PSA uses two independent maps. The
// joint mode prepends the AtM row first, then the PSA row.
inline std::vector<ExtraKV> infusion_extra(const AdaVae& m, const Tensor& z) {
  std::vector<ExtraKV> out;
  if (m.cfg.infusion == InfusionKind::none) return out;
  if (z.numel() != static_cast<std::size_t>(m.cfg.latent_dim))
    throw DimensionError("infusion: z " + shape_str(z.shape()) +
                         " does not match latent_dim " +
                         std::to_string(m.cfg.latent_dim));
  out.reserve(m.infusion.size());
  for (const InfusionTensors& inf : m.infusion) {
    ExtraKV e;
    Tensor atm_row, psa_k_row, psa_v_row;
    if (inf.atm_w.defined())
      atm_row = reshape(linear(z, inf.atm_w, inf.atm_b), {1, m.cfg.d_model});
    if (inf.psa_k_w.defined()) {
      psa_k_row =
          reshape(linear(z, inf.psa_k_w, inf.psa_k_b), {1, m.cfg.d_model});
      psa_v_row =
          reshape(linear(z, inf.psa_v_w, inf.psa_v_b), {1, m.cfg.d_model});
    }
    switch (m.cfg.infusion) {
      case InfusionKind::atm:
        e.k = atm_row;
        e.v = atm_row;  // same tensor: k_z ≡ v_z
        break;
      case InfusionKind::psa:
        e.k = psa_k_row;
        e.v = psa_v_row;
        break;
      case InfusionKind::atm_psa:
        e.k = concat_rows(atm_row, psa_k_row);
        e.v = concat_rows(atm_row, psa_v_row);
        break;
      case InfusionKind::none:
        break;
    }
    out.push_back(std::move(e));
  }
  return out;
}

// Causal decoder over ids (with optional right-padding) conditioned on z via
// the configured infusion; logits are tied to the shared embedding table.
inline Tensor decoder_forward(const AdaVae& m, const std::vector<int>& ids,
                              int n_real, const Tensor* z) {
  if (ids.empty() || n_real < 1)
    throw ContractError("decoder_forward: empty sequence");
  if (static_cast<int>(ids.size()) > m.cfg.max_seq_len)
    throw DimensionError("decoder_forward: length " +
                         std::to_string(ids.size()) + " exceeds max_seq_len " +
                         std::to_string(m.cfg.max_seq_len));
  const bool wants_latent = m.cfg.infusion != InfusionKind::none;
  if (wants_latent && z == nullptr)
    throw ContractError("decoder_forward: infusion requires a latent");
  if (!wants_latent && z != nullptr)
    throw ContractError("decoder_forward: latent given but infusion is none");
  std::vector<ExtraKV> extra;
  if (wants_latent) extra = infusion_extra(m, *z);
  const int len = static_cast<int>(ids.size());
  Tensor x = add(embedding_lookup(m.wte, ids), slice_rows(m.wpe, 0, len));
  for (std::size_t i = 0; i < m.dec.size(); ++i)
    x = block_forward(m.dec[i], m.cfg.n_heads, m.pe_spec(), x,
                      MaskKind::causal, n_real,
                      wants_latent ? &extra[i] : nullptr);
  Tensor pre = layer_norm(x, m.dec_lnf_g, m.dec_lnf_b);
  return matmul(pre, transpose(m.wte));  // weight tying
}

// Encoder + latent construction for one sentence. eps == nullptr takes the
// deterministic z = mu path.
inline LatentState encode_latent(const AdaVae& m, const std::vector<int>& ids,
                                 int n_real,
                                 const std::vector<double>* eps = nullptr) {
  LatentState s;
  s.H = encoder_forward(m, ids, n_real);
  s.v_z = latent_attention(s.H, m.lat_f_w, m.lat_f_b, n_real);
  s.mu = linear(s.v_z, m.mu_w, m.mu_b);
  s.log_sigma = clamp(linear(s.v_z, m.sig_w, m.sig_b), -kLogSigmaClamp,
                      kLogSigmaClamp);
  if (eps == nullptr) {
    const std::vector<double> zero(
        static_cast<std::size_t>(m.cfg.latent_dim), 0.0);
    s.z = reparameterize(s.mu, s.log_sigma, zero);
  } else {
    s.z = reparameterize(s.mu, s.log_sigma, *eps);
  }
  s.kl_per_dim = kl_to_standard_normal(s.mu, s.log_sigma);
  return s;
}

inline Tensor classifier_logits(const AdaVae& m, const Tensor& latent_code) {
  if (m.cfg.n_classes <= 0)
    throw ContractError("classifier_logits: model has no head");
  return linear(latent_code, m.head_w, m.head_b);
}

}  // namespace adavae
