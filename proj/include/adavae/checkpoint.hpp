// Versioned model containers.
//
// One file carries a text manifest plus a raw fp64 little-endian payload:
//
//   line 1:  ADAVAE1
//   line 2:  <manifest byte count, decimal>
//   bytes:   manifest JSON
//   bytes:   payload (all arrays back to back)
//
// The manifest lists every array (name, shape, byte offset into the payload,
// CRC-32 of its payload bytes) together with the model config, vocabulary,
// schedule, seed, step counter, optimizer slot steps and the fitted class
// prior. Checkpoints restore training bit-exactly; the same container with
// kind = "weights" carries parameter arrays only and may be a subset of the
// model (generic weight import).
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adavae/common.hpp"
#include "adavae/corpus.hpp"
#include "adavae/latent.hpp"
#include "adavae/model.hpp"
#include "adavae/optim.hpp"
#include "adavae/schedule.hpp"

namespace adavae {

inline constexpr const char* kContainerMagic = "ADAVAE1";

inline std::uint32_t crc32_bytes(const unsigned char* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k)
        c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i)
    c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace detail {

inline void append_doubles(std::string& out, const std::vector<double>& v) {
  const std::size_t at = out.size();
  out.resize(at + v.size() * sizeof(double));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + at, v.data(), v.size() * sizeof(double));
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &v[i], 8);
      for (int b = 0; b < 8; ++b)
        out[at + i * 8 + static_cast<std::size_t>(b)] =
            static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
}

inline std::vector<double> read_doubles(const std::string& payload,
                                        std::size_t offset, std::size_t n) {
  std::vector<double> v(n);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(v.data(), payload.data() + offset, n * sizeof(double));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b)
        bits = (bits << 8) |
               static_cast<unsigned char>(
                   payload[offset + i * 8 + static_cast<std::size_t>(b)]);
      std::memcpy(&v[i], &bits, 8);
    }
  }
  return v;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["enc_layers"] = c.enc_layers;
  j["dec_layers"] = c.dec_layers;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["latent_dim"] = c.latent_dim;
  j["infusion"] = to_string(c.infusion);
  j["n_classes"] = c.n_classes;
  if (c.pe) {
    j["pe_kind"] = to_string(c.pe->kind);
    j["adapter_bottleneck"] = c.pe->bottleneck;
    j["prefix_len"] = c.pe->prefix_len;
    j["prefix_lambda2"] = c.pe->lambda2;
  } else {
    j["pe_kind"] = "none";
  }
  return j;
}

inline InfusionKind infusion_from_string(const std::string& s) {
  if (s == "none") return InfusionKind::none;
  if (s == "atm") return InfusionKind::atm;
  if (s == "psa") return InfusionKind::psa;
  if (s == "atm+psa") return InfusionKind::atm_psa;
  throw DataError("unknown infusion kind '" + s + "'");
}

inline AdapterKind adapter_kind_from_string(const std::string& s) {
  if (s == "ffn_parallel") return AdapterKind::ffn_parallel;
  if (s == "attn_parallel") return AdapterKind::attn_parallel;
  if (s == "attn_sequential") return AdapterKind::attn_sequential;
  if (s == "prefix") return AdapterKind::prefix;
  throw DataError("unknown adapter kind '" + s + "'");
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.infusion = infusion_from_string(j.at("infusion").get<std::string>());
  c.n_classes = j.at("n_classes").get<int>();
  const std::string pe = j.at("pe_kind").get<std::string>();
  if (pe != "none") {
    AdapterSpec spec;
    spec.kind = adapter_kind_from_string(pe);
    spec.bottleneck = j.at("adapter_bottleneck").get<int>();
    spec.prefix_len = j.at("prefix_len").get<int>();
    spec.lambda2 = j.at("prefix_lambda2").get<double>();
    c.pe = spec;
  }
  return c;
}

inline nlohmann::json schedule_to_json(const TrainSchedule& s) {
  nlohmann::json j;
  j["total_steps"] = s.total_steps;
  j["cycles"] = s.cycles;
  j["ramp_fraction"] = s.ramp_fraction;
  j["warmup_fraction"] = s.warmup_fraction;
  j["stage_switch_fraction"] = s.stage_switch_fraction;
  j["peak_lr"] = s.peak_lr;
  j["free_bit_lambda"] = s.free_bit_lambda;
  j["beta_max"] = s.beta_max;
  return j;
}

inline TrainSchedule schedule_from_json(const nlohmann::json& j) {
  TrainSchedule s;
  s.total_steps = j.at("total_steps").get<long>();
  s.cycles = j.at("cycles").get<int>();
  s.ramp_fraction = j.at("ramp_fraction").get<double>();
  s.warmup_fraction = j.at("warmup_fraction").get<double>();
  s.stage_switch_fraction = j.at("stage_switch_fraction").get<double>();
  s.peak_lr = j.at("peak_lr").get<double>();
  s.free_bit_lambda = j.at("free_bit_lambda").get<double>();
  s.beta_max = j.at("beta_max").get<double>();
  return s;
}

struct ArrayWriter {
  nlohmann::json manifest_arrays = nlohmann::json::array();
  std::string payload;

  void add(const std::string& name, const Shape& shape,
           const std::vector<double>& values) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = shape;
    e["offset"] = payload.size();
    const std::size_t at = payload.size();
    append_doubles(payload, values);
    e["crc"] = crc32_bytes(
        reinterpret_cast<const unsigned char*>(payload.data() + at),
        payload.size() - at);
    manifest_arrays.push_back(std::move(e));
  }
};

inline void write_container(const std::string& path,
                            const nlohmann::json& manifest,
                            const std::string& payload) {
  const std::string body = manifest.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out << kContainerMagic << "\n" << body.size() << "\n" << body << payload;
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

struct Container {
  nlohmann::json manifest;
  std::string payload;
};

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open container " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kContainerMagic)
    throw DataError(path + ": container version mismatch (got '" + magic +
                    "', want '" + kContainerMagic + "')");
  std::string len_line;
  std::getline(in, len_line);
  std::size_t manifest_len = 0;
  try {
    manifest_len = std::stoull(len_line);
  } catch (const std::exception&) {
    throw DataError(path + ": bad manifest length");
  }
  std::string body(manifest_len, '\0');
  in.read(body.data(), static_cast<std::streamsize>(manifest_len));
  if (in.gcount() != static_cast<std::streamsize>(manifest_len))
    throw DataError(path + ": truncated manifest");
  Container c;
  try {
    c.manifest = nlohmann::json::parse(body);
  } catch (const std::exception& e) {
    throw DataError(path + ": bad manifest: " + e.what());
  }
  std::ostringstream rest;
  rest << in.rdbuf();
  c.payload = rest.str();
  return c;
}

// Pulls one named array, verifying bounds and checksum.
inline std::vector<double> extract_array(const Container& c,
                                         const nlohmann::json& entry,
                                         const std::string& path) {
  const std::string name = entry.at("name").get<std::string>();
  const Shape shape = entry.at("shape").get<Shape>();
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t n = shape_numel(shape);
  if (offset + n * sizeof(double) > c.payload.size())
    throw DataError(path + ": truncated payload at array '" + name + "'");
  const auto crc = crc32_bytes(
      reinterpret_cast<const unsigned char*>(c.payload.data() + offset),
      n * sizeof(double));
  if (crc != entry.at("crc").get<std::uint32_t>())
    throw DataError(path + ": payload integrity failure at array '" + name +
                    "'");
  return read_doubles(c.payload, offset, n);
}

}  // namespace detail

// --------------------------------------------------------------------------
// checkpoints

struct Checkpoint {
  ModelConfig cfg;
  TrainSchedule schedule;
  Vocab vocab;
  std::uint64_t seed = 0;
  long step = 0;
  AdaVae model;       // parameters restored from the container
  Adam adam;          // moments restored likewise
  ClassPrior prior;   // empty when never fitted
};

inline void save_checkpoint(const std::string& path, const AdaVae& model,
                            const TrainSchedule& schedule, const Vocab& vocab,
                            std::uint64_t seed, long step, const Adam& adam,
                            const ClassPrior& prior) {
  detail::ArrayWriter w;
  for (const auto& [name, t] : model.params.ordered())
    w.add(name, t.shape(), t.data());
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& [name, t] : model.params.ordered()) {
    auto it = adam.slots().find(name);
    if (it == adam.slots().end()) continue;
    nlohmann::json s;
    s["name"] = name;
    s["t"] = it->second.t;
    slots.push_back(std::move(s));
    const Shape flat{static_cast<int>(it->second.m.size())};
    w.add("adam.m." + name, flat, it->second.m);
    w.add("adam.v." + name, flat, it->second.v);
  }
  nlohmann::json prior_j;
  if (!prior.empty()) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& [label, mean] : prior.mean) {
      labels.push_back(label);
      const Shape flat{static_cast<int>(mean.size())};
      w.add("prior.mean." + std::to_string(label), flat, mean);
      w.add("prior.var." + std::to_string(label), flat,
            prior.var.at(label));
    }
    prior_j["labels"] = std::move(labels);
  }
  nlohmann::json manifest;
  manifest["kind"] = "checkpoint";
  manifest["config"] = detail::config_to_json(model.cfg);
  manifest["schedule"] = detail::schedule_to_json(schedule);
  manifest["vocab"] = vocab.tokens;
  manifest["seed"] = seed;
  manifest["step"] = step;
  manifest["optimizer"] = std::move(slots);
  manifest["prior"] = std::move(prior_j);
  manifest["arrays"] = std::move(w.manifest_arrays);
  detail::write_container(path, manifest, w.payload);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  detail::Container c = detail::read_container(path);
  if (c.manifest.at("kind").get<std::string>() != "checkpoint")
    throw DataError(path + ": not a checkpoint container");
  Checkpoint ck;
  ck.cfg = detail::config_from_json(c.manifest.at("config"));
  ck.schedule = detail::schedule_from_json(c.manifest.at("schedule"));
  ck.vocab.tokens = c.manifest.at("vocab").get<std::vector<std::string>>();
  for (int i = 0; i < ck.vocab.size(); ++i)
    ck.vocab.ids[ck.vocab.tokens[static_cast<std::size_t>(i)]] = i;
  ck.seed = c.manifest.at("seed").get<std::uint64_t>();
  ck.step = c.manifest.at("step").get<long>();
  ck.model = build_model(ck.cfg, ck.seed);

  std::unordered_map<std::string, nlohmann::json> arrays;
  for (const auto& e : c.manifest.at("arrays"))
    arrays[e.at("name").get<std::string>()] = e;

  for (const auto& [name, t] : ck.model.params.ordered()) {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw DataError(path + ": missing parameter '" + name + "'");
    const Shape shape = it->second.at("shape").get<Shape>();
    if (shape != t.shape())
      throw DataError(path + ": shape mismatch for '" + name + "': file " +
                      shape_str(shape) + " vs model " + shape_str(t.shape()));
    t.impl()->value = detail::extract_array(c, it->second, path);
  }
  for (const auto& s : c.manifest.at("optimizer")) {
    const std::string name = s.at("name").get<std::string>();
    if (!ck.model.params.has(name))
      throw DataError(path + ": optimizer slot for unknown parameter '" +
                      name + "'");
    AdamSlot slot;
    slot.t = s.at("t").get<long>();
    slot.m = detail::extract_array(c, arrays.at("adam.m." + name), path);
    slot.v = detail::extract_array(c, arrays.at("adam.v." + name), path);
    ck.adam.slots()[name] = std::move(slot);
  }
  if (c.manifest.contains("prior") && c.manifest.at("prior").is_object() &&
      c.manifest.at("prior").contains("labels")) {
    for (const auto& lj : c.manifest.at("prior").at("labels")) {
      const int label = lj.get<int>();
      ck.prior.mean[label] = detail::extract_array(
          c, arrays.at("prior.mean." + std::to_string(label)), path);
      ck.prior.var[label] = detail::extract_array(
          c, arrays.at("prior.var." + std::to_string(label)), path);
    }
  }
  return ck;
}

// Refuses to resume against a different architecture.
inline void require_config_match(const ModelConfig& a, const ModelConfig& b) {
  if (detail::config_to_json(a) != detail::config_to_json(b))
    throw DataError("checkpoint config does not match the requested config");
}

// --------------------------------------------------------------------------
// generic weight import/export (manifest + flat arrays, parameters only)

inline void save_weights(const std::string& path, const AdaVae& model) {
  detail::ArrayWriter w;
  for (const auto& [name, t] : model.params.ordered())
    w.add(name, t.shape(), t.data());
  nlohmann::json manifest;
  manifest["kind"] = "weights";
  manifest["config"] = detail::config_to_json(model.cfg);
  manifest["arrays"] = std::move(w.manifest_arrays);
  detail::write_container(path, manifest, w.payload);
}

// Applies every array in the file to the model by name; arrays may cover any
// subset of the model's parameters, but names must exist and shapes match.
inline std::size_t load_weights(const std::string& path, AdaVae& model) {
  detail::Container c = detail::read_container(path);
  const std::string kind = c.manifest.at("kind").get<std::string>();
  if (kind != "weights" && kind != "checkpoint")
    throw DataError(path + ": not a weights container");
  std::size_t applied = 0;
  for (const auto& e : c.manifest.at("arrays")) {
    const std::string name = e.at("name").get<std::string>();
    if (name.rfind("adam.", 0) == 0 || name.rfind("prior.", 0) == 0) continue;
    if (!model.params.has(name))
      throw DataError(path + ": weight '" + name +
                      "' does not exist in the model");
    Tensor t = model.params.get(name);
    const Shape shape = e.at("shape").get<Shape>();
    if (shape != t.shape())
      throw DataError(path + ": shape mismatch for '" + name + "': file " +
                      shape_str(shape) + " vs model " + shape_str(t.shape()));
    t.impl()->value = detail::extract_array(c, e, path);
    ++applied;
  }
  return applied;
}

}  // namespace adavae
