#pragma once

// Checkpoint format "SDCKPT01":
//   magic[8] | u32 header_len | header JSON | u32 stat_dim | f32 mean[dim]
//   | f32 std[dim] | u32 n_tensors | { u32 name_len | name | u32 nd |
//   u32 dims[nd] | f32 data } ...
// Header JSON: format_version, config, vocab listing, seed, step.
// Optimizer moments ride along as "opt.m.*" / "opt.v.*" tensors so training
// can resume; loaders ignore them unless asked. Save/load round-trips are
// bit-exact.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexstress/model.hpp"
#include "lexstress/util.hpp"

namespace lexstress::model {

inline constexpr char kCheckpointMagic[9] = "SDCKPT01";
inline constexpr uint32_t kCheckpointVersion = 1;

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"d_model", cfg.d_model},
          {"n_heads", cfg.n_heads},
          {"n_enc_layers", cfg.n_enc_layers},
          {"n_dec_layers", cfg.n_dec_layers},
          {"d_ff", cfg.d_ff},
          {"dropout_rate", cfg.dropout_rate},
          {"max_positions", cfg.max_positions},
          {"vocab_size", cfg.vocab_size},
          {"feature_dim", cfg.feature_dim}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.n_enc_layers = j.at("n_enc_layers").get<int>();
  cfg.n_dec_layers = j.at("n_dec_layers").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<float>();
  cfg.max_positions = j.at("max_positions").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.validate();
  return cfg;
}

namespace detail {

inline void write_tensor(std::ostream& os, const std::string& name,
                         const nn::Tensor<float>& t) {
  io::write_u32(os, static_cast<uint32_t>(name.size()));
  io::write_bytes(os, name.data(), name.size());
  io::write_u32(os, static_cast<uint32_t>(t.shape.nd));
  for (int i = 0; i < t.shape.nd; ++i)
    io::write_u32(os, static_cast<uint32_t>(t.shape.d[i]));
  io::write_f32(os, t.v.data(), t.v.size());
}

inline std::pair<std::string, nn::Tensor<float>> read_tensor(
    std::istream& is) {
  const uint32_t name_len = io::read_u32(is, "tensor name length");
  std::string name(name_len, '\0');
  io::read_bytes(is, name.data(), name_len, "tensor name");
  const uint32_t nd = io::read_u32(is, "tensor rank");
  if (nd > 4) throw InputError(cat("tensor ", name, " has rank ", nd));
  nn::Shape shape;
  shape.nd = static_cast<int>(nd);
  for (uint32_t i = 0; i < nd; ++i)
    shape.d[i] = static_cast<int>(io::read_u32(is, "tensor dim"));
  nn::Tensor<float> t(shape);
  io::read_f32(is, t.v.data(), t.v.size(), name);
  return {std::move(name), std::move(t)};
}

}  // namespace detail

inline void save_checkpoint(const ModelParameters& mp, const std::string& path,
                            const ParamMap<float>* opt_m = nullptr,
                            const ParamMap<float>* opt_v = nullptr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError(cat("cannot write checkpoint ", path));

  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"config", config_to_json(mp.config)},
                           {"vocab", lex::Vocabulary::listing()},
                           {"seed", mp.seed},
                           {"step", mp.step},
                           {"optimizer", opt_m != nullptr}};
  const std::string header_str = header.dump();

  io::write_bytes(f, kCheckpointMagic, 8);
  io::write_u32(f, static_cast<uint32_t>(header_str.size()));
  io::write_bytes(f, header_str.data(), header_str.size());

  io::write_u32(f, dsp::kFeatureDim);
  io::write_f32(f, mp.stats.mean.data(), mp.stats.mean.size());
  io::write_f32(f, mp.stats.std.data(), mp.stats.std.size());

  uint32_t n_tensors = static_cast<uint32_t>(mp.tensors.size());
  if (opt_m) n_tensors += static_cast<uint32_t>(opt_m->size() + opt_v->size());
  io::write_u32(f, n_tensors);
  for (const auto& [name, t] : mp.tensors) detail::write_tensor(f, name, t);
  if (opt_m) {
    for (const auto& [name, t] : *opt_m)
      detail::write_tensor(f, "opt.m." + name, t);
    for (const auto& [name, t] : *opt_v)
      detail::write_tensor(f, "opt.v." + name, t);
  }
  if (!f) throw InputError(cat("short write to ", path));
}

inline ModelParameters load_checkpoint(const std::string& path,
                                       ParamMap<float>* opt_m = nullptr,
                                       ParamMap<float>* opt_v = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError(cat("cannot open checkpoint ", path));

  char magic[8];
  io::read_bytes(f, magic, 8, "checkpoint magic");
  if (std::string_view(magic, 8) != std::string_view(kCheckpointMagic, 8))
    throw InputError(cat(path, ": not a checkpoint (bad magic)"));
  const uint32_t header_len = io::read_u32(f, "header length");
  std::string header_str(header_len, '\0');
  io::read_bytes(f, header_str.data(), header_len, "header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(cat(path, ": bad checkpoint header: ", e.what()));
  }
  if (header.at("format_version").get<uint32_t>() != kCheckpointVersion)
    throw InputError(cat(path, ": unsupported checkpoint version"));

  const auto vocab = header.at("vocab").get<std::vector<std::string>>();
  if (vocab != lex::Vocabulary::listing())
    throw InputError(
        cat(path, ": vocabulary listing does not match this build"));

  ModelParameters mp;
  mp.config = config_from_json(header.at("config"));
  mp.seed = header.at("seed").get<uint64_t>();
  mp.step = header.at("step").get<int64_t>();

  const uint32_t dim = io::read_u32(f, "stats dim");
  if (dim != dsp::kFeatureDim)
    throw InputError(cat(path, ": feature stats dim ", dim));
  io::read_f32(f, mp.stats.mean.data(), dim, "feature means");
  io::read_f32(f, mp.stats.std.data(), dim, "feature stds");

  const uint32_t n_tensors = io::read_u32(f, "tensor count");
  for (uint32_t i = 0; i < n_tensors; ++i) {
    auto [name, t] = detail::read_tensor(f);
    if (name.rfind("opt.m.", 0) == 0) {
      if (opt_m) opt_m->emplace(name.substr(6), std::move(t));
    } else if (name.rfind("opt.v.", 0) == 0) {
      if (opt_v) opt_v->emplace(name.substr(6), std::move(t));
    } else {
      mp.tensors.emplace(std::move(name), std::move(t));
    }
  }

  // shapes must match what the config dictates
  auto spec = parameter_spec(mp.config);
  if (spec.size() != mp.tensors.size())
    throw InputError(cat(path, ": expected ", spec.size(),
                         " model tensors, found ", mp.tensors.size()));
  for (const auto& [name, shape] : spec) {
    auto it = mp.tensors.find(name);
    if (it == mp.tensors.end())
      throw InputError(cat(path, ": missing tensor ", name));
    if (!(it->second.shape == shape))
      throw InputError(cat(path, ": tensor ", name, " has shape ",
                           it->second.shape.str(), ", expected ",
                           shape.str()));
  }
  return mp;
}

}  // namespace lexstress::model
