#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "gcl/error.hpp"
#include "gcl/inference.hpp"
#include "gcl/network.hpp"

namespace gcl {

using json = nlohmann::json;

inline constexpr int kModelSchemaVersion = 1;

namespace detail {

inline const char* kind_name(BlockKind k) {
  switch (k) {
    case BlockKind::dense: return "dense";
    case BlockKind::residual_dense: return "residual_dense";
    case BlockKind::classifier_head: return "classifier_head";
  }
  return "?";
}

inline BlockKind parse_kind(const std::string& s) {
  if (s == "dense") return BlockKind::dense;
  if (s == "residual_dense") return BlockKind::residual_dense;
  if (s == "classifier_head") return BlockKind::classifier_head;
  throw ConfigError("unknown block kind '" + s + "'");
}

inline json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.storage()}}; }

inline Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<float>>());
}

inline json block_json(const Block& b) {
  return json{{"kind", kind_name(b.spec.kind)},
              {"width", b.spec.width},
              {"activation", b.spec.activation == Activation::relu ? "relu" : "none"},
              {"weight", tensor_json(b.weight)},
              {"bias", tensor_json(b.bias)}};
}

inline Block block_from_json(const json& j) {
  Block b;
  b.spec.kind = parse_kind(j.at("kind").get<std::string>());
  b.spec.width = j.at("width").get<std::size_t>();
  b.spec.activation = j.at("activation").get<std::string>() == "relu" ? Activation::relu : Activation::none;
  b.weight = tensor_from_json(j.at("weight"));
  b.bias = tensor_from_json(j.at("bias"));
  return b;
}

inline json gc_common_json(const GCLayer& l) {
  return json{{"after_block", l.after_block},
              {"position_fraction", l.position_fraction},
              {"alpha", l.alpha},
              {"beta", l.beta},
              {"tap", l.tap == GateTap::post_compression ? "post_compression" : "pre_compression"},
              {"pool_window", l.pool_window},
              {"gate_weight", tensor_json(l.gate_weight)},
              {"gate_bias", tensor_json(l.gate_bias)}};
}

inline GCLayer gc_common_from_json(const json& j) {
  GCLayer l;
  l.after_block = j.at("after_block").get<std::size_t>();
  l.position_fraction = j.at("position_fraction").get<double>();
  l.alpha = j.at("alpha").get<double>();
  l.beta = j.at("beta").get<double>();
  l.tap = j.at("tap").get<std::string>() == "pre_compression" ? GateTap::pre_compression : GateTap::post_compression;
  l.pool_window = j.at("pool_window").get<std::size_t>();
  l.gate_weight = tensor_from_json(j.at("gate_weight"));
  l.gate_bias = tensor_from_json(j.at("gate_bias"));
  return l;
}

inline void check_network(const Network& net) {
  std::vector<BlockSpec> specs;
  for (const auto& b : net.blocks) specs.push_back(b.spec);
  validate_blocks(net.input_width, net.num_classes, specs);
  std::size_t prev = 0;
  for (const auto& l : net.gc_layers) {
    if (l.after_block <= prev || l.after_block >= net.blocks.size()) {
      throw ConfigError("GC layer positions must be strictly increasing trunk boundaries");
    }
    if (l.phi.size() != net.blocks[l.after_block - 1].spec.width) throw ConfigError("phi width mismatch");
    prev = l.after_block;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Research model: all parameters, φ kept continuous.
// ---------------------------------------------------------------------------

inline json model_to_json(const Network& net) {
  json j;
  j["format"] = "gcl-model";
  j["schema_version"] = kModelSchemaVersion;
  j["input_width"] = net.input_width;
  j["num_classes"] = net.num_classes;
  j["blocks"] = json::array();
  for (const auto& b : net.blocks) j["blocks"].push_back(detail::block_json(b));
  j["gc_layers"] = json::array();
  for (const auto& l : net.gc_layers) {
    json g = detail::gc_common_json(l);
    g["phi"] = detail::tensor_json(l.phi);
    j["gc_layers"].push_back(std::move(g));
  }
  return j;
}

// ---------------------------------------------------------------------------
// Deploy model: φ replaced by a packed 1-bit mask (bit i lives in byte i/8 at
// bit position i%8, least significant bit first) plus its sparse index list.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> pack_mask(const Tensor& phi) {
  const Tensor m = binary_mask(phi);
  std::vector<std::uint8_t> bytes((m.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0f) bytes[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return bytes;
}

inline Tensor unpack_mask(const std::vector<std::uint8_t>& bytes, std::size_t length) {
  if (bytes.size() != (length + 7) / 8) throw DataError("packed mask has the wrong byte count");
  Tensor phi({length});
  for (std::size_t i = 0; i < length; ++i) phi[i] = (bytes[i / 8] >> (i % 8)) & 1u ? 1.0f : 0.0f;
  return phi;
}

inline std::string to_hex(const std::vector<std::uint8_t>& bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s;
  for (auto b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

inline std::vector<std::uint8_t> from_hex(const std::string& s) {
  if (s.size() % 2 != 0) throw DataError("hex string of odd length");
  auto nib = [](char c) -> std::uint8_t {
    if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<std::uint8_t>(c - 'a' + 10);
    throw DataError(std::string("bad hex digit '") + c + "'");
  };
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < s.size(); i += 2) out.push_back(static_cast<std::uint8_t>(nib(s[i]) << 4 | nib(s[i + 1])));
  return out;
}

struct MaskFootprint {
  std::size_t length = 0;
  std::size_t nonzeros = 0;
  double dense_bits = 0;   // length · N
  double packed_bits = 0;  // length
  double sparse_bits = 0;  // p · length · ⌈log2 length⌉
  double compression_rate = 0;
};

inline MaskFootprint mask_footprint(const Tensor& phi, std::size_t N = 32) {
  MaskFootprint f;
  f.length = phi.size();
  f.nonzeros = mask_nonzeros(phi);
  const double p = static_cast<double>(f.nonzeros) / static_cast<double>(f.length);
  f.dense_bits = static_cast<double>(f.length * N);
  f.packed_bits = static_cast<double>(f.length);
  f.sparse_bits = sparse_encoded_bits(f.length, p, N);
  f.compression_rate = compression_rate(f.length, p, N);
  return f;
}

inline json deploy_to_json(const Network& net) {
  json j = model_to_json(net);
  j["format"] = "gcl-deploy";
  for (std::size_t i = 0; i < net.gc_layers.size(); ++i) {
    const auto& l = net.gc_layers[i];
    json& g = j["gc_layers"][i];
    g.erase("phi");
    const auto fp = mask_footprint(l.phi);
    std::vector<std::size_t> nz;
    const Tensor m = binary_mask(l.phi);
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (m[k] != 0.0f) nz.push_back(k);
    }
    g["mask"] = json{{"length", l.phi.size()},
                     {"bit_order", "lsb_first"},
                     {"packed", to_hex(pack_mask(l.phi))},
                     {"nonzero_indices", nz},
                     {"index_bits", ceil_log2(l.phi.size())},
                     {"sparse_bits", fp.sparse_bits},
                     {"dense_bits", fp.dense_bits},
                     {"compression_rate", std::isinf(fp.compression_rate) ? json(nullptr) : json(fp.compression_rate)}};
  }
  return j;
}

/// Reads either format. Deploy masks come back as φ ∈ {0, 1}, which binarize
/// to the same mask.
inline Network model_from_json(const json& j) {
  try {
    const auto format = j.at("format").get<std::string>();
    if (format != "gcl-model" && format != "gcl-deploy") throw ConfigError("unknown model format '" + format + "'");
    if (j.at("schema_version").get<int>() != kModelSchemaVersion) throw ConfigError("unsupported model schema_version");
    Network net;
    net.input_width = j.at("input_width").get<std::size_t>();
    net.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& b : j.at("blocks")) net.blocks.push_back(detail::block_from_json(b));
    for (const auto& g : j.at("gc_layers")) {
      GCLayer l = detail::gc_common_from_json(g);
      if (format == "gcl-model") {
        l.phi = detail::tensor_from_json(g.at("phi"));
      } else {
        const auto& m = g.at("mask");
        l.phi = unpack_mask(from_hex(m.at("packed").get<std::string>()), m.at("length").get<std::size_t>());
      }
      net.gc_layers.push_back(std::move(l));
    }
    detail::check_network(net);
    return net;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed model document: ") + e.what());
  }
}

inline void save_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << j.dump(1) << '\n';
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

inline void save_model(const Network& net, const std::string& path) { save_json(model_to_json(net), path); }
inline void save_deploy(const Network& net, const std::string& path) { save_json(deploy_to_json(net), path); }
inline Network load_model(const std::string& path) { return model_from_json(load_json(path)); }

}  // namespace gcl
