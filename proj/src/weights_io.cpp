// SPDX-License-Identifier: Apache-2.0
#include "tinydrop/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tinydrop/error.hpp"

namespace tinydrop {

namespace {

using json = nlohmann::ordered_json;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const std::string& in, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

json config_to_json(const ViTConfig& cfg) {
  return json{{"image_size", cfg.image_size}, {"patch_size", cfg.patch_size},
              {"channels", cfg.channels},     {"dim", cfg.dim},
              {"depth", cfg.depth},           {"heads", cfg.heads},
              {"mlp_ratio", cfg.mlp_ratio},   {"num_classes", cfg.num_classes},
              {"pos_mode", std::string(to_string(cfg.pos_mode))},
              {"readout", std::string(to_string(cfg.readout))}};
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("metadata: missing config field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("metadata: bad value for config field '") + key + "'");
  }
}

ViTConfig config_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("metadata: config must be an object");
  ViTConfig cfg;
  cfg.image_size = field<std::size_t>(j, "image_size");
  cfg.patch_size = field<std::size_t>(j, "patch_size");
  cfg.channels = field<std::size_t>(j, "channels");
  cfg.dim = field<std::size_t>(j, "dim");
  cfg.depth = field<std::size_t>(j, "depth");
  cfg.heads = field<std::size_t>(j, "heads");
  cfg.mlp_ratio = field<double>(j, "mlp_ratio");
  cfg.num_classes = field<std::size_t>(j, "num_classes");
  try {
    cfg.pos_mode = pos_mode_from_string(field<std::string>(j, "pos_mode"));
    cfg.readout = readout_from_string(field<std::string>(j, "readout"));
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("metadata: ") + e.what());
  }
  return cfg;
}

std::string encode(const char* kind, const json& config, const std::vector<const NamedTensor*>& tensors) {
  json manifest = json::array();
  for (const auto* t : tensors) manifest.push_back(json{{"name", t->name}, {"shape", t->tensor.shape()}});
  const json meta{{"format", "TDW1"}, {"version", kTdwVersion}, {"kind", kind},
                  {"config", config}, {"tensors", manifest}};
  const std::string text = meta.dump();

  std::string out(kTdwMagic, sizeof kTdwMagic);
  put_u64(out, text.size());
  out += text;
  for (const auto* t : tensors) {
    for (double v : t->tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::size_t count = 0;
};

struct Decoded {
  std::string kind;
  json config;
  std::vector<ManifestEntry> manifest;
  std::size_t payload_offset = 0;
};

Decoded decode(const std::string& bytes) {
  if (bytes.size() < sizeof kTdwMagic || std::memcmp(bytes.data(), kTdwMagic, sizeof kTdwMagic) != 0) {
    throw FormatError("bad magic: not a TDW1 file");
  }
  if (bytes.size() < 16) throw FormatError("truncated header: missing metadata length");
  const std::uint64_t meta_len = get_u64(bytes, 8);
  if (meta_len > bytes.size() - 16) throw FormatError("truncated metadata: length field exceeds file size");

  json meta;
  try {
    meta = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(meta_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("metadata is not valid JSON: ") + e.what());
  }
  if (!meta.is_object() || meta.value("format", "") != "TDW1") {
    throw FormatError("metadata: field 'format' must be \"TDW1\"");
  }
  if (!meta.contains("version") || !meta["version"].is_number_integer() ||
      meta["version"].get<int>() != kTdwVersion) {
    throw FormatError("metadata: unsupported field 'version' (expected " + std::to_string(kTdwVersion) + ")");
  }
  if (!meta.contains("kind") || !meta["kind"].is_string()) throw FormatError("metadata: missing field 'kind'");
  if (!meta.contains("tensors") || !meta["tensors"].is_array()) {
    throw FormatError("metadata: missing field 'tensors'");
  }

  Decoded out;
  out.kind = meta["kind"].get<std::string>();
  out.config = meta.value("config", json());
  out.payload_offset = 16 + meta_len;
  for (const auto& entry : meta["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string() ||
        !entry.contains("shape") || !entry["shape"].is_array()) {
      throw FormatError("metadata: malformed tensor manifest entry");
    }
    const std::string name = entry["name"].get<std::string>();
    Shape shape;
    std::size_t count = 1;
    for (const auto& d : entry["shape"]) {
      if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
        throw FormatError("tensor '" + name + "': shape entries must be positive integers");
      }
      shape.push_back(d.get<std::size_t>());
      if (count > (std::size_t{1} << 40) / shape.back()) throw FormatError("tensor '" + name + "': shape too large");
      count *= shape.back();
    }
    if (shape.empty()) throw FormatError("tensor '" + name + "': empty shape");
    out.manifest.push_back({name, std::move(shape), count});
  }
  return out;
}

// Reads the payload described by an already validated manifest. The payload
// must hold exactly the listed tensors.
std::vector<NamedTensor> read_payload(const std::string& bytes, const Decoded& d) {
  std::vector<NamedTensor> tensors;
  std::size_t offset = d.payload_offset;
  for (const auto& e : d.manifest) {
    if ((bytes.size() - offset) / 8 < e.count) {
      throw FormatError("tensor '" + e.name + "': payload truncated (manifest " + to_string(e.shape) +
                        " needs " + std::to_string(e.count * 8) + " bytes, " +
                        std::to_string(bytes.size() - offset) + " remain)");
    }
    std::vector<double> values(e.count);
    for (std::size_t i = 0; i < e.count; ++i) values[i] = std::bit_cast<double>(get_u64(bytes, offset + 8 * i));
    offset += 8 * e.count;
    tensors.push_back({e.name, Tensor(e.shape, std::move(values))});
  }
  if (offset != bytes.size()) {
    const std::string last = d.manifest.empty() ? std::string("manifest") : "tensor '" + d.manifest.back().name + "'";
    throw FormatError("payload has " + std::to_string(bytes.size() - offset) + " bytes beyond " + last +
                      ", the last manifest entry");
  }
  return tensors;
}

}  // namespace

std::string encode_weights(const ViTConfig& cfg, const ViTWeights& weights) {
  validate_weights(cfg, weights);
  std::vector<NamedTensor> owned;
  weights.for_each([&](const std::string& name, const Tensor& t) { owned.push_back({name, t}); });
  std::vector<const NamedTensor*> refs;
  for (const auto& t : owned) refs.push_back(&t);
  return encode("vit", config_to_json(cfg), refs);
}

std::pair<ViTConfig, ViTWeights> decode_weights(const std::string& bytes) {
  Decoded d = decode(bytes);
  if (d.kind != "vit") throw FormatError("metadata: field 'kind' is '" + d.kind + "', expected 'vit'");
  const ViTConfig cfg = config_from_json(d.config);
  const auto manifest = weight_manifest(cfg);
  if (d.manifest.size() != manifest.size()) {
    throw FormatError("manifest lists " + std::to_string(d.manifest.size()) + " tensors, config requires " +
                      std::to_string(manifest.size()));
  }
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& got = d.manifest[i];
    const auto& [name, shape] = manifest[i];
    if (got.name != name) throw FormatError("tensor '" + got.name + "' found where '" + name + "' was expected");
    if (got.shape != shape) {
      throw FormatError("tensor '" + name + "': manifest shape " + to_string(got.shape) +
                        " disagrees with config shape " + to_string(shape));
    }
  }
  std::vector<NamedTensor> tensors = read_payload(bytes, d);
  ViTWeights w = zero_weights(cfg);
  std::size_t i = 0;
  w.for_each([&](const std::string&, Tensor& t) { t = std::move(tensors[i++].tensor); });
  return {cfg, std::move(w)};
}

std::string encode_tensor(const std::string& name, const Tensor& tensor) {
  NamedTensor t{name, tensor};
  return encode("tensor", nullptr, {&t});
}

NamedTensor decode_tensor(const std::string& bytes) {
  Decoded d = decode(bytes);
  if (d.kind != "tensor") throw FormatError("metadata: field 'kind' is '" + d.kind + "', expected 'tensor'");
  if (d.manifest.size() != 1) throw FormatError("tensor file must hold exactly one tensor");
  return std::move(read_payload(bytes, d).front());
}

void save_weights(const ViTConfig& cfg, const ViTWeights& weights, const std::filesystem::path& path) {
  write_file_atomic(path, encode_weights(cfg, weights));
}

std::pair<ViTConfig, ViTWeights> load_weights(const std::filesystem::path& path) {
  try {
    return decode_weights(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_tensor(const std::string& name, const Tensor& tensor, const std::filesystem::path& path) {
  write_file_atomic(path, encode_tensor(name, tensor));
}

NamedTensor load_tensor(const std::filesystem::path& path) {
  try {
    return decode_tensor(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("error writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename temporary file onto '" + path.string() + "'");
  }
}

}  // namespace tinydrop
