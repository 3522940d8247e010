#pragma once

// Versioned binary checkpoints.
//
// Byte layout (little-endian throughout):
//   bytes 0..3   magic "SXCK"
//   u32          format version (currently 1)
//   u32          metadata length, followed by that many bytes of JSON
//                (model kind, loss, reference id, seed, epochs, input size,
//                 scalar width, layer specs, bottleneck/trunk markers)
//   u32          parameter tensor count
//   per tensor:  u32 rank, u32 dims..., raw scalar payload
//   u32          CRC32 (IEEE, reflected) over everything after the magic
//
// Files are written to "<path>.tmp" and renamed into place, so a reader
// never sees a half-written checkpoint.

#include "simex/model.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace simex {

namespace detail {

class Crc32 {
 public:
  Crc32() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table_[i] = c;
    }
  }
  std::uint32_t compute(const unsigned char* data, std::size_t len) const {
    std::uint32_t c = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i)
      c = table_[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
  }

 private:
  std::uint32_t table_[256];
};

inline std::uint32_t crc32(const std::vector<unsigned char>& buf) {
  static const Crc32 c;
  return c.compute(buf.data(), buf.size());
}

inline void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  buf.push_back(static_cast<unsigned char>(v));
  buf.push_back(static_cast<unsigned char>(v >> 8));
  buf.push_back(static_cast<unsigned char>(v >> 16));
  buf.push_back(static_cast<unsigned char>(v >> 24));
}

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t len) : p_(p), end_(p + len) {}
  std::uint32_t u32() {
    if (end_ - p_ < 4) throw std::runtime_error("checkpoint: truncated file");
    const std::uint32_t v = std::uint32_t(p_[0]) | (std::uint32_t(p_[1]) << 8) |
                            (std::uint32_t(p_[2]) << 16) | (std::uint32_t(p_[3]) << 24);
    p_ += 4;
    return v;
  }
  const unsigned char* bytes(std::size_t n) {
    if (std::size_t(end_ - p_) < n) throw std::runtime_error("checkpoint: truncated file");
    const unsigned char* r = p_;
    p_ += n;
    return r;
  }
  std::size_t remaining() const { return std::size_t(end_ - p_); }

 private:
  const unsigned char* p_;
  const unsigned char* end_;
};

inline nlohmann::json layer_spec_to_json(const LayerSpec& s) {
  nlohmann::json j;
  j["kind"] = layer_kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::Conv2d:
      j["out_channels"] = s.out_channels;
      j["in_channels"] = s.in_channels;
      j["kh"] = s.kh;
      j["kw"] = s.kw;
      j["pad"] = s.pad == PadMode::Same ? "same"
                 : s.pad == PadMode::Valid ? "valid" : "full";
      j["crop_h"] = s.crop_h;
      j["crop_w"] = s.crop_w;
      break;
    case LayerKind::Dense:
      j["out_units"] = s.out_units;
      j["in_units"] = s.in_units;
      break;
    case LayerKind::Reshape:
      j["target"] = s.target;
      break;
    default:
      break;
  }
  return j;
}

inline LayerSpec layer_spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind");
  if (kind == "conv2d") {
    const std::string pad = j.at("pad");
    LayerSpec s = LayerSpec::conv2d(
        j.at("out_channels"), j.at("in_channels"), j.at("kh"),
        pad == "same" ? PadMode::Same : pad == "valid" ? PadMode::Valid : PadMode::Full,
        j.at("crop_h"), j.at("crop_w"));
    s.kw = j.at("kw");
    return s;
  }
  if (kind == "dense") return LayerSpec::dense(j.at("out_units"), j.at("in_units"));
  if (kind == "reshape") return LayerSpec::reshape(j.at("target").get<Shape>());
  if (kind == "maxpool2") return LayerSpec::maxpool2();
  if (kind == "upsample2") return LayerSpec::upsample2();
  if (kind == "relu") return LayerSpec::relu();
  if (kind == "sigmoid") return LayerSpec::sigmoid();
  throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
}

template <typename Scalar>
std::vector<unsigned char> serialize_network(const Network<Scalar>& net,
                                             const nlohmann::json& meta_json) {
  std::vector<unsigned char> body;
  put_u32(body, 1u);  // version

  nlohmann::json meta = meta_json;
  meta["scalar_bytes"] = int(sizeof(Scalar));
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& l : net.layers()) specs.push_back(layer_spec_to_json(l.spec));
  meta["layers"] = std::move(specs);
  const std::string meta_str = meta.dump();
  put_u32(body, std::uint32_t(meta_str.size()));
  body.insert(body.end(), meta_str.begin(), meta_str.end());

  const auto params = net.params();
  put_u32(body, std::uint32_t(params.size()));
  for (const auto* p : params) {
    put_u32(body, std::uint32_t(p->shape.size()));
    for (int d : p->shape) put_u32(body, std::uint32_t(d));
    const std::size_t off = body.size();
    body.resize(off + std::size_t(p->size()) * sizeof(Scalar));
    std::memcpy(body.data() + off, p->data.data(), std::size_t(p->size()) * sizeof(Scalar));
  }
  put_u32(body, crc32(body));

  std::vector<unsigned char> out{'S', 'X', 'C', 'K'};
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

inline void write_file_atomic(const std::string& path,
                              const std::vector<unsigned char>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failure on " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
nlohmann::json deserialize_network(const std::string& path, Network<Scalar>& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "SXCK", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);

  const std::size_t body_len = bytes.size() - 4;
  if (body_len < 4) throw std::runtime_error("checkpoint: truncated file " + path);
  const std::vector<unsigned char> body(bytes.begin() + 4, bytes.end() - 4);
  ByteReader tail(bytes.data() + bytes.size() - 4, 4);
  if (crc32(body) != tail.u32())
    throw std::runtime_error("checkpoint: CRC mismatch in " + path);

  ByteReader r(body.data(), body.size());
  const std::uint32_t version = r.u32();
  if (version != 1u)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version) + " in " + path);
  const std::uint32_t meta_len = r.u32();
  const unsigned char* meta_bytes = r.bytes(meta_len);
  const nlohmann::json meta =
      nlohmann::json::parse(meta_bytes, meta_bytes + meta_len);
  if (meta.at("scalar_bytes").get<int>() != int(sizeof(Scalar)))
    throw std::runtime_error("checkpoint: scalar width mismatch in " + path);

  std::vector<LayerSpec> specs;
  for (const auto& js : meta.at("layers")) specs.push_back(layer_spec_from_json(js));
  net = Network<Scalar>(std::move(specs));

  // Allocate parameter slots, then overwrite with the stored payload.
  RngStream rng(0);
  net.init(rng);
  auto params = net.params();
  const std::uint32_t count = r.u32();
  if (count != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  for (auto* p : params) {
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = int(r.u32());
    if (shape != p->shape)
      throw std::runtime_error("checkpoint: parameter shape mismatch in " + path);
    const unsigned char* payload = r.bytes(std::size_t(p->size()) * sizeof(Scalar));
    std::memcpy(p->data.data(), payload, std::size_t(p->size()) * sizeof(Scalar));
  }
  if (r.remaining() != 0)
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return meta;
}

inline nlohmann::json meta_to_json(const ModelMeta& m) {
  nlohmann::json j;
  j["kind"] = m.kind;
  j["loss"] = m.loss;
  j["reference_id"] = m.reference_id;
  j["seed"] = m.seed;
  j["epochs_trained"] = m.epochs_trained;
  j["input_h"] = m.input_h;
  j["input_w"] = m.input_w;
  j["num_classes"] = m.num_classes;
  return j;
}

inline ModelMeta meta_from_json(const nlohmann::json& j) {
  ModelMeta m;
  m.kind = j.at("kind");
  m.loss = j.at("loss");
  m.reference_id = j.at("reference_id");
  m.seed = j.at("seed");
  m.epochs_trained = j.at("epochs_trained");
  m.input_h = j.at("input_h");
  m.input_w = j.at("input_w");
  m.num_classes = j.at("num_classes");
  return m;
}

}  // namespace detail

template <typename Scalar>
void save_checkpoint(const AutoencoderModel<Scalar>& model, const std::string& path) {
  nlohmann::json meta = detail::meta_to_json(model.meta);
  meta["bottleneck_layer"] = model.bottleneck_layer;
  meta["bottleneck_width"] = model.bottleneck_width;
  detail::write_file_atomic(path, detail::serialize_network(model.net, meta));
}

template <typename Scalar>
void save_checkpoint(const ClassifierModel<Scalar>& model, const std::string& path) {
  nlohmann::json meta = detail::meta_to_json(model.meta);
  meta["conv_layer_count"] = model.conv_layer_count;
  detail::write_file_atomic(path, detail::serialize_network(model.net, meta));
}

template <typename Scalar>
AutoencoderModel<Scalar> load_autoencoder(const std::string& path) {
  AutoencoderModel<Scalar> m;
  const nlohmann::json meta = detail::deserialize_network(path, m.net);
  m.meta = detail::meta_from_json(meta);
  if (m.meta.kind != "autoencoder")
    throw std::runtime_error("checkpoint: '" + path + "' is not an autoencoder");
  m.bottleneck_layer = meta.at("bottleneck_layer");
  m.bottleneck_width = meta.at("bottleneck_width");
  return m;
}

template <typename Scalar>
ClassifierModel<Scalar> load_classifier(const std::string& path) {
  ClassifierModel<Scalar> m;
  const nlohmann::json meta = detail::deserialize_network(path, m.net);
  m.meta = detail::meta_from_json(meta);
  if (m.meta.kind != "classifier")
    throw std::runtime_error("checkpoint: '" + path + "' is not a classifier");
  m.conv_layer_count = meta.at("conv_layer_count");
  return m;
}

}  // namespace simex
