#pragma once

// Model file format: one JSON document.
//
//   {
//     "format": "bernnet-model",
//     "version": 1,
//     "input_shape": [channels, height, width],
//     "input_domain": {"lo": T, "hi": T},
//     "layers": [
//       {"kind": "affine", "in": I, "out": O, "weight": T, "bias": T},
//       {"kind": "conv2d", "in_shape": [c,h,w], "out_channels": C, "kernel": K,
//        "stride": S, "padding": P, "weight": T, "bias": T},
//       {"kind": "bern", "order": N, "width": M, "coeffs": T,
//        "stored_lo": T, "stored_hi": T}
//     ]
//   }
//
// Every T is a base64 string holding little-endian IEEE-754 float64 values.
// Matrices are stored row-major: affine weight is out x in, conv weight is
// out_channels x (in_channels * K * K) with (channel, ky, kx) ordering, and
// Bernstein coefficients are width x (order + 1).

#include <boost/beast/core/detail/base64.hpp>
#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bernnet/network.hpp"

namespace bernnet {

inline constexpr int kModelFormatVersion = 1;
inline constexpr const char* kModelFormatName = "bernnet-model";

/// Malformed model document. `offset` is the byte offset of a syntax error,
/// or empty for structural errors (the message then names the JSON path).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::optional<std::size_t> offset = std::nullopt)
      : std::runtime_error(offset ? what + " (at byte " + std::to_string(*offset) + ")" : what),
        offset_(offset) {}
  [[nodiscard]] std::optional<std::size_t> offset() const { return offset_; }

 private:
  std::optional<std::size_t> offset_;
};

class UnsupportedVersionError : public std::runtime_error {
 public:
  explicit UnsupportedVersionError(int version)
      : std::runtime_error("unsupported model format version " + std::to_string(version) +
                           " (this build reads version " + std::to_string(kModelFormatVersion) + ")"),
        version_(version) {}
  [[nodiscard]] int version() const { return version_; }

 private:
  int version_;
};

namespace detail {

inline std::string encode_doubles(const double* data, std::size_t n) {
  std::vector<unsigned char> bytes(n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    auto bits = std::bit_cast<std::uint64_t>(data[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  std::string out(boost::beast::detail::base64::encoded_size(bytes.size()), '\0');
  out.resize(boost::beast::detail::base64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::vector<double> decode_doubles(const std::string& text, std::size_t expected,
                                          const std::string& path) {
  std::vector<unsigned char> bytes(boost::beast::detail::base64::decoded_size(text.size()));
  const auto [written, read] = boost::beast::detail::base64::decode(bytes.data(), text.data(), text.size());
  std::size_t body = text.size();
  while (body > 0 && text.size() - body < 2 && text[body - 1] == '=') --body;
  if (read < body || text.size() % 4 != 0) throw ParseError(path + ": invalid base64 data");
  if (written != expected * 8)
    throw ParseError(path + ": expected " + std::to_string(expected) + " float64 values, found " +
                     std::to_string(written) + " bytes");
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

template <class Derived>
std::string encode_matrix(const Eigen::DenseBase<Derived>& m) {
  // Row-major copy.
  const RowMatrix rm = m;
  return encode_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
}

inline RowMatrix decode_matrix(const nlohmann::json& doc, const char* key, Eigen::Index rows,
                               Eigen::Index cols, const std::string& path) {
  if (!doc.contains(key) || !doc[key].is_string()) throw ParseError(path + "/" + key + ": missing tensor");
  const auto v = decode_doubles(doc[key].get<std::string>(), static_cast<std::size_t>(rows * cols),
                                path + "/" + key);
  return Eigen::Map<const RowMatrix>(v.data(), rows, cols);
}

inline Vector decode_vector(const nlohmann::json& doc, const char* key, Eigen::Index n,
                            const std::string& path) {
  return decode_matrix(doc, key, n, 1, path).col(0);
}

inline int get_int(const nlohmann::json& doc, const char* key, const std::string& path) {
  if (!doc.contains(key) || !doc[key].is_number_integer())
    throw ParseError(path + "/" + key + ": missing integer field");
  return doc[key].get<int>();
}

inline Shape3 get_shape(const nlohmann::json& doc, const char* key, const std::string& path) {
  if (!doc.contains(key) || !doc[key].is_array() || doc[key].size() != 3)
    throw ParseError(path + "/" + key + ": expected [channels, height, width]");
  Shape3 s;
  try {
    s = {doc[key][0].get<int>(), doc[key][1].get<int>(), doc[key][2].get<int>()};
  } catch (const nlohmann::json::exception&) {
    throw ParseError(path + "/" + key + ": non-integer shape entry");
  }
  if (s.channels < 1 || s.height < 1 || s.width < 1) throw ParseError(path + "/" + key + ": empty shape");
  return s;
}

}  // namespace detail

inline nlohmann::json to_json(const Network& net) {
  using nlohmann::json;
  json doc;
  doc["format"] = kModelFormatName;
  doc["version"] = kModelFormatVersion;
  doc["input_shape"] = {net.input_shape.channels, net.input_shape.height, net.input_shape.width};
  doc["input_domain"] = {{"lo", detail::encode_matrix(net.input_domain.lo)},
                         {"hi", detail::encode_matrix(net.input_domain.hi)}};
  json layers = json::array();
  for (const auto& layer : net.layers) {
    json l;
    if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
      l = {{"kind", "affine"},
           {"in", aff->in_size()},
           {"out", aff->out_size()},
           {"weight", detail::encode_matrix(aff->weight)},
           {"bias", detail::encode_matrix(aff->bias)}};
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      l = {{"kind", "conv2d"},
           {"in_shape", {conv->input.channels, conv->input.height, conv->input.width}},
           {"out_channels", conv->out_channels},
           {"kernel", conv->kernel},
           {"stride", conv->stride},
           {"padding", conv->padding},
           {"weight", detail::encode_matrix(conv->weight)},
           {"bias", detail::encode_matrix(conv->bias)}};
    } else {
      const auto& bern = std::get<BernLayer>(layer);
      l = {{"kind", "bern"},
           {"order", bern.order},
           {"width", bern.size()},
           {"coeffs", detail::encode_matrix(bern.coeffs)},
           {"stored_lo", detail::encode_matrix(bern.stored_lo)},
           {"stored_hi", detail::encode_matrix(bern.stored_hi)}};
    }
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

inline std::string serialize(const Network& net) { return to_json(net).dump(1) + "\n"; }

inline Network from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("model: top level must be an object");
  if (!doc.contains("format") || doc["format"] != kModelFormatName)
    throw ParseError("/format: not a bernnet model document");
  const int version = detail::get_int(doc, "version", "");
  if (version != kModelFormatVersion) throw UnsupportedVersionError(version);

  Network net;
  net.input_shape = detail::get_shape(doc, "input_shape", "");
  if (!doc.contains("input_domain") || !doc["input_domain"].is_object())
    throw ParseError("/input_domain: missing");
  const int n_in = net.input_shape.size();
  net.input_domain = {detail::decode_vector(doc["input_domain"], "lo", n_in, "/input_domain"),
                      detail::decode_vector(doc["input_domain"], "hi", n_in, "/input_domain")};
  if (!doc.contains("layers") || !doc["layers"].is_array()) throw ParseError("/layers: missing array");
  for (std::size_t i = 0; i < doc["layers"].size(); ++i) {
    const auto& l = doc["layers"][i];
    const std::string path = "/layers/" + std::to_string(i);
    if (!l.is_object() || !l.contains("kind") || !l["kind"].is_string())
      throw ParseError(path + "/kind: missing");
    const auto kind = l["kind"].get<std::string>();
    if (kind == "affine") {
      const int in = detail::get_int(l, "in", path), out = detail::get_int(l, "out", path);
      if (in < 1 || out < 1) throw ParseError(path + ": non-positive affine size");
      AffineLayer a;
      a.weight = detail::decode_matrix(l, "weight", out, in, path);
      a.bias = detail::decode_vector(l, "bias", out, path);
      net.layers.emplace_back(std::move(a));
    } else if (kind == "conv2d") {
      Conv2dLayer c;
      c.input = detail::get_shape(l, "in_shape", path);
      c.out_channels = detail::get_int(l, "out_channels", path);
      c.kernel = detail::get_int(l, "kernel", path);
      c.stride = detail::get_int(l, "stride", path);
      c.padding = detail::get_int(l, "padding", path);
      if (c.out_channels < 1 || c.kernel < 1 || c.stride < 1 || c.padding < 0)
        throw ParseError(path + ": invalid conv geometry");
      c.weight = detail::decode_matrix(l, "weight", c.out_channels,
                                       c.input.channels * c.kernel * c.kernel, path);
      c.bias = detail::decode_vector(l, "bias", c.out_channels, path);
      net.layers.emplace_back(std::move(c));
    } else if (kind == "bern") {
      BernLayer b;
      b.order = detail::get_int(l, "order", path);
      const int width = detail::get_int(l, "width", path);
      if (b.order < 1 || b.order > kMaxOrder || width < 1)
        throw ParseError(path + ": invalid order or width");
      b.coeffs = detail::decode_matrix(l, "coeffs", width, b.order + 1, path);
      b.stored_lo = detail::decode_vector(l, "stored_lo", width, path);
      b.stored_hi = detail::decode_vector(l, "stored_hi", width, path);
      net.layers.emplace_back(std::move(b));
    } else {
      throw ParseError(path + "/kind: unknown layer kind '" + kind + "'");
    }
  }
  try {
    net.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
  return net;
}

inline Network deserialize(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model: malformed JSON: ") + e.what(), e.byte);
  }
  return from_json(doc);
}

inline void save_model(const Network& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << serialize(net);
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline Network load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace bernnet
