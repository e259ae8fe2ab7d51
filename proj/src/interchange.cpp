// Manifest / tensor-file / QDS1 dataset reading and writing.

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include <json.hpp>

#include "sarel/error.hpp"
#include "sarel/io.hpp"
#include "sarel/netgraph.hpp"

namespace sarel {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;
constexpr char kDatasetMagic[4] = {'Q', 'D', 'S', '1'};

std::uint32_t read_u32le(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::int32_t> read_tensor_file(const fs::path& path, std::size_t expected, const std::string& what) {
  const auto bytes = read_file(path);
  if (bytes.size() != expected * 4) {
    fail(ErrorKind::format, what + " file " + path.string() + " holds " + std::to_string(bytes.size()) +
                                " bytes, shape needs " + std::to_string(expected * 4));
  }
  std::vector<std::int32_t> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    out[i] = static_cast<std::int32_t>(read_u32le(bytes.data() + 4 * i));
  }
  return out;
}

std::vector<std::uint8_t> encode_tensor(std::span<const std::int32_t> data) {
  std::vector<std::uint8_t> out;
  out.reserve(data.size() * 4);
  for (auto v : data) append_u32le(out, static_cast<std::uint32_t>(v));
  return out;
}

template <typename T>
T field(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorKind::format, ctx + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::format, ctx + ": field '" + key + "' has the wrong type");
  }
}

QuantParams params_from_json(const json& j, Signedness sign, const std::string& ctx) {
  const int bits = field<int>(j, "bits", ctx);
  const double scale = field<double>(j, "scale", ctx);
  const std::int32_t zp = j.contains("zero_point") ? field<std::int32_t>(j, "zero_point", ctx) : 0;
  try {
    if (sign == Signedness::signed_) {
      if (zp != 0) fail(ErrorKind::format, ctx + ": signed weights need zero_point 0");
      return QuantParams::signed_params(bits, scale);
    }
    return QuantParams::unsigned_params(bits, scale, zp);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::format) throw;
    fail(ErrorKind::format, ctx + ": " + e.what());
  }
}

json params_to_json(const QuantParams& p) {
  return json{{"bits", p.bits}, {"scale", p.scale}, {"zero_point", p.zero_point}};
}

Shape shape_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array() || j.empty()) fail(ErrorKind::format, ctx + ": shape must be a non-empty array");
  Shape s;
  for (const auto& e : j) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) {
      fail(ErrorKind::format, ctx + ": shape extents must be positive integers");
    }
    s.push_back(e.get<std::size_t>());
  }
  return s;
}

Geometry geometry_from_json(const json& j, LayerKind kind, const std::string& ctx) {
  Geometry g;
  if (kind == LayerKind::conv2d) {
    const auto k = field<std::vector<std::size_t>>(j, "kernel", ctx);
    if (k.size() != 2) fail(ErrorKind::format, ctx + ": kernel must be [kh, kw]");
    g.kernel_h = k[0];
    g.kernel_w = k[1];
    g.stride = j.contains("stride") ? field<std::size_t>(j, "stride", ctx) : 1;
    g.padding = j.contains("padding") ? field<std::size_t>(j, "padding", ctx) : 0;
  }
  g.in_channels = field<std::size_t>(j, "in_channels", ctx);
  g.out_channels = field<std::size_t>(j, "out_channels", ctx);
  return g;
}

json geometry_to_json(const Layer& l) {
  const Geometry& g = l.geometry;
  json j;
  if (l.kind == LayerKind::conv2d) {
    j["kernel"] = {g.kernel_h, g.kernel_w};
    j["stride"] = g.stride;
    j["padding"] = g.padding;
  }
  j["in_channels"] = g.in_channels;
  j["out_channels"] = g.out_channels;
  return j;
}

} // namespace

Network load_model(const fs::path& manifest_path) {
  const auto bytes = read_file(manifest_path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::format, manifest_path.string() + ": " + e.what());
  }
  const std::string ctx = manifest_path.string();
  const int version = field<int>(doc, "format_version", ctx);
  if (version != kFormatVersion) {
    fail(ErrorKind::format, ctx + ": unsupported format_version " + std::to_string(version));
  }
  const fs::path dir = manifest_path.parent_path();

  Network net;
  net.name = field<std::string>(doc, "name", ctx);
  net.input_shape = shape_from_json(field<json>(doc, "input_shape", ctx), ctx + " input_shape");
  net.input_params = params_from_json(field<json>(doc, "input_params", ctx), Signedness::unsigned_, ctx + " input_params");
  net.data_params = doc.contains("data_params")
                        ? params_from_json(doc["data_params"], Signedness::unsigned_, ctx + " data_params")
                        : net.input_params;
  net.class_count = field<std::size_t>(doc, "class_count", ctx);

  const json layers = field<json>(doc, "layers", ctx);
  if (!layers.is_array()) fail(ErrorKind::format, ctx + ": layers must be an array");
  Shape shape = net.input_shape;
  QuantParams in_params = net.input_params;
  for (const auto& lj : layers) {
    Layer layer;
    layer.name = field<std::string>(lj, "name", ctx + " layer");
    const std::string lctx = ctx + " layer '" + layer.name + "'";
    layer.kind = layer_kind_from_string(field<std::string>(lj, "kind", lctx));
    if (is_mac(layer.kind)) {
      layer.geometry = geometry_from_json(field<json>(lj, "geometry", lctx), layer.kind, lctx);
      layer.out_params = params_from_json(field<json>(lj, "quant", lctx), Signedness::unsigned_, lctx + " quant");
      const QuantParams wp = params_from_json(field<json>(lj, "weight_quant", lctx), Signedness::signed_, lctx + " weight_quant");
      const Geometry& g = layer.geometry;
      const Shape wshape = layer.kind == LayerKind::conv2d
                               ? Shape{g.kernel_h, g.kernel_w, g.in_channels, g.out_channels}
                               : Shape{g.in_channels, g.out_channels};
      auto w = read_tensor_file(dir / field<std::string>(lj, "weight_file", lctx), element_count(wshape), lctx + " weight");
      try {
        layer.weights = QTensor(wshape, std::move(w), wp);
      } catch (const Error& e) {
        fail(ErrorKind::format, lctx + " weights: " + e.what());
      }
      layer.biases = read_tensor_file(dir / field<std::string>(lj, "bias_file", lctx), g.out_channels, lctx + " bias");
    } else {
      if (lj.contains("geometry")) {
        const json& gj = lj["geometry"];
        if (gj.contains("in_channels")) layer.geometry.in_channels = field<std::size_t>(gj, "in_channels", lctx);
        if (gj.contains("out_channels")) layer.geometry.out_channels = field<std::size_t>(gj, "out_channels", lctx);
      }
      layer.out_params = lj.contains("quant")
                             ? params_from_json(lj["quant"], Signedness::unsigned_, lctx + " quant")
                             : in_params;
    }
    shape = output_shape(layer, shape);
    in_params = layer.out_params;
    net.layers.push_back(std::move(layer));
  }
  validate(net);
  return net;
}

std::string manifest_json(const Network& net) {
  json doc;
  doc["format_version"] = kFormatVersion;
  doc["name"] = net.name;
  doc["input_shape"] = net.input_shape;
  doc["input_params"] = params_to_json(net.input_params);
  if (net.data_params != net.input_params) doc["data_params"] = params_to_json(net.data_params);
  doc["class_count"] = net.class_count;
  json layers = json::array();
  for (const auto& l : net.layers) {
    json lj{{"name", l.name}, {"kind", to_string(l.kind)}};
    if (is_mac(l.kind)) {
      lj["geometry"] = geometry_to_json(l);
      lj["quant"] = params_to_json(l.out_params);
      lj["weight_quant"] = params_to_json(l.weights.params());
      lj["weight_file"] = l.name + ".w.bin";
      lj["bias_file"] = l.name + ".b.bin";
    }
    layers.push_back(std::move(lj));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(2) + "\n";
}

void save_model(const Network& net, const fs::path& dir) {
  validate(net);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
  for (const auto& l : net.layers) {
    if (!is_mac(l.kind)) continue;
    write_file_atomic(dir / (l.name + ".w.bin"), encode_tensor(l.weights.data()));
    write_file_atomic(dir / (l.name + ".b.bin"), encode_tensor(l.biases));
  }
  const std::string m = manifest_json(net);
  write_file_atomic(dir / "manifest.json", std::vector<std::uint8_t>(m.begin(), m.end()));
}

std::vector<std::uint8_t> encode_dataset(const LabeledSet& set) {
  std::vector<std::uint8_t> out(kDatasetMagic, kDatasetMagic + 4);
  append_u32le(out, static_cast<std::uint32_t>(set.size()));
  const std::size_t width = set.empty() ? 0 : set.samples.front().pixels.size();
  for (const auto& s : set.samples) {
    if (s.pixels.size() != width) fail(ErrorKind::input, "dataset samples differ in size");
    out.push_back(s.label);
    for (auto px : s.pixels) append_u32le(out, static_cast<std::uint32_t>(px));
  }
  return out;
}

LabeledSet decode_dataset(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kDatasetMagic, 4) != 0) {
    fail(ErrorKind::format, origin + ": not a QDS1 dataset");
  }
  const std::size_t count = read_u32le(bytes.data() + 4);
  const std::size_t body = bytes.size() - 8;
  if (count == 0) {
    if (body != 0) fail(ErrorKind::format, origin + ": trailing bytes after an empty dataset");
    return {};
  }
  if (body % count != 0 || (body / count) < 1 || ((body / count) - 1) % 4 != 0) {
    fail(ErrorKind::format, origin + ": payload of " + std::to_string(body) + " bytes does not split into " +
                                std::to_string(count) + " samples");
  }
  const std::size_t record = body / count;
  const std::size_t pixels = (record - 1) / 4;
  LabeledSet set;
  set.samples.resize(count);
  const std::uint8_t* p = bytes.data() + 8;
  for (auto& s : set.samples) {
    s.label = *p++;
    s.pixels.resize(pixels);
    for (auto& px : s.pixels) {
      px = static_cast<std::int32_t>(read_u32le(p));
      p += 4;
    }
  }
  return set;
}

LabeledSet load_dataset(const fs::path& path) {
  const auto bytes = read_file(path);
  return decode_dataset(bytes, path.string());
}

void save_dataset(const LabeledSet& set, const fs::path& path) {
  write_file_atomic(path, encode_dataset(set));
}

} // namespace sarel
