#include "sarel/netgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <string>

#include "sarel/error.hpp"

namespace sarel {

const char* to_string(LayerKind kind) {
  switch (kind) {
  case LayerKind::conv2d: return "conv2d";
  case LayerKind::dense: return "dense";
  case LayerKind::maxpool2x2: return "maxpool2x2";
  case LayerKind::relu: return "relu";
  case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "dense") return LayerKind::dense;
  if (s == "maxpool2x2") return LayerKind::maxpool2x2;
  if (s == "relu") return LayerKind::relu;
  if (s == "flatten") return LayerKind::flatten;
  fail(ErrorKind::format, "unknown layer kind '" + s + "'");
}

namespace {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

[[noreturn]] void layer_error(const Layer& layer, const std::string& what) {
  fail(ErrorKind::format, "layer '" + layer.name + "': " + what);
}

} // namespace

Shape output_shape(const Layer& layer, const Shape& in) {
  const Geometry& g = layer.geometry;
  switch (layer.kind) {
  case LayerKind::conv2d: {
    if (in.size() != 3) layer_error(layer, "expects an [H, W, C] input, got " + shape_str(in));
    if (in[2] != g.in_channels) layer_error(layer, "input has " + std::to_string(in[2]) +
                                                       " channels, geometry says " +
                                                       std::to_string(g.in_channels));
    if (g.kernel_h == 0 || g.kernel_w == 0 || g.stride == 0 || g.out_channels == 0) {
      layer_error(layer, "kernel, stride and out_channels must be positive");
    }
    const std::size_t ph = in[0] + 2 * g.padding, pw = in[1] + 2 * g.padding;
    if (ph < g.kernel_h || pw < g.kernel_w) layer_error(layer, "kernel larger than padded input");
    return {(ph - g.kernel_h) / g.stride + 1, (pw - g.kernel_w) / g.stride + 1, g.out_channels};
  }
  case LayerKind::dense:
    if (in.size() != 1) layer_error(layer, "expects a flat input, got " + shape_str(in));
    if (in[0] != g.in_channels) layer_error(layer, "input has " + std::to_string(in[0]) +
                                                       " features, geometry says " +
                                                       std::to_string(g.in_channels));
    if (g.out_channels == 0) layer_error(layer, "out_channels must be positive");
    return {g.out_channels};
  case LayerKind::maxpool2x2:
    if (in.size() != 3 || in[0] < 2 || in[1] < 2) {
      layer_error(layer, "expects an [H, W, C] input of at least 2x2, got " + shape_str(in));
    }
    return {in[0] / 2, in[1] / 2, in[2]};
  case LayerKind::relu:
    return in;
  case LayerKind::flatten:
    return {element_count(in)};
  }
  layer_error(layer, "unhandled kind");
}

std::vector<Shape> Network::layer_shapes() const {
  std::vector<Shape> shapes{input_shape};
  for (const auto& layer : layers) shapes.push_back(output_shape(layer, shapes.back()));
  return shapes;
}

std::vector<QuantParams> Network::layer_params() const {
  std::vector<QuantParams> params{input_params};
  for (const auto& layer : layers) params.push_back(layer.out_params);
  return params;
}

void validate(const Network& net) {
  if (net.layers.empty()) fail(ErrorKind::format, "network has no layers");
  if (net.input_params.signedness() != Signedness::unsigned_ ||
      net.data_params.signedness() != Signedness::unsigned_) {
    fail(ErrorKind::format, "input activations must be unsigned");
  }
  const auto shapes = net.layer_shapes();
  QuantParams in_params = net.input_params;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    layer.out_params.validate();
    if (layer.out_params.signedness() != Signedness::unsigned_) {
      layer_error(layer, "output activations must be unsigned");
    }
    if (is_mac(layer.kind)) {
      const Geometry& g = layer.geometry;
      const Shape want = layer.kind == LayerKind::conv2d
                             ? Shape{g.kernel_h, g.kernel_w, g.in_channels, g.out_channels}
                             : Shape{g.in_channels, g.out_channels};
      if (layer.weights.shape() != want) {
        layer_error(layer, "weight shape " + shape_str(layer.weights.shape()) +
                               " does not match geometry " + shape_str(want));
      }
      if (layer.weights.params().signedness() != Signedness::signed_) {
        layer_error(layer, "weights must use signed symmetric quantization");
      }
      if (layer.biases.size() != g.out_channels) {
        layer_error(layer, "bias length " + std::to_string(layer.biases.size()) + " != " +
                               std::to_string(g.out_channels));
      }
    } else {
      if (layer.out_params != in_params) {
        layer_error(layer, "pass-through layer must keep its input quantization");
      }
      if (!layer.biases.empty() || layer.weights.size() != 0) {
        layer_error(layer, "pass-through layer carries weights");
      }
    }
    in_params = layer.out_params;
  }
  const Layer& last = net.layers.back();
  if (last.kind != LayerKind::dense) fail(ErrorKind::format, "last layer must be dense");
  if (shapes.back() != Shape{net.class_count}) {
    fail(ErrorKind::format, "terminal layer produces " + shape_str(shapes.back()) + " but class_count is " +
                                std::to_string(net.class_count));
  }
}

std::vector<std::size_t> Prediction::topk(std::size_t k) const {
  std::vector<std::size_t> idx(confidences.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (confidences[a] != confidences[b]) return confidences[a] > confidences[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

Prediction make_prediction(const QTensor& final_output) {
  Prediction p;
  const auto& params = final_output.params();
  p.logits.reserve(final_output.size());
  for (auto q : final_output.data()) p.logits.push_back(dequantize(q, params));
  const double peak = *std::max_element(p.logits.begin(), p.logits.end());
  double total = 0.0;
  for (double l : p.logits) {
    p.confidences.push_back(std::exp(l - peak));
    total += p.confidences.back();
  }
  for (double& c : p.confidences) c /= total;
  // Ties (identical logits) give identical confidences; the first wins.
  p.top1 = 0;
  for (std::size_t i = 1; i < p.logits.size(); ++i) {
    if (final_output[i] > final_output[p.top1]) p.top1 = i;
  }
  return p;
}

QTensor input_tensor(const Network& net, const Sample& sample) {
  return QTensor(net.input_shape, sample.pixels, net.input_params);
}

LabeledSet rebase(const LabeledSet& set, const QuantParams& from, const QuantParams& to) {
  if (from == to) return set;
  LabeledSet out = set;
  for (auto& s : out.samples) {
    for (auto& px : s.pixels) px = rebase(px, from, to);
  }
  return out;
}

std::int32_t requantize(std::int64_t acc, double multiplier, const QuantParams& out) {
  const std::int64_t v = scale_round(acc, multiplier) + out.zero_point;
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(v, out.q_min, out.q_max));
}

double requant_multiplier(const QuantParams& in, const Layer& layer) {
  return in.scale * layer.weights.params().scale / layer.out_params.scale;
}

namespace {

std::vector<std::int64_t> conv_accumulate(const Layer& layer, const QTensor& in) {
  const Geometry& g = layer.geometry;
  const Shape out_shape = output_shape(layer, in.shape());
  const std::size_t H = in.shape()[0], W = in.shape()[1], C = in.shape()[2];
  const std::size_t Ho = out_shape[0], Wo = out_shape[1], Co = out_shape[2];
  const std::int32_t pad_value = in.params().zero_point;
  std::vector<std::int64_t> acc(Ho * Wo * Co);
  const auto w = layer.weights.data();
  for (std::size_t oy = 0; oy < Ho; ++oy) {
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      for (std::size_t co = 0; co < Co; ++co) {
        std::int64_t a_sum = layer.biases[co];
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(H) &&
                                ix < static_cast<std::ptrdiff_t>(W);
            for (std::size_t ci = 0; ci < C; ++ci) {
              const std::int32_t a =
                  inside ? in[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C + ci] : pad_value;
              a_sum += static_cast<std::int64_t>(a) * w[((ky * g.kernel_w + kx) * C + ci) * Co + co];
            }
          }
        }
        acc[(oy * Wo + ox) * Co + co] = a_sum;
      }
    }
  }
  return acc;
}

std::vector<std::int64_t> dense_accumulate(const Layer& layer, const QTensor& in) {
  const std::size_t N = in.size(), M = layer.geometry.out_channels;
  std::vector<std::int64_t> acc(M);
  const auto w = layer.weights.data();
  for (std::size_t j = 0; j < M; ++j) {
    std::int64_t a_sum = layer.biases[j];
    for (std::size_t i = 0; i < N; ++i) a_sum += static_cast<std::int64_t>(in[i]) * w[i * M + j];
    acc[j] = a_sum;
  }
  return acc;
}

QTensor maxpool_reference(const Layer& layer, const QTensor& in) {
  const Shape out_shape = output_shape(layer, in.shape());
  const std::size_t W = in.shape()[1], C = in.shape()[2];
  QTensor out(out_shape, layer.out_params);
  auto dst = out.mutable_data();
  for (std::size_t oy = 0; oy < out_shape[0]; ++oy) {
    for (std::size_t ox = 0; ox < out_shape[1]; ++ox) {
      for (std::size_t c = 0; c < C; ++c) {
        std::int32_t best = std::numeric_limits<std::int32_t>::min();
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            best = std::max(best, in[((2 * oy + dy) * W + (2 * ox + dx)) * C + c]);
          }
        }
        dst[(oy * out_shape[1] + ox) * C + c] = best;
      }
    }
  }
  return out;
}

} // namespace

std::vector<std::int64_t> accumulate(const Layer& layer, const QTensor& input) {
  switch (layer.kind) {
  case LayerKind::conv2d: return conv_accumulate(layer, input);
  case LayerKind::dense:
    (void)output_shape(layer, input.shape());
    return dense_accumulate(layer, input);
  default: layer_error(layer, "has no accumulators");
  }
}

QTensor reference_layer(const Layer& layer, const QTensor& input) {
  switch (layer.kind) {
  case LayerKind::conv2d:
  case LayerKind::dense: {
    const auto acc = accumulate(layer, input);
    const double m = requant_multiplier(input.params(), layer);
    QTensor out(output_shape(layer, input.shape()), layer.out_params);
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = requantize(acc[i], m, layer.out_params);
    return out;
  }
  case LayerKind::maxpool2x2: return maxpool_reference(layer, input);
  case LayerKind::relu: {
    QTensor out = input;
    for (auto& v : out.mutable_data()) v = std::max(v, layer.out_params.zero_point);
    return out;
  }
  case LayerKind::flatten: return input.reshaped({input.size()});
  }
  layer_error(layer, "unhandled kind");
}

QTensor reference_run(const Network& net, const QTensor& layer_input, std::size_t first_layer) {
  if (first_layer >= net.layers.size()) fail(ErrorKind::config, "first layer out of range");
  const auto shapes = net.layer_shapes();
  if (layer_input.shape() != shapes[first_layer]) {
    fail(ErrorKind::input, "input shape " + shape_str(layer_input.shape()) + " != expected " +
                               shape_str(shapes[first_layer]));
  }
  QTensor x = layer_input;
  for (std::size_t i = first_layer; i < net.layers.size(); ++i) x = reference_layer(net.layers[i], x);
  return x;
}

Prediction reference_infer(const Network& net, const QTensor& input) {
  return make_prediction(reference_run(net, input, 0));
}

double evaluate(const Network& net, const LabeledSet& dataset) {
  if (dataset.empty()) fail(ErrorKind::input, "cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  for (const auto& s : dataset.samples) {
    if (s.label >= net.class_count) {
      fail(ErrorKind::input, "label " + std::to_string(s.label) + " >= class count");
    }
    if (reference_infer(net, input_tensor(net, s)).top1 == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

Network requantize_network(const Network& net, int bits) {
  bool same = net.input_params.bits == bits;
  for (const auto& l : net.layers) {
    same = same && l.out_params.bits == bits && (!is_mac(l.kind) || l.weights.params().bits == bits);
  }
  if (same) return net;

  auto activation_params = [bits](const QuantParams& old) {
    const double top = dequantize(old.q_max, old);
    return QuantParams::unsigned_params(bits, compute_scale(0.0, top, bits));
  };

  Network out = net;
  out.input_params = activation_params(net.input_params);
  QuantParams old_in = net.input_params, new_in = out.input_params;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& src = net.layers[i];
    Layer& dst = out.layers[i];
    if (!is_mac(src.kind)) {
      dst.out_params = new_in;
      continue;
    }
    const QuantParams& old_w = src.weights.params();
    std::int32_t peak = 0;
    for (auto q : src.weights.data()) peak = std::max(peak, std::abs(q));
    const double m = peak > 0 ? peak * old_w.scale : old_w.scale;
    const QuantParams new_w = QuantParams::signed_params(bits, compute_scale(-m, m, bits));
    std::vector<std::int32_t> wq;
    wq.reserve(src.weights.size());
    for (auto q : src.weights.data()) wq.push_back(quantize_weight(dequantize(q, old_w), new_w));
    dst.weights = QTensor(src.weights.shape(), std::move(wq), new_w);

    const double bias_ratio = (old_in.scale * old_w.scale) / (new_in.scale * new_w.scale);
    for (std::size_t j = 0; j < src.biases.size(); ++j) {
      const std::int64_t b = grid_floor(src.biases[j] * bias_ratio);
      if (b < std::numeric_limits<std::int32_t>::min() || b > std::numeric_limits<std::int32_t>::max()) {
        layer_error(src, "bias overflows int32 at " + std::to_string(bits) + " bits");
      }
      dst.biases[j] = static_cast<std::int32_t>(b);
    }
    dst.out_params = activation_params(src.out_params);
    old_in = src.out_params;
    new_in = dst.out_params;
  }
  validate(out);
  return out;
}

} // namespace sarel
