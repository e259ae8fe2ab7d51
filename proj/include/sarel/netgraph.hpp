#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sarel/qtensor.hpp"

namespace sarel {

enum class LayerKind { conv2d, dense, maxpool2x2, relu, flatten };

const char* to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

// Layers that run on the MAC array and own weights.
inline bool is_mac(LayerKind k) { return k == LayerKind::conv2d || k == LayerKind::dense; }

struct Geometry {
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  bool operator==(const Geometry&) const = default;
};

/// One network layer.
///
/// Tensor layouts: feature maps are [H, W, C]; conv weights are
/// [kh, kw, Cin, Cout]; dense weights are [in, out]. Biases live in the
/// accumulator domain (already divided by S_in * S_w).
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::relu;
  Geometry geometry;
  QTensor weights;                  // conv2d / dense only
  std::vector<std::int32_t> biases; // conv2d / dense only
  QuantParams out_params;

  bool operator==(const Layer&) const = default;
};

struct Network {
  std::string name;
  Shape input_shape;
  QuantParams input_params;
  // Quantization domain of the datasets paired with this model. Equal to
  // input_params unless the model was requantized from another width.
  QuantParams data_params;
  std::size_t class_count = 0;
  std::vector<Layer> layers;

  // Input shape of every layer; entry layers.size() is the output shape.
  std::vector<Shape> layer_shapes() const;
  // Quantization params of every layer's input; last entry is the output.
  std::vector<QuantParams> layer_params() const;

  bool operator==(const Network&) const = default;
};

// Output shape of a layer given its input shape. Throws ErrorKind::format
// when the geometry does not fit.
Shape output_shape(const Layer& layer, const Shape& in);

// Checks chaining, weight shapes, bias lengths, param consistency and the
// single terminal dense layer. Throws ErrorKind::format.
void validate(const Network& net);

struct Prediction {
  std::vector<double> logits;      // dequantized final-layer outputs
  std::vector<double> confidences; // softmax of logits
  std::size_t top1 = 0;

  // Class indices ordered by descending confidence, lowest index on ties.
  std::vector<std::size_t> topk(std::size_t k) const;

  bool operator==(const Prediction&) const = default;
};

Prediction make_prediction(const QTensor& final_output);

struct Sample {
  std::uint8_t label = 0;
  std::vector<std::int32_t> pixels;
};

struct LabeledSet {
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

// Quantized input tensor for one sample. Throws ErrorKind::input on a
// shape or range mismatch.
QTensor input_tensor(const Network& net, const Sample& sample);

// Converts every pixel from one quantization grid to another.
LabeledSet rebase(const LabeledSet& set, const QuantParams& from, const QuantParams& to);

// Interchange format. See docs/formats.md.
Network load_model(const std::filesystem::path& manifest_path);
// Writes manifest.json plus <layer>.w.bin / <layer>.b.bin into dir.
void save_model(const Network& net, const std::filesystem::path& dir);
std::string manifest_json(const Network& net);

LabeledSet load_dataset(const std::filesystem::path& path);
void save_dataset(const LabeledSet& set, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const LabeledSet& set);
LabeledSet decode_dataset(std::span<const std::uint8_t> bytes, const std::string& origin);

// Requantizes accumulator value a of a MAC layer to its output grid.
std::int32_t requantize(std::int64_t acc, double multiplier, const QuantParams& out);
// (S_in * S_w) / S_out for a MAC layer.
double requant_multiplier(const QuantParams& in, const Layer& layer);

// Bias plus dot product of every output of a conv2d/dense layer, computed
// with direct nested loops. Output order matches the layer's output tensor.
std::vector<std::int64_t> accumulate(const Layer& layer, const QTensor& input);

// Direct nested-loop execution of one layer.
QTensor reference_layer(const Layer& layer, const QTensor& input);

// Runs layers [first_layer, end) starting from that layer's input tensor and
// returns the final layer output.
QTensor reference_run(const Network& net, const QTensor& layer_input, std::size_t first_layer = 0);

Prediction reference_infer(const Network& net, const QTensor& input);

// Top-1 accuracy in [0, 1] of the reference path.
double evaluate(const Network& net, const LabeledSet& dataset);

// Moves every tensor of the network onto a bits-wide grid, preserving the
// real-valued ranges. Identity when the width already matches.
Network requantize_network(const Network& net, int bits);

} // namespace sarel
