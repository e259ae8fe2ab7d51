#include "sarel/propagate.hpp"

#include <algorithm>

#include "sarel/error.hpp"

namespace sarel {

FaultPropagator::FaultPropagator(const Network& net, const GuardSpec& guard)
    : net_(net), guard_(guard), shapes_(net.layer_shapes()) {
  const auto params = net.layer_params();
  multipliers_.resize(net.layers.size(), 0.0);
  std::size_t widest = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (is_mac(net.layers[i].kind)) multipliers_[i] = requant_multiplier(params[i], net.layers[i]);
    widest = std::max(widest, element_count(shapes_[i + 1]));
  }
  acc_delta_.assign(widest, 0);
  touched_stamp_.assign(widest, 0);
  overlay_.resize(net.layers.size());
  overlay_stamp_.resize(net.layers.size());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].kind == LayerKind::maxpool2x2) {
      overlay_[i].assign(element_count(shapes_[i]), 0);
      overlay_stamp_[i].assign(element_count(shapes_[i]), 0);
    }
  }
}

GoldenTrace FaultPropagator::trace(const QTensor& input) const {
  GoldenTrace g;
  g.layer_inputs.reserve(net_.layers.size() + 1);
  g.accumulators.resize(net_.layers.size());
  QTensor x = input;
  g.layer_inputs.emplace_back(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < net_.layers.size(); ++i) {
    const Layer& layer = net_.layers[i];
    QTensor y;
    if (is_mac(layer.kind)) {
      g.accumulators[i] = accumulate(layer, x);
      y = QTensor(shapes_[i + 1], layer.out_params);
      auto dst = y.mutable_data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = requantize(g.accumulators[i][j], multipliers_[i], layer.out_params);
    } else {
      y = reference_layer(layer, x);
    }
    if (guard_.method != GuardMethod::none) {
      if (const LayerBounds* b = guard_.find(i)) {
        for (auto& v : y.mutable_data()) v = apply_guard(v, *b, guard_.method);
      }
    }
    g.layer_inputs.emplace_back(y.data().begin(), y.data().end());
    x = std::move(y);
  }
  g.prediction = make_prediction(x);
  return g;
}

const std::vector<std::int32_t>& FaultPropagator::run(const GoldenTrace& golden, const FaultSite& site, bool& changed) {
  const auto& in = golden.layer_inputs.at(site.layer);
  if (site.activation_index >= in.size()) fail(ErrorKind::config, "fault index outside layer input");
  const int bits = site.layer == 0 ? net_.input_params.bits : net_.layers[site.layer - 1].out_params.bits;
  std::int32_t flipped = flip_bits(in[site.activation_index], site.bit_positions, bits);
  if (guard_.method != GuardMethod::none) {
    if (const LayerBounds* b = guard_.source(site.layer)) flipped = apply_guard(flipped, *b, guard_.method);
  }
  current_.clear();
  if (flipped == in[site.activation_index]) {
    changed = false;
    return golden.layer_inputs.back();
  }
  current_.push_back({site.activation_index, flipped});

  if (++epoch_ == 0) {
    for (auto& s : overlay_stamp_) std::fill(s.begin(), s.end(), 0);
    epoch_ = 1;
  }
  for (std::size_t l = site.layer; l < net_.layers.size(); ++l) {
    step(l, golden);
    std::swap(current_, next_);
    if (current_.empty()) {
      changed = false;
      return golden.layer_inputs.back();
    }
  }
  changed = true;
  final_ = golden.layer_inputs.back();
  for (const auto& d : current_) final_[d.index] = d.value;
  return final_;
}

void FaultPropagator::step(std::size_t l, const GoldenTrace& golden) {
  const Layer& layer = net_.layers[l];
  const auto& in = golden.layer_inputs[l];
  const auto& out = golden.layer_inputs[l + 1];
  const LayerBounds* bounds = guard_.method != GuardMethod::none ? guard_.find(l) : nullptr;
  next_.clear();
  touched_.clear();
  if (++mark_ == 0) {
    std::fill(touched_stamp_.begin(), touched_stamp_.end(), 0);
    mark_ = 1;
  }

  auto emit = [&](std::size_t idx, std::int32_t v) {
    if (bounds) v = apply_guard(v, *bounds, guard_.method);
    if (v != out[idx]) next_.push_back({idx, v});
  };
  auto touch = [&](std::size_t idx) {
    if (touched_stamp_[idx] != mark_) {
      touched_stamp_[idx] = mark_;
      touched_.push_back(idx);
    }
  };

  switch (layer.kind) {
  case LayerKind::conv2d: {
    const Geometry& g = layer.geometry;
    const Shape& is = shapes_[l];
    const Shape& os = shapes_[l + 1];
    const std::size_t W = is[1], C = is[2], Ho = os[0], Wo = os[1], Co = os[2];
    const auto w = layer.weights.data();
    for (const auto& d : current_) {
      const std::int64_t dv = static_cast<std::int64_t>(d.value) - in[d.index];
      const std::size_t ci = d.index % C;
      const std::size_t x = (d.index / C) % W;
      const std::size_t y = d.index / (C * W);
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        const std::size_t py = y + g.padding;
        if (py < ky || (py - ky) % g.stride) continue;
        const std::size_t oy = (py - ky) / g.stride;
        if (oy >= Ho) continue;
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const std::size_t px = x + g.padding;
          if (px < kx || (px - kx) % g.stride) continue;
          const std::size_t ox = (px - kx) / g.stride;
          if (ox >= Wo) continue;
          const std::size_t wbase = ((ky * g.kernel_w + kx) * C + ci) * Co;
          const std::size_t obase = (oy * Wo + ox) * Co;
          for (std::size_t co = 0; co < Co; ++co) {
            touch(obase + co);
            acc_delta_[obase + co] += w[wbase + co] * dv;
          }
        }
      }
    }
    for (std::size_t idx : touched_) {
      const std::int64_t acc = golden.accumulators[l][idx] + acc_delta_[idx];
      acc_delta_[idx] = 0;
      emit(idx, requantize(acc, multipliers_[l], layer.out_params));
    }
    break;
  }
  case LayerKind::dense: {
    const std::size_t M = layer.geometry.out_channels;
    const auto w = layer.weights.data();
    for (const auto& d : current_) {
      const std::int64_t dv = static_cast<std::int64_t>(d.value) - in[d.index];
      const std::size_t base = d.index * M;
      for (std::size_t j = 0; j < M; ++j) acc_delta_[j] += w[base + j] * dv;
    }
    for (std::size_t j = 0; j < M; ++j) {
      const std::int64_t acc = golden.accumulators[l][j] + acc_delta_[j];
      acc_delta_[j] = 0;
      emit(j, requantize(acc, multipliers_[l], layer.out_params));
    }
    break;
  }
  case LayerKind::maxpool2x2: {
    const Shape& is = shapes_[l];
    const Shape& os = shapes_[l + 1];
    const std::size_t W = is[1], C = is[2], Ho = os[0], Wo = os[1];
    auto& ov = overlay_[l];
    auto& os_stamp = overlay_stamp_[l];
    for (const auto& d : current_) {
      ov[d.index] = d.value;
      os_stamp[d.index] = epoch_;
    }
    auto value = [&](std::size_t i) { return os_stamp[i] == epoch_ ? ov[i] : in[i]; };
    for (const auto& d : current_) {
      const std::size_t c = d.index % C;
      const std::size_t oy = (d.index / (C * W)) / 2;
      const std::size_t ox = ((d.index / C) % W) / 2;
      if (oy < Ho && ox < Wo) touch((oy * Wo + ox) * C + c);
    }
    for (std::size_t idx : touched_) {
      const std::size_t c = idx % C;
      const std::size_t ox = (idx / C) % Wo;
      const std::size_t oy = idx / (C * Wo);
      std::int32_t best = value(((2 * oy) * W + 2 * ox) * C + c);
      best = std::max(best, value(((2 * oy) * W + 2 * ox + 1) * C + c));
      best = std::max(best, value(((2 * oy + 1) * W + 2 * ox) * C + c));
      best = std::max(best, value(((2 * oy + 1) * W + 2 * ox + 1) * C + c));
      emit(idx, best);
    }
    break;
  }
  case LayerKind::relu:
    for (const auto& d : current_) emit(d.index, std::max(d.value, layer.out_params.zero_point));
    break;
  case LayerKind::flatten:
    for (const auto& d : current_) emit(d.index, d.value);
    break;
  }
}

} // namespace sarel
