#include "sarel/systolic.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "sarel/error.hpp"

namespace sarel {

void ArrayConfig::validate() const {
  if (rows < 1 || cols < 1) fail(ErrorKind::config, "array needs at least one row and one column");
  if (!(clock_hz > 0.0)) fail(ErrorKind::config, "clock frequency must be positive");
}

double CycleReport::giops(double clock_hz) const {
  if (cycles == 0) return 0.0;
  const double seconds = static_cast<double>(cycles) / clock_hz;
  return 2.0 * static_cast<double>(mac_ops) / seconds / 1e9;
}

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Flat input index feeding lowered element (m, k), or npos for padding.
constexpr std::size_t kPad = static_cast<std::size_t>(-1);

std::vector<std::size_t> im2col_index(const Layer& layer, const Shape& in, std::size_t& m_out, std::size_t& k_out) {
  const Geometry& g = layer.geometry;
  if (layer.kind == LayerKind::dense) {
    m_out = 1;
    k_out = g.in_channels;
    std::vector<std::size_t> idx(k_out);
    for (std::size_t k = 0; k < k_out; ++k) idx[k] = k;
    return idx;
  }
  const Shape out = output_shape(layer, in);
  const std::size_t H = in[0], W = in[1], C = in[2];
  m_out = out[0] * out[1];
  k_out = g.kernel_h * g.kernel_w * C;
  std::vector<std::size_t> idx(m_out * k_out);
  for (std::size_t oy = 0; oy < out[0]; ++oy) {
    for (std::size_t ox = 0; ox < out[1]; ++ox) {
      const std::size_t m = oy * out[1] + ox;
      for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
          const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(H) &&
                              ix < static_cast<std::ptrdiff_t>(W);
          for (std::size_t ci = 0; ci < C; ++ci) {
            const std::size_t k = (ky * g.kernel_w + kx) * C + ci;
            idx[m * k_out + k] =
                inside ? (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * C + ci : kPad;
          }
        }
      }
    }
  }
  return idx;
}

// One weight-stationary pass of a tile through an R x C grid of PEs,
// stepping registers cycle by cycle. Adds the emitted column sums into acc
// (M x N row-major) and returns the cycles spent streaming.
std::uint64_t stream_tile(const Tile& tile, const ArrayConfig& cfg, std::span<const std::int32_t> lowered_act,
                          std::size_t k_total, std::span<const std::int32_t> w, std::size_t n_total,
                          std::vector<std::int64_t>& acc) {
  const std::size_t R = cfg.rows, C = cfg.cols, S = tile.stream_rows;
  const std::size_t kr = tile.k_end - tile.k_begin, nc = tile.n_end - tile.n_begin;

  // Weights pinned in the PEs; unused PEs hold zero.
  std::vector<std::int32_t> pe_w(R * C, 0);
  for (std::size_t r = 0; r < kr; ++r) {
    for (std::size_t c = 0; c < nc; ++c) pe_w[r * C + c] = w[(tile.k_begin + r) * n_total + tile.n_begin + c];
  }

  std::vector<std::int32_t> act(R * C, 0), act_next(R * C, 0);
  std::vector<std::int64_t> psum(R * C, 0), psum_next(R * C, 0);
  const std::uint64_t total = S + R + C - 2;
  for (std::uint64_t t = 0; t < total; ++t) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        std::int32_t a_in = 0;
        if (c == 0) {
          // Row r sees stream row m = t - r.
          if (t >= r && t - r < S && r < kr) a_in = lowered_act[(t - r) * k_total + tile.k_begin + r];
        } else {
          a_in = act[r * C + c - 1];
        }
        const std::int64_t p_in = r == 0 ? 0 : psum[(r - 1) * C + c];
        act_next[r * C + c] = a_in;
        psum_next[r * C + c] = p_in + static_cast<std::int64_t>(a_in) * pe_w[r * C + c];
      }
    }
    std::swap(act, act_next);
    std::swap(psum, psum_next);
    // Bottom edge: column c carries stream row m = t - (R - 1) - c.
    for (std::size_t c = 0; c < nc; ++c) {
      if (t < R - 1 + c) continue;
      const std::uint64_t m = t - (R - 1) - c;
      if (m < S) acc[m * n_total + tile.n_begin + c] += psum[(R - 1) * C + c];
    }
  }
  return total;
}

} // namespace

TileSchedule lower_layer(const Layer& layer, const Shape& input_shape, const ArrayConfig& cfg) {
  cfg.validate();
  if (!is_mac(layer.kind)) {
    fail(ErrorKind::config, std::string("layer kind ") + to_string(layer.kind) + " does not run on the array");
  }
  (void)output_shape(layer, input_shape);
  TileSchedule s;
  if (layer.kind == LayerKind::dense) {
    s.m = 1;
    s.k = layer.geometry.in_channels;
  } else {
    const Shape out = output_shape(layer, input_shape);
    s.m = out[0] * out[1];
    s.k = layer.geometry.kernel_h * layer.geometry.kernel_w * layer.geometry.in_channels;
  }
  s.n = layer.geometry.out_channels;
  for (std::size_t nb = 0; nb < ceil_div(s.n, cfg.cols); ++nb) {
    for (std::size_t kb = 0; kb < ceil_div(s.k, cfg.rows); ++kb) {
      Tile t;
      t.k_begin = kb * cfg.rows;
      t.k_end = std::min(s.k, t.k_begin + cfg.rows);
      t.n_begin = nb * cfg.cols;
      t.n_end = std::min(s.n, t.n_begin + cfg.cols);
      t.stream_rows = s.m;
      s.tiles.push_back(t);
    }
  }
  return s;
}

LayerRun run_layer(const Layer& layer, const QTensor& input, const ArrayConfig& cfg, const ActivationHook& hook) {
  cfg.validate();
  const Shape out_shape = output_shape(layer, input.shape());
  auto read = [&](std::size_t i) { return hook ? hook(i, input[i]) : input[i]; };

  if (!is_mac(layer.kind)) {
    QTensor staged = input;
    if (hook) {
      auto d = staged.mutable_data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = read(i);
    }
    LayerRun run{reference_layer(layer, staged), {}};
    run.cycles.cycles = ceil_div(input.size(), cfg.lanes());
    return run;
  }

  const TileSchedule sched = lower_layer(layer, input.shape(), cfg);
  std::size_t m = 0, k = 0;
  const auto index = im2col_index(layer, input.shape(), m, k);
  const std::int32_t pad = input.params().zero_point;
  std::vector<std::int32_t> lowered(m * k);
  for (std::size_t i = 0; i < lowered.size(); ++i) lowered[i] = index[i] == kPad ? pad : read(index[i]);

  std::vector<std::int64_t> acc(m * sched.n, 0);
  LayerRun run;
  for (const Tile& t : sched.tiles) {
    run.cycles.cycles += stream_tile(t, cfg, lowered, k, layer.weights.data(), sched.n, acc) + cfg.rows;
  }
  run.cycles.mac_ops = static_cast<std::uint64_t>(m) * k * sched.n;

  const double mult = requant_multiplier(input.params(), layer);
  run.output = QTensor(out_shape, layer.out_params);
  auto dst = run.output.mutable_data();
  for (std::size_t row = 0; row < m; ++row) {
    for (std::size_t n = 0; n < sched.n; ++n) {
      dst[row * sched.n + n] = requantize(acc[row * sched.n + n] + layer.biases[n], mult, layer.out_params);
    }
  }
  return run;
}

void check_fault_site(const Network& net, const FaultSite& site) {
  if (site.layer >= net.layers.size()) {
    fail(ErrorKind::config, "fault layer " + std::to_string(site.layer) + " out of range");
  }
  const auto shapes = net.layer_shapes();
  const auto params = net.layer_params();
  if (site.activation_index >= element_count(shapes[site.layer])) {
    fail(ErrorKind::config, "fault activation index " + std::to_string(site.activation_index) +
                                " outside layer " + std::to_string(site.layer) + " input of " +
                                std::to_string(element_count(shapes[site.layer])) + " words");
  }
  if (site.bit_positions.empty()) fail(ErrorKind::config, "fault flips no bits");
  (void)flip_bits(0, site.bit_positions, params[site.layer].bits);
}

NetworkRun run_network(const Network& net, const QTensor& input, const ArrayConfig& cfg,
                       std::span<const FaultSite> faults, const GuardSpec* guard) {
  cfg.validate();
  const auto params = net.layer_params();
  // (layer, index) -> XOR mask of flipped bits.
  std::map<std::pair<std::size_t, std::size_t>, std::int32_t> masks;
  for (const auto& f : faults) {
    check_fault_site(net, f);
    std::int32_t mask = 0;
    for (int b : f.bit_positions) mask |= std::int32_t{1} << b;
    masks[{f.layer, f.activation_index}] ^= mask;
  }
  if (input.shape() != net.input_shape) fail(ErrorKind::input, "input shape does not match the network");

  NetworkRun result;
  QTensor x = input;
  const bool guarded = guard && guard->method != GuardMethod::none;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    ActivationHook hook;
    auto lo = masks.lower_bound({i, 0});
    if (lo != masks.end() && lo->first.first == i) {
      std::map<std::size_t, std::int32_t> layer_masks;
      for (auto it = lo; it != masks.end() && it->first.first == i; ++it) layer_masks[it->first.second] = it->second;
      // Stored words are already in range, so only a flipped word can trip
      // the read-side check.
      const LayerBounds* check = guarded ? guard->source(i) : nullptr;
      const GuardMethod method = guarded ? guard->method : GuardMethod::none;
      hook = [layer_masks = std::move(layer_masks), check, method](std::size_t idx, std::int32_t v) {
        auto it = layer_masks.find(idx);
        if (it == layer_masks.end()) return v;
        v ^= it->second;
        return check ? apply_guard(v, *check, method) : v;
      };
    }
    LayerRun run = run_layer(net.layers[i], x, cfg, hook);
    if (guarded) {
      if (const LayerBounds* b = guard->find(i)) {
        for (auto& v : run.output.mutable_data()) v = apply_guard(v, *b, guard->method);
      }
    }
    result.cycles += run.cycles;
    result.layer_outputs.push_back(run.output);
    x = std::move(run.output);
  }
  result.prediction = make_prediction(x);
  return result;
}

} // namespace sarel
