#pragma once

/**
 * Weight-stationary systolic array model.
 *
 * conv2d and dense layers are lowered to a matrix product
 *
 *   out[M x N] = act[M x K] * w[K x N]
 *
 * (im2col for conv: K = kh*kw*Cin, N = Cout, M = output pixels) and tiled
 * into blocks of at most R x C weights. Each tile is preloaded into the
 * array (R cycles), then the M activation rows stream in from the left with
 * a one-cycle skew per row while partial sums flow down the columns. The
 * last partial sum leaves the bottom edge after M + R + C - 2 cycles.
 *
 * Pooling, ReLU and flatten run on a vector unit of `vector_width` lanes.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sarel/fault.hpp"
#include "sarel/guard.hpp"
#include "sarel/netgraph.hpp"

namespace sarel {

struct ArrayConfig {
  std::size_t rows = 8;
  std::size_t cols = 8;
  double clock_hz = 100e6;
  std::size_t vector_width = 0; // 0: same as cols

  std::size_t lanes() const { return vector_width ? vector_width : cols; }
  void validate() const;
};

struct Tile {
  std::size_t k_begin = 0, k_end = 0; // rows of the lowered weight matrix
  std::size_t n_begin = 0, n_end = 0; // output channels
  std::size_t stream_rows = 0;        // M
};

struct TileSchedule {
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::vector<Tile> tiles;
};

struct CycleReport {
  std::uint64_t mac_ops = 0;
  std::uint64_t cycles = 0;

  double giops(double clock_hz) const;
  CycleReport& operator+=(const CycleReport& o) {
    mac_ops += o.mac_ops;
    cycles += o.cycles;
    return *this;
  }
  bool operator==(const CycleReport&) const = default;
};

// Closed-form cycles of one tile: stream fill/drain plus weight preload.
inline std::uint64_t tile_cycles(std::size_t stream_rows, const ArrayConfig& cfg) {
  return stream_rows + cfg.rows + cfg.cols - 2 + cfg.rows;
}

// Tiling of a conv2d/dense layer for the given input shape. Throws
// ErrorKind::config for other layer kinds.
TileSchedule lower_layer(const Layer& layer, const Shape& input_shape, const ArrayConfig& cfg);

// Applied to every stored activation as it is read: (flat index, word) -> word.
using ActivationHook = std::function<std::int32_t(std::size_t, std::int32_t)>;

struct LayerRun {
  QTensor output;
  CycleReport cycles;
};

// Executes one layer. conv2d/dense go through a cycle-stepped PE grid; the
// returned cycle count is what the grid actually took.
LayerRun run_layer(const Layer& layer, const QTensor& input, const ArrayConfig& cfg,
                   const ActivationHook& hook = {});

struct NetworkRun {
  Prediction prediction;
  CycleReport cycles;
  std::vector<QTensor> layer_outputs;
};

// Runs the whole network. Each fault flips its word on every read of that
// layer's input (faults on the same word combine by XOR); the guard clamps
// guarded layers' outputs before they are stored.
NetworkRun run_network(const Network& net, const QTensor& input, const ArrayConfig& cfg,
                       std::span<const FaultSite> faults = {}, const GuardSpec* guard = nullptr);

// Throws ErrorKind::config if the site does not address a word of the net.
void check_fault_site(const Network& net, const FaultSite& site);

} // namespace sarel
