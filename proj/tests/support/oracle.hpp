#pragma once

// Test-only oracles, written against the layer definitions rather than the
// engine. Nothing here calls into the engine's arithmetic.

#include <cstdint>
#include <random>
#include <vector>

#include "sarel/netgraph.hpp"
#include "sarel/systolic.hpp"

namespace oracle {

// Plain nested-loop execution of one layer over int32 words.
std::vector<std::int32_t> run_layer(const sarel::Layer& layer, const sarel::Shape& in_shape,
                                    const sarel::QuantParams& in_params, const std::vector<std::int32_t>& in);

// Every layer in order; returns the outputs of each layer.
std::vector<std::vector<std::int32_t>> run_network(const sarel::Network& net, const std::vector<std::int32_t>& input,
                                                   std::size_t first_layer = 0);

// Step-counting simulation of one weight-stationary tile: activations for
// stream row m enter PE row r at cycle m + r and move one column per cycle.
// Returns the cycle after the last MAC plus the weight preload.
std::uint64_t tile_cycles(std::size_t stream_rows, std::size_t rows, std::size_t cols);

struct StackOptions {
  std::size_t max_hw = 16;
  std::size_t max_c = 8;
  std::size_t max_layers = 4;
  int bits = 8;
};

// A random chain of conv/dense/pool/relu layers ending in a dense layer.
sarel::Network random_network(std::mt19937_64& rng, const StackOptions& opt = {});

sarel::QTensor random_input(std::mt19937_64& rng, const sarel::Network& net);

} // namespace oracle
