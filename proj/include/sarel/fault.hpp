#pragma once

#include <cstddef>
#include <vector>

namespace sarel {

/// A persistent activation fault: the stored word at activation_index of
/// layer `layer`'s input feature map has bit_positions inverted on every read.
struct FaultSite {
  std::size_t layer = 0;
  std::size_t activation_index = 0;
  std::vector<int> bit_positions; // distinct, ascending

  bool operator==(const FaultSite&) const = default;
};

} // namespace sarel
