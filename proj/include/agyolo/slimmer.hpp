#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "agyolo/network.hpp"

namespace agyolo {

struct LayerPruneReport {
  int layer = -1;  // the producing conv
  std::string name;
  int channels_before = 0;
  int kept = 0;
  int removed = 0;
  std::vector<double> removed_gamma;
  // Below threshold but kept: the channel feeds a junction that cannot drop
  // it, or its constant activation cannot be folded into every consumer.
  int held_back = 0;
  friend bool operator==(const LayerPruneReport&, const LayerPruneReport&) = default;
};

struct PruneReport {
  double threshold = 0.5;
  int dim = 416;
  ParamCount params_before;
  ParamCount params_after;
  double flops_before = 0;
  double flops_after = 0;
  std::vector<LayerPruneReport> layers;

  [[nodiscard]] int total_removed() const;
  [[nodiscard]] std::string to_json() const;
  [[nodiscard]] std::string to_table() const;
  friend bool operator==(const PruneReport&, const PruneReport&) = default;
};

// Removes channels whose BN gamma satisfies |gamma| < threshold from every
// conv -> BN producer, its BN, and the matching input slices of all
// consumers. Channels are grouped into classes that must go together (a
// shortcut ties the same channel of both operands; concat maps offsets).
// Classes reaching a split, reorg, head or grouped conv are never pruned.
// A removed channel's output is replaced by the constant it would produce
// with gamma = 0, folded into the consumer's bias or BN running mean; when a
// nonzero constant meets a spatial (k > 1 or padded) conv the class is kept.
// Each producer keeps at least one channel. `dim` sets the FLOP report size.
std::pair<Network, PruneReport> prune(const Network& net, double threshold = 0.5, int dim = 416);

PruneReport prune_preview(const Network& net, double threshold = 0.5, int dim = 416);

}  // namespace agyolo
