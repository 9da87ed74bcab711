#pragma once

#include <string>

#include "agyolo/network.hpp"

namespace agyolo {

enum class Precision { FP32, FP16 };

// AGYL weight file:
//   "AGYL" | u32 version (1) | u32 descriptor length | JSON descriptor |
//   parameter arrays, little-endian, in layer order.
// Conv layers store weights then bias; BN layers store gamma, beta, running
// mean, running var. FP16 files store IEEE binary16 values.
inline constexpr std::uint32_t kWeightsVersion = 1;

// JSON descriptor of the architecture: layers, heads, anchors, class count.
// `meta` (a JSON object, may be empty) is stored alongside and ignored when
// comparing architectures.
std::string describe_network(const Network& net, Precision precision, const std::string& meta = "{}");

void save_weights(const Network& net, const std::string& path, Precision precision = Precision::FP32,
                  const std::string& meta = "{}");

// Loads parameters into an existing network whose architecture must match the
// file's descriptor. Returns the stored meta object as JSON text.
std::string load_weights(Network& net, const std::string& path);

// Rebuilds the network (including pruned ones) from the descriptor alone.
Network load_network(const std::string& path, std::string* meta = nullptr);

}  // namespace agyolo
