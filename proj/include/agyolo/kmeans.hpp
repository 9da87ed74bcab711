#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "agyolo/anchors.hpp"

namespace agyolo {

struct KMeansResult {
  std::vector<Anchor> centers;    // ascending area
  double objective = 0;           // mean (1 - IoU) of each box to its center
  std::vector<double> history;    // objective after each iteration
  int iterations = 0;
};

// Mean 1 - IoU of co-centered boxes to their nearest center.
double kmeans_objective(std::span<const Anchor> boxes, std::span<const Anchor> centers);

// Farthest-first seeding: the first center is a seeded random box, each next
// one the box farthest (in 1 - IoU) from the chosen centers.
std::vector<Anchor> kmeans_seed(std::span<const Anchor> boxes, int k, std::uint64_t seed);

// Lloyd iterations from `centers` under d = 1 - IoU. Each cluster moves to its
// mean (w, h) unless that would raise the cluster's distance sum, so the
// objective never increases.
KMeansResult kmeans_lloyd(std::span<const Anchor> boxes, std::vector<Anchor> centers, int max_iterations = 1000);

// Seed + Lloyd. Requires k <= number of distinct boxes.
KMeansResult kmeans_anchors(std::span<const Anchor> boxes, int k, std::uint64_t seed, int max_iterations = 1000);

}  // namespace agyolo
