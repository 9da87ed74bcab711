#include "agyolo/kmeans.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "agyolo/box.hpp"
#include "agyolo/error.hpp"

namespace agyolo {

namespace {

double distance(const Anchor& a, const Anchor& b) { return 1.0 - shape_iou(a.w, a.h, b.w, b.h); }

int nearest(const Anchor& box, std::span<const Anchor> centers) {
  int best = 0;
  double best_d = distance(box, centers[0]);
  for (int i = 1; i < static_cast<int>(centers.size()); ++i) {
    const double d = distance(box, centers[i]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

double kmeans_objective(std::span<const Anchor> boxes, std::span<const Anchor> centers) {
  if (boxes.empty() || centers.empty()) return 0.0;
  double sum = 0;
  for (const Anchor& b : boxes) sum += distance(b, centers[nearest(b, centers)]);
  return sum / static_cast<double>(boxes.size());
}

std::vector<Anchor> kmeans_seed(std::span<const Anchor> boxes, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, boxes.size() - 1);
  std::vector<Anchor> centers{boxes[pick(rng)]};
  std::vector<double> dmin(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) dmin[i] = distance(boxes[i], centers[0]);
  while (static_cast<int>(centers.size()) < k) {
    const auto far = std::max_element(dmin.begin(), dmin.end()) - dmin.begin();
    centers.push_back(boxes[far]);
    for (std::size_t i = 0; i < boxes.size(); ++i) dmin[i] = std::min(dmin[i], distance(boxes[i], centers.back()));
  }
  return centers;
}

KMeansResult kmeans_lloyd(std::span<const Anchor> boxes, std::vector<Anchor> centers, int max_iterations) {
  KMeansResult r;
  const std::size_t k = centers.size();
  std::vector<int> assign(boxes.size(), -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const int c = nearest(boxes[i], centers);
      changed |= c != assign[i];
      assign[i] = c;
    }
    bool moved = false;
    for (std::size_t c = 0; c < k; ++c) {
      double sw = 0, sh = 0, cur = 0;
      int n = 0;
      for (std::size_t i = 0; i < boxes.size(); ++i)
        if (assign[i] == static_cast<int>(c)) {
          sw += boxes[i].w;
          sh += boxes[i].h;
          cur += distance(boxes[i], centers[c]);
          ++n;
        }
      if (n == 0) continue;
      const Anchor mean{sw / n, sh / n};
      double next = 0;
      for (std::size_t i = 0; i < boxes.size(); ++i)
        if (assign[i] == static_cast<int>(c)) next += distance(boxes[i], mean);
      if (next < cur && !(mean == centers[c])) {
        centers[c] = mean;
        moved = true;
      }
    }
    r.iterations = it + 1;
    r.history.push_back(kmeans_objective(boxes, centers));
    if (!changed && !moved) break;
  }
  std::stable_sort(centers.begin(), centers.end(), [](const Anchor& a, const Anchor& b) { return a.area() < b.area(); });
  r.centers = std::move(centers);
  r.objective = kmeans_objective(boxes, r.centers);
  return r;
}

KMeansResult kmeans_anchors(std::span<const Anchor> boxes, int k, std::uint64_t seed, int max_iterations) {
  if (k < 1) throw InputError("k must be positive");
  std::set<std::pair<double, double>> distinct;
  for (const Anchor& b : boxes) {
    if (!(b.w > 0) || !(b.h > 0)) throw InputError("boxes must have positive width and height");
    distinct.insert({b.w, b.h});
  }
  if (static_cast<int>(distinct.size()) < k)
    throw InputError("k = " + std::to_string(k) + " exceeds the " + std::to_string(distinct.size()) +
                     " distinct boxes");
  return kmeans_lloyd(boxes, kmeans_seed(boxes, k, seed), max_iterations);
}

}  // namespace agyolo
