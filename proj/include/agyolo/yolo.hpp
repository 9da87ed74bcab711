#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "agyolo/anchors.hpp"
#include "agyolo/box.hpp"
#include "agyolo/network.hpp"

namespace agyolo {

struct GroundTruth {
  Box box;
  int cls = 0;
  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Channel offsets inside one anchor's block of a head tensor.
enum HeadChannel : int { kTx = 0, kTy = 1, kTw = 2, kTh = 3, kObj = 4 };

// Grid and anchors of one detection head for a given input size.
struct HeadLayout {
  int stride = 32;
  Grid grid;
  std::vector<int> anchors;  // global indices into the AnchorSet
};

std::vector<HeadLayout> head_layouts(const Network& net, int input_h, int input_w);

enum class SlotLabel : std::uint8_t { Background, Ignore, Positive };

// Per (head, anchor, cell) label. Slots of head h are stored as
// (a * grid.h + y) * grid.w + x.
struct Assignment {
  std::vector<HeadLayout> heads;
  std::vector<std::vector<SlotLabel>> labels;
  std::vector<std::vector<int>> gt_index;  // gt of each positive slot, -1 elsewhere
  int unassigned = 0;  // gts that found no free slot (all candidate slots taken)

  [[nodiscard]] static int slot(const HeadLayout& h, int a, int y, int x) {
    return (a * h.grid.h + y) * h.grid.w + x;
  }
  [[nodiscard]] int count(SlotLabel label) const;
};

inline constexpr double kIgnoreShapeIou = 0.5;

// Each gt is positive at the cell holding its center, for the anchor (across
// both heads) with the highest co-centered IoU; when that slot is already
// taken it falls back to its next-best anchor. Other anchors with shape IoU
// above 0.5 at that cell, and every slot whose prior box (anchor centered on
// the cell) overlaps some gt, are ignored. The rest are background.
Assignment assign_targets(std::span<const GroundTruth> gts, const AnchorSet& anchors,
                          std::span<const HeadLayout> heads);

// ---- losses ----

enum class LossMode { FocalCiou, Legacy };

struct LossConfig {
  LossMode mode = LossMode::FocalCiou;
  double alpha = 0.5;
  double gamma = 0.2;
  double lambda_obj = 1.0;
  double lambda_noobj = 1.0;
  double lambda_box = 0.2;
  double clamp = 1e-7;
  // When > 0, ignore slots whose decoded prediction has IoU below this with
  // every gt are trained as background (the usual YOLOv3 rule).
  double ignore_refine_iou = 0.0;
};

struct ScalarGrad {
  double value = 0;
  double grad = 0;  // d value / d logit
};

// Focal objectness of one slot as a function of its logit. c = sigmoid(t) is
// clamped to [clamp, 1 - clamp]; the gradient is zero where the clamp binds.
ScalarGrad focal_objectness(double logit, bool positive, const LossConfig& cfg);
ScalarGrad legacy_objectness(double logit, bool positive, const LossConfig& cfg);

struct CiouResult {
  double loss = 0;
  double iou = 0;
  std::array<double, 4> grad{};  // d loss / d (cx, cy, w, h) of the prediction
};

// 1 - IoU + rho^2 / c^2 + v^2 / ((1 - IoU) + v); c^2 is the squared diagonal
// of the enclosing box and v = 4/pi^2 (atan(gw/gh) - atan(w/h))^2.
CiouResult ciou_loss(const Box& pred, const Box& gt);

struct LossBreakdown {
  double total = 0;
  double obj = 0;
  double box = 0;
  int positives = 0;
};

// Loss of a batch of head outputs (one tensor per head, head order) against
// per-image ground truth. Values and gradients are averaged over the batch.
// `grads`, when given, receives d total / d output per head.
template <typename T>
LossBreakdown total_loss(std::span<const Tensor<T>> outputs, std::span<const std::vector<GroundTruth>> gts,
                         const AnchorSet& anchors, std::span<const HeadLayout> heads, const LossConfig& cfg,
                         std::vector<Tensor<T>>* grads = nullptr);

}  // namespace agyolo
