#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agyolo/dataio.hpp"
#include "agyolo/network.hpp"
#include "agyolo/yolo.hpp"

namespace agyolo {

struct Detection {
  Box box;
  double confidence = 0;
  int cls = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

// Slots of image `index` with sigmoid(t_obj) >= conf_thresh, in decode order
// (head, anchor, row, column).
std::vector<Detection> decode_detections(std::span<const TensorF> outputs, int index, const AnchorSet& anchors,
                                         std::span<const HeadLayout> heads, double conf_thresh);

// Greedy suppression. Sorted by confidence (stable, so ties keep input order);
// a detection survives if its IoU with every kept one is <= iou_thresh.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh = 0.5);

struct MatchCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  double iou_sum = 0;  // over true positives
};

// Detections in descending confidence each take the unmatched gt with the
// highest IoU, provided it reaches `iou_thresh`.
MatchCounts match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_thresh);

struct PrfScores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// P := 0 without detections, R := 0 without ground truth, F1 := 0 when P + R = 0.
PrfScores prf(int tp, int fp, int fn);
double f1_score(double precision, double recall);

struct ThresholdReport {
  double iou_threshold = 0.5;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  PrfScores scores;
};

struct EvalReport {
  std::vector<ThresholdReport> thresholds;
  double average_iou = 0;  // mean IoU of true positives at the first threshold
  int images = 0;
  int ground_truths = 0;
  int detections = 0;

  [[nodiscard]] const ThresholdReport& at(double iou_threshold) const;
  [[nodiscard]] std::string to_json() const;
  [[nodiscard]] std::string to_table() const;
};

struct EvalOptions {
  double conf_thresh = 0.4;
  double nms_thresh = 0.5;
  std::vector<double> iou_thresholds{0.5, 0.75};
  int dim = 416;
  int batch = 8;
};

EvalReport evaluate(Network& net, ImageStore& data, const EvalOptions& opts = {});

// resize -> forward -> decode -> filter -> NMS. Sorted by confidence.
std::vector<Detection> detect(Network& net, const TensorF& image, int dim, double conf_thresh = 0.4,
                              double nms_thresh = 0.5);

struct QuantizeReport {
  std::int64_t values = 0;
  double max_abs_error = 0;
  double mean_abs_error = 0;
};

// Rounds every stored parameter (weights, biases, BN statistics) to binary16.
QuantizeReport quantize_net(Network& net);

// Copy of `image` with detection outlines; color ramps from red (low
// confidence) to green (high).
TensorF annotate(const TensorF& image, std::span<const Detection> dets);

}  // namespace agyolo
