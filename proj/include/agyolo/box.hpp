#pragma once

#include <array>

namespace agyolo {

// Normalized center-form rectangle.
struct Box {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  [[nodiscard]] double left() const { return cx - w / 2; }
  [[nodiscard]] double right() const { return cx + w / 2; }
  [[nodiscard]] double top() const { return cy - h / 2; }
  [[nodiscard]] double bottom() const { return cy + h / 2; }
  [[nodiscard]] double area() const { return w * h; }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

double intersection_area(const Box& a, const Box& b);

// Intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// IoU of two boxes placed on a common center (width/height only).
double shape_iou(double w1, double h1, double w2, double h2);

// Per-box raw network outputs for one (head, cell, anchor) slot.
struct RawPrediction {
  double tx = 0;
  double ty = 0;
  double tw = 0;
  double th = 0;
  double tobj = 0;
};

struct Cell {
  int x = 0;
  int y = 0;
};

struct Grid {
  int w = 0;
  int h = 0;
};

double sigmoid(double v);
double logit(double p);

// b = ((cx + sig(tx)) / S_w, (cy + sig(ty)) / S_h, pw e^tw / dim, ph e^th / dim).
Box decode_box(const RawPrediction& t, Cell cell, double anchor_w, double anchor_h, Grid grid,
               double net_dim);

// Inverse of decode_box on the coordinates. Offsets within the cell are clamped
// into (eps, 1 - eps) before the logit so centers on cell borders stay finite.
RawPrediction encode_box(const Box& gt, Cell cell, double anchor_w, double anchor_h, Grid grid,
                         double net_dim, double eps = 1e-7);

// Cell whose extent contains the box center (clamped to the grid).
Cell cell_of(const Box& b, Grid grid);

}  // namespace agyolo
