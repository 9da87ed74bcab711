#include "agyolo/box.hpp"

#include <algorithm>
#include <cmath>

namespace agyolo {

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.left(), b.left());
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top());
  if (iw <= 0 || ih <= 0) return 0.0;
  return iw * ih;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  const double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

Box decode_box(const RawPrediction& t, Cell cell, double anchor_w, double anchor_h, Grid grid,
               double net_dim) {
  return {(cell.x + sigmoid(t.tx)) / grid.w, (cell.y + sigmoid(t.ty)) / grid.h,
          anchor_w * std::exp(t.tw) / net_dim, anchor_h * std::exp(t.th) / net_dim};
}

RawPrediction encode_box(const Box& gt, Cell cell, double anchor_w, double anchor_h, Grid grid,
                         double net_dim, double eps) {
  const double ox = std::clamp(gt.cx * grid.w - cell.x, eps, 1.0 - eps);
  const double oy = std::clamp(gt.cy * grid.h - cell.y, eps, 1.0 - eps);
  RawPrediction t;
  t.tx = logit(ox);
  t.ty = logit(oy);
  t.tw = std::log(gt.w * net_dim / anchor_w);
  t.th = std::log(gt.h * net_dim / anchor_h);
  return t;
}

Cell cell_of(const Box& b, Grid grid) {
  const int x = std::clamp(static_cast<int>(std::floor(b.cx * grid.w)), 0, grid.w - 1);
  const int y = std::clamp(static_cast<int>(std::floor(b.cy * grid.h)), 0, grid.h - 1);
  return {x, y};
}

}  // namespace agyolo
