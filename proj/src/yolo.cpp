#include "agyolo/yolo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace agyolo {

std::vector<HeadLayout> head_layouts(const Network& net, int input_h, int input_w) {
  std::vector<HeadLayout> out;
  for (const HeadInfo& h : net.heads()) {
    if (input_h % h.stride != 0 || input_w % h.stride != 0)
      throw DimensionError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                           " is not divisible by head stride " + std::to_string(h.stride));
    out.push_back({h.stride, {input_w / h.stride, input_h / h.stride}, h.anchors});
  }
  return out;
}

int Assignment::count(SlotLabel label) const {
  int n = 0;
  for (const auto& head : labels) n += static_cast<int>(std::count(head.begin(), head.end(), label));
  return n;
}

Assignment assign_targets(std::span<const GroundTruth> gts, const AnchorSet& anchors,
                          std::span<const HeadLayout> heads) {
  Assignment as;
  as.heads.assign(heads.begin(), heads.end());
  for (const HeadLayout& h : heads) {
    const std::size_t slots = h.anchors.size() * h.grid.w * h.grid.h;
    as.labels.emplace_back(slots, SlotLabel::Background);
    as.gt_index.emplace_back(slots, -1);
  }

  // (head, local anchor) of every global anchor index
  std::vector<std::pair<int, int>> owner(anchors.size(), {-1, -1});
  for (std::size_t hi = 0; hi < heads.size(); ++hi)
    for (std::size_t a = 0; a < heads[hi].anchors.size(); ++a)
      owner.at(heads[hi].anchors[a]) = {static_cast<int>(hi), static_cast<int>(a)};

  for (const GroundTruth& gt : gts)
    if (!(gt.box.w > 0) || !(gt.box.h > 0)) throw InputError("ground-truth box with zero area");

  // Prior boxes that overlap any gt are not background.
  for (std::size_t hi = 0; hi < heads.size(); ++hi) {
    const HeadLayout& h = heads[hi];
    for (std::size_t a = 0; a < h.anchors.size(); ++a) {
      const Anchor& an = anchors[h.anchors[a]];
      for (int y = 0; y < h.grid.h; ++y)
        for (int x = 0; x < h.grid.w; ++x) {
          const Box prior{(x + 0.5) / h.grid.w, (y + 0.5) / h.grid.h, an.w / kReferenceDim, an.h / kReferenceDim};
          for (const GroundTruth& gt : gts)
            if (iou(prior, gt.box) > 0) {
              as.labels[hi][Assignment::slot(h, static_cast<int>(a), y, x)] = SlotLabel::Ignore;
              break;
            }
        }
    }
  }

  std::vector<int> order(anchors.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Box& b = gts[g].box;
    const double gw = b.w * kReferenceDim;
    const double gh = b.h * kReferenceDim;
    std::vector<double> score(anchors.size());
    for (int i = 0; i < anchors.size(); ++i) score[i] = shape_iou(gw, gh, anchors[i].w, anchors[i].h);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return score[i] > score[j]; });

    bool placed = false;
    for (int idx : order) {
      const auto [hi, a] = owner[idx];
      if (hi < 0) continue;
      const HeadLayout& h = heads[hi];
      const Cell c = cell_of(b, h.grid);
      const int s = Assignment::slot(h, a, c.y, c.x);
      if (!placed && as.labels[hi][s] != SlotLabel::Positive) {
        as.labels[hi][s] = SlotLabel::Positive;
        as.gt_index[hi][s] = static_cast<int>(g);
        placed = true;
      } else if (score[idx] > kIgnoreShapeIou && as.labels[hi][s] != SlotLabel::Positive) {
        as.labels[hi][s] = SlotLabel::Ignore;
      }
    }
    if (!placed) ++as.unassigned;
  }
  return as;
}

// ---- objectness ----

ScalarGrad focal_objectness(double logit, bool positive, const LossConfig& cfg) {
  const double raw = sigmoid(logit);
  const double c = std::clamp(raw, cfg.clamp, 1.0 - cfg.clamp);
  const bool clamped = c != raw;
  const double a = cfg.alpha;
  const double g = cfg.gamma;
  ScalarGrad r;
  if (positive) {
    const double q = 1.0 - c;
    r.value = -cfg.lambda_obj * a * std::pow(q, g) * std::log(c);
    // d/dt with dc/dt = c (1 - c)
    if (!clamped) r.grad = -cfg.lambda_obj * a * (std::pow(q, g + 1) - g * std::pow(q, g) * c * std::log(c));
  } else {
    const double q = 1.0 - c;
    r.value = -cfg.lambda_noobj * a * std::pow(c, g) * std::log(q);
    if (!clamped) r.grad = -cfg.lambda_noobj * a * (g * std::pow(c, g) * q * std::log(q) - std::pow(c, g + 1));
  }
  return r;
}

ScalarGrad legacy_objectness(double logit, bool positive, const LossConfig& cfg) {
  const double c = sigmoid(logit);
  const double target = positive ? 1.0 : 0.0;
  const double lambda = positive ? cfg.lambda_obj : cfg.lambda_noobj;
  const double d = c - target;
  return {lambda * d * d, lambda * 2 * d * c * (1 - c)};
}

// ---- CIoU ----

namespace {

// Forward-mode dual number over the four prediction coordinates.
struct Dual {
  double v = 0;
  std::array<double, 4> d{};

  static Dual constant(double x) { return {x, {}}; }
  static Dual variable(double x, int i) {
    Dual r{x, {}};
    r.d[i] = 1;
    return r;
  }
};

Dual operator+(Dual a, const Dual& b) {
  a.v += b.v;
  for (int i = 0; i < 4; ++i) a.d[i] += b.d[i];
  return a;
}
Dual operator-(Dual a, const Dual& b) {
  a.v -= b.v;
  for (int i = 0; i < 4; ++i) a.d[i] -= b.d[i];
  return a;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r{a.v * b.v, {}};
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r{a.v / b.v, {}};
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
Dual operator*(double s, Dual a) {
  a.v *= s;
  for (double& x : a.d) x *= s;
  return a;
}
Dual dmin(const Dual& a, const Dual& b) { return a.v <= b.v ? a : b; }
Dual dmax(const Dual& a, const Dual& b) { return a.v >= b.v ? a : b; }
Dual datan(const Dual& a) {
  Dual r{std::atan(a.v), {}};
  const double s = 1.0 / (1.0 + a.v * a.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * s;
  return r;
}

}  // namespace

CiouResult ciou_loss(const Box& pred, const Box& gt) {
  const Dual cx = Dual::variable(pred.cx, 0);
  const Dual cy = Dual::variable(pred.cy, 1);
  const Dual w = Dual::variable(pred.w, 2);
  const Dual h = Dual::variable(pred.h, 3);
  const Dual half = Dual::constant(0.5);
  const Dual x1 = cx - half * w, x2 = cx + half * w;
  const Dual y1 = cy - half * h, y2 = cy + half * h;
  const Dual gx1 = Dual::constant(gt.left()), gx2 = Dual::constant(gt.right());
  const Dual gy1 = Dual::constant(gt.top()), gy2 = Dual::constant(gt.bottom());
  const Dual zero = Dual::constant(0);

  const Dual iw = dmax(dmin(x2, gx2) - dmax(x1, gx1), zero);
  const Dual ih = dmax(dmin(y2, gy2) - dmax(y1, gy1), zero);
  const Dual inter = iw * ih;
  const Dual uni = w * h + Dual::constant(gt.area()) - inter;
  const Dual iou_d = uni.v > 0 ? inter / uni : zero;

  const Dual ew = dmax(x2, gx2) - dmin(x1, gx1);
  const Dual eh = dmax(y2, gy2) - dmin(y1, gy1);
  const Dual diag2 = ew * ew + eh * eh;
  const Dual dx = cx - Dual::constant(gt.cx);
  const Dual dy = cy - Dual::constant(gt.cy);
  const Dual rho2 = dx * dx + dy * dy;
  const Dual dist = diag2.v > 0 ? rho2 / diag2 : zero;

  const Dual aspect = Dual::constant(std::atan(gt.w / gt.h)) - datan(w / h);
  const Dual v = (4.0 / (std::numbers::pi * std::numbers::pi)) * (aspect * aspect);
  const Dual denom = (Dual::constant(1) - iou_d) + v;
  const Dual penalty = denom.v > 0 ? (v * v) / denom : zero;

  const Dual loss = Dual::constant(1) - iou_d + dist + penalty;
  return {loss.v, iou_d.v, loss.d};
}

// ---- total ----

template <typename T>
LossBreakdown total_loss(std::span<const Tensor<T>> outputs, std::span<const std::vector<GroundTruth>> gts,
                         const AnchorSet& anchors, std::span<const HeadLayout> heads, const LossConfig& cfg,
                         std::vector<Tensor<T>>* grads) {
  if (outputs.size() != heads.size()) throw DimensionError("one output tensor per head expected");
  if (outputs.empty()) throw DimensionError("no head outputs");
  const int batch = outputs[0].n();
  if (static_cast<int>(gts.size()) != batch)
    throw DimensionError("ground truth for " + std::to_string(gts.size()) + " images, batch has " +
                         std::to_string(batch));
  for (std::size_t hi = 0; hi < heads.size(); ++hi) {
    const Shape& s = outputs[hi].shape();
    if (s.n != batch || s.h != heads[hi].grid.h || s.w != heads[hi].grid.w ||
        s.c % static_cast<int>(heads[hi].anchors.size()) != 0 || s.c / static_cast<int>(heads[hi].anchors.size()) < 5)
      throw DimensionError("head output " + s.str() + " does not match its layout");
  }
  if (grads) {
    grads->clear();
    for (const Tensor<T>& o : outputs) grads->emplace_back(o.shape());
  }

  LossBreakdown out;
  const double scale = 1.0 / batch;
  for (int b = 0; b < batch; ++b) {
    const std::vector<GroundTruth>& truth = gts[b];
    const Assignment as = assign_targets(truth, anchors, heads);
    for (std::size_t hi = 0; hi < heads.size(); ++hi) {
      const HeadLayout& h = heads[hi];
      const Tensor<T>& o = outputs[hi];
      const int per = o.c() / static_cast<int>(h.anchors.size());
      for (std::size_t a = 0; a < h.anchors.size(); ++a) {
        const Anchor& an = anchors[h.anchors[a]];
        const int base = static_cast<int>(a) * per;
        for (int y = 0; y < h.grid.h; ++y)
          for (int x = 0; x < h.grid.w; ++x) {
            const int s = Assignment::slot(h, static_cast<int>(a), y, x);
            SlotLabel label = as.labels[hi][s];
            const auto at = [&](int ch) { return static_cast<double>(o.at(b, base + ch, y, x)); };
            const auto add_grad = [&](int ch, double g) {
              if (grads) (*grads)[hi].at(b, base + ch, y, x) += static_cast<T>(g * scale);
            };
            const RawPrediction t{at(kTx), at(kTy), at(kTw), at(kTh), at(kObj)};

            if (label == SlotLabel::Ignore && cfg.ignore_refine_iou > 0) {
              const Box pred = decode_box(t, {x, y}, an.w, an.h, h.grid, kReferenceDim);
              double best = 0;
              for (const GroundTruth& gt : truth) best = std::max(best, iou(pred, gt.box));
              if (best < cfg.ignore_refine_iou) label = SlotLabel::Background;
            }
            if (label == SlotLabel::Ignore) continue;

            const bool pos = label == SlotLabel::Positive;
            const ScalarGrad obj = cfg.mode == LossMode::FocalCiou ? focal_objectness(t.tobj, pos, cfg)
                                                                   : legacy_objectness(t.tobj, pos, cfg);
            out.obj += obj.value * scale;
            add_grad(kObj, obj.grad);
            if (!pos) continue;

            ++out.positives;
            const Box& gt = truth[as.gt_index[hi][s]].box;
            const double sx = sigmoid(t.tx);
            const double sy = sigmoid(t.ty);
            const double ew = std::exp(t.tw);
            const double eh = std::exp(t.th);
            if (cfg.mode == LossMode::FocalCiou) {
              const Box pred{(x + sx) / h.grid.w, (y + sy) / h.grid.h, an.w * ew / kReferenceDim,
                             an.h * eh / kReferenceDim};
              const CiouResult c = ciou_loss(pred, gt);
              out.box += cfg.lambda_box * c.loss * scale;
              add_grad(kTx, cfg.lambda_box * c.grad[0] * sx * (1 - sx) / h.grid.w);
              add_grad(kTy, cfg.lambda_box * c.grad[1] * sy * (1 - sy) / h.grid.h);
              add_grad(kTw, cfg.lambda_box * c.grad[2] * pred.w);
              add_grad(kTh, cfg.lambda_box * c.grad[3] * pred.h);
            } else {
              // Squared error on cell offsets and log-space sizes, weighted by
              // (2 - w h) so small boxes count more.
              const RawPrediction target = encode_box(gt, {x, y}, an.w, an.h, h.grid, kReferenceDim);
              const double weight = cfg.lambda_box * (2.0 - gt.w * gt.h);
              const double ox = sigmoid(target.tx);
              const double oy = sigmoid(target.ty);
              const double e[4] = {sx - ox, sy - oy, t.tw - target.tw, t.th - target.th};
              out.box += weight * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + e[3] * e[3]) * scale;
              add_grad(kTx, weight * 2 * e[0] * sx * (1 - sx));
              add_grad(kTy, weight * 2 * e[1] * sy * (1 - sy));
              add_grad(kTw, weight * 2 * e[2]);
              add_grad(kTh, weight * 2 * e[3]);
            }
          }
      }
    }
  }
  out.total = out.obj + out.box;
  return out;
}

template LossBreakdown total_loss<float>(std::span<const Tensor<float>>, std::span<const std::vector<GroundTruth>>,
                                         const AnchorSet&, std::span<const HeadLayout>, const LossConfig&,
                                         std::vector<Tensor<float>>*);
template LossBreakdown total_loss<double>(std::span<const Tensor<double>>, std::span<const std::vector<GroundTruth>>,
                                          const AnchorSet&, std::span<const HeadLayout>, const LossConfig&,
                                          std::vector<Tensor<double>>*);

}  // namespace agyolo
