#include "agyolo/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "agyolo/fp16.hpp"

namespace agyolo {

std::vector<Detection> decode_detections(std::span<const TensorF> outputs, int index, const AnchorSet& anchors,
                                         std::span<const HeadLayout> heads, double conf_thresh) {
  if (outputs.size() != heads.size()) throw DimensionError("one output tensor per head expected");
  std::vector<Detection> dets;
  for (std::size_t hi = 0; hi < heads.size(); ++hi) {
    const HeadLayout& h = heads[hi];
    const TensorF& o = outputs[hi];
    if (o.h() != h.grid.h || o.w() != h.grid.w) throw DimensionError("head output does not match its grid");
    const int per = o.c() / static_cast<int>(h.anchors.size());
    for (std::size_t a = 0; a < h.anchors.size(); ++a) {
      const Anchor& an = anchors[h.anchors[a]];
      const int base = static_cast<int>(a) * per;
      for (int y = 0; y < h.grid.h; ++y)
        for (int x = 0; x < h.grid.w; ++x) {
          const double conf = sigmoid(o.at(index, base + kObj, y, x));
          if (conf < conf_thresh) continue;
          const RawPrediction t{o.at(index, base + kTx, y, x), o.at(index, base + kTy, y, x),
                                o.at(index, base + kTw, y, x), o.at(index, base + kTh, y, x), 0};
          dets.push_back({decode_box(t, {x, y}, an.w, an.h, h.grid, kReferenceDim), conf, 0});
        }
    }
  }
  return dets;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool keep = true;
    for (const Detection& k : kept)
      if (iou(d.box, k.box) > iou_thresh) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(d);
  }
  return kept;
}

MatchCounts match_detections(std::span<const Detection> dets, std::span<const GroundTruth> gts, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<bool> used(gts.size(), false);
  MatchCounts m;
  for (std::size_t i : order) {
    int best = -1;
    double best_iou = iou_thresh;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(dets[i].box, gts[g].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[best] = true;
      ++m.tp;
      m.iou_sum += best_iou;
    } else {
      ++m.fp;
    }
  }
  m.fn = static_cast<int>(std::count(used.begin(), used.end(), false));
  return m;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
}

PrfScores prf(int tp, int fp, int fn) {
  PrfScores s;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  s.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

const ThresholdReport& EvalReport::at(double iou_threshold) const {
  for (const ThresholdReport& t : thresholds)
    if (std::fabs(t.iou_threshold - iou_threshold) < 1e-12) return t;
  throw InputError("no metrics at IoU threshold " + std::to_string(iou_threshold));
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["images"] = images;
  j["ground_truths"] = ground_truths;
  j["detections"] = detections;
  j["average_iou"] = average_iou;
  for (const ThresholdReport& t : thresholds)
    j["thresholds"].push_back({{"iou", t.iou_threshold},
                               {"tp", t.tp},
                               {"fp", t.fp},
                               {"fn", t.fn},
                               {"precision", t.scores.precision},
                               {"recall", t.scores.recall},
                               {"f1", t.scores.f1}});
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "images %d  ground truths %d  detections %d  average IoU %.4f\n", images,
                ground_truths, detections, average_iou);
  out += line;
  std::snprintf(line, sizeof line, "%-6s %6s %6s %6s %9s %9s %9s\n", "IoU", "TP", "FP", "FN", "precision", "recall",
                "F1");
  out += line;
  for (const ThresholdReport& t : thresholds) {
    std::snprintf(line, sizeof line, "%-6.2f %6d %6d %6d %9.4f %9.4f %9.4f\n", t.iou_threshold, t.tp, t.fp, t.fn,
                  t.scores.precision, t.scores.recall, t.scores.f1);
    out += line;
  }
  return out;
}

EvalReport evaluate(Network& net, ImageStore& data, const EvalOptions& opts) {
  if (data.size() == 0) throw InputError("evaluation set is empty");
  if (opts.iou_thresholds.empty()) throw InputError("no IoU thresholds requested");
  const std::vector<HeadLayout> heads = head_layouts(net, opts.dim, opts.dim);
  const int batch = std::max(1, opts.batch);

  EvalReport report;
  report.images = static_cast<int>(data.size());
  std::vector<MatchCounts> totals(opts.iou_thresholds.size());
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t count = std::min<std::size_t>(batch, data.size() - start);
    TensorF x(static_cast<int>(count), 3, opts.dim, opts.dim);
    const std::size_t per = x.size() / count;
    for (std::size_t i = 0; i < count; ++i) {
      const TensorF img = resize_bilinear(data.image(start + i), opts.dim, opts.dim);
      std::copy(img.data(), img.data() + per, x.data() + i * per);
    }
    const std::vector<TensorF> out = net.forward(x, RunMode::Infer);
    for (std::size_t i = 0; i < count; ++i) {
      const auto& gts = data.item(start + i).objects;
      const std::vector<Detection> dets =
          nms(decode_detections(out, static_cast<int>(i), net.anchors(), heads, opts.conf_thresh), opts.nms_thresh);
      report.ground_truths += static_cast<int>(gts.size());
      report.detections += static_cast<int>(dets.size());
      for (std::size_t t = 0; t < totals.size(); ++t) {
        const MatchCounts m = match_detections(dets, gts, opts.iou_thresholds[t]);
        totals[t].tp += m.tp;
        totals[t].fp += m.fp;
        totals[t].fn += m.fn;
        totals[t].iou_sum += m.iou_sum;
      }
    }
  }
  net.clear_cache();
  for (std::size_t t = 0; t < totals.size(); ++t) {
    ThresholdReport r;
    r.iou_threshold = opts.iou_thresholds[t];
    r.tp = totals[t].tp;
    r.fp = totals[t].fp;
    r.fn = totals[t].fn;
    r.scores = prf(r.tp, r.fp, r.fn);
    report.thresholds.push_back(r);
  }
  report.average_iou = totals[0].tp > 0 ? totals[0].iou_sum / totals[0].tp : 0.0;
  return report;
}

std::vector<Detection> detect(Network& net, const TensorF& image, int dim, double conf_thresh, double nms_thresh) {
  const std::vector<HeadLayout> heads = head_layouts(net, dim, dim);
  const std::vector<TensorF> out = net.forward(resize_bilinear(image, dim, dim), RunMode::Infer);
  net.clear_cache();
  return nms(decode_detections(out, 0, net.anchors(), heads, conf_thresh), nms_thresh);
}

QuantizeReport quantize_net(Network& net) {
  QuantizeReport r;
  double sum = 0;
  const auto apply = [&](std::span<float> values) {
    for (float& v : values) {
      const auto q = static_cast<float>(fp16_quantize(v));
      const double err = std::fabs(static_cast<double>(q) - v);
      r.max_abs_error = std::max(r.max_abs_error, err);
      sum += err;
      ++r.values;
      v = q;
    }
  };
  for (int id = 0; id < net.size(); ++id) {
    LayerParams<float>& p = net.params(id);
    apply(p.conv.weights.span());
    apply(p.conv.bias);
    apply(p.bn.gamma);
    apply(p.bn.beta);
    apply(p.bn.running_mean);
    apply(p.bn.running_var);
  }
  net.clear_cache();
  r.mean_abs_error = r.values > 0 ? sum / static_cast<double>(r.values) : 0.0;
  return r;
}

TensorF annotate(const TensorF& image, std::span<const Detection> dets) {
  TensorF out = image;
  const int h = out.h();
  const int w = out.w();
  for (const Detection& d : dets) {
    const double t = std::clamp(d.confidence, 0.0, 1.0);
    const float color[3] = {static_cast<float>(1 - t), static_cast<float>(t), 0.2f};
    const int x1 = std::clamp(static_cast<int>(std::lround(d.box.left() * w)), 0, w - 1);
    const int x2 = std::clamp(static_cast<int>(std::lround(d.box.right() * w)), 0, w - 1);
    const int y1 = std::clamp(static_cast<int>(std::lround(d.box.top() * h)), 0, h - 1);
    const int y2 = std::clamp(static_cast<int>(std::lround(d.box.bottom() * h)), 0, h - 1);
    for (int c = 0; c < 3; ++c) {
      for (int x = x1; x <= x2; ++x) {
        out.at(0, c, y1, x) = color[c];
        out.at(0, c, y2, x) = color[c];
      }
      for (int y = y1; y <= y2; ++y) {
        out.at(0, c, y, x1) = color[c];
        out.at(0, c, y, x2) = color[c];
      }
    }
  }
  return out;
}

}  // namespace agyolo
