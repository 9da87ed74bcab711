#pragma once
// Check suites shared by the unit tests and the acceptance runner. Each entry
// reports the worst error of one case so callers can assert or summarize.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "agyolo/box.hpp"
#include "agyolo/evaluator.hpp"
#include "agyolo/fp16.hpp"
#include "agyolo/gradcheck.hpp"
#include "agyolo/kernels.hpp"
#include "agyolo/network.hpp"
#include "agyolo/reference.hpp"
#include "agyolo/slimmer.hpp"
#include "agyolo/yolo.hpp"
#include "test_util.hpp"

namespace suites {

using namespace agyolo;
using testutil::random_tensor;
using testutil::random_vector;
using TD = Tensor<double>;

struct CaseResult {
  std::string name;
  std::uint64_t seed = 0;
  double error = 0;  // max relative error (gradients) or max abs diff (oracles)
};

inline constexpr double kGradTol = 1e-4;

// Gradient check of y = f(x) under the loss sum(y * r); `backward` maps r to
// the analytic gradient with respect to the tensor being checked.
inline double check_tensor_op(TD& x, const std::function<TD()>& forward, const std::function<TD(const TD&)>& backward,
                              std::uint64_t seed) {
  const TD y0 = forward();
  const TD r = random_tensor<double>(y0.shape(), seed ^ 0x9e3779b97f4a7c15ULL);
  const TD g = backward(r);
  const auto loss = [&] { return testutil::dot(forward(), r); };
  return check_gradient(x.span(), loss, g.span()).max_rel_error;
}

inline double check_vector(std::vector<double>& v, const std::function<double()>& loss,
                           const std::vector<double>& analytic) {
  return check_gradient(v, loss, analytic).max_rel_error;
}

// Inputs bounded away from the kink at zero so finite differences stay on one side.
inline TD away_from_zero(TD t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (std::fabs(t[i]) < 0.05) t[i] = t[i] < 0 ? -0.05 - t[i] : 0.05 + t[i];
  return t;
}

// Distinct values so no pooling window has a tie within the FD step.
inline TD distinct_values(Shape s, std::uint64_t seed) {
  TD t(s);
  std::vector<double> v(t.size());
  std::iota(v.begin(), v.end(), 0.0);
  std::mt19937_64 rng(seed);
  std::shuffle(v.begin(), v.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = v[i] * 0.01;
  return t;
}

inline void conv_cases(std::vector<CaseResult>& out, std::uint64_t seed) {
  struct Cfg {
    const char* name;
    int in, outc, k, stride, pad, groups;
    bool bias;
  };
  const Cfg cfgs[] = {{"conv3x3", 3, 4, 3, 1, 1, 1, true},
                      {"conv3x3-s2", 4, 3, 3, 2, 1, 1, false},
                      {"conv1x1", 5, 2, 1, 1, 0, 1, true},
                      {"conv-depthwise", 4, 4, 3, 1, 1, 4, false},
                      {"conv-grouped", 4, 6, 3, 2, 1, 2, true}};
  for (const Cfg& c : cfgs) {
    TD x = random_tensor<double>({2, c.in, 6, 6}, seed);
    ConvParams<double> p;
    p.weights = random_tensor<double>({c.outc, c.in / c.groups, c.k, c.k}, seed + 1);
    if (c.bias) p.bias = random_vector<double>(c.outc, seed + 2);
    p.stride = c.stride;
    p.pad = c.pad;
    p.groups = c.groups;
    const auto fwd = [&] { return conv2d(x, p); };
    out.push_back({std::string(c.name) + "/input", seed,
                   check_tensor_op(x, fwd, [&](const TD& r) { return conv2d_backward(x, p, r).input; }, seed)});
    out.push_back({std::string(c.name) + "/weights", seed,
                   check_tensor_op(p.weights, fwd, [&](const TD& r) { return conv2d_backward(x, p, r).weights; },
                                   seed)});
    if (c.bias) {
      const TD r = random_tensor<double>(fwd().shape(), seed + 3);
      const std::vector<double> g = conv2d_backward(x, p, r).bias;
      out.push_back({std::string(c.name) + "/bias", seed,
                     check_vector(p.bias, [&] { return testutil::dot(fwd(), r); }, g)});
    }
  }
}

inline void bn_cases(std::vector<CaseResult>& out, std::uint64_t seed) {
  TD x = random_tensor<double>({3, 4, 3, 3}, seed, -2, 2);
  BnParams<double> p(4);
  p.gamma = random_vector<double>(4, seed + 1, 0.5, 1.5);
  p.beta = random_vector<double>(4, seed + 2);
  const auto fwd = [&] {
    BnParams<double> q = p;
    return batch_norm(x, q, BnMode::Train);
  };
  const auto grads = [&](const TD& r) {
    BnParams<double> q = p;
    BnCache<double> cache;
    batch_norm(x, q, BnMode::Train, &cache);
    return batch_norm_backward(p, cache, r);
  };
  out.push_back({"batchnorm-train/input", seed, check_tensor_op(x, fwd, [&](const TD& r) { return grads(r).input; }, seed)});
  const TD r = random_tensor<double>(x.shape(), seed + 5);
  const BnGrads<double> g = grads(r);
  out.push_back({"batchnorm-train/gamma", seed, check_vector(p.gamma, [&] { return testutil::dot(fwd(), r); }, g.gamma)});
  out.push_back({"batchnorm-train/beta", seed, check_vector(p.beta, [&] { return testutil::dot(fwd(), r); }, g.beta)});
}

inline void routing_cases(std::vector<CaseResult>& out, std::uint64_t seed) {
  for (Activation a : {Activation::Leaky, Activation::Sigmoid, Activation::Linear}) {
    TD x = away_from_zero(random_tensor<double>({2, 3, 4, 4}, seed, -3, 3));
    const auto fwd = [&] { return activation(x, a); };
    out.push_back({"activation-" + std::string(to_string(a)), seed,
                   check_tensor_op(x, fwd, [&](const TD& r) { return activation_backward(fwd(), r, a); }, seed)});
  }
  struct Pool {
    const char* name;
    int size, stride, pad;
  };
  for (const Pool& pl : {Pool{"maxpool-2s2", 2, 2, 0}, Pool{"maxpool-2s1-same", 2, 1, 1}, Pool{"maxpool-3s2-pad", 3, 2, 1}}) {
    TD x = distinct_values({2, 3, 6, 6}, seed);
    const auto fwd = [&] { return maxpool2d(x, pl.size, pl.stride, pl.pad).output; };
    out.push_back({pl.name, seed, check_tensor_op(x, fwd, [&](const TD& r) {
                     const PoolResult<double> pr = maxpool2d(x, pl.size, pl.stride, pl.pad);
                     return maxpool2d_backward<double>(x.shape(), pr.argmax, r);
                   }, seed)});
  }
  {
    TD x = random_tensor<double>({2, 3, 3, 4}, seed);
    out.push_back({"upsample-x2", seed,
                   check_tensor_op(x, [&] { return upsample_nearest(x, 2); },
                                   [&](const TD& r) { return upsample_nearest_backward(r, 2); }, seed)});
  }
  {
    TD a = random_tensor<double>({2, 2, 3, 3}, seed);
    const TD b = random_tensor<double>({2, 3, 3, 3}, seed + 1);
    out.push_back({"concat", seed,
                   check_tensor_op(a, [&] { return concat_channels(std::vector<TD>{a, b}); },
                                   [&](const TD& r) { return channel_slice(r, 0, 2); }, seed)});
    TD x = random_tensor<double>({2, 6, 3, 3}, seed + 2);
    out.push_back({"channel-slice", seed,
                   check_tensor_op(x, [&] { return channel_slice(x, 2, 5); },
                                   [&](const TD& r) { return channel_slice_backward(x.shape(), 2, r); }, seed)});
    TD y = random_tensor<double>({2, 8, 2, 2}, seed + 3);
    out.push_back({"channel-reorganize", seed,
                   check_tensor_op(y, [&] { return channel_reorganize(y, 2); },
                                   [&](const TD& r) { return channel_reorganize_inverse(r, 2); }, seed)});
    TD s = random_tensor<double>({2, 3, 3, 3}, seed + 4);
    const TD t = random_tensor<double>({2, 3, 3, 3}, seed + 5);
    out.push_back({"shortcut", seed,
                   check_tensor_op(s, [&] { return shortcut_add(s, t); }, [&](const TD& r) { return r; }, seed)});
  }
}

inline void loss_cases(std::vector<CaseResult>& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-3, 3);
  LossConfig cfg;
  for (bool positive : {true, false}) {
    std::vector<double> t{u(rng)};
    const std::vector<double> g{focal_objectness(t[0], positive, cfg).grad};
    out.push_back({std::string("focal-objectness/") + (positive ? "positive" : "background"), seed,
                   check_vector(t, [&] { return focal_objectness(t[0], positive, cfg).value; }, g)});
    std::vector<double> s{u(rng)};
    const std::vector<double> gs{legacy_objectness(s[0], positive, cfg).grad};
    out.push_back({std::string("legacy-objectness/") + (positive ? "positive" : "background"), seed,
                   check_vector(s, [&] { return legacy_objectness(s[0], positive, cfg).value; }, gs)});
  }
  {
    std::uniform_real_distribution<double> pos(0.3, 0.7), size(0.1, 0.4);
    const Box gt{pos(rng), pos(rng), size(rng), size(rng)};
    std::vector<double> p{pos(rng), pos(rng), size(rng), size(rng)};
    const auto box = [&] { return Box{p[0], p[1], p[2], p[3]}; };
    const CiouResult r = ciou_loss(box(), gt);
    out.push_back({"ciou", seed,
                   check_vector(p, [&] { return ciou_loss(box(), gt).loss; }, {r.grad.begin(), r.grad.end()})});
  }
  // Full YOLO loss over two heads of a 64x64 input.
  for (LossMode mode : {LossMode::FocalCiou, LossMode::Legacy}) {
    const AnchorSet anchors = AnchorSet::parse("20,20,40,40,80,80,160,160");
    std::vector<HeadLayout> heads{{32, {2, 2}, anchors.indices_for_stride(32)},
                                  {16, {4, 4}, anchors.indices_for_stride(16)}};
    std::vector<TD> outs{random_tensor<double>({2, 12, 2, 2}, seed, -1, 1),
                         random_tensor<double>({2, 12, 4, 4}, seed + 1, -1, 1)};
    const std::vector<std::vector<GroundTruth>> gts{
        {{{0.3, 0.4, 0.2, 0.25}, 0}, {{0.7, 0.6, 0.5, 0.4}, 0}}, {{{0.55, 0.45, 0.1, 0.12}, 0}}};
    LossConfig lc;
    lc.mode = mode;
    std::vector<TD> grads;
    total_loss<double>(outs, gts, anchors, heads, lc, &grads);
    const auto loss = [&] { return total_loss<double>(outs, gts, anchors, heads, lc).total; };
    double worst = 0;
    for (std::size_t h = 0; h < outs.size(); ++h)
      worst = std::max(worst, check_gradient(outs[h].span(), loss, grads[h].span()).max_rel_error);
    out.push_back({mode == LossMode::FocalCiou ? "yolo-loss/focal-ciou" : "yolo-loss/legacy", seed, worst});
  }
}

// conv -> BN -> leaky -> maxpool -> conv (bias) -> sigmoid through the network graph.
inline BasicNetwork<double> composite_network(std::uint64_t seed) {
  BasicNetwork<double> net;
  net.set_input_channels(3);
  LayerSpec c1{.kind = LayerKind::Conv, .inputs = {kNetworkInput}, .filters = 4, .size = 3, .stride = 1, .pad = 1};
  const int l0 = net.add(c1);
  const int l1 = net.add({.kind = LayerKind::BatchNorm, .inputs = {l0}});
  const int l2 = net.add({.kind = LayerKind::Act, .inputs = {l1}, .activation = Activation::Leaky});
  const int l3 = net.add({.kind = LayerKind::MaxPool, .inputs = {l2}, .size = 2, .stride = 2});
  const int l4 = net.add(
      {.kind = LayerKind::Conv, .inputs = {l3}, .filters = 3, .size = 3, .stride = 1, .pad = 1, .bias = true});
  net.add({.kind = LayerKind::Act, .inputs = {l4}, .activation = Activation::Sigmoid});
  std::uint64_t s = seed;
  for (ParamRef<double> p : net.parameters()) {
    const std::vector<double> v = random_vector<double>(p.value.size(), ++s, -0.8, 0.8);
    std::copy(v.begin(), v.end(), p.value.begin());
  }
  return net;
}

inline void composite_cases(std::vector<CaseResult>& out, std::uint64_t seed) {
  BasicNetwork<double> net = composite_network(seed);
  TD x = random_tensor<double>({2, 3, 6, 6}, seed + 100);
  const TD r = random_tensor<double>({2, 3, 3, 3}, seed + 101);
  const auto loss = [&] { return testutil::dot(net.forward(x, RunMode::Train)[0], r); };
  net.forward(x, RunMode::Train);
  const std::vector<TD> rg{r};
  const TD dx = net.backward(rg, true);
  double worst = 0;
  for (ParamRef<double> p : net.parameters()) {
    const std::vector<double> g(p.grad.begin(), p.grad.end());
    worst = std::max(worst, check_gradient(p.value, loss, g).max_rel_error);
  }
  out.push_back({"composite/params", seed, worst});
  out.push_back({"composite/input", seed, check_gradient(x.span(), loss, dx.span()).max_rel_error});
}

inline std::vector<CaseResult> gradient_suite(int seeds) {
  std::vector<CaseResult> out;
  for (int i = 0; i < seeds; ++i) {
    const auto seed = static_cast<std::uint64_t>(1000 + 17 * i);
    conv_cases(out, seed);
    bn_cases(out, seed);
    routing_cases(out, seed);
    loss_cases(out, seed);
    composite_cases(out, seed);
  }
  return out;
}

// ---- oracle equivalences ----

inline std::vector<CaseResult> layer_oracle_suite(int cases) {
  std::vector<CaseResult> out;
  std::mt19937_64 rng(77);
  for (int i = 0; i < cases; ++i) {
    const int groups = std::uniform_int_distribution<int>(1, 3)(rng);
    const int cpg = std::uniform_int_distribution<int>(1, 3)(rng);
    const int in = groups * cpg;
    const int outc = groups * std::uniform_int_distribution<int>(1, 3)(rng);
    const int k = std::uniform_int_distribution<int>(0, 1)(rng) ? 3 : 1;
    const int stride = std::uniform_int_distribution<int>(1, 2)(rng);
    const int pad = k == 3 ? std::uniform_int_distribution<int>(0, 1)(rng) : 0;
    const int h = std::uniform_int_distribution<int>(4, 9)(rng);
    const std::uint64_t seed = rng();
    const TensorF x = random_tensor<float>({2, in, h, h + 1}, seed);
    ConvParams<float> p;
    p.weights = random_tensor<float>({outc, cpg, k, k}, seed + 1);
    if (seed & 1) p.bias = random_vector<float>(outc, seed + 2);
    p.stride = stride;
    p.pad = pad;
    p.groups = groups;
    std::vector<double> bias(p.bias.begin(), p.bias.end());
    const TD want = testutil::oracle_conv(x.cast<double>(), p.weights.cast<double>(), bias, stride, pad, groups);
    out.push_back({"conv", seed, testutil::max_abs_diff(conv2d(x, p).cast<double>(), want)});
    out.push_back({"conv-reference", seed, testutil::max_abs_diff(reference::conv2d(x, p).cast<double>(), want)});

    const int size = std::uniform_int_distribution<int>(2, 3)(rng);
    const int pstride = std::uniform_int_distribution<int>(1, 2)(rng);
    const int ppad = std::uniform_int_distribution<int>(0, size - 1)(rng);
    const TD pw = testutil::oracle_maxpool(x.cast<double>(), size, pstride, ppad);
    out.push_back({"maxpool", seed, testutil::max_abs_diff(maxpool2d(x, size, pstride, ppad).output.cast<double>(), pw)});

    const int factor = std::uniform_int_distribution<int>(1, 3)(rng);
    const TensorF up = upsample_nearest(x, factor);
    TD uw(x.n(), x.c(), x.h() * factor, x.w() * factor);
    for (int b = 0; b < x.n(); ++b)
      for (int c = 0; c < x.c(); ++c)
        for (int yy = 0; yy < x.h(); ++yy)
          for (int xx = 0; xx < x.w(); ++xx)
            for (int dy = 0; dy < factor; ++dy)
              for (int dx = 0; dx < factor; ++dx) uw.at(b, c, yy * factor + dy, xx * factor + dx) = x.at(b, c, yy, xx);
    out.push_back({"upsample", seed, testutil::max_abs_diff(up.cast<double>(), uw)});
  }
  return out;
}

// Channel shuffle written as reshape (g, c/g) -> transpose -> flatten on an
// explicit index array. Returns the number of mismatching elements.
inline int reorg_mismatches(int cases) {
  int bad = 0;
  std::mt19937_64 rng(5);
  for (int i = 0; i < cases; ++i) {
    const int g = std::uniform_int_distribution<int>(1, 4)(rng);
    const int c = g * std::uniform_int_distribution<int>(1, 5)(rng);
    const TensorF x = random_tensor<float>({2, c, 3, 2}, rng());
    // reshape: channel ch -> (row = ch / (c/g), col = ch % (c/g)); transpose to (col, row).
    std::vector<std::vector<int>> grid(g, std::vector<int>(c / g));
    for (int ch = 0; ch < c; ++ch) grid[ch / (c / g)][ch % (c / g)] = ch;
    std::vector<int> flat;
    for (int col = 0; col < c / g; ++col)
      for (int row = 0; row < g; ++row) flat.push_back(grid[row][col]);
    const TensorF y = channel_reorganize(x, g);
    for (int b = 0; b < 2; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int yy = 0; yy < 3; ++yy)
          for (int xx = 0; xx < 2; ++xx)
            if (y.at(b, ch, yy, xx) != x.at(b, flat[ch], yy, xx)) ++bad;
  }
  return bad;
}

// Greedy NMS characterized without the greedy loop: the kept set K is the
// unique subset such that i is in K iff no j in K ranked above i overlaps it
// beyond the threshold. Found by enumerating all subsets.
inline std::vector<int> nms_brute_force(const std::vector<Detection>& dets, double thresh) {
  const int n = static_cast<int>(dets.size());
  std::vector<int> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<int> pos(n);
  for (int r = 0; r < n; ++r) pos[rank[r]] = r;
  std::vector<int> found;
  int solutions = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      bool suppressed = false;
      for (int j = 0; j < n; ++j)
        if ((mask >> j & 1) && pos[j] < pos[i] && iou(dets[i].box, dets[j].box) > thresh) suppressed = true;
      ok = ((mask >> i & 1) != 0) == !suppressed;
    }
    if (ok) {
      ++solutions;
      found.clear();
      for (int r = 0; r < n; ++r)
        if (mask >> rank[r] & 1) found.push_back(rank[r]);
    }
  }
  if (solutions != 1) found.assign(1, -1);  // the characterization must be unique
  return found;
}

inline std::vector<Detection> random_detections(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> pos(0.2, 0.8), size(0.05, 0.4), conf(0, 1);
  std::vector<Detection> d;
  for (int i = 0; i < n; ++i) {
    // Some exact confidence ties exercise the stable ordering.
    const double c = std::uniform_int_distribution<int>(0, 4)(rng) == 0 ? 0.5 : conf(rng);
    d.push_back({{pos(rng), pos(rng), size(rng), size(rng)}, c, 0});
  }
  return d;
}

// Number of mismatching cases out of `cases`.
inline int nms_mismatches(int cases) {
  std::mt19937_64 rng(11);
  int bad = 0;
  for (int i = 0; i < cases; ++i) {
    const int n = std::uniform_int_distribution<int>(0, 10)(rng);
    const std::vector<Detection> dets = random_detections(rng, n);
    const double t = std::uniform_real_distribution<double>(0.1, 0.7)(rng);
    const std::vector<int> want = nms_brute_force(dets, t);
    const std::vector<Detection> got = nms(dets, t);
    std::vector<Detection> expect;
    for (int k : want) {
      if (k < 0) {
        expect.clear();
        ++bad;
        break;
      }
      expect.push_back(dets[k]);
    }
    if (got != expect) ++bad;
  }
  return bad;
}

// Rectangles are separable, so the count of covered pixel centers is the
// product of covered rows and covered columns on an n x n lattice.
inline double raster_iou(const Box& a, const Box& b, int n) {
  const auto covered = [n](double lo, double hi) {
    std::vector<char> v(n);
    for (int i = 0; i < n; ++i) {
      const double c = (i + 0.5) / n;
      v[i] = c >= lo && c < hi;
    }
    return v;
  };
  const std::vector<char> ax = covered(a.left(), a.right()), ay = covered(a.top(), a.bottom());
  const std::vector<char> bx = covered(b.left(), b.right()), by = covered(b.top(), b.bottom());
  double na_x = 0, na_y = 0, nb_x = 0, nb_y = 0, ix = 0, iy = 0;
  for (int i = 0; i < n; ++i) {
    na_x += ax[i];
    na_y += ay[i];
    nb_x += bx[i];
    nb_y += by[i];
    ix += ax[i] && bx[i];
    iy += ay[i] && by[i];
  }
  const double inter = ix * iy;
  const double uni = na_x * na_y + nb_x * nb_y - inter;
  return uni > 0 ? inter / uni : 0.0;
}

inline double iou_raster_max_error(int cases) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(0.25, 0.75), size(0.05, 0.5);
  double worst = 0;
  for (int i = 0; i < cases; ++i) {
    const Box a{pos(rng), pos(rng), size(rng), size(rng)};
    const Box b{pos(rng), pos(rng), size(rng), size(rng)};
    worst = std::max(worst, std::fabs(iou(a, b) - raster_iou(a, b, 100000)));
  }
  return worst;
}

// ---- pruning ----

// Random weights and BN statistics with every |gamma| in [0.6, 1.4], so only
// channels forced below the threshold are candidates.
inline void randomize_for_pruning(Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> w(-0.15f, 0.15f), g(0.6f, 1.4f), b(-0.2f, 0.2f), m(-0.1f, 0.1f),
      v(0.5f, 1.5f);
  std::bernoulli_distribution neg(0.3);
  for (int id = 0; id < net.size(); ++id) {
    LayerParams<float>& p = net.params(id);
    if (net.layer(id).kind == LayerKind::Conv) {
      for (float& x : p.conv.weights.span()) x = w(rng);
      for (float& x : p.conv.bias) x = b(rng);
    } else if (net.layer(id).kind == LayerKind::BatchNorm) {
      for (int c = 0; c < p.bn.channels(); ++c) {
        p.bn.gamma[c] = neg(rng) ? -g(rng) : g(rng);
        p.bn.beta[c] = b(rng);
        p.bn.running_mean[c] = m(rng);
        p.bn.running_var[c] = v(rng);
      }
    }
  }
  net.clear_cache();
}

// Sets gamma (and beta unless keep_beta) to zero on a seeded `fraction` of all
// BN channels. Returns the number of channels touched.
inline int silence_channels(Network& net, double fraction, std::uint64_t seed, bool keep_beta = false) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution pick(fraction);
  int touched = 0;
  for (int id = 0; id < net.size(); ++id)
    if (net.layer(id).kind == LayerKind::BatchNorm) {
      BnParams<float>& bn = net.params(id).bn;
      for (int c = 0; c < bn.channels(); ++c)
        if (pick(rng)) {
          bn.gamma[c] = 0;
          if (!keep_beta) bn.beta[c] = 0;
          ++touched;
        }
    }
  net.clear_cache();
  return touched;
}

// Largest output difference between two networks over random inputs.
inline double max_output_diff(Network& a, Network& b, int dim, int inputs, std::uint64_t seed) {
  double worst = 0;
  for (int i = 0; i < inputs; ++i) {
    const TensorF x = random_tensor<float>(Shape{1, a.input_channels(), dim, dim}, seed + i, 0, 1);
    const std::vector<TensorF> ya = a.forward(x), yb = b.forward(x);
    if (ya.size() != yb.size()) return INFINITY;
    for (std::size_t h = 0; h < ya.size(); ++h) {
      if (ya[h].shape() != yb[h].shape()) return INFINITY;
      for (std::size_t k = 0; k < ya[h].size(); ++k)
        worst = std::max(worst, static_cast<double>(std::fabs(ya[h].data()[k] - yb[h].data()[k])));
    }
  }
  return worst;
}

struct PruneCheck {
  double max_diff = 0;
  std::int64_t params_before = 0;
  std::int64_t params_after = 0;
  int removed = 0;
};

// Silences `fraction` of the BN channels, prunes at 0.5 and compares outputs
// on `inputs` random images.
inline PruneCheck prune_equivalence(Network net, double fraction, std::uint64_t seed, int dim = 64, int inputs = 10,
                                    bool keep_beta = false) {
  randomize_for_pruning(net, seed);
  silence_channels(net, fraction, seed + 1, keep_beta);
  auto [pruned, report] = prune(net, 0.5, dim);
  PruneCheck r;
  r.params_before = report.params_before.learnable;
  r.params_after = report.params_after.learnable;
  r.removed = report.total_removed();
  r.max_diff = max_output_diff(net, pruned, dim, inputs, seed + 2);
  return r;
}

// Removed gamma values per producer at each threshold; nested means each
// threshold's set contains the previous one. Returns the number of violations.
inline int nesting_violations(const Network& net, const std::vector<double>& thresholds) {
  std::vector<std::vector<std::vector<double>>> sets;  // [threshold][layer] sorted gammas
  for (double t : thresholds) {
    const PruneReport rep = prune_preview(net, t, 64);
    std::vector<std::vector<double>> per;
    for (const LayerPruneReport& l : rep.layers) {
      std::vector<double> g = l.removed_gamma;
      std::sort(g.begin(), g.end());
      per.push_back(std::move(g));
    }
    sets.push_back(std::move(per));
  }
  int bad = 0;
  for (std::size_t i = 1; i < sets.size(); ++i) {
    if (sets[i].size() != sets[i - 1].size()) return static_cast<int>(sets.size());
    for (std::size_t l = 0; l < sets[i].size(); ++l)
      if (!std::includes(sets[i][l].begin(), sets[i][l].end(), sets[i - 1][l].begin(), sets[i - 1][l].end()))
        ++bad;
  }
  return bad;
}

// ---- binary16 ----

// Value of a half bit pattern from the field definitions.
inline double half_value_oracle(std::uint16_t bits) {
  const int e = (bits >> 10) & 0x1F;
  const int m = bits & 0x3FF;
  const double sign = (bits & 0x8000) ? -1.0 : 1.0;
  if (e == 31) return m ? NAN : sign * INFINITY;
  if (e == 0) return sign * std::ldexp(m, -24);
  return sign * std::ldexp(1024 + m, e - 25);
}

// Nearest finite half by search over the sorted table of positive patterns;
// ties go to the even mantissa, magnitudes past the top clamp.
inline std::uint16_t half_bits_oracle(double x) {
  static const std::vector<double> table = [] {
    std::vector<double> t(0x7C00);
    for (int b = 0; b < 0x7C00; ++b) t[b] = half_value_oracle(static_cast<std::uint16_t>(b));
    return t;
  }();
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  const double a = std::fabs(x);
  if (a >= table.back()) return sign | 0x7BFF;
  const auto hi = static_cast<std::uint16_t>(std::lower_bound(table.begin(), table.end(), a) - table.begin());
  if (table[hi] == a || hi == 0) return sign | hi;
  const std::uint16_t lo = hi - 1;
  const double dl = a - table[lo], dh = table[hi] - a;
  if (dl < dh) return sign | lo;
  if (dh < dl) return sign | hi;
  return sign | ((lo & 1) ? hi : lo);
}

// Mismatches of to_half_bits against the oracle over every midpoint between
// adjacent halves, every half itself, and `random_cases` log-uniform values.
inline int fp16_mismatches(int random_cases) {
  int bad = 0;
  auto check = [&](double x) { bad += to_half_bits(x) != half_bits_oracle(x); };
  for (int b = 0; b < 0x7BFF; ++b) {
    const double v = half_value_oracle(static_cast<std::uint16_t>(b));
    const double mid = (v + half_value_oracle(static_cast<std::uint16_t>(b + 1))) / 2;
    check(v);
    check(-v);
    check(mid);
    check(-mid);
  }
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> ex(-30, 18);
  std::bernoulli_distribution neg(0.5);
  for (int i = 0; i < random_cases; ++i) {
    const double x = std::exp2(ex(rng));
    check(neg(rng) ? -x : x);
  }
  return bad;
}

// The fixed cases: clamp at +-65504, 1 + 1/2048 rounds to 1, 1 + 1/1024 is the
// successor of 1, exact 1.
inline std::vector<CaseResult> fp16_fixed_cases() {
  std::vector<CaseResult> out;
  auto expect = [&](const std::string& name, double x, double want) {
    const double got = fp16_quantize(x);
    out.push_back({name, 0, got == want ? 0.0 : std::fabs(got - want) + 1.0});
  };
  expect("one", 1.0, 1.0);
  expect("clamp+70000", 70000.0, 65504.0);
  expect("clamp-70000", -70000.0, -65504.0);
  expect("clamp+inf", INFINITY, 65504.0);
  expect("max", 65504.0, 65504.0);
  expect("tie-to-even 1+2^-11", 1.0 + 1.0 / 2048, 1.0);
  expect("successor 1+2^-10", 1.0 + 1.0 / 1024, 1.0 + 1.0 / 1024);
  expect("tie-to-even 1+3*2^-11", 1.0 + 3.0 / 2048, 1.0 + 2.0 / 1024);
  expect("min subnormal", std::ldexp(1.0, -24), std::ldexp(1.0, -24));
  expect("below half min subnormal", std::ldexp(1.0, -26), 0.0);
  return out;
}

}  // namespace suites
