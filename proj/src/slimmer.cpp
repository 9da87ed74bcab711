#include "agyolo/slimmer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace agyolo {

int PruneReport::total_removed() const {
  int n = 0;
  for (const LayerPruneReport& l : layers) n += l.removed;
  return n;
}

std::string PruneReport::to_json() const {
  nlohmann::json j;
  j["threshold"] = threshold;
  j["dim"] = dim;
  j["params_before"] = {{"learnable", params_before.learnable}, {"serialized", params_before.serialized}};
  j["params_after"] = {{"learnable", params_after.learnable}, {"serialized", params_after.serialized}};
  j["bflops_before"] = flops_before;
  j["bflops_after"] = flops_after;
  j["removed_channels"] = total_removed();
  j["layers"] = nlohmann::json::array();
  for (const LayerPruneReport& l : layers)
    j["layers"].push_back({{"layer", l.layer},
                           {"name", l.name},
                           {"channels_before", l.channels_before},
                           {"kept", l.kept},
                           {"removed", l.removed},
                           {"held_back", l.held_back},
                           {"removed_gamma", l.removed_gamma}});
  return j.dump(2);
}

std::string PruneReport::to_table() const {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-6s %-28s %8s %6s %8s %9s\n", "layer", "name", "before", "kept", "removed",
                "held-back");
  out += line;
  for (const LayerPruneReport& l : layers) {
    std::snprintf(line, sizeof line, "%-6d %-28s %8d %6d %8d %9d\n", l.layer, l.name.c_str(), l.channels_before,
                  l.kept, l.removed, l.held_back);
    out += line;
  }
  std::snprintf(line, sizeof line,
                "threshold %.4g: params %lld -> %lld, BFLOPs@%d %.4f -> %.4f, channels removed %d\n", threshold,
                static_cast<long long>(params_before.learnable), static_cast<long long>(params_after.learnable), dim,
                flops_before, flops_after, total_removed());
  out += line;
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);  // smallest node is the root
  }
};

struct Plan {
  std::vector<int> channels;  // per layer output
  std::vector<int> base;      // first node of each layer
  std::vector<int> cls;       // class root of each node
  std::vector<bool> removed;  // per class root
  std::vector<double> value;  // constant each node takes once its class is removed
  std::vector<int> producers;  // conv layers that own prunable channels
  [[nodiscard]] int node(int layer, int c) const { return base[layer] + c; }
  [[nodiscard]] bool gone(int layer, int c) const { return removed[cls[node(layer, c)]]; }
};

bool is_producer(const Network& net, int id) {
  const LayerSpec& s = net.layer(id);
  if (s.kind != LayerKind::Conv || s.groups != 1) return false;
  const std::vector<int> cons = net.consumers(id);
  return cons.size() == 1 && net.layer(cons[0]).kind == LayerKind::BatchNorm;
}

// Fold target of a consumer conv: its bias, or the running mean of the BN it feeds.
bool can_fold_into(const Network& net, int conv) {
  if (net.layer(conv).bias) return true;
  const std::vector<int> cons = net.consumers(conv);
  return cons.size() == 1 && net.layer(cons[0]).kind == LayerKind::BatchNorm;
}

Plan make_plan(const Network& net, double threshold) {
  if (!(threshold >= 0)) throw InputError("prune threshold must be >= 0");
  Plan p;
  p.channels = net.channel_counts();
  const int n_layers = net.size();
  p.base.resize(n_layers + 1, 0);
  for (int id = 0; id < n_layers; ++id) p.base[id + 1] = p.base[id] + p.channels[id];
  const int n_nodes = p.base[n_layers];

  UnionFind uf(n_nodes);
  std::vector<bool> blocked(n_nodes, false);
  const auto block_output = [&](int id) {
    for (int c = 0; c < p.channels[id]; ++c) blocked[p.node(id, c)] = true;
  };
  const auto block_input = [&](int src) {
    if (src == kNetworkInput) return;
    for (int c = 0; c < p.channels[src]; ++c) blocked[p.node(src, c)] = true;
  };

  for (int id = 0; id < n_layers; ++id) {
    const LayerSpec& s = net.layer(id);
    switch (s.kind) {
      case LayerKind::Conv:
        if (s.groups != 1) block_input(s.inputs[0]);
        if (!is_producer(net, id)) block_output(id);
        break;
      case LayerKind::Split:
      case LayerKind::Reorg:
        block_input(s.inputs[0]);
        block_output(id);
        break;
      case LayerKind::YoloHead:
        block_input(s.inputs[0]);
        block_output(id);
        break;
      case LayerKind::Concat: {
        int offset = 0;
        for (int src : s.inputs) {
          if (src == kNetworkInput) {
            for (int c = 0; c < net.input_channels(); ++c) blocked[p.node(id, offset + c)] = true;
            offset += net.input_channels();
            continue;
          }
          for (int c = 0; c < p.channels[src]; ++c) uf.unite(p.node(src, c), p.node(id, offset + c));
          offset += p.channels[src];
        }
        break;
      }
      default:  // BN, Act, MaxPool, Upsample, Shortcut: channel c maps to channel c
        for (int src : s.inputs) {
          if (src == kNetworkInput) {
            block_output(id);
            continue;
          }
          for (int c = 0; c < p.channels[id]; ++c) uf.unite(p.node(src, c), p.node(id, c));
        }
    }
  }

  p.cls.resize(n_nodes);
  for (int i = 0; i < n_nodes; ++i) p.cls[i] = uf.find(i);
  std::vector<bool> class_blocked(n_nodes, false);
  for (int i = 0; i < n_nodes; ++i)
    if (blocked[i]) class_blocked[p.cls[i]] = true;

  // Class key: the largest |gamma| over the producer BNs it contains.
  std::vector<double> key(n_nodes, -1.0);
  for (int id = 0; id < n_layers; ++id) {
    if (!is_producer(net, id)) continue;
    p.producers.push_back(id);
    const int bn = net.consumers(id)[0];
    const BnParams<float>& b = net.params(bn).bn;
    for (int c = 0; c < p.channels[id]; ++c) {
      double& k = key[p.cls[p.node(id, c)]];
      k = std::max(k, std::fabs(static_cast<double>(b.gamma[c])));
    }
  }

  // Constants in layer order, assuming every removable class is removed.
  p.value.assign(n_nodes, 0.0);
  for (int id = 0; id < n_layers; ++id) {
    const LayerSpec& s = net.layer(id);
    const auto in_value = [&](int k, int c) { return s.inputs[k] == kNetworkInput ? 0.0 : p.value[p.node(s.inputs[k], c)]; };
    for (int c = 0; c < p.channels[id]; ++c) {
      double v = 0;
      switch (s.kind) {
        case LayerKind::BatchNorm: {
          const BnParams<float>& b = net.params(id).bn;
          if (s.inputs[0] != kNetworkInput && is_producer(net, s.inputs[0]))
            v = b.beta[c];  // gamma treated as zero
          else
            v = b.gamma[c] * (in_value(0, c) - b.running_mean[c]) / std::sqrt(b.running_var[c] + b.epsilon) + b.beta[c];
          break;
        }
        case LayerKind::Act:
          v = activate(in_value(0, c), s.activation);
          break;
        case LayerKind::Shortcut:
          v = in_value(0, c) + in_value(1, c);
          break;
        case LayerKind::MaxPool:
        case LayerKind::Upsample:
          v = in_value(0, c);
          break;
        default:
          break;
      }
      p.value[p.node(id, c)] = v;
    }
    if (s.kind == LayerKind::Concat) {
      int offset = 0;
      for (std::size_t k = 0; k < s.inputs.size(); ++k) {
        const int src = s.inputs[k];
        const int cc = src == kNetworkInput ? net.input_channels() : p.channels[src];
        for (int c = 0; c < cc; ++c) p.value[p.node(id, offset + c)] = in_value(static_cast<int>(k), c);
        offset += cc;
      }
    }
  }

  // A nonzero constant can only be folded into a 1x1, unpadded consumer that
  // has a bias or feeds a BN.
  for (int id = 0; id < n_layers; ++id) {
    const LayerSpec& s = net.layer(id);
    if (s.kind != LayerKind::Conv || s.inputs[0] == kNetworkInput) continue;
    const bool foldable = s.size == 1 && s.pad == 0 && can_fold_into(net, id);
    if (foldable) continue;
    for (int c = 0; c < p.channels[s.inputs[0]]; ++c) {
      const int nd = p.node(s.inputs[0], c);
      if (p.value[nd] != 0.0) class_blocked[p.cls[nd]] = true;
    }
  }

  p.removed.assign(n_nodes, false);
  for (int i = 0; i < n_nodes; ++i) {
    const int r = p.cls[i];
    if (r == i && !class_blocked[r] && key[r] >= 0 && key[r] < threshold) p.removed[r] = true;
  }

  // Each producer keeps at least one channel: the class with the largest key.
  for (int id : p.producers) {
    int best = -1;
    bool all_gone = true;
    for (int c = 0; c < p.channels[id]; ++c) {
      const int r = p.cls[p.node(id, c)];
      if (!p.removed[r]) {
        all_gone = false;
        break;
      }
      if (best < 0 || key[r] > key[best] || (key[r] == key[best] && r < best)) best = r;
    }
    if (all_gone && best >= 0) p.removed[best] = false;
  }
  return p;
}

// Surgery: rebuild the network with the planned channels removed.
Network apply_plan(const Network& net, const Plan& p) {
  const int n_layers = net.size();
  const auto kept = [&](int layer) {
    std::vector<int> k;
    if (layer == kNetworkInput) {
      k.resize(net.input_channels());
      std::iota(k.begin(), k.end(), 0);
      return k;
    }
    for (int c = 0; c < p.channels[layer]; ++c)
      if (!p.gone(layer, c)) k.push_back(c);
    return k;
  };

  Network out(net.num_classes(), net.anchors());
  out.set_input_channels(net.input_channels());
  std::vector<LayerParams<float>> params(n_layers);
  for (int id = 0; id < n_layers; ++id) params[id] = net.params(id);

  for (int id = 0; id < n_layers; ++id) {
    LayerSpec s = net.layer(id);
    if (s.kind == LayerKind::Conv) {
      const std::vector<int> outs = kept(id);
      const std::vector<int> ins = kept(s.inputs[0]);
      const ConvParams<float>& old = net.params(id).conv;
      ConvParams<float>& cp = params[id].conv;

      // Fold removed input channels into per-output offsets first.
      std::vector<double> delta(old.out_channels(), 0.0);
      bool any = false;
      if (s.groups == 1 && s.inputs[0] != kNetworkInput) {
        const int k2 = old.kernel() * old.kernel();
        for (int c = 0; c < p.channels[s.inputs[0]]; ++c) {
          if (!p.gone(s.inputs[0], c)) continue;
          const double v = p.value[p.node(s.inputs[0], c)];
          if (v == 0.0) continue;
          any = true;
          for (int o = 0; o < old.out_channels(); ++o) {
            double sum = 0;
            for (int k = 0; k < k2; ++k) sum += old.weights[(static_cast<std::size_t>(o) * old.weights.c() + c) * k2 + k];
            delta[o] += v * sum;
          }
        }
      }
      if (any) {
        if (old.has_bias()) {
          for (int o = 0; o < old.out_channels(); ++o) cp.bias[o] += static_cast<float>(delta[o]);
        } else {
          const int bn = net.consumers(id).at(0);
          BnParams<float>& b = params[bn].bn;
          for (int o = 0; o < old.out_channels(); ++o) b.running_mean[o] -= static_cast<float>(delta[o]);
        }
      }

      if (s.groups == 1) {
        const int k2 = old.kernel() * old.kernel();
        Tensor<float> w(static_cast<int>(outs.size()), static_cast<int>(ins.size()), old.kernel(), old.kernel());
        for (std::size_t oi = 0; oi < outs.size(); ++oi)
          for (std::size_t ii = 0; ii < ins.size(); ++ii)
            for (int k = 0; k < k2; ++k)
              w[(oi * ins.size() + ii) * k2 + k] =
                  old.weights[(static_cast<std::size_t>(outs[oi]) * old.weights.c() + ins[ii]) * k2 + k];
        cp.weights = std::move(w);
        if (cp.has_bias()) {
          std::vector<float> bias;
          for (int o : outs) bias.push_back(cp.bias[o]);
          cp.bias = std::move(bias);
        }
        s.filters = static_cast<int>(outs.size());
      }
    } else if (s.kind == LayerKind::BatchNorm) {
      const std::vector<int> ks = kept(id);
      BnParams<float>& b = params[id].bn;
      BnParams<float> nb(static_cast<int>(ks.size()));
      nb.epsilon = b.epsilon;
      nb.momentum = b.momentum;
      for (std::size_t i = 0; i < ks.size(); ++i) {
        nb.gamma[i] = b.gamma[ks[i]];
        nb.beta[i] = b.beta[ks[i]];
        nb.running_mean[i] = b.running_mean[ks[i]];
        nb.running_var[i] = b.running_var[ks[i]];
      }
      b = std::move(nb);
    }
    out.add(s);
  }
  for (const HeadInfo& h : net.heads()) out.add_head(h.layer, h.stride, h.anchors);
  for (int id = 0; id < n_layers; ++id) out.set_params(id, std::move(params[id]));
  out.validate();
  return out;
}

PruneReport make_report(const Network& net, const Plan& p, double threshold, int dim) {
  PruneReport r;
  r.threshold = threshold;
  r.dim = dim;
  for (int id : p.producers) {
    LayerPruneReport l;
    l.layer = id;
    l.name = net.layer(id).name;
    l.channels_before = p.channels[id];
    const BnParams<float>& b = net.params(net.consumers(id)[0]).bn;
    for (int c = 0; c < p.channels[id]; ++c) {
      if (p.gone(id, c)) {
        ++l.removed;
        l.removed_gamma.push_back(b.gamma[c]);
      } else {
        ++l.kept;
        if (std::fabs(b.gamma[c]) < threshold) ++l.held_back;
      }
    }
    r.layers.push_back(std::move(l));
  }
  r.params_before = net.count_params();
  r.flops_before = net.count_flops(dim);
  return r;
}

}  // namespace

std::pair<Network, PruneReport> prune(const Network& net, double threshold, int dim) {
  const Plan plan = make_plan(net, threshold);
  PruneReport report = make_report(net, plan, threshold, dim);
  Network pruned = apply_plan(net, plan);
  report.params_after = pruned.count_params();
  report.flops_after = pruned.count_flops(dim);
  return {std::move(pruned), std::move(report)};
}

PruneReport prune_preview(const Network& net, double threshold, int dim) { return prune(net, threshold, dim).second; }

}  // namespace agyolo
