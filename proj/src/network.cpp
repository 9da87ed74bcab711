#include "agyolo/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace agyolo {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::Conv, "conv"},
    {LayerKind::BatchNorm, "bn"},
    {LayerKind::Act, "act"},
    {LayerKind::MaxPool, "maxpool"},
    {LayerKind::Upsample, "upsample"},
    {LayerKind::Concat, "concat"},
    {LayerKind::Reorg, "reorg"},
    {LayerKind::Shortcut, "shortcut"},
    {LayerKind::Split, "split"},
    {LayerKind::YoloHead, "yolo-head"},
}};

std::string where(int id, const LayerSpec& spec) {
  return "layer " + std::to_string(id) + " (" + std::string(to_string(spec.kind)) +
         (spec.name.empty() ? "" : " " + spec.name) + ")";
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw FormatError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::Leaky:
      return "leaky";
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::Linear:
      break;
  }
  return "linear";
}

Activation activation_from_string(std::string_view name) {
  if (name == "leaky") return Activation::Leaky;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "linear") return Activation::Linear;
  throw FormatError("unknown activation '" + std::string(name) + "'");
}

template <typename T>
int BasicNetwork<T>::add(LayerSpec spec) {
  const int id = size();
  if (spec.inputs.empty()) throw ConfigError(where(id, spec) + " has no inputs");
  for (int in : spec.inputs)
    if (in != kNetworkInput && (in < 0 || in >= id))
      throw ConfigError(where(id, spec) + " references layer " + std::to_string(in) +
                        " which is not earlier in the graph");
  const bool multi = spec.kind == LayerKind::Concat || spec.kind == LayerKind::Shortcut;
  if (!multi && spec.inputs.size() != 1) throw ConfigError(where(id, spec) + " takes exactly one input");
  if (spec.kind == LayerKind::Shortcut && spec.inputs.size() != 2)
    throw ConfigError(where(id, spec) + " takes exactly two inputs");

  layers_.push_back(spec);
  params_.emplace_back();
  grads_.emplace_back();
  std::vector<int> channels;
  try {
    channels = channel_counts();
  } catch (...) {
    layers_.pop_back();
    params_.pop_back();
    grads_.pop_back();
    throw;
  }
  const auto in_c = [&](std::size_t k) {
    const int src = spec.inputs[k];
    return src == kNetworkInput ? input_channels_ : channels[src];
  };
  if (spec.kind == LayerKind::Conv) {
    ConvParams<T>& p = params_.back().conv;
    p.weights = Tensor<T>(spec.filters, in_c(0) / spec.groups, spec.size, spec.size);
    if (spec.bias) p.bias.assign(spec.filters, T(0));
    p.stride = spec.stride;
    p.pad = spec.pad;
    p.groups = spec.groups;
  } else if (spec.kind == LayerKind::BatchNorm) {
    params_.back().bn = BnParams<T>(in_c(0));
  }
  return id;
}

template <typename T>
void BasicNetwork<T>::add_head(int layer, int stride, std::vector<int> anchor_indices) {
  if (layer < 0 || layer >= size() || layers_[layer].kind != LayerKind::YoloHead)
    throw ConfigError("head must reference a yolo-head layer");
  const std::vector<int> channels = channel_counts();
  const int expected = static_cast<int>(anchor_indices.size()) * values_per_anchor();
  if (channels[layer] != expected)
    throw ConfigError("head at stride " + std::to_string(stride) + " has " +
                      std::to_string(channels[layer]) + " channels, expected " + std::to_string(expected));
  for (int a : anchor_indices)
    if (a < 0 || a >= anchors_.size()) throw ConfigError("head anchor index out of range");
  layers_[layer].head = static_cast<int>(heads_.size());
  heads_.push_back({layer, stride, std::move(anchor_indices)});
}

template <typename T>
std::vector<int> BasicNetwork<T>::channel_counts() const {
  std::vector<int> ch(layers_.size());
  for (std::size_t id = 0; id < layers_.size(); ++id) {
    const LayerSpec& s = layers_[id];
    const auto in = [&](std::size_t k) {
      const int src = s.inputs.at(k);
      return src == kNetworkInput ? input_channels_ : ch.at(src);
    };
    switch (s.kind) {
      case LayerKind::Conv:
        if (s.filters < 1 || s.size < 1 || s.stride < 1 || s.groups < 1)
          throw ConfigError(where(static_cast<int>(id), s) + " has invalid geometry");
        if (in(0) % s.groups != 0 || s.filters % s.groups != 0)
          throw ConfigError(where(static_cast<int>(id), s) + ": groups must divide channels");
        ch[id] = s.filters;
        break;
      case LayerKind::Concat: {
        int total = 0;
        for (std::size_t k = 0; k < s.inputs.size(); ++k) total += in(k);
        ch[id] = total;
        break;
      }
      case LayerKind::Shortcut:
        if (in(0) != in(1))
          throw ConfigError(where(static_cast<int>(id), s) + ": shortcut inputs differ in channels");
        ch[id] = in(0);
        break;
      case LayerKind::Split:
        if (s.begin < 0 || s.end > in(0) || s.begin >= s.end)
          throw ConfigError(where(static_cast<int>(id), s) + ": split range out of bounds");
        ch[id] = s.end - s.begin;
        break;
      case LayerKind::Reorg:
        if (s.groups < 1 || in(0) % s.groups != 0)
          throw ConfigError(where(static_cast<int>(id), s) + ": reorg groups must divide channels");
        ch[id] = in(0);
        break;
      default:
        ch[id] = in(0);
    }
  }
  return ch;
}

template <typename T>
void BasicNetwork<T>::validate() const {
  const std::vector<int> channels = channel_counts();
  for (int id = 0; id < size(); ++id) {
    const LayerSpec& s = layers_[id];
    for (int in : s.inputs)
      if (in != kNetworkInput && (in < 0 || in >= id))
        throw ConfigError(where(id, s) + " is not in topological order");
    if (s.kind == LayerKind::Conv) {
      const ConvParams<T>& p = params_[id].conv;
      const int in_c = s.inputs[0] == kNetworkInput ? input_channels_ : channels[s.inputs[0]];
      if (p.weights.shape() != Shape{s.filters, in_c / s.groups, s.size, s.size})
        throw ConfigError(where(id, s) + ": weight shape " + p.weights.shape().str() +
                          " does not match the layer definition");
      if (s.bias != p.has_bias()) throw ConfigError(where(id, s) + ": bias presence mismatch");
    }
    if (s.kind == LayerKind::BatchNorm) {
      const int in_c = s.inputs[0] == kNetworkInput ? input_channels_ : channels[s.inputs[0]];
      if (params_[id].bn.channels() != in_c) throw ConfigError(where(id, s) + ": BN size mismatch");
    }
  }
  for (const HeadInfo& h : heads_)
    if (h.layer < 0 || h.layer >= size() || layers_[h.layer].kind != LayerKind::YoloHead)
      throw ConfigError("head references a non-head layer");
}

template <typename T>
int BasicNetwork<T>::required_multiple() const {
  int m = 1;
  for (const HeadInfo& h : heads_) m = std::max(m, h.stride);
  return m;
}

template <typename T>
std::vector<int> BasicNetwork<T>::consumers(int id) const {
  std::vector<int> out;
  for (int j = id + 1; j < size(); ++j)
    if (std::find(layers_[j].inputs.begin(), layers_[j].inputs.end(), id) != layers_[j].inputs.end())
      out.push_back(j);
  return out;
}

template <typename T>
std::vector<Tensor<T>> BasicNetwork<T>::forward(const Tensor<T>& x, RunMode mode) {
  if (layers_.empty()) throw StateError("forward on an empty network");
  if (x.c() != input_channels_)
    throw DimensionError("network expects " + std::to_string(input_channels_) + " input channels, got " +
                         std::to_string(x.c()));
  const int m = required_multiple();
  if (x.h() % m != 0 || x.w() % m != 0)
    throw DimensionError("input " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                         " is not divisible by " + std::to_string(m));
  input_ = x;
  outputs_.assign(layers_.size(), Tensor<T>());
  bn_cache_.assign(layers_.size(), BnCache<T>());
  pool_argmax_.assign(layers_.size(), {});
  cached_mode_ = mode;

  for (int id = 0; id < size(); ++id) {
    const LayerSpec& s = layers_[id];
    const auto in = [&](std::size_t k) -> const Tensor<T>& {
      const int src = s.inputs[k];
      return src == kNetworkInput ? input_ : outputs_[src];
    };
    Tensor<T>& out = outputs_[id];
    switch (s.kind) {
      case LayerKind::Conv:
        out = conv2d(in(0), params_[id].conv);
        break;
      case LayerKind::BatchNorm:
        out = mode == RunMode::Train
                  ? batch_norm(in(0), params_[id].bn, BnMode::Train, &bn_cache_[id])
                  : batch_norm(in(0), params_[id].bn, BnMode::Infer);
        break;
      case LayerKind::Act:
        out = activation(in(0), s.activation);
        break;
      case LayerKind::MaxPool: {
        PoolResult<T> r = maxpool2d(in(0), s.size, s.stride, s.pad);
        out = std::move(r.output);
        pool_argmax_[id] = std::move(r.argmax);
        break;
      }
      case LayerKind::Upsample:
        out = upsample_nearest(in(0), s.stride);
        break;
      case LayerKind::Concat: {
        std::vector<const Tensor<T>*> xs;
        for (std::size_t k = 0; k < s.inputs.size(); ++k) xs.push_back(&in(k));
        out = concat_channels<T>(std::span<const Tensor<T>* const>(xs));
        break;
      }
      case LayerKind::Reorg:
        out = channel_reorganize(in(0), s.groups);
        break;
      case LayerKind::Shortcut:
        out = shortcut_add(in(0), in(1));
        break;
      case LayerKind::Split:
        out = channel_slice(in(0), s.begin, s.end);
        break;
      case LayerKind::YoloHead:
        out = in(0);
        break;
    }
  }
  std::vector<Tensor<T>> result;
  if (heads_.empty()) {
    result.push_back(outputs_.back());
  } else {
    for (const HeadInfo& h : heads_) result.push_back(outputs_[h.layer]);
  }
  return result;
}

template <typename T>
Tensor<T> BasicNetwork<T>::backward(std::span<const Tensor<T>> head_grads, bool input_grad) {
  if (!has_cache()) throw StateError("backward called without a cached forward pass");
  const std::size_t expected = heads_.empty() ? 1 : heads_.size();
  if (head_grads.size() != expected)
    throw DimensionError("backward expects " + std::to_string(expected) + " head gradients");

  for (int id = 0; id < size(); ++id) {
    LayerGrads<T>& g = grads_[id];
    if (layers_[id].kind == LayerKind::Conv) {
      g.weights = Tensor<T>(params_[id].conv.weights.shape());
      g.bias.assign(params_[id].conv.bias.size(), T(0));
    } else if (layers_[id].kind == LayerKind::BatchNorm) {
      g.gamma.assign(params_[id].bn.channels(), T(0));
      g.beta.assign(params_[id].bn.channels(), T(0));
    }
  }

  std::vector<Tensor<T>> grad(layers_.size());
  Tensor<T> dinput;
  const auto push = [&](int target, Tensor<T>&& t) {
    if (target == kNetworkInput) {
      if (!input_grad) return;
      if (dinput.empty())
        dinput = std::move(t);
      else
        accumulate(dinput, t);
      return;
    }
    if (grad[target].empty())
      grad[target] = std::move(t);
    else
      accumulate(grad[target], t);
  };
  const auto seed = [&](int layer, const Tensor<T>& g) {
    if (g.shape() != outputs_[layer].shape())
      throw DimensionError("head gradient shape " + g.shape().str() + " does not match output " +
                           outputs_[layer].shape().str());
    push(layer, Tensor<T>(g));
  };
  if (heads_.empty()) {
    seed(size() - 1, head_grads[0]);
  } else {
    for (std::size_t i = 0; i < heads_.size(); ++i) seed(heads_[i].layer, head_grads[i]);
  }

  for (int id = size() - 1; id >= 0; --id) {
    if (grad[id].empty()) continue;
    const Tensor<T> dy = std::move(grad[id]);
    grad[id] = Tensor<T>();
    const LayerSpec& s = layers_[id];
    const auto in = [&](std::size_t k) -> const Tensor<T>& {
      const int src = s.inputs[k];
      return src == kNetworkInput ? input_ : outputs_[src];
    };
    switch (s.kind) {
      case LayerKind::Conv: {
        const bool need = s.inputs[0] != kNetworkInput || input_grad;
        ConvGrads<T> cg = conv2d_backward(in(0), params_[id].conv, dy, need);
        grads_[id].weights = std::move(cg.weights);
        grads_[id].bias = std::move(cg.bias);
        if (need) push(s.inputs[0], std::move(cg.input));
        break;
      }
      case LayerKind::BatchNorm: {
        const BnParams<T>& p = params_[id].bn;
        if (cached_mode_ == RunMode::Train) {
          BnGrads<T> bg = batch_norm_backward(p, bn_cache_[id], dy);
          grads_[id].gamma = std::move(bg.gamma);
          grads_[id].beta = std::move(bg.beta);
          push(s.inputs[0], std::move(bg.input));
        } else {
          // Inference BN is a per-channel affine map.
          const Tensor<T>& x = in(0);
          Tensor<T> dx(x.shape());
          const std::size_t plane = x.shape().plane();
          for (int ch = 0; ch < p.channels(); ++ch) {
            const T inv = T(1) / std::sqrt(p.running_var[ch] + p.epsilon);
            double dg = 0, db = 0;
            for (int b = 0; b < x.n(); ++b) {
              const T* xp = x.plane(b, ch);
              const T* dp = dy.plane(b, ch);
              T* op = dx.plane(b, ch);
              for (std::size_t i = 0; i < plane; ++i) {
                dg += static_cast<double>(dp[i]) * (xp[i] - p.running_mean[ch]) * inv;
                db += dp[i];
                op[i] = dp[i] * p.gamma[ch] * inv;
              }
            }
            grads_[id].gamma[ch] = static_cast<T>(dg);
            grads_[id].beta[ch] = static_cast<T>(db);
          }
          push(s.inputs[0], std::move(dx));
        }
        break;
      }
      case LayerKind::Act:
        push(s.inputs[0], activation_backward(outputs_[id], dy, s.activation));
        break;
      case LayerKind::MaxPool:
        push(s.inputs[0], maxpool2d_backward(in(0).shape(), std::span<const std::int32_t>(pool_argmax_[id]), dy));
        break;
      case LayerKind::Upsample:
        push(s.inputs[0], upsample_nearest_backward(dy, s.stride));
        break;
      case LayerKind::Concat: {
        int offset = 0;
        for (std::size_t k = 0; k < s.inputs.size(); ++k) {
          const int c = in(k).c();
          push(s.inputs[k], channel_slice(dy, offset, offset + c));
          offset += c;
        }
        break;
      }
      case LayerKind::Reorg:
        push(s.inputs[0], channel_reorganize_inverse(dy, s.groups));
        break;
      case LayerKind::Shortcut:
        push(s.inputs[0], Tensor<T>(dy));
        push(s.inputs[1], Tensor<T>(dy));
        break;
      case LayerKind::Split:
        push(s.inputs[0], channel_slice_backward(in(0).shape(), s.begin, dy));
        break;
      case LayerKind::YoloHead:
        push(s.inputs[0], Tensor<T>(dy));
        break;
    }
  }
  if (input_grad && dinput.empty()) dinput = Tensor<T>(input_.shape());
  return dinput;
}

template <typename T>
void BasicNetwork<T>::clear_cache() {
  input_ = Tensor<T>();
  outputs_.clear();
  bn_cache_.clear();
  pool_argmax_.clear();
}

template <typename T>
std::vector<ParamRef<T>> BasicNetwork<T>::parameters() {
  std::vector<ParamRef<T>> refs;
  for (int id = 0; id < size(); ++id) {
    LayerParams<T>& p = params_[id];
    LayerGrads<T>& g = grads_[id];
    if (layers_[id].kind == LayerKind::Conv) {
      if (g.weights.shape() != p.conv.weights.shape()) g.weights = Tensor<T>(p.conv.weights.shape());
      if (g.bias.size() != p.conv.bias.size()) g.bias.assign(p.conv.bias.size(), T(0));
      refs.push_back({id, ParamKind::ConvWeight, p.conv.weights.span(), g.weights.span()});
      if (p.conv.has_bias()) refs.push_back({id, ParamKind::ConvBias, p.conv.bias, g.bias});
    } else if (layers_[id].kind == LayerKind::BatchNorm) {
      const auto c = static_cast<std::size_t>(p.bn.channels());
      if (g.gamma.size() != c) g.gamma.assign(c, T(0));
      if (g.beta.size() != c) g.beta.assign(c, T(0));
      refs.push_back({id, ParamKind::BnGamma, p.bn.gamma, g.gamma});
      refs.push_back({id, ParamKind::BnBeta, p.bn.beta, g.beta});
    }
  }
  return refs;
}

template <typename T>
std::vector<Shape> BasicNetwork<T>::infer_shapes(int height, int width, int batch) const {
  std::vector<Shape> shapes(layers_.size());
  const Shape input{batch, input_channels_, height, width};
  for (std::size_t id = 0; id < layers_.size(); ++id) {
    const LayerSpec& s = layers_[id];
    const auto in = [&](std::size_t k) -> const Shape& {
      const int src = s.inputs[k];
      return src == kNetworkInput ? input : shapes[src];
    };
    Shape out = in(0);
    switch (s.kind) {
      case LayerKind::Conv:
        out.c = s.filters;
        out.h = conv_out_dim(out.h, s.size, s.stride, s.pad);
        out.w = conv_out_dim(out.w, s.size, s.stride, s.pad);
        break;
      case LayerKind::MaxPool:
        out.h = (out.h + s.pad - s.size) / s.stride + 1;
        out.w = (out.w + s.pad - s.size) / s.stride + 1;
        break;
      case LayerKind::Upsample:
        out.h *= s.stride;
        out.w *= s.stride;
        break;
      case LayerKind::Concat:
        out.c = 0;
        for (std::size_t k = 0; k < s.inputs.size(); ++k) {
          const Shape& o = in(k);
          if (o.h != in(0).h || o.w != in(0).w)
            throw DimensionError(where(static_cast<int>(id), s) + ": concat spatial mismatch");
          out.c += o.c;
        }
        break;
      case LayerKind::Shortcut:
        if (in(0) != in(1)) throw DimensionError(where(static_cast<int>(id), s) + ": shortcut shape mismatch");
        break;
      case LayerKind::Split:
        out.c = s.end - s.begin;
        break;
      default:
        break;
    }
    if (!out.valid()) throw DimensionError(where(static_cast<int>(id), s) + ": non-positive output");
    shapes[id] = out;
  }
  return shapes;
}

template <typename T>
ParamCount BasicNetwork<T>::count_params() const {
  ParamCount count;
  for (int id = 0; id < size(); ++id) {
    if (layers_[id].kind == LayerKind::Conv) {
      const auto n = static_cast<std::int64_t>(params_[id].conv.weights.size() + params_[id].conv.bias.size());
      count.learnable += n;
      count.serialized += n;
    } else if (layers_[id].kind == LayerKind::BatchNorm) {
      const std::int64_t c = params_[id].bn.channels();
      count.learnable += 2 * c;
      count.serialized += 4 * c;
    }
  }
  return count;
}

template <typename T>
double BasicNetwork<T>::count_flops(int input_dim) const {
  const std::vector<Shape> shapes = infer_shapes(input_dim, input_dim);
  double flops = 0;
  for (int id = 0; id < size(); ++id) {
    const LayerSpec& s = layers_[id];
    if (s.kind != LayerKind::Conv) continue;
    const int in_c = s.inputs[0] == kNetworkInput ? input_channels_ : shapes[s.inputs[0]].c;
    const double macs = static_cast<double>(s.filters) * (in_c / s.groups) * s.size * s.size *
                        shapes[id].h * shapes[id].w;
    flops += 2.0 * macs;
  }
  return flops / 1e9;
}

template <typename T>
template <typename U>
BasicNetwork<U> BasicNetwork<T>::cast() const {
  BasicNetwork<U> out(num_classes_, anchors_);
  out.input_channels_ = input_channels_;
  out.layers_ = layers_;
  out.heads_ = heads_;
  out.grads_.resize(layers_.size());
  for (const LayerParams<T>& p : params_) {
    LayerParams<U> q;
    q.conv.weights = p.conv.weights.template cast<U>();
    q.conv.bias.assign(p.conv.bias.begin(), p.conv.bias.end());
    q.conv.stride = p.conv.stride;
    q.conv.pad = p.conv.pad;
    q.conv.groups = p.conv.groups;
    q.bn.gamma.assign(p.bn.gamma.begin(), p.bn.gamma.end());
    q.bn.beta.assign(p.bn.beta.begin(), p.bn.beta.end());
    q.bn.running_mean.assign(p.bn.running_mean.begin(), p.bn.running_mean.end());
    q.bn.running_var.assign(p.bn.running_var.begin(), p.bn.running_var.end());
    q.bn.epsilon = static_cast<U>(p.bn.epsilon);
    q.bn.momentum = static_cast<U>(p.bn.momentum);
    out.params_.push_back(std::move(q));
  }
  return out;
}

template <typename T>
void BasicNetwork<T>::set_params(int id, LayerParams<T> p) {
  params_.at(id) = std::move(p);
  clear_cache();
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;
template BasicNetwork<double> BasicNetwork<float>::cast<double>() const;
template BasicNetwork<float> BasicNetwork<double>::cast<float>() const;
template BasicNetwork<float> BasicNetwork<float>::cast<float>() const;

}  // namespace agyolo
