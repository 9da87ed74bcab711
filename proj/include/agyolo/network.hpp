#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agyolo/anchors.hpp"
#include "agyolo/kernels.hpp"

namespace agyolo {

enum class LayerKind { Conv, BatchNorm, Act, MaxPool, Upsample, Concat, Reorg, Shortcut, Split, YoloHead };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);
std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

inline constexpr int kNetworkInput = -1;

// One node of the network DAG. Only the fields relevant to `kind` are used.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::vector<int> inputs;  // earlier layer ids, or kNetworkInput
  std::string name;

  // Conv: filters/size/stride/pad/groups/bias. MaxPool: size/stride/pad.
  // Upsample: stride is the factor. Reorg: groups.
  int filters = 0;
  int size = 1;
  int stride = 1;
  int pad = 0;
  int groups = 1;
  bool bias = false;

  Activation activation = Activation::Linear;  // Act

  int begin = 0;  // Split: channel range [begin, end)
  int end = 0;

  int head = -1;  // YoloHead: index into Network::heads()

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct HeadInfo {
  int layer = -1;
  int stride = 0;
  std::vector<int> anchors;  // indices into the network's AnchorSet
  friend bool operator==(const HeadInfo&, const HeadInfo&) = default;
};

template <typename T>
struct LayerParams {
  ConvParams<T> conv;  // Conv layers
  BnParams<T> bn;      // BatchNorm layers
};

template <typename T>
struct LayerGrads {
  Tensor<T> weights;
  std::vector<T> bias;
  std::vector<T> gamma;
  std::vector<T> beta;
};

enum class ParamKind { ConvWeight, ConvBias, BnGamma, BnBeta };

// View of one learnable array and its gradient.
template <typename T>
struct ParamRef {
  int layer;
  ParamKind kind;
  std::span<T> value;
  std::span<T> grad;
};

struct ParamCount {
  std::int64_t learnable = 0;   // conv weights + biases + BN gamma/beta
  std::int64_t serialized = 0;  // learnable + BN running statistics
  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

enum class RunMode { Train, Infer };

// Network as an ordered DAG of layers with a parameter store. Builders in
// agyolo/builders.hpp create the architectures; the graph itself is generic.
template <typename T>
class BasicNetwork {
 public:
  BasicNetwork() = default;
  BasicNetwork(int num_classes, AnchorSet anchors)
      : num_classes_(num_classes), anchors_(std::move(anchors)) {}

  // ---- construction ----
  // Appends a layer, validates its inputs, and allocates default parameters
  // (zero conv weights, identity BN). Returns the new layer id.
  int add(LayerSpec spec);
  void set_input_channels(int c) { input_channels_ = c; }
  // Registers `layer` (a YoloHead) as a detection head at `stride`.
  void add_head(int layer, int stride, std::vector<int> anchor_indices);
  // Channel count produced by each layer, given the network input channels.
  [[nodiscard]] std::vector<int> channel_counts() const;
  // Checks topological order, channel consistency and head wiring.
  void validate() const;

  // ---- inspection ----
  [[nodiscard]] const std::vector<LayerSpec>& layers() const { return layers_; }
  [[nodiscard]] const LayerSpec& layer(int id) const { return layers_.at(id); }
  [[nodiscard]] LayerSpec& layer_mut(int id) { return layers_.at(id); }
  [[nodiscard]] int size() const { return static_cast<int>(layers_.size()); }
  [[nodiscard]] const std::vector<HeadInfo>& heads() const { return heads_; }
  [[nodiscard]] const AnchorSet& anchors() const { return anchors_; }
  [[nodiscard]] int num_classes() const { return num_classes_; }
  [[nodiscard]] int input_channels() const { return input_channels_; }
  [[nodiscard]] int values_per_anchor() const { return 5 + num_classes_; }
  // Inputs must be a multiple of this (largest head stride, or 1).
  [[nodiscard]] int required_multiple() const;
  // Ids of layers that read the output of `id`.
  [[nodiscard]] std::vector<int> consumers(int id) const;

  [[nodiscard]] LayerParams<T>& params(int id) { return params_.at(id); }
  [[nodiscard]] const LayerParams<T>& params(int id) const { return params_.at(id); }
  [[nodiscard]] const LayerGrads<T>& grads(int id) const { return grads_.at(id); }

  // ---- computation ----
  // Runs the graph. Returns one tensor per head in head order (or the last
  // layer's output for head-less graphs). Caches activations for backward.
  std::vector<Tensor<T>> forward(const Tensor<T>& x, RunMode mode = RunMode::Infer);
  // Back-propagates head gradients through the cached forward pass and stores
  // parameter gradients (overwriting previous ones). Returns d loss / d input.
  Tensor<T> backward(std::span<const Tensor<T>> head_grads, bool input_grad = false);
  void clear_cache();
  [[nodiscard]] bool has_cache() const { return !outputs_.empty(); }

  // Learnable parameters in serialization order.
  std::vector<ParamRef<T>> parameters();

  // ---- accounting ----
  [[nodiscard]] std::vector<Shape> infer_shapes(int height, int width, int batch = 1) const;
  [[nodiscard]] ParamCount count_params() const;
  // Billions of FLOPs for one forward pass: 2 * MACs over conv layers only.
  [[nodiscard]] double count_flops(int input_dim) const;

  template <typename U>
  [[nodiscard]] BasicNetwork<U> cast() const;

  // Graph surgery for the slimmer: replace a layer's parameters wholesale.
  void set_params(int id, LayerParams<T> p);

 private:
  template <typename U>
  friend class BasicNetwork;

  int num_classes_ = 1;
  int input_channels_ = 3;
  AnchorSet anchors_;
  std::vector<LayerSpec> layers_;
  std::vector<HeadInfo> heads_;
  std::vector<LayerParams<T>> params_;
  std::vector<LayerGrads<T>> grads_;

  // forward cache
  Tensor<T> input_;
  std::vector<Tensor<T>> outputs_;
  std::vector<BnCache<T>> bn_cache_;
  std::vector<std::vector<std::int32_t>> pool_argmax_;
  RunMode cached_mode_ = RunMode::Infer;
};

using Network = BasicNetwork<float>;

}  // namespace agyolo
