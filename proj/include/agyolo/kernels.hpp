#pragma once

// Layer primitives with forward and backward passes. Loops are parallelized
// with OpenMP over output planes or channels; every output element is written
// by exactly one thread in a fixed order, so results do not depend on the
// thread count. Serial nested-loop versions live in agyolo/reference.hpp.

#include <cstdint>
#include <span>
#include <vector>

#include "agyolo/tensor.hpp"

namespace agyolo {

template <typename T>
struct ConvParams {
  Tensor<T> weights;  // (out_c, in_c / groups, k, k)
  std::vector<T> bias;  // empty when the conv feeds a batch norm
  int stride = 1;
  int pad = 0;
  int groups = 1;

  [[nodiscard]] int out_channels() const { return weights.n(); }
  [[nodiscard]] int in_channels() const { return weights.c() * groups; }
  [[nodiscard]] int kernel() const { return weights.h(); }
  [[nodiscard]] bool has_bias() const { return !bias.empty(); }
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

// Output spatial extent of a convolution; throws DimensionError when not positive.
int conv_out_dim(int in, int k, int stride, int pad);

template <typename T>
void validate_conv(const Shape& x, const ConvParams<T>& p);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

// Gradients of conv2d. `need_input` skips the data gradient for the first layer.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& dy,
                             bool need_input = true);

// ---- batch norm ----

template <typename T>
struct BnParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.01);

  BnParams() = default;
  explicit BnParams(int channels)
      : gamma(channels, T(1)), beta(channels, T(0)), running_mean(channels, T(0)),
        running_var(channels, T(1)) {}
  [[nodiscard]] int channels() const { return static_cast<int>(gamma.size()); }
};

enum class BnMode { Train, Infer };

// Values saved by a training-mode forward for the backward pass.
template <typename T>
struct BnCache {
  std::vector<T> mean;
  std::vector<T> inv_std;
  Tensor<T> normalized;
};

template <typename T>
struct BnGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

// Train mode normalizes with batch statistics over (n, h, w), fills `cache`
// (when non-null) and updates the running statistics by exponential moving
// average. Infer mode uses the running statistics.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BnParams<T>& p, BnMode mode, BnCache<T>* cache = nullptr);

template <typename T>
BnGrads<T> batch_norm_backward(const BnParams<T>& p, const BnCache<T>& cache, const Tensor<T>& dy);

// ---- activations ----

enum class Activation { Linear, Leaky, Sigmoid };

inline constexpr double kLeakySlope = 0.1;

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

// Takes the forward output `y` (sufficient for all supported kinds).
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& y, const Tensor<T>& dy, Activation kind);

template <typename T>
T activate(T v, Activation kind);

// ---- pooling / resampling ----

// Max pool with darknet padding: `pad` is the total padding, placed pad/2 at
// the top-left and the rest at the bottom-right. Padded cells never win.
// Ties go to the first element in row-major window order.
template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::int32_t> argmax;  // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, int size, int stride, int pad);

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, std::span<const std::int32_t> argmax,
                             const Tensor<T>& dy);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& dy, int factor);

// ---- channel routing ----

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> xs);

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

// Channels [begin, end) of x.
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, int begin, int end);

// Inverse of channel_slice for gradients: dy placed at [begin, end) of a zero tensor.
template <typename T>
Tensor<T> channel_slice_backward(const Shape& input_shape, int begin, const Tensor<T>& dy);

// Gather permutation equal to reshape(groups, c/groups) -> transpose -> flatten:
// output channel j*groups + i takes input channel i*(c/groups) + j.
std::vector<int> reorganize_permutation(int channels, int groups);

template <typename T>
Tensor<T> permute_channels(const Tensor<T>& x, std::span<const int> source);

template <typename T>
Tensor<T> channel_reorganize(const Tensor<T>& x, int groups = 2);

template <typename T>
Tensor<T> channel_reorganize_inverse(const Tensor<T>& x, int groups = 2);

template <typename T>
Tensor<T> shortcut_add(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise accumulate: dst += src (shapes must match).
template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src);

}  // namespace agyolo
