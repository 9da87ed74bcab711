#pragma once

// Serial nested-loop implementations written straight from the definitions.
// They are deliberately unoptimized and exist as oracles for tests and as the
// baseline in the kernel benchmarks.

#include <cstdint>
#include <vector>

#include "agyolo/kernels.hpp"

namespace agyolo::reference {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& dy);

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int size, int stride, int pad);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor);

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const BnParams<T>& p);

// Batch statistics normalization (no running-stat update).
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const BnParams<T>& p);

}  // namespace agyolo::reference
