#include "agyolo/reference.hpp"

#include <cmath>
#include <limits>

namespace agyolo::reference {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  validate_conv(x.shape(), p);
  const int k = p.kernel();
  const int oh = conv_out_dim(x.h(), k, p.stride, p.pad);
  const int ow = conv_out_dim(x.w(), k, p.stride, p.pad);
  const int icg = x.c() / p.groups, ocg = p.out_channels() / p.groups;
  Tensor<T> y(x.n(), p.out_channels(), oh, ow);
  for (int b = 0; b < x.n(); ++b)
    for (int o = 0; o < p.out_channels(); ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = p.has_bias() ? p.bias[o] : T(0);
          const int g = o / ocg;
          for (int ci = 0; ci < icg; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * p.stride + ky - p.pad;
                const int ix = ox * p.stride + kx - p.pad;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                acc += p.weights.at(o, ci, ky, kx) * x.at(b, g * icg + ci, iy, ix);
              }
          y.at(b, o, oy, ox) = acc;
        }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& dy) {
  validate_conv(x.shape(), p);
  const int k = p.kernel();
  const int icg = x.c() / p.groups, ocg = p.out_channels() / p.groups;
  ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(p.weights.shape()), {}};
  if (p.has_bias()) g.bias.assign(p.out_channels(), T(0));
  for (int b = 0; b < dy.n(); ++b)
    for (int o = 0; o < dy.c(); ++o)
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) {
          const T d = dy.at(b, o, oy, ox);
          if (p.has_bias()) g.bias[o] += d;
          const int grp = o / ocg;
          for (int ci = 0; ci < icg; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * p.stride + ky - p.pad;
                const int ix = ox * p.stride + kx - p.pad;
                if (iy < 0 || iy >= x.h() || ix < 0 || ix >= x.w()) continue;
                g.weights.at(o, ci, ky, kx) += d * x.at(b, grp * icg + ci, iy, ix);
                g.input.at(b, grp * icg + ci, iy, ix) += d * p.weights.at(o, ci, ky, kx);
              }
        }
  return g;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int size, int stride, int pad) {
  const int oh = (x.h() + pad - size) / stride + 1;
  const int ow = (x.w() + pad - size) / stride + 1;
  const int off = pad / 2;
  Tensor<T> y(x.n(), x.c(), oh, ow);
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          for (int ky = 0; ky < size; ++ky)
            for (int kx = 0; kx < size; ++kx) {
              const int iy = oy * stride + ky - off, ix = ox * stride + kx - off;
              if (iy >= 0 && iy < x.h() && ix >= 0 && ix < x.w()) best = std::max(best, x.at(b, c, iy, ix));
            }
          y.at(b, c, oy, ox) = best;
        }
  return y;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  Tensor<T> y(x.n(), x.c(), x.h() * factor, x.w() * factor);
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < y.h(); ++i)
        for (int j = 0; j < y.w(); ++j) y.at(b, c, i, j) = x.at(b, c, i / factor, j / factor);
  return y;
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& x, const BnParams<T>& p) {
  Tensor<T> y(x.shape());
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j)
          y.at(b, c, i, j) = p.gamma[c] * (x.at(b, c, i, j) - p.running_mean[c]) /
                                 std::sqrt(p.running_var[c] + p.epsilon) +
                             p.beta[c];
  return y;
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, const BnParams<T>& p) {
  Tensor<T> y(x.shape());
  const double count = static_cast<double>(x.n()) * x.h() * x.w();
  for (int c = 0; c < x.c(); ++c) {
    double mean = 0, var = 0;
    for (int b = 0; b < x.n(); ++b)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) mean += x.at(b, c, i, j);
    mean /= count;
    for (int b = 0; b < x.n(); ++b)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j) var += (x.at(b, c, i, j) - mean) * (x.at(b, c, i, j) - mean);
    var /= count;
    for (int b = 0; b < x.n(); ++b)
      for (int i = 0; i < x.h(); ++i)
        for (int j = 0; j < x.w(); ++j)
          y.at(b, c, i, j) = static_cast<T>(p.gamma[c] * (x.at(b, c, i, j) - mean) /
                                                std::sqrt(var + p.epsilon) +
                                            p.beta[c]);
  }
  return y;
}

#define AGYOLO_INSTANTIATE_REFERENCE(T)                                                       \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                      \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&, const Tensor<T>&); \
  template Tensor<T> maxpool2d<T>(const Tensor<T>&, int, int, int);                          \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int);                             \
  template Tensor<T> batch_norm_infer<T>(const Tensor<T>&, const BnParams<T>&);              \
  template Tensor<T> batch_norm_train<T>(const Tensor<T>&, const BnParams<T>&);

AGYOLO_INSTANTIATE_REFERENCE(float)
AGYOLO_INSTANTIATE_REFERENCE(double)

}  // namespace agyolo::reference
