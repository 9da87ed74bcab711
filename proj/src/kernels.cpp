#include "agyolo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace agyolo {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

int conv_out_dim(int in, int k, int stride, int pad) {
  if (stride < 1) throw DimensionError("stride must be positive");
  if (pad < 0) throw DimensionError("padding must be non-negative");
  const int span = in + 2 * pad - k;
  if (span < 0) throw DimensionError("kernel larger than padded input");
  return span / stride + 1;
}

namespace {

// Output indices o in [lo, hi) for which o*stride + offset lies in [0, extent).
inline void valid_range(int out, int stride, int offset, int extent, int& lo, int& hi) {
  // o*stride + offset >= 0  =>  o >= ceil(-offset / stride)
  lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  // o*stride + offset <= extent - 1
  const int top = extent - 1 - offset;
  hi = top < 0 ? 0 : std::min(out, top / stride + 1);
  if (hi < lo) hi = lo;
}

}  // namespace

template <typename T>
void validate_conv(const Shape& x, const ConvParams<T>& p) {
  if (p.groups < 1) throw ConfigError("conv groups must be positive");
  const int out_c = p.weights.n();
  if (out_c % p.groups != 0)
    throw ConfigError("conv groups " + std::to_string(p.groups) + " do not divide out channels " +
                      std::to_string(out_c));
  if (x.c % p.groups != 0)
    throw ConfigError("conv groups " + std::to_string(p.groups) + " do not divide in channels " +
                      std::to_string(x.c));
  if (x.c != p.in_channels())
    throw DimensionError("conv expects " + std::to_string(p.in_channels()) + " input channels, got " +
                         std::to_string(x.c));
  if (p.weights.h() != p.weights.w()) throw ConfigError("conv kernels must be square");
  if (p.has_bias() && static_cast<int>(p.bias.size()) != out_c)
    throw DimensionError("conv bias length does not match out channels");
  conv_out_dim(x.h, p.kernel(), p.stride, p.pad);
  conv_out_dim(x.w, p.kernel(), p.stride, p.pad);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  validate_conv(x.shape(), p);
  const int n = x.n(), h = x.h(), w = x.w();
  const int k = p.kernel(), s = p.stride, pad = p.pad;
  const int out_c = p.out_channels();
  const int oh = conv_out_dim(h, k, s, pad), ow = conv_out_dim(w, k, s, pad);
  const int icg = x.c() / p.groups, ocg = out_c / p.groups;
  Tensor<T> y(n, out_c, oh, ow);
  const T* weights = p.weights.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < out_c; ++o) {
      T* out = y.plane(b, o);
      std::fill(out, out + static_cast<std::size_t>(oh) * ow, p.has_bias() ? p.bias[o] : T(0));
      const int g = o / ocg;
      for (int ci = 0; ci < icg; ++ci) {
        const T* in = x.plane(b, g * icg + ci);
        const T* wk = weights + (static_cast<std::size_t>(o) * icg + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          int oy_lo, oy_hi;
          valid_range(oh, s, ky - pad, h, oy_lo, oy_hi);
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            int ox_lo, ox_hi;
            valid_range(ow, s, kx - pad, w, ox_lo, ox_hi);
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const T* irow = in + static_cast<std::size_t>(oy * s + ky - pad) * w + (kx - pad);
              T* orow = out + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * s];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvParams<T>& p, const Tensor<T>& dy,
                             bool need_input) {
  validate_conv(x.shape(), p);
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  const int k = p.kernel(), s = p.stride, pad = p.pad;
  const int out_c = p.out_channels();
  const int oh = conv_out_dim(h, k, s, pad), ow = conv_out_dim(w, k, s, pad);
  if (dy.shape() != Shape{n, out_c, oh, ow})
    throw DimensionError("conv backward: gradient shape " + dy.shape().str() + " does not match output");
  const int icg = c / p.groups, ocg = out_c / p.groups;
  const T* weights = p.weights.data();

  ConvGrads<T> g;
  g.weights = Tensor<T>(p.weights.shape());
  if (p.has_bias()) g.bias.assign(out_c, T(0));

  // Weight and bias gradients: each thread owns one output filter.
#pragma omp parallel for schedule(static)
  for (int o = 0; o < out_c; ++o) {
    const int grp = o / ocg;
    T* dw = g.weights.data() + static_cast<std::size_t>(o) * icg * k * k;
    for (int b = 0; b < n; ++b) {
      const T* dout = dy.plane(b, o);
      if (p.has_bias()) {
        T acc = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i) acc += dout[i];
        g.bias[o] += acc;
      }
      for (int ci = 0; ci < icg; ++ci) {
        const T* in = x.plane(b, grp * icg + ci);
        for (int ky = 0; ky < k; ++ky) {
          int oy_lo, oy_hi;
          valid_range(oh, s, ky - pad, h, oy_lo, oy_hi);
          for (int kx = 0; kx < k; ++kx) {
            int ox_lo, ox_hi;
            valid_range(ow, s, kx - pad, w, ox_lo, ox_hi);
            T acc = 0;
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const T* irow = in + static_cast<std::size_t>(oy * s + ky - pad) * w + (kx - pad);
              const T* drow = dout + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) acc += drow[ox] * irow[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) acc += drow[ox] * irow[ox * s];
              }
            }
            dw[(static_cast<std::size_t>(ci) * k + ky) * k + kx] += acc;
          }
        }
      }
    }
  }

  if (!need_input) return g;

  // Data gradient: each thread owns one input plane.
  g.input = Tensor<T>(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ic = 0; ic < c; ++ic) {
      T* din = g.input.plane(b, ic);
      const int grp = ic / icg, ci = ic % icg;
      for (int oo = 0; oo < ocg; ++oo) {
        const int o = grp * ocg + oo;
        const T* dout = dy.plane(b, o);
        const T* wk = weights + (static_cast<std::size_t>(o) * icg + ci) * k * k;
        for (int ky = 0; ky < k; ++ky) {
          int oy_lo, oy_hi;
          valid_range(oh, s, ky - pad, h, oy_lo, oy_hi);
          for (int kx = 0; kx < k; ++kx) {
            const T wv = wk[ky * k + kx];
            int ox_lo, ox_hi;
            valid_range(ow, s, kx - pad, w, ox_lo, ox_hi);
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              T* irow = din + static_cast<std::size_t>(oy * s + ky - pad) * w + (kx - pad);
              const T* drow = dout + static_cast<std::size_t>(oy) * ow;
              if (s == 1) {
                for (int ox = ox_lo; ox < ox_hi; ++ox) irow[ox] += wv * drow[ox];
              } else {
                for (int ox = ox_lo; ox < ox_hi; ++ox) irow[ox * s] += wv * drow[ox];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BnParams<T>& p, BnMode mode, BnCache<T>* cache) {
  const int c = x.c();
  if (p.channels() != c)
    throw DimensionError("batch norm has " + std::to_string(p.channels()) + " channels, input has " +
                         std::to_string(c));
  const int n = x.n();
  const std::size_t plane = x.shape().plane();
  Tensor<T> y(x.shape());

  if (mode == BnMode::Infer) {
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
      const T scale = p.gamma[ch] / std::sqrt(p.running_var[ch] + p.epsilon);
      const T shift = p.beta[ch] - scale * p.running_mean[ch];
      for (int b = 0; b < n; ++b) {
        const T* in = x.plane(b, ch);
        T* out = y.plane(b, ch);
        for (std::size_t i = 0; i < plane; ++i) out[i] = scale * in[i] + shift;
      }
    }
    return y;
  }

  const double count = static_cast<double>(n) * plane;
  std::vector<T> mean(c), inv_std(c);
  Tensor<T> normalized(x.shape());
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (int b = 0; b < n; ++b) {
      const T* in = x.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i) sum += in[i];
    }
    const double mu = sum / count;
    double sq = 0;
    for (int b = 0; b < n; ++b) {
      const T* in = x.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = in[i] - mu;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const T istd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.epsilon)));
    mean[ch] = static_cast<T>(mu);
    inv_std[ch] = istd;
    for (int b = 0; b < n; ++b) {
      const T* in = x.plane(b, ch);
      T* xh = normalized.plane(b, ch);
      T* out = y.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (in[i] - mean[ch]) * istd;
        out[i] = p.gamma[ch] * xh[i] + p.beta[ch];
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    p.running_mean[ch] = static_cast<T>((1 - p.momentum) * p.running_mean[ch] + p.momentum * mu);
    p.running_var[ch] = static_cast<T>((1 - p.momentum) * p.running_var[ch] + p.momentum * unbiased);
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->normalized = std::move(normalized);
  }
  return y;
}

template <typename T>
BnGrads<T> batch_norm_backward(const BnParams<T>& p, const BnCache<T>& cache, const Tensor<T>& dy) {
  const Tensor<T>& xh = cache.normalized;
  if (xh.empty()) throw StateError("batch norm backward without a training-mode forward");
  if (dy.shape() != xh.shape()) throw DimensionError("batch norm backward: gradient shape mismatch");
  const int n = dy.n(), c = dy.c();
  const std::size_t plane = dy.shape().plane();
  const double count = static_cast<double>(n) * plane;
  BnGrads<T> g;
  g.input = Tensor<T>(dy.shape());
  g.gamma.assign(c, T(0));
  g.beta.assign(c, T(0));
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0, sum_dy_xh = 0;
    for (int b = 0; b < n; ++b) {
      const T* d = dy.plane(b, ch);
      const T* xhp = xh.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += d[i];
        sum_dy_xh += static_cast<double>(d[i]) * xhp[i];
      }
    }
    g.beta[ch] = static_cast<T>(sum_dy);
    g.gamma[ch] = static_cast<T>(sum_dy_xh);
    const T k = p.gamma[ch] * cache.inv_std[ch];
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xh = static_cast<T>(sum_dy_xh / count);
    for (int b = 0; b < n; ++b) {
      const T* d = dy.plane(b, ch);
      const T* xhp = xh.plane(b, ch);
      T* out = g.input.plane(b, ch);
      for (std::size_t i = 0; i < plane; ++i) out[i] = k * (d[i] - mean_dy - xhp[i] * mean_dy_xh);
    }
  }
  return g;
}

template <typename T>
T activate(T v, Activation kind) {
  switch (kind) {
    case Activation::Leaky:
      return v > T(0) ? v : static_cast<T>(kLeakySlope) * v;
    case Activation::Sigmoid:
      return T(1) / (T(1) + std::exp(-v));
    case Activation::Linear:
      break;
  }
  return v;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  const std::size_t size = x.size();
  const T* in = x.data();
  T* out = y.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < size; ++i) out[i] = activate(in[i], kind);
  return y;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& y, const Tensor<T>& dy, Activation kind) {
  if (y.shape() != dy.shape()) throw DimensionError("activation backward: shape mismatch");
  Tensor<T> dx(y.shape());
  const std::size_t size = y.size();
  const T* out = y.data();
  const T* d = dy.data();
  T* g = dx.data();
  switch (kind) {
    case Activation::Linear:
      std::copy(d, d + size, g);
      break;
    case Activation::Leaky:
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < size; ++i) g[i] = out[i] > T(0) ? d[i] : static_cast<T>(kLeakySlope) * d[i];
      break;
    case Activation::Sigmoid:
#pragma omp parallel for schedule(static)
      for (std::size_t i = 0; i < size; ++i) g[i] = d[i] * out[i] * (T(1) - out[i]);
      break;
  }
  return dx;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& x, int size, int stride, int pad) {
  if (size < 1 || stride < 1 || pad < 0 || pad >= size) throw DimensionError("invalid max pool geometry");
  const int oh = (x.h() + pad - size) / stride + 1;
  const int ow = (x.w() + pad - size) / stride + 1;
  if (x.h() + pad < size || x.w() + pad < size || oh < 1 || ow < 1)
    throw DimensionError("max pool window does not fit input " + x.shape().str());
  const int off = pad / 2;
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  PoolResult<T> r{Tensor<T>(n, c, oh, ow), std::vector<std::int32_t>(static_cast<std::size_t>(n) * c * oh * ow)};
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* in = x.plane(b, ch);
      const std::size_t base = x.index(b, ch, 0, 0);
      T* out = r.output.plane(b, ch);
      std::int32_t* arg = r.argmax.data() + r.output.index(b, ch, 0, 0);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = -1;
          for (int ky = 0; ky < size; ++ky) {
            const int iy = oy * stride + ky - off;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < size; ++kx) {
              const int ix = ox * stride + kx - off;
              if (ix < 0 || ix >= w) continue;
              const T v = in[iy * w + ix];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          out[oy * ow + ox] = best;
          arg[oy * ow + ox] = static_cast<std::int32_t>(base + best_idx);
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, std::span<const std::int32_t> argmax,
                             const Tensor<T>& dy) {
  if (argmax.size() != dy.size()) throw DimensionError("max pool backward: argmax size mismatch");
  Tensor<T> dx(input_shape);
  const int n = dy.n(), c = dy.c();
  const std::size_t plane = dy.shape().plane();
  // Windows never cross planes, so per-plane ownership keeps writes disjoint.
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = dy.index(b, ch, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) dx[argmax[base + i]] += dy[base + i];
    }
  }
  return dx;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  if (factor < 1) throw DimensionError("upsample factor must be >= 1");
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w();
  Tensor<T> y(n, c, h * factor, w * factor);
  const int ow = w * factor;
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* in = x.plane(b, ch);
      T* out = y.plane(b, ch);
      for (int oy = 0; oy < h * factor; ++oy) {
        const T* irow = in + static_cast<std::size_t>(oy / factor) * w;
        T* orow = out + static_cast<std::size_t>(oy) * ow;
        for (int ox = 0; ox < ow; ++ox) orow[ox] = irow[ox / factor];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& dy, int factor) {
  if (factor < 1 || dy.h() % factor != 0 || dy.w() % factor != 0)
    throw DimensionError("upsample backward: gradient not divisible by factor");
  const int n = dy.n(), c = dy.c(), h = dy.h() / factor, w = dy.w() / factor;
  Tensor<T> dx(n, c, h, w);
#pragma omp parallel for collapse(2) schedule(static)
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* d = dy.plane(b, ch);
      T* out = dx.plane(b, ch);
      for (int oy = 0; oy < dy.h(); ++oy)
        for (int ox = 0; ox < dy.w(); ++ox) out[(oy / factor) * w + ox / factor] += d[oy * dy.w() + ox];
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> xs) {
  if (xs.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = xs.front()->shape();
  int total = 0;
  for (const Tensor<T>* t : xs) {
    const Shape& s = t->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      throw DimensionError("concat spatial mismatch: " + s.str() + " vs " + first.str());
    total += s.c;
  }
  Tensor<T> y(first.n, total, first.h, first.w);
  const std::size_t plane = first.plane();
  for (int b = 0; b < first.n; ++b) {
    int offset = 0;
    for (const Tensor<T>* t : xs) {
      const std::size_t chunk = static_cast<std::size_t>(t->c()) * plane;
      std::copy_n(t->plane(b, 0), chunk, y.plane(b, offset));
      offset += t->c();
    }
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(xs.size());
  for (const auto& t : xs) ptrs.push_back(&t);
  return concat_channels<T>(std::span<const Tensor<T>* const>(ptrs));
}

template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, int begin, int end) {
  if (begin < 0 || end > x.c() || begin >= end)
    throw DimensionError("channel slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + std::to_string(x.c()) + " channels");
  Tensor<T> y(x.n(), end - begin, x.h(), x.w());
  const std::size_t chunk = static_cast<std::size_t>(end - begin) * x.shape().plane();
  for (int b = 0; b < x.n(); ++b) std::copy_n(x.plane(b, begin), chunk, y.plane(b, 0));
  return y;
}

template <typename T>
Tensor<T> channel_slice_backward(const Shape& input_shape, int begin, const Tensor<T>& dy) {
  if (begin < 0 || begin + dy.c() > input_shape.c || dy.n() != input_shape.n ||
      dy.h() != input_shape.h || dy.w() != input_shape.w)
    throw DimensionError("channel slice backward: shape mismatch");
  Tensor<T> dx(input_shape);
  const std::size_t chunk = static_cast<std::size_t>(dy.c()) * dy.shape().plane();
  for (int b = 0; b < dy.n(); ++b) std::copy_n(dy.plane(b, 0), chunk, dx.plane(b, begin));
  return dx;
}

std::vector<int> reorganize_permutation(int channels, int groups) {
  if (groups < 1 || channels % groups != 0)
    throw ConfigError("reorganize groups " + std::to_string(groups) + " do not divide " +
                      std::to_string(channels) + " channels");
  const int per = channels / groups;
  std::vector<int> source(channels);
  for (int i = 0; i < groups; ++i)
    for (int j = 0; j < per; ++j) source[j * groups + i] = i * per + j;
  return source;
}

template <typename T>
Tensor<T> permute_channels(const Tensor<T>& x, std::span<const int> source) {
  if (static_cast<int>(source.size()) != x.c()) throw DimensionError("permutation length mismatch");
  Tensor<T> y(x.shape());
  const std::size_t plane = x.shape().plane();
  for (int b = 0; b < x.n(); ++b)
    for (int ch = 0; ch < x.c(); ++ch) std::copy_n(x.plane(b, source[ch]), plane, y.plane(b, ch));
  return y;
}

template <typename T>
Tensor<T> channel_reorganize(const Tensor<T>& x, int groups) {
  const auto source = reorganize_permutation(x.c(), groups);
  return permute_channels(x, std::span<const int>(source));
}

template <typename T>
Tensor<T> channel_reorganize_inverse(const Tensor<T>& x, int groups) {
  const auto source = reorganize_permutation(x.c(), groups);
  std::vector<int> inverse(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) inverse[source[i]] = static_cast<int>(i);
  return permute_channels(x, std::span<const int>(inverse));
}

template <typename T>
Tensor<T> shortcut_add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("shortcut shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> y(a.shape());
  const std::size_t size = a.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < size; ++i) y[i] = a[i] + b[i];
  return y;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  if (dst.shape() != src.shape()) throw DimensionError("accumulate shape mismatch");
  const std::size_t size = dst.size();
  T* d = dst.data();
  const T* s = src.data();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < size; ++i) d[i] += s[i];
}

#define AGYOLO_INSTANTIATE_KERNELS(T)                                                              \
  template void validate_conv<T>(const Shape&, const ConvParams<T>&);                             \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                           \
  template ConvGrads<T> conv2d_backward<T>(const Tensor<T>&, const ConvParams<T>&, const Tensor<T>&, \
                                           bool);                                                  \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, BnParams<T>&, BnMode, BnCache<T>*);           \
  template BnGrads<T> batch_norm_backward<T>(const BnParams<T>&, const BnCache<T>&, const Tensor<T>&); \
  template T activate<T>(T, Activation);                                                           \
  template Tensor<T> activation<T>(const Tensor<T>&, Activation);                                 \
  template Tensor<T> activation_backward<T>(const Tensor<T>&, const Tensor<T>&, Activation);      \
  template PoolResult<T> maxpool2d<T>(const Tensor<T>&, int, int, int);                           \
  template Tensor<T> maxpool2d_backward<T>(const Shape&, std::span<const std::int32_t>, const Tensor<T>&); \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int);                                  \
  template Tensor<T> upsample_nearest_backward<T>(const Tensor<T>&, int);                         \
  template Tensor<T> concat_channels<T>(std::span<const Tensor<T>* const>);                       \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                           \
  template Tensor<T> channel_slice<T>(const Tensor<T>&, int, int);                                \
  template Tensor<T> channel_slice_backward<T>(const Shape&, int, const Tensor<T>&);              \
  template Tensor<T> permute_channels<T>(const Tensor<T>&, std::span<const int>);                 \
  template Tensor<T> channel_reorganize<T>(const Tensor<T>&, int);                                \
  template Tensor<T> channel_reorganize_inverse<T>(const Tensor<T>&, int);                        \
  template Tensor<T> shortcut_add<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template void accumulate<T>(Tensor<T>&, const Tensor<T>&);

AGYOLO_INSTANTIATE_KERNELS(float)
AGYOLO_INSTANTIATE_KERNELS(double)

}  // namespace agyolo
