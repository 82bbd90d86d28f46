#pragma once

// Minimal layer set with hand-written backward passes. Layers cache what
// their backward pass needs during forward; call backward at most once per
// forward. Parameter gradients accumulate until zero_grad().

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "volsynth/tensor.hpp"

namespace volsynth::nn {

template <typename T>
struct Param {
  std::string name;
  AlignedVector<T> value;
  AlignedVector<T> grad;

  Param() = default;
  Param(std::string n, std::size_t size) : name(std::move(n)), value(size, T{0}), grad(size, T{0}) {}
  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void init_uniform(Param<T>& p, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : p.value) v = static_cast<T>(u(rng));
}

// ---------------------------------------------------------------------------
// Convolutions (stride 1, zero padding k/2)

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, const std::string& name)
      : in_(in_channels), out_(out_channels), k_(kernel),
        weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel),
        bias_(name + ".bias", static_cast<std::size_t>(out_channels)) {
    if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv2d: kernel must be 1 or 3");
  }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * k_ * k_));
    init_uniform(weight_, bound, rng);
    init_uniform(bias_, bound, rng);
  }

  void collect(ParamList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != in_) throw std::invalid_argument("Conv2d: expected {N," + std::to_string(in_) + ",H,W} input, got " + shape_string(x.shape()));
    input_ = x;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3), hw = h * w;
    Tensor<T> y({n, out_, h, w});
    ConstMatMap<T> wm(weight_.value.data(), out_, in_ * k_ * k_);
    for (int b = 0; b < n; ++b) {
      const T* cols = columns(x.outer(b).data(), h, w);
      ConstMatMap<T> cm(cols, in_ * k_ * k_, hw);
      MatMap<T> ym(y.outer(b).data(), out_, hw);
      ym.noalias() = wm * cm;
      for (int c = 0; c < out_; ++c) ym.row(c).array() += bias_.value[c];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3), hw = h * w;
    const int kk = in_ * k_ * k_;
    Tensor<T> dx(input_.shape());
    ConstMatMap<T> wm(weight_.value.data(), out_, kk);
    MatMap<T> dw(weight_.grad.data(), out_, kk);
    AlignedVector<T> dcols(static_cast<std::size_t>(kk) * hw);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> dym(dy.outer(b).data(), out_, hw);
      const T* cols = columns(input_.outer(b).data(), h, w);
      ConstMatMap<T> cm(cols, kk, hw);
      dw.noalias() += dym * cm.transpose();
      for (int c = 0; c < out_; ++c) bias_.grad[c] += dym.row(c).sum();
      if (k_ == 1) {
        MatMap<T> dxm(dx.outer(b).data(), in_, hw);
        dxm.noalias() = wm.transpose() * dym;
      } else {
        MatMap<T> dcm(dcols.data(), kk, hw);
        dcm.noalias() = wm.transpose() * dym;
        col2im(dcols.data(), dx.outer(b).data(), h, w);
      }
    }
    return dx;
  }

 private:
  const T* columns(const T* x, int h, int w) {
    if (k_ == 1) return x;
    cols_.assign(static_cast<std::size_t>(in_) * 9 * h * w, T{0});
    T* out = cols_.data();
    for (int c = 0; c < in_; ++c) {
      const T* plane = x + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx, out += h * w) {
          for (int yy = 0; yy < h; ++yy) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= h) continue;
            const T* src = plane + static_cast<std::size_t>(sy) * w;
            T* dst = out + static_cast<std::size_t>(yy) * w;
            const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
            for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx + kx - 1];
          }
        }
      }
    }
    return cols_.data();
  }

  void col2im(const T* cols, T* dx, int h, int w) const {
    for (int c = 0; c < in_; ++c) {
      T* plane = dx + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx, cols += h * w) {
          for (int yy = 0; yy < h; ++yy) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= h) continue;
            T* dst = plane + static_cast<std::size_t>(sy) * w;
            const T* src = cols + static_cast<std::size_t>(yy) * w;
            const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
            for (int xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += src[xx];
          }
        }
      }
    }
  }

  int in_ = 0, out_ = 0, k_ = 3;
  Param<T> weight_, bias_;
  Tensor<T> input_;
  AlignedVector<T> cols_;
};

// 3x3x3 convolution over {N, C, D, H, W}.
template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(int in_channels, int out_channels, const std::string& name)
      : in_(in_channels), out_(out_channels),
        weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * 27),
        bias_(name + ".bias", static_cast<std::size_t>(out_channels)) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * 27));
    init_uniform(weight_, bound, rng);
    init_uniform(bias_, bound, rng);
  }

  void collect(ParamList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 5 || x.dim(1) != in_) throw std::invalid_argument("Conv3d: bad input shape " + shape_string(x.shape()));
    input_ = x;
    const int n = x.dim(0), d = x.dim(2), h = x.dim(3), w = x.dim(4), vol = d * h * w;
    Tensor<T> y({n, out_, d, h, w});
    ConstMatMap<T> wm(weight_.value.data(), out_, in_ * 27);
    for (int b = 0; b < n; ++b) {
      im2col(x.outer(b).data(), d, h, w);
      ConstMatMap<T> cm(cols_.data(), in_ * 27, vol);
      MatMap<T> ym(y.outer(b).data(), out_, vol);
      ym.noalias() = wm * cm;
      for (int c = 0; c < out_; ++c) ym.row(c).array() += bias_.value[c];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = input_.dim(0), d = input_.dim(2), h = input_.dim(3), w = input_.dim(4), vol = d * h * w;
    const int kk = in_ * 27;
    Tensor<T> dx(input_.shape());
    ConstMatMap<T> wm(weight_.value.data(), out_, kk);
    MatMap<T> dw(weight_.grad.data(), out_, kk);
    AlignedVector<T> dcols(static_cast<std::size_t>(kk) * vol);
    for (int b = 0; b < n; ++b) {
      ConstMatMap<T> dym(dy.outer(b).data(), out_, vol);
      im2col(input_.outer(b).data(), d, h, w);
      ConstMatMap<T> cm(cols_.data(), kk, vol);
      dw.noalias() += dym * cm.transpose();
      for (int c = 0; c < out_; ++c) bias_.grad[c] += dym.row(c).sum();
      MatMap<T> dcm(dcols.data(), kk, vol);
      dcm.noalias() = wm.transpose() * dym;
      // col2im
      const T* src = dcols.data();
      T* dxb = dx.outer(b).data();
      for (int c = 0; c < in_; ++c) {
        T* plane = dxb + static_cast<std::size_t>(c) * vol;
        for (int kz = 0; kz < 3; ++kz)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx, src += vol)
              for (int zz = 0; zz < d; ++zz) {
                const int sz = zz + kz - 1;
                if (sz < 0 || sz >= d) continue;
                for (int yy = 0; yy < h; ++yy) {
                  const int sy = yy + ky - 1;
                  if (sy < 0 || sy >= h) continue;
                  T* dst = plane + (static_cast<std::size_t>(sz) * h + sy) * w;
                  const T* row = src + (static_cast<std::size_t>(zz) * h + yy) * w;
                  const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                  for (int xx = x0; xx < x1; ++xx) dst[xx + kx - 1] += row[xx];
                }
              }
      }
    }
    return dx;
  }

 private:
  void im2col(const T* x, int d, int h, int w) {
    const std::size_t vol = static_cast<std::size_t>(d) * h * w;
    cols_.assign(static_cast<std::size_t>(in_) * 27 * vol, T{0});
    T* out = cols_.data();
    for (int c = 0; c < in_; ++c) {
      const T* plane = x + c * vol;
      for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx, out += vol)
            for (int zz = 0; zz < d; ++zz) {
              const int sz = zz + kz - 1;
              if (sz < 0 || sz >= d) continue;
              for (int yy = 0; yy < h; ++yy) {
                const int sy = yy + ky - 1;
                if (sy < 0 || sy >= h) continue;
                const T* src = plane + (static_cast<std::size_t>(sz) * h + sy) * w;
                T* dst = out + (static_cast<std::size_t>(zz) * h + yy) * w;
                const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
                for (int xx = x0; xx < x1; ++xx) dst[xx] = src[xx + kx - 1];
              }
            }
    }
  }

  int in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
  Tensor<T> input_;
  AlignedVector<T> cols_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, const std::string& name)
      : in_(in_features), out_(out_features),
        weight_(name + ".weight", static_cast<std::size_t>(in_features) * out_features),
        bias_(name + ".bias", static_cast<std::size_t>(out_features)) {}

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    init_uniform(weight_, bound, rng);
    init_uniform(bias_, bound, rng);
  }

  void collect(ParamList<T>& out) { out.push_back(&weight_); out.push_back(&bias_); }

  // x: {N, in} -> {N, out}
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.rank() != 2 || x.dim(1) != in_) throw std::invalid_argument("Linear: bad input shape " + shape_string(x.shape()));
    input_ = x;
    const int n = x.dim(0);
    Tensor<T> y({n, out_});
    ConstMatMap<T> xm(x.data(), n, in_);
    ConstMatMap<T> wm(weight_.value.data(), out_, in_);
    MatMap<T> ym(y.data(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < out_; ++o) ym(b, o) += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int n = input_.dim(0);
    ConstMatMap<T> xm(input_.data(), n, in_);
    ConstMatMap<T> dym(dy.data(), n, out_);
    ConstMatMap<T> wm(weight_.value.data(), out_, in_);
    MatMap<T> dw(weight_.grad.data(), out_, in_);
    dw.noalias() += dym.transpose() * xm;
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dym(b, o);
    Tensor<T> dx({n, in_});
    MatMap<T> dxm(dx.data(), n, in_);
    dxm.noalias() = dym * wm;
    return dx;
  }

 private:
  int in_ = 0, out_ = 0;
  Param<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class SiLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::Map<const Arr> xa(x.data(), n);
    sigmoid_ = Tensor<T>(x.shape());
    input_ = x;
    Eigen::Map<Arr> sa(sigmoid_.data(), n);
    sa = T{1} / (T{1} + (-xa).exp());
    Tensor<T> y(x.shape());
    Eigen::Map<Arr>(y.data(), n) = xa * sa;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(dy.size());
    Eigen::Map<const Arr> xa(input_.data(), n), sa(sigmoid_.data(), n), ga(dy.data(), n);
    Tensor<T> dx(dy.shape());
    Eigen::Map<Arr>(dx.data(), n) = ga * sa * (T{1} + xa * (T{1} - sa));
    return dx;
  }

 private:
  Tensor<T> input_, sigmoid_;
};

// ---------------------------------------------------------------------------
// Stateless shape ops on {N, C, H, W}

// 2x2 average pooling, ceil mode: partial windows average what they cover.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor<T> y({n, c, ho, wo});
  for (int p = 0; p < n * c; ++p) {
    const T* src = x.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = y.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int yy = 0; yy < ho; ++yy)
      for (int xx = 0; xx < wo; ++xx) {
        T s{0};
        int cnt = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int sy = 2 * yy + dy, sx = 2 * xx + dx;
            if (sy < h && sx < w) { s += src[sy * w + sx]; ++cnt; }
          }
        dst[yy * wo + xx] = s / static_cast<T>(cnt);
      }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& dy, const std::vector<int>& input_shape) {
  const int n = input_shape[0], c = input_shape[1], h = input_shape[2], w = input_shape[3];
  const int ho = dy.dim(2), wo = dy.dim(3);
  Tensor<T> dx(input_shape);
  for (int p = 0; p < n * c; ++p) {
    const T* src = dy.data() + static_cast<std::size_t>(p) * ho * wo;
    T* dst = dx.data() + static_cast<std::size_t>(p) * h * w;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const int py = yy / 2, px = xx / 2;
        const int cy = std::min(2, h - 2 * py), cx = std::min(2, w - 2 * px);
        dst[yy * w + xx] = src[py * wo + px] / static_cast<T>(cy * cx);
      }
  }
  return dx;
}

// Nearest-neighbour upsampling to an explicit {H, W}.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x, int h, int w) {
  const int n = x.dim(0), c = x.dim(1), hi = x.dim(2), wi = x.dim(3);
  Tensor<T> y({n, c, h, w});
  for (int p = 0; p < n * c; ++p) {
    const T* src = x.data() + static_cast<std::size_t>(p) * hi * wi;
    T* dst = y.data() + static_cast<std::size_t>(p) * h * w;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) dst[yy * w + xx] = src[(yy / 2) * wi + xx / 2];
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy, const std::vector<int>& input_shape) {
  const int n = input_shape[0], c = input_shape[1], hi = input_shape[2], wi = input_shape[3];
  const int h = dy.dim(2), w = dy.dim(3);
  Tensor<T> dx(input_shape);
  for (int p = 0; p < n * c; ++p) {
    const T* src = dy.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = dx.data() + static_cast<std::size_t>(p) * hi * wi;
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) dst[(yy / 2) * wi + xx / 2] += src[yy * w + xx];
  }
  return dx;
}

// Channel concatenation along axis 1 of same-sized 4-D/5-D tensors.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  std::vector<int> shape = a.shape();
  shape[1] += b.dim(1);
  Tensor<T> y(shape);
  const int n = a.dim(0);
  const std::size_t sa = a.stride0(), sb = b.stride0();
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * sa, sa, y.data() + i * (sa + sb));
    std::copy_n(b.data() + i * sb, sb, y.data() + i * (sa + sb) + sa);
  }
  return y;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& y, int first_channels) {
  std::vector<int> sa = y.shape(), sb = y.shape();
  sa[1] = first_channels;
  sb[1] = y.dim(1) - first_channels;
  Tensor<T> a(sa), b(sb);
  const int n = y.dim(0);
  const std::size_t na = a.stride0(), nb = b.stride0();
  for (int i = 0; i < n; ++i) {
    std::copy_n(y.data() + i * (na + nb), na, a.data() + i * na);
    std::copy_n(y.data() + i * (na + nb) + na, nb, b.data() + i * nb);
  }
  return {std::move(a), std::move(b)};
}

// x {N, C, ...} += bias {N, C} broadcast over the spatial extent.
template <typename T>
void add_channel_bias(Tensor<T>& x, const Tensor<T>& bias) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = x.stride0() / c;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* p = x.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      const T b = bias[static_cast<std::size_t>(i) * c + ch];
      for (std::size_t k = 0; k < plane; ++k) p[k] += b;
    }
}

template <typename T>
Tensor<T> channel_bias_backward(const Tensor<T>& dx) {
  const int n = dx.dim(0), c = dx.dim(1);
  const std::size_t plane = dx.stride0() / c;
  Tensor<T> db({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const T* p = dx.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      T s{0};
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      db[static_cast<std::size_t>(i) * c + ch] = s;
    }
  return db;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// ---------------------------------------------------------------------------
// Embeddings and losses

// Sinusoidal features [sin(v w_i), cos(v w_i)], w_i = 10000^(-2i/dim).
template <typename T>
void sinusoidal_embedding(double v, int dim, T* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / std::max(1, half));
    out[i] = static_cast<T>(std::sin(v * freq));
    out[half + i] = static_cast<T>(std::cos(v * freq));
  }
}

// Mean squared error over entries where weight != 0 (all entries when the
// mask is empty). Returns the loss and writes dL/dpred into grad.
template <typename T>
double masked_mse(const Tensor<T>& pred, const Tensor<T>& target, std::span<const T> weight, Tensor<T>* grad) {
  require_same_shape(pred, target, "masked_mse");
  double count = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = weight.empty() ? 1.0 : static_cast<double>(weight[i]);
    if (w == 0.0) continue;
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += d * d;
    count += 1.0;
  }
  if (count == 0.0) throw std::invalid_argument("masked_mse: no weighted entries");
  if (grad) {
    *grad = Tensor<T>(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double w = weight.empty() ? 1.0 : static_cast<double>(weight[i]);
      if (w == 0.0) continue;
      (*grad)[i] = static_cast<T>(2.0 * (static_cast<double>(pred[i]) - static_cast<double>(target[i])) / count);
    }
  }
  return sum / count;
}

template <typename T>
double mean_l1(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) {
  require_same_shape(pred, target, "mean_l1");
  double sum = 0.0;
  const double n = static_cast<double>(pred.size());
  if (grad) *grad = Tensor<T>(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += std::abs(d);
    if (grad) (*grad)[i] = static_cast<T>((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
  }
  return sum / n;
}

// Softmax cross-entropy over axis 1 of logits {N, K, ...} against integer
// labels laid out as {N, ...}.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels, Tensor<T>* grad) {
  const int n = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.stride0() / k;
  if (labels.size() != plane * n) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  if (grad) *grad = Tensor<T>(logits.shape());
  double loss = 0.0;
  const double norm = static_cast<double>(plane * n);
  std::vector<double> p(k);
  for (int i = 0; i < n; ++i)
    for (std::size_t s = 0; s < plane; ++s) {
      double mx = -1e300;
      for (int c = 0; c < k; ++c) mx = std::max(mx, static_cast<double>(logits[(static_cast<std::size_t>(i) * k + c) * plane + s]));
      double z = 0.0;
      for (int c = 0; c < k; ++c) {
        p[c] = std::exp(static_cast<double>(logits[(static_cast<std::size_t>(i) * k + c) * plane + s]) - mx);
        z += p[c];
      }
      const int lab = labels[static_cast<std::size_t>(i) * plane + s];
      if (lab >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
      loss -= std::log(p[lab] / z);
      if (grad)
        for (int c = 0; c < k; ++c)
          (*grad)[(static_cast<std::size_t>(i) * k + c) * plane + s] = static_cast<T>((p[c] / z - (c == lab ? 1.0 : 0.0)) / norm);
    }
  return loss / norm;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  };

  Adam() = default;
  Adam(ParamList<T> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }

  void step() {
    ++steps_;
    double scale = 1.0;
    if (opts_.grad_clip > 0) {
      double norm2 = 0.0;
      for (auto* p : params_)
        for (T g : p->grad) norm2 += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm2);
      if (norm > opts_.grad_clip) scale = opts_.grad_clip / norm;
    }
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double g = static_cast<double>(p.grad[j]) * scale;
        m_[i][j] = opts_.beta1 * m_[i][j] + (1 - opts_.beta1) * g;
        v_[i][j] = opts_.beta2 * v_[i][j] + (1 - opts_.beta2) * g * g;
        const double mh = m_[i][j] / bc1, vh = v_[i][j] / bc2;
        p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - opts_.lr * mh / (std::sqrt(vh) + opts_.eps));
      }
    }
  }

  void set_lr(double lr) { opts_.lr = lr; }
  const Options& options() const noexcept { return opts_; }
  std::int64_t steps() const noexcept { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }

 private:
  ParamList<T> params_;
  Options opts_;
  std::int64_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

template <typename T>
void zero_grad(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (auto* p : params) n += p->size();
  return n;
}

}  // namespace volsynth::nn
