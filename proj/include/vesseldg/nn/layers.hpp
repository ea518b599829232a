#pragma once

#include "vesseldg/rng.hpp"
#include "vesseldg/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vdg::nn {

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Named learnable tensor with its gradient accumulator.
template <typename S>
struct ParamTensor {
  std::string name;
  MatrixX<S> value;
  MatrixX<S> grad;

  void init(std::string n, int rows, int cols) {
    name = std::move(n);
    value = MatrixX<S>::Zero(rows, cols);
    grad = MatrixX<S>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

/// Channel-column view of a tensor: (H*W) x C, column c = channel c.
template <typename S>
Eigen::Map<MatrixX<S>> as_matrix(Tensor<S>& t) {
  return Eigen::Map<MatrixX<S>>(t.data.data(), t.pixels(), t.c);
}
template <typename S>
Eigen::Map<const MatrixX<S>> as_matrix(const Tensor<S>& t) {
  return Eigen::Map<const MatrixX<S>>(t.data.data(), t.pixels(), t.c);
}

/// 2-D convolution, odd kernel, zero padding, stride 1, im2col + GEMM.
template <typename S>
class Conv {
 public:
  Conv() = default;
  Conv(std::string name, int in_c, int out_c, int ksize, Rng& rng) : in_c_(in_c), out_c_(out_c), k_(ksize) {
    weight_.init(name + ".weight", out_c, in_c * ksize * ksize);
    bias_.init(name + ".bias", out_c, 1);
    // He-normal, fan-in
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_c * ksize * ksize)));
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i)
      weight_.value.data()[i] = static_cast<S>(dist(rng));
  }

  Tensor<S> forward(const Tensor<S>& x) {
    input_ = x;
    MatrixX<S> col = im2col(x);
    Tensor<S> y(out_c_, x.h, x.w);
    as_matrix(y).noalias() = col * weight_.value.transpose();
    auto ym = as_matrix(y);
    for (int oc = 0; oc < out_c_; ++oc) ym.col(oc).array() += bias_.value(oc, 0);
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    MatrixX<S> col = im2col(input_);
    auto dym = as_matrix(dy);
    weight_.grad.noalias() += dym.transpose() * col;
    bias_.grad.col(0).noalias() += dym.colwise().sum().transpose();
    MatrixX<S> dcol = dym * weight_.value;  // (HW, in_c*k*k)
    return col2im(dcol, input_.h, input_.w);
  }

  std::vector<ParamTensor<S>*> params() { return {&weight_, &bias_}; }
  int out_channels() const { return out_c_; }

 private:
  MatrixX<S> im2col(const Tensor<S>& x) const {
    const int pad = k_ / 2, hw = x.pixels();
    MatrixX<S> col = MatrixX<S>::Zero(hw, in_c_ * k_ * k_);
    for (int ci = 0; ci < in_c_; ++ci)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          S* dst = col.col((ci * k_ + ky) * k_ + kx).data();
          for (int y = 0; y < x.h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= x.h) continue;
            const int x0 = std::max(0, pad - kx), x1 = std::min(x.w, x.w + pad - kx);
            const S* src = x.data.data() + (static_cast<Eigen::Index>(ci) * x.h + sy) * x.w;
            for (int xx = x0; xx < x1; ++xx) dst[y * x.w + xx] = src[xx + kx - pad];
          }
        }
    return col;
  }

  Tensor<S> col2im(const MatrixX<S>& dcol, int h, int w) const {
    const int pad = k_ / 2;
    Tensor<S> dx(in_c_, h, w);
    for (int ci = 0; ci < in_c_; ++ci)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const S* src = dcol.col((ci * k_ + ky) * k_ + kx).data();
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
            S* dst = dx.data.data() + (static_cast<Eigen::Index>(ci) * h + sy) * w;
            for (int xx = x0; xx < x1; ++xx) dst[xx + kx - pad] += src[y * w + xx];
          }
        }
    return dx;
  }

  int in_c_ = 0, out_c_ = 0, k_ = 3;
  ParamTensor<S> weight_, bias_;
  Tensor<S> input_;
};

/// Per-channel instance normalization with learnable affine.
template <typename S>
class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(std::string name, int channels) : c_(channels) {
    gamma_.init(name + ".gamma", channels, 1);
    beta_.init(name + ".beta", channels, 1);
    gamma_.value.setOnes();
  }

  Tensor<S> forward(const Tensor<S>& x) {
    const int n = x.pixels();
    xhat_ = Tensor<S>(x.c, x.h, x.w);
    inv_std_.resize(x.c);
    Tensor<S> y(x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c) {
      auto xc = x.channel(c);
      const S mean = xc.mean();
      const S var = (xc - mean).square().sum() / static_cast<S>(n);
      const S inv = S(1) / std::sqrt(var + eps_);
      inv_std_[c] = inv;
      xhat_.channel(c) = (xc - mean) * inv;
      y.channel(c) = gamma_.value(c, 0) * xhat_.channel(c) + beta_.value(c, 0);
    }
    return y;
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    const int n = dy.pixels();
    Tensor<S> dx(dy.c, dy.h, dy.w);
    for (int c = 0; c < dy.c; ++c) {
      auto dyc = dy.channel(c);
      auto xh = xhat_.channel(c);
      gamma_.grad(c, 0) += (dyc * xh).sum();
      beta_.grad(c, 0) += dyc.sum();
      // dx = gamma*inv_std/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
      const S g = gamma_.value(c, 0);
      const S sum_dy = dyc.sum();
      const S sum_dyxh = (dyc * xh).sum();
      dx.channel(c) =
          g * inv_std_[c] / static_cast<S>(n) * (static_cast<S>(n) * dyc - sum_dy - xh * sum_dyxh);
    }
    return dx;
  }

  std::vector<ParamTensor<S>*> params() { return {&gamma_, &beta_}; }

 private:
  static constexpr S eps_ = static_cast<S>(1e-5);
  int c_ = 0;
  ParamTensor<S> gamma_, beta_;
  Tensor<S> xhat_;
  std::vector<S> inv_std_;
};

/// ELU nonlinearity (C1-smooth, which keeps finite-difference checks clean).
template <typename S>
class Elu {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    out_ = Tensor<S>(x.c, x.h, x.w);
    mask_ = (x.data > S(0));
    out_.data = mask_.select(x.data, x.data.exp() - S(1));
    return out_;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.c, dy.h, dy.w);
    dx.data = dy.data * mask_.select(Eigen::Array<S, Eigen::Dynamic, 1>::Ones(out_.data.size()),
                                     out_.data + S(1));
    return dx;
  }

 private:
  Tensor<S> out_;
  Eigen::Array<bool, Eigen::Dynamic, 1> mask_;
};

/// 2x2 average pooling, stride 2. Requires even spatial dims.
template <typename S>
class AvgPool2 {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    if (x.h % 2 || x.w % 2) throw std::invalid_argument("AvgPool2: odd spatial size");
    in_h_ = x.h; in_w_ = x.w;
    Tensor<S> y(x.c, x.h / 2, x.w / 2);
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx)
          y.at(c, yy, xx) = S(0.25) * (x.at(c, 2 * yy, 2 * xx) + x.at(c, 2 * yy, 2 * xx + 1) +
                                       x.at(c, 2 * yy + 1, 2 * xx) + x.at(c, 2 * yy + 1, 2 * xx + 1));
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.c, in_h_, in_w_);
    for (int c = 0; c < dy.c; ++c)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) {
          const S g = S(0.25) * dy.at(c, yy, xx);
          dx.at(c, 2 * yy, 2 * xx) = g;
          dx.at(c, 2 * yy, 2 * xx + 1) = g;
          dx.at(c, 2 * yy + 1, 2 * xx) = g;
          dx.at(c, 2 * yy + 1, 2 * xx + 1) = g;
        }
    return dx;
  }

 private:
  int in_h_ = 0, in_w_ = 0;
};

/// Nearest-neighbor 2x upsampling.
template <typename S>
class Upsample2 {
 public:
  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> y(x.c, x.h * 2, x.w * 2);
    for (int c = 0; c < x.c; ++c)
      for (int yy = 0; yy < y.h; ++yy)
        for (int xx = 0; xx < y.w; ++xx) y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
    return y;
  }
  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> dx(dy.c, dy.h / 2, dy.w / 2);
    for (int c = 0; c < dy.c; ++c)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) dx.at(c, yy / 2, xx / 2) += dy.at(c, yy, xx);
    return dx;
  }
};

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("concat_channels: spatial mismatch");
  Tensor<S> y(a.c + b.c, a.h, a.w);
  y.data.head(a.data.size()) = a.data;
  y.data.tail(b.data.size()) = b.data;
  return y;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& y, int c_a) {
  Tensor<S> a(c_a, y.h, y.w), b(y.c - c_a, y.h, y.w);
  a.data = y.data.head(a.data.size());
  b.data = y.data.tail(b.data.size());
  return {std::move(a), std::move(b)};
}

/// conv-norm-elu-conv-norm + projected skip, then elu.
template <typename S>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int in_c, int out_c, Rng& rng)
      : project_(in_c != out_c),
        conv1_(name + ".conv1", in_c, out_c, 3, rng),
        conv2_(name + ".conv2", out_c, out_c, 3, rng),
        norm1_(name + ".norm1", out_c),
        norm2_(name + ".norm2", out_c) {
    if (project_) proj_ = Conv<S>(name + ".proj", in_c, out_c, 1, rng);
  }

  Tensor<S> forward(const Tensor<S>& x) {
    Tensor<S> t = act1_.forward(norm1_.forward(conv1_.forward(x)));
    Tensor<S> u = norm2_.forward(conv2_.forward(t));
    Tensor<S> s = project_ ? proj_.forward(x) : x;
    u.data += s.data;
    return act2_.forward(u);
  }

  Tensor<S> backward(const Tensor<S>& dy) {
    Tensor<S> du = act2_.backward(dy);
    Tensor<S> dx_skip = project_ ? proj_.backward(du) : du;
    Tensor<S> dx = conv1_.backward(norm1_.backward(act1_.backward(conv2_.backward(norm2_.backward(du)))));
    dx.data += dx_skip.data;
    return dx;
  }

  std::vector<ParamTensor<S>*> params() {
    std::vector<ParamTensor<S>*> out;
    for (auto* p : conv1_.params()) out.push_back(p);
    for (auto* p : norm1_.params()) out.push_back(p);
    for (auto* p : conv2_.params()) out.push_back(p);
    for (auto* p : norm2_.params()) out.push_back(p);
    if (project_) for (auto* p : proj_.params()) out.push_back(p);
    return out;
  }

 private:
  bool project_ = false;
  Conv<S> conv1_, conv2_, proj_;
  InstanceNorm<S> norm1_, norm2_;
  Elu<S> act1_, act2_;
};

}  // namespace vdg::nn
