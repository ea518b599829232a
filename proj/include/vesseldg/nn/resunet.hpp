#pragma once

#include "vesseldg/nn/layers.hpp"

#include <array>
#include <stdexcept>
#include <string>

namespace vdg::nn {

struct UNetSpec {
  int in_channels = 1;
  int out_channels = 2;
  std::array<int, 6> widths{{8, 32, 32, 64, 64, 16}};  // E0,E1,E2,bottleneck,D0,D1
};

namespace detail {

// Right/bottom reflect padding to a multiple of `factor`, and its adjoint.
template <typename S>
Tensor<S> reflect_pad(const Tensor<S>& x, int ph, int pw) {
  Tensor<S> y(x.c, x.h + ph, x.w + pw);
  auto ry = [&](int i) { return i < x.h ? i : 2 * x.h - 2 - i; };
  auto rx = [&](int i) { return i < x.w ? i : 2 * x.w - 2 - i; };
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) y.at(c, yy, xx) = x.at(c, ry(yy), rx(xx));
  return y;
}

template <typename S>
Tensor<S> reflect_pad_adjoint(const Tensor<S>& dy, int h, int w) {
  Tensor<S> dx(dy.c, h, w);
  auto ry = [&](int i) { return i < h ? i : 2 * h - 2 - i; };
  auto rx = [&](int i) { return i < w ? i : 2 * w - 2 - i; };
  for (int c = 0; c < dy.c; ++c)
    for (int yy = 0; yy < dy.h; ++yy)
      for (int xx = 0; xx < dy.w; ++xx) dx.at(c, ry(yy), rx(xx)) += dy.at(c, yy, xx);
  return dx;
}

}  // namespace detail

/// 6-block residual U-Net with three 2x down/up levels and a feature tap:
/// z is the mean-centered channel-wise global average of the bottleneck
/// block output.
/// Inputs whose sides are not multiples of 8 are reflect-padded and the
/// logits cropped back.
template <typename S>
class ResUNet {
 public:
  struct Output {
    Tensor<S> logits;     // out_channels x H x W
    VectorX<S> z;         // bottleneck width (widths[3])
  };

  ResUNet() = default;
  ResUNet(const UNetSpec& spec, Rng& rng, const std::string& name = "unet") : spec_(spec) {
    const auto& cw = spec.widths;
    stem_ = Conv<S>(name + ".stem", spec.in_channels, cw[0], 3, rng);
    e0_ = ResidualBlock<S>(name + ".e0", cw[0], cw[0], rng);
    e1_ = ResidualBlock<S>(name + ".e1", cw[0], cw[1], rng);
    e2_ = ResidualBlock<S>(name + ".e2", cw[1], cw[2], rng);
    bott_ = ResidualBlock<S>(name + ".bott", cw[2], cw[3], rng);
    d0_ = ResidualBlock<S>(name + ".d0", cw[3] + cw[2], cw[4], rng);
    d1_ = ResidualBlock<S>(name + ".d1", cw[4] + cw[1], cw[5], rng);
    head_ = Conv<S>(name + ".head", cw[5] + cw[0], spec.out_channels, 3, rng);
  }

  Output forward(const Tensor<S>& image) {
    if (!image.data.allFinite()) throw std::invalid_argument("ResUNet: non-finite input");
    orig_h_ = image.h;
    orig_w_ = image.w;
    pad_h_ = (8 - image.h % 8) % 8;
    pad_w_ = (8 - image.w % 8) % 8;
    Tensor<S> x = (pad_h_ || pad_w_) ? detail::reflect_pad(image, pad_h_, pad_w_) : image;

    a_e0_ = e0_.forward(stem_.forward(x));
    a_e1_ = e1_.forward(pool0_.forward(a_e0_));
    a_e2_ = e2_.forward(pool1_.forward(a_e1_));
    a_bott_ = bott_.forward(pool2_.forward(a_e2_));

    Output out;
    out.z = VectorX<S>(a_bott_.c);
    for (int c = 0; c < a_bott_.c; ++c) out.z[c] = a_bott_.channel(c).mean();
    // center the tap vector: removing the DC component shared by every image
    // keeps pairwise cosines of different anatomies away from the degenerate
    // all-ones regime that the correlation losses cannot untangle
    out.z.array() -= out.z.mean();

    Tensor<S> d0 = d0_.forward(concat_channels(up0_.forward(a_bott_), a_e2_));
    Tensor<S> d1 = d1_.forward(concat_channels(up1_.forward(d0), a_e1_));
    Tensor<S> logits = head_.forward(concat_channels(up2_.forward(d1), a_e0_));

    if (pad_h_ || pad_w_) {
      Tensor<S> cropped(logits.c, orig_h_, orig_w_);
      for (int c = 0; c < logits.c; ++c)
        for (int y = 0; y < orig_h_; ++y)
          for (int xx = 0; xx < orig_w_; ++xx) cropped.at(c, y, xx) = logits.at(c, y, xx);
      out.logits = std::move(cropped);
    } else {
      out.logits = std::move(logits);
    }
    return out;
  }

  /// Accumulates parameter gradients; dz (optional) injects the gradient of
  /// the loss w.r.t. the pooled feature vector at the bottleneck tap.
  void backward(const Tensor<S>& dlogits, const VectorX<S>* dz = nullptr) {
    Tensor<S> dl = dlogits;
    if (pad_h_ || pad_w_) {
      Tensor<S> padded(dlogits.c, orig_h_ + pad_h_, orig_w_ + pad_w_);
      for (int c = 0; c < dlogits.c; ++c)
        for (int y = 0; y < orig_h_; ++y)
          for (int xx = 0; xx < orig_w_; ++xx) padded.at(c, y, xx) = dlogits.at(c, y, xx);
      dl = std::move(padded);
    }

    Tensor<S> dcat2 = head_.backward(dl);
    auto [dd1_up, de0_a] = split_channels(dcat2, spec_.widths[5]);
    Tensor<S> dcat1 = d1_.backward(up2_.backward(dd1_up));
    auto [dd0_up, de1_a] = split_channels(dcat1, spec_.widths[4]);
    Tensor<S> dcat0 = d0_.backward(up1_.backward(dd0_up));
    auto [dbott, de2_a] = split_channels(dcat0, spec_.widths[3]);

    Tensor<S> dbott_full = up0_.backward(dbott);
    if (dz) {
      // adjoint of the centering: project out the mean before spreading the
      // per-channel gradient over the pooled pixels
      VectorX<S> dzc = *dz;
      dzc.array() -= dzc.mean();
      const S inv_n = S(1) / static_cast<S>(a_bott_.pixels());
      for (int c = 0; c < dbott_full.c; ++c) dbott_full.channel(c) += dzc[c] * inv_n;
    }

    Tensor<S> de2 = pool2_.backward(bott_.backward(dbott_full));
    de2.data += de2_a.data;
    Tensor<S> de1 = pool1_.backward(e2_.backward(de2));
    de1.data += de1_a.data;
    Tensor<S> de0 = pool0_.backward(e1_.backward(de1));
    de0.data += de0_a.data;
    last_input_grad_ = stem_.backward(e0_.backward(de0));
    if (pad_h_ || pad_w_) last_input_grad_ = detail::reflect_pad_adjoint(last_input_grad_, orig_h_, orig_w_);
  }

  /// Gradient w.r.t. the input image from the most recent backward().
  const Tensor<S>& input_grad() const { return last_input_grad_; }

  std::vector<ParamTensor<S>*> params() {
    std::vector<ParamTensor<S>*> out;
    auto append = [&](std::vector<ParamTensor<S>*> v) { out.insert(out.end(), v.begin(), v.end()); };
    append(stem_.params());
    append(e0_.params());
    append(e1_.params());
    append(e2_.params());
    append(bott_.params());
    append(d0_.params());
    append(d1_.params());
    append(head_.params());
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  const UNetSpec& spec() const { return spec_; }
  int feature_dim() const { return spec_.widths[3]; }

 private:
  UNetSpec spec_;
  Conv<S> stem_, head_;
  ResidualBlock<S> e0_, e1_, e2_, bott_, d0_, d1_;
  AvgPool2<S> pool0_, pool1_, pool2_;
  Upsample2<S> up0_, up1_, up2_;
  Tensor<S> a_e0_, a_e1_, a_e2_, a_bott_;
  Tensor<S> last_input_grad_;
  int orig_h_ = 0, orig_w_ = 0, pad_h_ = 0, pad_w_ = 0;
};

/// Adam with bias correction; holds two moment buffers per parameter.
template <typename S>
class Adam {
 public:
  explicit Adam(std::vector<ParamTensor<S>*> params, S beta1 = S(0.9), S beta2 = S(0.999),
                S eps = S(1e-8))
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(MatrixX<S>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(MatrixX<S>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step(S lr) {
    ++t_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      m_[i] = beta1_ * m_[i] + (S(1) - beta1_) * g;
      v_[i] = (beta2_ * v_[i].array() + (S(1) - beta2_) * g.array().square()).matrix();
      params_[i]->value.array() -=
          lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
    }
  }

  // optimizer state, exposed for checkpoint/resume
  std::vector<MatrixX<S>>& moment1() { return m_; }
  std::vector<MatrixX<S>>& moment2() { return v_; }
  long& timestep() { return t_; }
  const std::vector<ParamTensor<S>*>& tracked_params() const { return params_; }

 private:
  std::vector<ParamTensor<S>*> params_;
  std::vector<MatrixX<S>> m_, v_;
  S beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace vdg::nn
