#pragma once

#include <Eigen/Core>

#include <cassert>
#include <utility>

namespace vdg {

/// Dense C x H x W tensor, channel-major contiguous storage.
/// Channels are cheap to view as Eigen arrays or as (H*W)-vectors,
/// which is all the conv/norm kernels need.
template <typename Scalar>
struct Tensor {
  using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  int c = 0, h = 0, w = 0;
  ArrayX data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), data(ArrayX::Zero(static_cast<Eigen::Index>(c_) * h_ * w_)) {}

  int pixels() const { return h * w; }
  Eigen::Index size() const { return data.size(); }

  Scalar& at(int ci, int y, int x) { return data[(static_cast<Eigen::Index>(ci) * h + y) * w + x]; }
  Scalar at(int ci, int y, int x) const { return data[(static_cast<Eigen::Index>(ci) * h + y) * w + x]; }

  Eigen::Map<ArrayX> channel(int ci) {
    return Eigen::Map<ArrayX>(data.data() + static_cast<Eigen::Index>(ci) * pixels(), pixels());
  }
  Eigen::Map<const ArrayX> channel(int ci) const {
    return Eigen::Map<const ArrayX>(data.data() + static_cast<Eigen::Index>(ci) * pixels(), pixels());
  }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  void setZero() { data.setZero(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(c, h, w);
    out.data = data.template cast<Other>();
    return out;
  }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace vdg
