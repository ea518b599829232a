#pragma once

#include "vesseldg/nn/resunet.hpp"

#include <stdexcept>
#include <vector>

namespace vdg {

/// Feature stack for the correlation losses. Row p of `vectors` is one latent
/// vector; rows are ordered by (subject_id, anchor first, then sample index).
template <typename S>
struct FeatureBatch {
  nn::MatrixX<S> vectors;        // n x dim
  std::vector<int> subject_ids;  // one per row
  std::vector<char> anchor_flags;

  int size() const { return static_cast<int>(vectors.rows()); }
  void add(const nn::VectorX<S>& z, int subject_id, bool anchor) {
    if (vectors.rows() > 0 && vectors.cols() != z.size())
      throw std::invalid_argument("FeatureBatch: dimensionality mismatch");
    vectors.conservativeResize(vectors.rows() + 1, z.size());
    vectors.row(vectors.rows() - 1) = z.transpose();
    subject_ids.push_back(subject_id);
    anchor_flags.push_back(anchor ? 1 : 0);
  }
};

/// Segmentation network g: the 6-block residual U-Net with the pooled
/// bottleneck feature tap.
template <typename S>
nn::ResUNet<S> make_seg_net(Rng& rng) {
  nn::UNetSpec spec;
  spec.in_channels = 1;
  spec.out_channels = 2;
  return nn::ResUNet<S>(spec, rng, "segnet");
}

/// Pseudo-modality synthesis network f = f_d(f_e(x)): two residual U-Nets with
/// a 1-channel image-shaped bottleneck (the latent pseudo-modality).
template <typename S>
class SynthesisNet {
 public:
  SynthesisNet() = default;
  explicit SynthesisNet(Rng& rng) {
    nn::UNetSpec enc_spec;
    enc_spec.in_channels = 1;
    enc_spec.out_channels = 1;  // latent image
    nn::UNetSpec dec_spec;
    dec_spec.in_channels = 1;
    dec_spec.out_channels = 2;
    encoder_ = nn::ResUNet<S>(enc_spec, rng, "synth.enc");
    decoder_ = nn::ResUNet<S>(dec_spec, rng, "synth.dec");
  }

  struct Output {
    Tensor<S> latent;  // 1 x H x W
    Tensor<S> logits;  // 2 x H x W
  };

  Output forward(const Tensor<S>& image) {
    Output out;
    out.latent = encoder_.forward(image).logits;
    out.logits = decoder_.forward(out.latent).logits;
    return out;
  }

  void backward(const Tensor<S>& dlogits) {
    decoder_.backward(dlogits);
    encoder_.backward(decoder_.input_grad());
  }

  std::vector<nn::ParamTensor<S>*> params() {
    auto out = encoder_.params();
    auto dec = decoder_.params();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
  }
  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

 private:
  nn::ResUNet<S> encoder_, decoder_;
};

template <typename S>
long parameter_count(std::vector<nn::ParamTensor<S>*> params) {
  long n = 0;
  for (auto* p : params) n += static_cast<long>(p->value.size());
  return n;
}

}  // namespace vdg
