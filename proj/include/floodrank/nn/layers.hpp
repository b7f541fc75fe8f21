#pragma once

// Layers with explicit forward/backward passes. Each layer caches what its
// backward pass needs from the most recent forward call, so a forward must be
// followed by its backward before the next forward on the same layer.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "floodrank/nn/tensor.hpp"

namespace floodrank::nn {

template <typename Scalar>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) = 0;
  // Accumulates parameter gradients; writes d loss / d input into grad_in.
  virtual void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) = 0;
  virtual std::vector<Parameter<Scalar>*> parameters() { return {}; }
  virtual std::string kind() const = 0;
};

// 'same'-padded square convolution, stride 1, computed as im2col + GEMM.
template <typename Scalar>
class Conv2d final : public Layer<Scalar> {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapC = Eigen::Map<const Mat>;
  using Map = Eigen::Map<Mat>;

 public:
  Conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, const std::string& name)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel),
        weight_(name + ".weight", {out_ch, in_ch, kernel, kernel}),
        bias_(name + ".bias", {out_ch}) {}

  void init_he(std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, std::sqrt(2.0 / double(in_ch_ * k_ * k_)));
    for (auto& w : weight_.value) w = static_cast<Scalar>(d(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), Scalar(0));
  }

  // The first layer of a network has no use for d loss / d image.
  void set_propagate_input_grad(bool on) { propagate_ = on; }

  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) override {
    if (in.c() != in_ch_) throw DomainError("conv input channel mismatch");
    const std::size_t N = in.n(), H = in.h(), W = in.w(), HW = H * W, K = in_ch_ * k_ * k_;
    in_shape_ = in.shape();
    cols_.resize(N * K * HW);
    out.resize(N, out_ch_, H, W);
    const MapC wmat(weight_.value.data(), out_ch_, K);
    for (std::size_t n = 0; n < N; ++n) {
      Scalar* cols = cols_.data() + n * K * HW;
      im2col(in.plane(n, 0), H, W, cols);
      Map o(out.plane(n, 0), out_ch_, HW);
      o.noalias() = wmat * MapC(cols, K, HW);
      for (std::size_t c = 0; c < out_ch_; ++c) o.row(c).array() += bias_.value[c];
    }
  }

  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) override {
    const std::size_t N = in_shape_[0], H = in_shape_[2], W = in_shape_[3], HW = H * W,
                      K = in_ch_ * k_ * k_;
    grad_in.resize(N, in_ch_, H, W);
    const MapC wmat(weight_.value.data(), out_ch_, K);
    Map gw(weight_.grad.data(), out_ch_, K);
    dcols_.resize(K * HW);
    for (std::size_t n = 0; n < N; ++n) {
      const MapC g(grad_out.plane(n, 0), out_ch_, HW);
      const MapC cols(cols_.data() + n * K * HW, K, HW);
      gw.noalias() += g * cols.transpose();
      for (std::size_t c = 0; c < out_ch_; ++c) bias_.grad[c] += g.row(c).sum();
      if (!propagate_) continue;
      Map dc(dcols_.data(), K, HW);
      dc.noalias() = wmat.transpose() * g;
      col2im(dcols_.data(), H, W, grad_in.plane(n, 0));
    }
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "conv2d"; }

 private:
  void im2col(const Scalar* src, std::size_t H, std::size_t W, Scalar* cols) const {
    const long pad = static_cast<long>(k_ / 2);
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx, ++row) {
          Scalar* dst = cols + row * H * W;
          const long dy = long(ky) - pad, dx = long(kx) - pad;
          const Scalar* plane = src + c * H * W;
          for (long y = 0; y < long(H); ++y) {
            Scalar* drow = dst + y * W;
            const long sy = y + dy;
            if (sy < 0 || sy >= long(H)) {
              std::fill(drow, drow + W, Scalar(0));
              continue;
            }
            const Scalar* srow = plane + sy * long(W);
            for (long x = 0; x < long(W); ++x) {
              const long sx = x + dx;
              drow[x] = (sx >= 0 && sx < long(W)) ? srow[sx] : Scalar(0);
            }
          }
        }
  }

  void col2im(const Scalar* cols, std::size_t H, std::size_t W, Scalar* dst) const {
    const long pad = static_cast<long>(k_ / 2);
    std::size_t row = 0;
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx, ++row) {
          const Scalar* src = cols + row * H * W;
          const long dy = long(ky) - pad, dx = long(kx) - pad;
          Scalar* plane = dst + c * H * W;
          const long y0 = std::max(0L, -dy), y1 = std::min(long(H), long(H) - dy);
          const long x0 = std::max(0L, -dx), x1 = std::min(long(W), long(W) - dx);
          for (long y = y0; y < y1; ++y) {
            Scalar* drow = plane + (y + dy) * long(W) + dx;
            const Scalar* srow = src + y * long(W);
            for (long x = x0; x < x1; ++x) drow[x] += srow[x];
          }
        }
  }

  std::size_t in_ch_, out_ch_, k_;
  Parameter<Scalar> weight_, bias_;
  std::array<std::size_t, 4> in_shape_{};
  AlignedVector<Scalar> cols_, dcols_;
  bool propagate_ = true;
};

template <typename Scalar>
class Relu final : public Layer<Scalar> {
 public:
  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) override {
    out = in;
    mask_.resize(out.size());
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      mask_[i] = v[i] > Scalar(0);
      if (!mask_[i]) v[i] = Scalar(0);
    }
  }
  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) override {
    grad_in = grad_out;
    auto g = grad_in.values();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask_[i]) g[i] = Scalar(0);
  }
  std::string kind() const override { return "relu"; }

 private:
  std::vector<unsigned char> mask_;
};

// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
class MaxPool2 final : public Layer<Scalar> {
 public:
  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) override {
    const std::size_t N = in.n(), C = in.c(), H = in.h() / 2, W = in.w() / 2;
    if (H == 0 || W == 0) throw DomainError("max pooling on a plane smaller than 2x2");
    in_shape_ = in.shape();
    out.resize(N, C, H, W);
    argmax_.assign(out.size(), 0);
    std::size_t k = 0;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const Scalar* src = in.plane(n, c);
        const std::size_t iw = in.w();
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x, ++k) {
            std::size_t best = (2 * y) * iw + 2 * x;
            for (std::size_t cand : {best + 1, best + iw, best + iw + 1})
              if (src[cand] > src[best]) best = cand;
            out.data()[k] = src[best];
            argmax_[k] = (n * C + c) * in.h() * iw + best;
          }
      }
  }
  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) override {
    grad_in.resize(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (std::size_t k = 0; k < grad_out.size(); ++k) grad_in.data()[argmax_[k]] += grad_out.data()[k];
  }
  std::string kind() const override { return "maxpool2"; }

 private:
  std::array<std::size_t, 4> in_shape_{};
  std::vector<std::size_t> argmax_;
};

// Mean over each channel plane -> (N, C, 1, 1).
template <typename Scalar>
class GlobalAvgPool final : public Layer<Scalar> {
 public:
  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) override {
    in_shape_ = in.shape();
    const std::size_t hw = in.h() * in.w();
    out.resize(in.n(), in.c(), 1, 1);
    for (std::size_t n = 0; n < in.n(); ++n)
      for (std::size_t c = 0; c < in.c(); ++c) {
        const Scalar* p = in.plane(n, c);
        Scalar s = 0;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
        out(n, c, 0, 0) = s / Scalar(hw);
      }
  }
  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) override {
    grad_in.resize(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const std::size_t hw = in_shape_[2] * in_shape_[3];
    for (std::size_t n = 0; n < in_shape_[0]; ++n)
      for (std::size_t c = 0; c < in_shape_[1]; ++c) {
        const Scalar g = grad_out(n, c, 0, 0) / Scalar(hw);
        Scalar* p = grad_in.plane(n, c);
        std::fill(p, p + hw, g);
      }
  }
  std::string kind() const override { return "global_avg_pool"; }

 private:
  std::array<std::size_t, 4> in_shape_{};
};

// Per-row channel means of the input image -> (N, C*H, 1, 1). No parameters; the
// fixed feature extractor of the mlp_on_features backbone.
template <typename Scalar>
class RowProfile final : public Layer<Scalar> {
 public:
  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) override {
    in_shape_ = in.shape();
    out.resize(in.n(), in.c() * in.h(), 1, 1);
    for (std::size_t n = 0; n < in.n(); ++n)
      for (std::size_t c = 0; c < in.c(); ++c)
        for (std::size_t y = 0; y < in.h(); ++y) {
          Scalar s = 0;
          for (std::size_t x = 0; x < in.w(); ++x) s += in(n, c, y, x);
          out(n, c * in.h() + y, 0, 0) = s / Scalar(in.w());
        }
  }
  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) override {
    grad_in.resize(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    for (std::size_t n = 0; n < in_shape_[0]; ++n)
      for (std::size_t c = 0; c < in_shape_[1]; ++c)
        for (std::size_t y = 0; y < in_shape_[2]; ++y) {
          const Scalar g = grad_out(n, c * in_shape_[2] + y, 0, 0) / Scalar(in_shape_[3]);
          for (std::size_t x = 0; x < in_shape_[3]; ++x) grad_in(n, c, y, x) = g;
        }
  }
  std::string kind() const override { return "row_profile"; }

 private:
  std::array<std::size_t, 4> in_shape_{};
};

// Fully connected layer on flattened per-sample features.
template <typename Scalar>
class Linear final : public Layer<Scalar> {
 public:
  Linear(std::size_t in, std::size_t out, const std::string& name)
      : in_(in), out_(out), weight_(name + ".weight", {out, in}), bias_(name + ".bias", {out}) {}

  void init_he(std::mt19937_64& rng) { init_normal(rng, std::sqrt(2.0 / double(in_))); }
  void init_normal(std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> d(0.0, stddev);
    for (auto& w : weight_.value) w = static_cast<Scalar>(d(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), Scalar(0));
  }

  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) override {
    if (in.per_sample() != in_) throw DomainError("linear input size mismatch");
    input_ = in;
    out.resize(in.n(), out_, 1, 1);
    for (std::size_t n = 0; n < in.n(); ++n) {
      const Scalar* x = in.data() + n * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const Scalar* w = &weight_.value[o * in_];
        Scalar s = bias_.value[o];
        for (std::size_t i = 0; i < in_; ++i) s += w[i] * x[i];
        out.data()[n * out_ + o] = s;
      }
    }
  }

  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) override {
    const auto& in = input_;
    grad_in.resize(in.n(), in.c(), in.h(), in.w());
    for (std::size_t n = 0; n < in.n(); ++n) {
      const Scalar* x = in.data() + n * in_;
      Scalar* gx = grad_in.data() + n * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const Scalar g = grad_out.data()[n * out_ + o];
        bias_.grad[o] += g;
        const Scalar* w = &weight_.value[o * in_];
        Scalar* gw = &weight_.grad[o * in_];
        for (std::size_t i = 0; i < in_; ++i) {
          gw[i] += g * x[i];
          gx[i] += g * w[i];
        }
      }
    }
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "linear"; }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  Parameter<Scalar> weight_, bias_;
  Tensor<Scalar> input_;
};

template <typename Scalar>
class Sequential {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    auto& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  void forward(const Tensor<Scalar>& in, Tensor<Scalar>& out) {
    if (layers_.empty()) {
      out = in;
      return;
    }
    acts_.resize(layers_.size());
    const Tensor<Scalar>* cur = &in;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Tensor<Scalar>& dst = i + 1 == layers_.size() ? out : acts_[i];
      layers_[i]->forward(*cur, dst);
      cur = &dst;
    }
  }

  void backward(const Tensor<Scalar>& grad_out, Tensor<Scalar>& grad_in) {
    Tensor<Scalar> g = grad_out, tmp;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      layers_[i]->backward(g, tmp);
      std::swap(g, tmp);
    }
    grad_in = std::move(g);
  }

  std::vector<Parameter<Scalar>*> parameters() {
    std::vector<Parameter<Scalar>*> ps;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) ps.push_back(p);
    return ps;
  }

  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<Scalar>>> layers_;
  std::vector<Tensor<Scalar>> acts_;
};

}  // namespace floodrank::nn
