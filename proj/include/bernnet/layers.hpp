#pragma once

// Layer parameter blocks and their point-wise forward kernels.
//
// Activations are column vectors; a batch is a matrix with one sample per
// column. Convolution tensors are flattened channel-major: (c, y, x).

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>

#include "bernnet/bernstein.hpp"

namespace bernnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape3 {
  int channels = 1;
  int height = 1;
  int width = 1;

  [[nodiscard]] int size() const { return channels * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct AffineLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  [[nodiscard]] int in_size() const { return static_cast<int>(weight.cols()); }
  [[nodiscard]] int out_size() const { return static_cast<int>(weight.rows()); }
};

/// 2-D convolution with square kernels, zero padding and a common stride.
struct Conv2dLayer {
  Shape3 input;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  Matrix weight;  // out_channels x (in_channels * kernel * kernel)
  Vector bias;    // out_channels

  [[nodiscard]] Shape3 output() const {
    return {out_channels, (input.height + 2 * padding - kernel) / stride + 1,
            (input.width + 2 * padding - kernel) / stride + 1};
  }
  [[nodiscard]] int in_size() const { return input.size(); }
  [[nodiscard]] int out_size() const { return output().size(); }
};

/// Per-neuron learnable Bernstein activation with the input bounds recorded
/// during training.
struct BernLayer {
  int order = 1;
  RowMatrix coeffs;  // neurons x (order + 1)
  Vector stored_lo;
  Vector stored_hi;

  [[nodiscard]] int size() const { return static_cast<int>(coeffs.rows()); }
  [[nodiscard]] int in_size() const { return size(); }
  [[nodiscard]] int out_size() const { return size(); }

  [[nodiscard]] std::span<const double> row(int neuron) const {
    return {coeffs.row(neuron).data(), static_cast<std::size_t>(order + 1)};
  }
  [[nodiscard]] Interval domain(int neuron) const {
    return {stored_lo[neuron], stored_hi[neuron]};
  }
  [[nodiscard]] BernsteinPoly poly(int neuron) const {
    const auto r = row(neuron);
    return BernsteinPoly({r.begin(), r.end()}, domain(neuron));
  }
};

using Layer = std::variant<AffineLayer, Conv2dLayer, BernLayer>;

inline int layer_in_size(const Layer& layer) {
  return std::visit([](const auto& l) { return l.in_size(); }, layer);
}
inline int layer_out_size(const Layer& layer) {
  return std::visit([](const auto& l) { return l.out_size(); }, layer);
}

namespace detail {

// out (+)= conv(weight, in). When `transpose` is set, computes the adjoint
// instead: `in` is indexed by the output shape and `out` by the input shape.
inline void conv_apply(const Conv2dLayer& conv, const Matrix& weight, const double* in,
                       double* out, bool transpose = false) {
  const Shape3 is = conv.input;
  const Shape3 os = conv.output();
  const int k = conv.kernel;
  for (int oc = 0; oc < os.channels; ++oc) {
    for (int oy = 0; oy < os.height; ++oy) {
      for (int ox = 0; ox < os.width; ++ox) {
        const int o = (oc * os.height + oy) * os.width + ox;
        double acc = 0.0;
        for (int ic = 0; ic < is.channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * conv.stride + ky - conv.padding;
            if (iy < 0 || iy >= is.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * conv.stride + kx - conv.padding;
              if (ix < 0 || ix >= is.width) continue;
              const int i = (ic * is.height + iy) * is.width + ix;
              const double w = weight(oc, (ic * k + ky) * k + kx);
              if (transpose)
                out[i] += w * in[o];
              else
                acc += w * in[i];
            }
          }
        }
        if (!transpose) out[o] += acc;
      }
    }
  }
}

// Accumulates d(loss)/d(weight) for one sample.
inline void conv_weight_grad(const Conv2dLayer& conv, const double* in, const double* grad_out,
                             Matrix& grad_weight) {
  const Shape3 is = conv.input;
  const Shape3 os = conv.output();
  const int k = conv.kernel;
  for (int oc = 0; oc < os.channels; ++oc)
    for (int oy = 0; oy < os.height; ++oy)
      for (int ox = 0; ox < os.width; ++ox) {
        const double g = grad_out[(oc * os.height + oy) * os.width + ox];
        if (g == 0.0) continue;
        for (int ic = 0; ic < is.channels; ++ic)
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * conv.stride + ky - conv.padding;
            if (iy < 0 || iy >= is.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * conv.stride + kx - conv.padding;
              if (ix < 0 || ix >= is.width) continue;
              grad_weight(oc, (ic * k + ky) * k + kx) += g * in[(ic * is.height + iy) * is.width + ix];
            }
          }
      }
}

}  // namespace detail

inline Matrix apply_layer(const AffineLayer& layer, const Matrix& x) {
  Matrix out = layer.weight * x;
  out.colwise() += layer.bias;
  return out;
}

inline Matrix apply_layer(const Conv2dLayer& layer, const Matrix& x) {
  const Shape3 os = layer.output();
  const int per_channel = os.height * os.width;
  Matrix out(os.size(), x.cols());
  for (Eigen::Index s = 0; s < x.cols(); ++s) {
    for (int oc = 0; oc < os.channels; ++oc)
      out.col(s).segment(oc * per_channel, per_channel).setConstant(layer.bias[oc]);
    detail::conv_apply(layer, layer.weight, x.col(s).data(), out.col(s).data());
  }
  return out;
}

/// Evaluates every neuron's polynomial on its pre-activation, clamped to the
/// stored domain.
inline Matrix apply_layer(const BernLayer& layer, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  double scratch[72];
  const std::span<double> buf(scratch, static_cast<std::size_t>(layer.order + 1));
  for (Eigen::Index s = 0; s < x.cols(); ++s) {
    for (int i = 0; i < layer.size(); ++i) {
      const double lo = layer.stored_lo[i], hi = layer.stored_hi[i];
      const double v = std::clamp(x(i, s), lo, hi);
      out(i, s) = detail::de_casteljau(layer.row(i), (v - lo) / (hi - lo), buf);
    }
  }
  return out;
}

inline Matrix apply_layer(const Layer& layer, const Matrix& x) {
  return std::visit([&](const auto& l) { return apply_layer(l, x); }, layer);
}

}  // namespace bernnet
