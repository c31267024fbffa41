#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bernnet/interval_bounds.hpp"
#include "bernnet/layers.hpp"

namespace bernnet {

/// Highest supported activation order (bounded by the fixed scratch buffers
/// in the de Casteljau kernels and by binomial accuracy).
inline constexpr int kMaxOrder = 64;

enum class LayerKind { affine, conv2d, bern };

struct LayerSpec {
  LayerKind kind = LayerKind::affine;
  int width = 0;         // affine: output features
  int out_channels = 0;  // conv2d
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int order = 0;  // bern

  static LayerSpec affine(int width) { return {LayerKind::affine, width}; }
  static LayerSpec conv2d(int out_channels, int kernel, int stride = 1, int padding = 0) {
    return {LayerKind::conv2d, 0, out_channels, kernel, stride, padding};
  }
  static LayerSpec bern(int order) {
    LayerSpec s{LayerKind::bern};
    s.order = order;
    return s;
  }
};

/// Feed-forward network over a bounded input domain D.
struct Network {
  Shape3 input_shape;
  BoxBounds input_domain;
  std::vector<Layer> layers;

  [[nodiscard]] int input_size() const { return input_shape.size(); }
  [[nodiscard]] int output_size() const {
    return layers.empty() ? input_size() : layer_out_size(layers.back());
  }
  [[nodiscard]] std::size_t depth() const { return layers.size(); }

  /// Throws std::invalid_argument when shapes do not chain or an invariant
  /// of the layer stack is broken.
  void validate() const {
    if (input_domain.size() != input_size())
      throw std::invalid_argument("network: input domain size does not match input shape");
    if (!input_domain.finite())
      throw std::invalid_argument("network: input domain must be finite");
    for (int i = 0; i < input_domain.size(); ++i)
      if (input_domain.lo[i] > input_domain.hi[i])
        throw std::invalid_argument("network: input domain has lo > hi");
    int width = input_size();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string where = "network: layer " + std::to_string(i);
      if (layer_in_size(layers[i]) != width) throw std::invalid_argument(where + " input size mismatch");
      if (const auto* bern = std::get_if<BernLayer>(&layers[i])) {
        if (i == 0 || std::holds_alternative<BernLayer>(layers[i - 1]))
          throw std::invalid_argument(where + ": Bernstein layer must follow an affine or conv layer");
        if (bern->order < 1 || bern->order > kMaxOrder)
          throw std::invalid_argument(where + ": order must be in [1, " + std::to_string(kMaxOrder) + "]");
        if (bern->coeffs.cols() != bern->order + 1 || bern->stored_lo.size() != bern->size() ||
            bern->stored_hi.size() != bern->size())
          throw std::invalid_argument(where + ": coefficient/bound shape mismatch");
        if (!bern->coeffs.allFinite()) throw std::invalid_argument(where + ": non-finite coefficients");
      } else if (const auto* aff = std::get_if<AffineLayer>(&layers[i])) {
        if (aff->bias.size() != aff->out_size()) throw std::invalid_argument(where + ": bias size mismatch");
      } else if (const auto* conv = std::get_if<Conv2dLayer>(&layers[i])) {
        const Shape3 os = conv->output();
        if (conv->kernel < 1 || conv->stride < 1 || conv->stride > 2 || conv->padding < 0 ||
            os.height < 1 || os.width < 1)
          throw std::invalid_argument(where + ": unsupported conv geometry");
        if (conv->weight.rows() != conv->out_channels ||
            conv->weight.cols() != conv->input.channels * conv->kernel * conv->kernel ||
            conv->bias.size() != conv->out_channels)
          throw std::invalid_argument(where + ": conv parameter shape mismatch");
      }
      width = layer_out_size(layers[i]);
    }
  }
};

/// Number of single-layer box propagations performed by this process.
inline std::atomic<std::uint64_t>& layer_propagation_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

enum class BoundMethod { bern_ibp, naive_ibp };

inline const char* to_string(BoundMethod m) {
  return m == BoundMethod::bern_ibp ? "bern_ibp" : "naive_ibp";
}

/// Pushes one box through one layer.
inline BoxBounds propagate_layer(const Layer& layer, const BoxBounds& box, BoundMethod method,
                                 PropagationReport* report = nullptr) {
  layer_propagation_counter().fetch_add(1, std::memory_order_relaxed);
  if (const auto* aff = std::get_if<AffineLayer>(&layer)) return affine_ibp(*aff, box);
  if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) return conv_ibp(*conv, box);
  const auto& bern = std::get<BernLayer>(layer);
  return method == BoundMethod::bern_ibp ? bern_refined_enclosure(bern, box, report)
                                         : bern_naive_interval(bern, box, report);
}

/// Boxes at every layer boundary: result[0] is the input box intersected
/// with D, result[k] the box after layer k. Stops after `n_layers` layers.
inline std::vector<BoxBounds> propagate(const Network& net, const BoxBounds& input,
                                        BoundMethod method,
                                        std::optional<std::size_t> n_layers = std::nullopt,
                                        PropagationReport* report = nullptr) {
  const std::size_t stop = std::min(n_layers.value_or(net.layers.size()), net.layers.size());
  std::vector<BoxBounds> boxes;
  boxes.reserve(stop + 1);
  boxes.push_back(intersect(input, net.input_domain));
  for (std::size_t i = 0; i < stop; ++i)
    boxes.push_back(propagate_layer(net.layers[i], boxes.back(), method, report));
  return boxes;
}

/// Re-derives every Bernstein layer's stored domain by propagating D with
/// interval arithmetic for affine/conv layers and coefficient enclosures for
/// Bernstein layers.
inline void refresh_domain_bounds(Network& net) {
  BoxBounds box = net.input_domain;
  for (auto& layer : net.layers) {
    if (auto* bern = std::get_if<BernLayer>(&layer)) {
      bern->stored_lo.resize(bern->size());
      bern->stored_hi.resize(bern->size());
      for (int i = 0; i < bern->size(); ++i) {
        const Interval d = floor_width(box[i]);
        bern->stored_lo[i] = d.lo;
        bern->stored_hi[i] = d.hi;
      }
      box = bern_global_enclosure(*bern);
    } else {
      box = propagate_layer(layer, box, BoundMethod::bern_ibp);
    }
  }
}

inline Matrix clamp_to_domain(const Network& net, const Matrix& x) {
  return x.cwiseMax(net.input_domain.lo.replicate(1, x.cols()))
      .cwiseMin(net.input_domain.hi.replicate(1, x.cols()));
}

/// Logits for a batch (one sample per column). Inputs are clamped to D.
inline Matrix forward_batch(const Network& net, const Matrix& x) {
  if (x.rows() != net.input_size()) throw std::invalid_argument("forward: input size mismatch");
  Matrix a = clamp_to_domain(net, x);
  for (const auto& layer : net.layers) a = apply_layer(layer, a);
  return a;
}

inline Vector forward(const Network& net, const Vector& x) {
  return forward_batch(net, Matrix(x)).col(0);
}

/// Random network: N(0, 1/fan_in) weights, zero biases, N(0, 1/m)
/// Bernstein coefficients for a layer of m neurons, then one bound refresh.
inline Network init(std::span<const LayerSpec> arch, const BoxBounds& input_domain,
                    std::uint64_t seed, std::optional<Shape3> input_shape = std::nullopt) {
  Network net;
  net.input_shape = input_shape.value_or(Shape3{input_domain.size(), 1, 1});
  net.input_domain = input_domain;
  if (net.input_shape.size() != input_domain.size())
    throw std::invalid_argument("init: input shape does not match the input domain");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Shape3 shape = net.input_shape;
  for (const auto& spec : arch) {
    switch (spec.kind) {
      case LayerKind::affine: {
        if (spec.width < 1) throw std::invalid_argument("init: affine width must be positive");
        AffineLayer l;
        const int fan_in = shape.size();
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        l.weight = Matrix::NullaryExpr(spec.width, fan_in, [&] { return std_dev * normal(rng); });
        l.bias = Vector::Zero(spec.width);
        net.layers.emplace_back(std::move(l));
        shape = {spec.width, 1, 1};
        break;
      }
      case LayerKind::conv2d: {
        if (spec.out_channels < 1 || spec.kernel < 1)
          throw std::invalid_argument("init: conv needs positive channels and kernel");
        Conv2dLayer l;
        l.input = shape;
        l.out_channels = spec.out_channels;
        l.kernel = spec.kernel;
        l.stride = spec.stride;
        l.padding = spec.padding;
        const int fan_in = shape.channels * spec.kernel * spec.kernel;
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        l.weight = Matrix::NullaryExpr(spec.out_channels, fan_in, [&] { return std_dev * normal(rng); });
        l.bias = Vector::Zero(spec.out_channels);
        shape = l.output();
        if (shape.height < 1 || shape.width < 1)
          throw std::invalid_argument("init: conv output is empty");
        net.layers.emplace_back(std::move(l));
        break;
      }
      case LayerKind::bern: {
        if (spec.order < 1 || spec.order > kMaxOrder)
          throw std::invalid_argument("init: Bernstein order must be in [1, " +
                                      std::to_string(kMaxOrder) + "]");
        BernLayer l;
        l.order = spec.order;
        const int m = shape.size();
        const double std_dev = 1.0 / std::sqrt(static_cast<double>(m));
        l.coeffs = RowMatrix::NullaryExpr(m, spec.order + 1, [&] { return std_dev * normal(rng); });
        l.stored_lo = Vector::Constant(m, -1.0);
        l.stored_hi = Vector::Constant(m, 1.0);
        net.layers.emplace_back(std::move(l));
        break;
      }
    }
  }
  net.validate();
  refresh_domain_bounds(net);
  return net;
}

inline Network init(std::initializer_list<LayerSpec> arch, const BoxBounds& input_domain,
                    std::uint64_t seed, std::optional<Shape3> input_shape = std::nullopt) {
  return init(std::span<const LayerSpec>(arch.begin(), arch.size()), input_domain, seed, input_shape);
}

/// Unit box [0,1]^n, the usual normalized input domain.
inline BoxBounds unit_box(int n) { return {Vector::Zero(n), Vector::Ones(n)}; }

}  // namespace bernnet
