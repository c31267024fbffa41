#pragma once

// Box propagation through single layers.
//
// Two regimes exist for Bernstein activations:
//  - refined: restrict each neuron's polynomial to its input interval and
//    take the coefficient range (subdivision + enclosure);
//  - naive: interval-evaluate the de Casteljau recurrence on the input
//    interval, the way a generic bound propagator treats the activation.
// Affine and convolution layers are handled identically in both regimes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bernnet/bernstein.hpp"
#include "bernnet/layers.hpp"

namespace bernnet {

struct BoxBounds {
  Vector lo;
  Vector hi;

  BoxBounds() = default;
  BoxBounds(Vector lower, Vector upper) : lo(std::move(lower)), hi(std::move(upper)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("BoxBounds: lo/hi size mismatch");
  }
  static BoxBounds point(const Vector& x) { return {x, x}; }

  [[nodiscard]] int size() const { return static_cast<int>(lo.size()); }
  [[nodiscard]] Interval operator[](int i) const { return {lo[i], hi[i]}; }
  [[nodiscard]] bool contains(const Vector& x, double slack = 0.0) const {
    for (int i = 0; i < size(); ++i)
      if (!(x[i] >= lo[i] - slack && x[i] <= hi[i] + slack)) return false;
    return true;
  }
  [[nodiscard]] bool contains(const BoxBounds& other, double slack = 0.0) const {
    for (int i = 0; i < size(); ++i)
      if (!(other.lo[i] >= lo[i] - slack && other.hi[i] <= hi[i] + slack)) return false;
    return true;
  }
  [[nodiscard]] bool finite() const { return lo.allFinite() && hi.allFinite(); }
};

/// Component-wise intersection; empty components collapse onto the nearest
/// face of `outer`.
inline BoxBounds intersect(const BoxBounds& box, const BoxBounds& outer) {
  BoxBounds out = box;
  for (int i = 0; i < box.size(); ++i) {
    out.lo[i] = std::clamp(box.lo[i], outer.lo[i], outer.hi[i]);
    out.hi[i] = std::clamp(box.hi[i], out.lo[i], outer.hi[i]);
  }
  return out;
}

/// Tally of query intervals that left a neuron's stored domain and had to be
/// clipped. Tiny excursions from rounding are not counted.
struct PropagationReport {
  std::size_t clipped_neurons = 0;
};

/// Exact interval image of x -> W x + b.
inline BoxBounds affine_ibp(const Matrix& weight, const Vector& bias, const BoxBounds& box) {
  if (weight.cols() != box.size() || weight.rows() != bias.size())
    throw std::invalid_argument("affine_ibp: dimension mismatch (" + std::to_string(weight.rows()) +
                                "x" + std::to_string(weight.cols()) + " weight, " +
                                std::to_string(bias.size()) + " bias, " +
                                std::to_string(box.size()) + "-dim box)");
  const Vector center = 0.5 * (box.lo + box.hi);
  const Vector radius = 0.5 * (box.hi - box.lo);
  const Vector out_center = weight * center + bias;
  const Vector out_radius = weight.cwiseAbs() * radius;
  return {out_center - out_radius, out_center + out_radius};
}

inline BoxBounds affine_ibp(const AffineLayer& layer, const BoxBounds& box) {
  return affine_ibp(layer.weight, layer.bias, box);
}

/// Interval image of a convolution; same center/radius rule as affine_ibp.
inline BoxBounds conv_ibp(const Conv2dLayer& conv, const BoxBounds& box) {
  if (box.size() != conv.in_size() || conv.weight.rows() != conv.out_channels ||
      conv.weight.cols() != conv.input.channels * conv.kernel * conv.kernel ||
      conv.bias.size() != conv.out_channels)
    throw std::invalid_argument("conv_ibp: shape mismatch");
  const Vector center = 0.5 * (box.lo + box.hi);
  const Vector radius = 0.5 * (box.hi - box.lo);
  const Shape3 os = conv.output();
  Vector out_center(os.size());
  Vector out_radius = Vector::Zero(os.size());
  const int per_channel = os.height * os.width;
  for (int oc = 0; oc < os.channels; ++oc)
    out_center.segment(oc * per_channel, per_channel).setConstant(conv.bias[oc]);
  detail::conv_apply(conv, conv.weight, center.data(), out_center.data());
  const Matrix abs_weight = conv.weight.cwiseAbs();
  detail::conv_apply(conv, abs_weight, radius.data(), out_radius.data());
  return {out_center - out_radius, out_center + out_radius};
}

/// Output range of each neuron over its whole stored domain: the min/max of
/// its coefficients. Independent of the incoming box.
inline BoxBounds bern_global_enclosure(const BernLayer& layer) {
  BoxBounds out{Vector(layer.size()), Vector(layer.size())};
  for (int i = 0; i < layer.size(); ++i) {
    out.lo[i] = layer.coeffs.row(i).minCoeff();
    out.hi[i] = layer.coeffs.row(i).maxCoeff();
  }
  return out;
}

inline BoxBounds bern_global_enclosure(std::span<const BernsteinPoly> polys) {
  BoxBounds out{Vector(static_cast<Eigen::Index>(polys.size())),
                Vector(static_cast<Eigen::Index>(polys.size()))};
  for (std::size_t i = 0; i < polys.size(); ++i) {
    const Interval r = enclosure(polys[i]);
    out.lo[static_cast<Eigen::Index>(i)] = r.lo;
    out.hi[static_cast<Eigen::Index>(i)] = r.hi;
  }
  return out;
}

namespace detail {

// Clips `query` to `domain`, recording genuine excursions in `report`.
inline Interval clip_to_domain(Interval query, Interval domain, PropagationReport* report) {
  const double slack = 1e-9 * std::max(1.0, domain.width());
  if (report && (query.lo < domain.lo - slack || query.hi > domain.hi + slack))
    ++report->clipped_neurons;
  Interval out;
  out.lo = std::clamp(query.lo, domain.lo, domain.hi);
  out.hi = std::clamp(query.hi, out.lo, domain.hi);
  return out;
}

// Range of the restricted coefficients of one neuron over `query`.
inline Interval refined_range(std::span<const double> coeffs, Interval domain, Interval query,
                              PropagationReport* report) {
  const Interval q = clip_to_domain(query, domain, report);
  const double w = domain.width();
  double buf[72];
  const std::span<double> out(buf, coeffs.size());
  detail::restrict_unit(coeffs, (q.lo - domain.lo) / w, (q.hi - domain.lo) / w, out);
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  return {*lo, *hi};
}

// De Casteljau in interval arithmetic over tau in [t0, t1] within [0, 1].
inline Interval interval_de_casteljau(std::span<const double> coeffs, double t0, double t1) {
  const std::size_t m = coeffs.size();
  double lo[72], hi[72];
  for (std::size_t j = 0; j < m; ++j) lo[j] = hi[j] = coeffs[j];
  // 1 - tau and tau are both non-negative intervals.
  const double s0 = 1.0 - t1, s1 = 1.0 - t0;
  for (std::size_t level = 1; level < m; ++level) {
    for (std::size_t j = 0; j + level < m; ++j) {
      const double a_lo = std::min(s0 * lo[j], s1 * lo[j]);
      const double a_hi = std::max(s0 * hi[j], s1 * hi[j]);
      const double b_lo = std::min(t0 * lo[j + 1], t1 * lo[j + 1]);
      const double b_hi = std::max(t0 * hi[j + 1], t1 * hi[j + 1]);
      lo[j] = a_lo + b_lo;
      hi[j] = a_hi + b_hi;
    }
  }
  return {lo[0], hi[0]};
}

}  // namespace detail

/// Per-neuron range over `in_box` via subdivision then enclosure. Queries
/// outside a neuron's stored domain are clipped to it first.
inline BoxBounds bern_refined_enclosure(const BernLayer& layer, const BoxBounds& in_box,
                                        PropagationReport* report = nullptr) {
  if (in_box.size() != layer.size())
    throw std::invalid_argument("bern_refined_enclosure: box size does not match layer width");
  BoxBounds out{Vector(layer.size()), Vector(layer.size())};
  for (int i = 0; i < layer.size(); ++i) {
    const Interval r = detail::refined_range(layer.row(i), layer.domain(i), in_box[i], report);
    out.lo[i] = r.lo;
    out.hi[i] = r.hi;
  }
  return out;
}

inline BoxBounds bern_refined_enclosure(std::span<const BernsteinPoly> polys,
                                        const BoxBounds& in_box,
                                        PropagationReport* report = nullptr) {
  if (static_cast<std::size_t>(in_box.size()) != polys.size())
    throw std::invalid_argument("bern_refined_enclosure: box size does not match layer width");
  BoxBounds out{Vector(in_box.size()), Vector(in_box.size())};
  for (std::size_t i = 0; i < polys.size(); ++i) {
    const auto k = static_cast<int>(i);
    const Interval r = detail::refined_range(polys[i].coeffs(), polys[i].domain(), in_box[k], report);
    out.lo[k] = r.lo;
    out.hi[k] = r.hi;
  }
  return out;
}

/// Generic interval evaluation of each neuron's polynomial over `in_box`
/// (clipped to the stored domain), ignoring enclosure and subdivision.
inline BoxBounds bern_naive_interval(const BernLayer& layer, const BoxBounds& in_box,
                                     PropagationReport* report = nullptr) {
  if (in_box.size() != layer.size())
    throw std::invalid_argument("bern_naive_interval: box size does not match layer width");
  BoxBounds out{Vector(layer.size()), Vector(layer.size())};
  for (int i = 0; i < layer.size(); ++i) {
    const Interval dom = layer.domain(i);
    const Interval q = detail::clip_to_domain(in_box[i], dom, report);
    const Interval r = detail::interval_de_casteljau(layer.row(i), (q.lo - dom.lo) / dom.width(),
                                                     (q.hi - dom.lo) / dom.width());
    out.lo[i] = r.lo;
    out.hi[i] = r.hi;
  }
  return out;
}

}  // namespace bernnet
