#pragma once

// Hand-written reverse mode for Bernstein networks: point forward/backward,
// the interval (box) forward/backward used by the certified objective, and
// the losses built on them.
//
// Conventions:
//  - Pre-activations outside a neuron's stored domain are clamped; the
//    clamped input receives zero gradient.
//  - Stored domains are constants (no gradient through the bound refresh).
//  - In the refined box path, gradients of min/max go to the extremal
//    coefficient, ties resolved towards the lowest index.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "bernnet/interval_bounds.hpp"
#include "bernnet/network.hpp"

namespace bernnet {

/// Gradient of a scalar loss with respect to every parameter; mirrors the
/// network's layer list. Affine/conv entries use `weight`/`bias`, Bernstein
/// entries use `coeffs`.
struct LayerGradient {
  Matrix weight;
  Vector bias;
  RowMatrix coeffs;
};

struct GradientSet {
  std::vector<LayerGradient> layers;

  static GradientSet zeros_like(const Network& net) {
    GradientSet g;
    for (const auto& layer : net.layers) {
      LayerGradient lg;
      if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
        lg.weight = Matrix::Zero(aff->weight.rows(), aff->weight.cols());
        lg.bias = Vector::Zero(aff->bias.size());
      } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
        lg.weight = Matrix::Zero(conv->weight.rows(), conv->weight.cols());
        lg.bias = Vector::Zero(conv->bias.size());
      } else {
        const auto& bern = std::get<BernLayer>(layer);
        lg.coeffs = RowMatrix::Zero(bern.coeffs.rows(), bern.coeffs.cols());
      }
      g.layers.push_back(std::move(lg));
    }
    return g;
  }

  /// Flat views over every gradient tensor, in the order of parameters().
  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
      if (l.coeffs.size() > 0) {
        out.emplace_back(l.coeffs.data(), static_cast<std::size_t>(l.coeffs.size()));
      } else {
        out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
        out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
      }
    }
    return out;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite() || !l.coeffs.allFinite()) return false;
    return true;
  }

  GradientSet& operator*=(double s) {
    for (auto& l : layers) {
      l.weight *= s;
      l.bias *= s;
      l.coeffs *= s;
    }
    return *this;
  }
};

/// Flat views over every trainable tensor of `net`.
inline std::vector<std::span<double>> parameters(Network& net) {
  std::vector<std::span<double>> out;
  for (auto& layer : net.layers) {
    if (auto* aff = std::get_if<AffineLayer>(&layer)) {
      out.emplace_back(aff->weight.data(), static_cast<std::size_t>(aff->weight.size()));
      out.emplace_back(aff->bias.data(), static_cast<std::size_t>(aff->bias.size()));
    } else if (auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      out.emplace_back(conv->weight.data(), static_cast<std::size_t>(conv->weight.size()));
      out.emplace_back(conv->bias.data(), static_cast<std::size_t>(conv->bias.size()));
    } else {
      auto& bern = std::get<BernLayer>(layer);
      out.emplace_back(bern.coeffs.data(), static_cast<std::size_t>(bern.coeffs.size()));
    }
  }
  return out;
}

inline std::size_t parameter_count(const Network& net) {
  std::size_t n = 0;
  for (auto t : parameters(const_cast<Network&>(net))) n += t.size();
  return n;
}

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LossKind { cross_entropy, mean_squared_error };

/// Inputs plus either class labels (cross-entropy) or real targets (MSE).
struct Batch {
  Matrix inputs;            // features x samples
  std::vector<int> labels;  // cross-entropy
  Matrix targets;           // outputs x samples, MSE
};

namespace detail {

// Bernstein basis of degree n and n-1 at tau, in `basis` and `lower`.
inline void basis_values(int n, double tau, std::span<double> basis, std::span<double> lower) {
  const double s = 1.0 - tau;
  basis[0] = 1.0;
  for (int d = 1; d <= n; ++d) {
    if (d == n)
      for (int k = 0; k < n; ++k) lower[k] = basis[k];
    basis[d] = tau * basis[d - 1];
    for (int k = d - 1; k >= 1; --k) basis[k] = s * basis[k] + tau * basis[k - 1];
    basis[0] = s * basis[0];
  }
  if (n == 0) lower[0] = 0.0;
}

// Full de Casteljau triangle at tau: tri[k * m + j] is level k, entry j,
// for j < m - k. Level 0 holds the input coefficients.
inline void triangle(std::span<const double> c, double tau, std::vector<double>& tri) {
  const std::size_t m = c.size();
  tri.assign(m * m, 0.0);
  std::copy(c.begin(), c.end(), tri.begin());
  const double s = 1.0 - tau;
  for (std::size_t k = 1; k < m; ++k)
    for (std::size_t j = 0; j + k < m; ++j)
      tri[k * m + j] = s * tri[(k - 1) * m + j] + tau * tri[(k - 1) * m + j + 1];
}

// Reverse pass through triangle(). `g_tri` holds output gradients at the
// triangle positions and is consumed. Adds into g_c and g_tau.
inline void triangle_backward(const std::vector<double>& tri, std::size_t m, double tau,
                              std::vector<double>& g_tri, std::span<double> g_c, double& g_tau) {
  const double s = 1.0 - tau;
  for (std::size_t k = m - 1; k >= 1; --k) {
    for (std::size_t j = 0; j + k < m; ++j) {
      const double g = g_tri[k * m + j];
      if (g == 0.0) continue;
      g_tri[(k - 1) * m + j] += s * g;
      g_tri[(k - 1) * m + j + 1] += tau * g;
      g_tau += g * (tri[(k - 1) * m + j + 1] - tri[(k - 1) * m + j]);
    }
  }
  for (std::size_t j = 0; j < m; ++j) g_c[j] += g_tri[j];
}

struct RefinedWorkspace {
  std::vector<double> tri1, tri2, g_tri1, g_tri2, right, g_right;
};

// Gradient of the refined range [lo, hi] of one neuron over [a, b] with
// respect to its coefficients and to a, b. The stored domain is constant.
inline void refined_range_backward(std::span<const double> c, Interval dom, double a, double b,
                                   double g_lo, double g_hi, std::span<double> g_c, double& g_a,
                                   double& g_b, RefinedWorkspace& ws) {
  const std::size_t m = c.size();
  const double l = dom.lo, u = dom.hi, w = dom.width();
  const double ac = std::clamp(a, l, u);
  const bool a_passes = a >= l && a <= u;
  enum { to_b, to_a, none } b_route = to_b;
  double bc = b;
  if (b > u) {
    bc = u;
    b_route = none;
  } else if (b < ac) {
    bc = ac;
    b_route = to_a;
  }
  const double t0 = (ac - l) / w, t1 = (bc - l) / w;

  triangle(c, t0, ws.tri1);
  ws.right.resize(m);
  for (std::size_t j = 0; j < m; ++j) ws.right[j] = ws.tri1[(m - 1 - j) * m + j];

  double rel = 1.0;
  bool rel_passes = false;
  if (t0 < 1.0) {
    const double raw = (t1 - t0) / (1.0 - t0);
    rel = std::clamp(raw, 0.0, 1.0);
    rel_passes = raw >= 0.0 && raw <= 1.0;
  }
  triangle(ws.right, rel, ws.tri2);

  std::size_t kmin = 0, kmax = 0;
  for (std::size_t k = 1; k < m; ++k) {
    if (ws.tri2[k * m] < ws.tri2[kmin * m]) kmin = k;
    if (ws.tri2[k * m] > ws.tri2[kmax * m]) kmax = k;
  }

  ws.g_tri2.assign(m * m, 0.0);
  ws.g_tri2[kmin * m] += g_lo;
  ws.g_tri2[kmax * m] += g_hi;
  ws.g_right.assign(m, 0.0);
  double g_rel = 0.0;
  triangle_backward(ws.tri2, m, rel, ws.g_tri2, ws.g_right, g_rel);

  ws.g_tri1.assign(m * m, 0.0);
  for (std::size_t j = 0; j < m; ++j) ws.g_tri1[(m - 1 - j) * m + j] = ws.g_right[j];
  double g_t0 = 0.0;
  triangle_backward(ws.tri1, m, t0, ws.g_tri1, g_c, g_t0);

  double g_t1 = 0.0;
  if (rel_passes) {
    const double d = 1.0 - t0;
    g_t0 += g_rel * (t1 - 1.0) / (d * d);
    g_t1 = g_rel / d;
  }
  double g_ac = g_t0 / w;
  const double g_bc = g_t1 / w;
  if (b_route == to_b)
    g_b += g_bc;
  else if (b_route == to_a)
    g_ac += g_bc;
  if (a_passes) g_a += g_ac;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Point path

/// Layer inputs recorded by forward_tape(): acts[k] enters layer k and
/// acts.back() is the network output.
struct ForwardTape {
  std::vector<Matrix> acts;
  [[nodiscard]] const Matrix& output() const { return acts.back(); }
};

inline ForwardTape forward_tape(const Network& net, const Matrix& x) {
  if (x.rows() != net.input_size()) throw std::invalid_argument("forward: input size mismatch");
  ForwardTape tape;
  tape.acts.reserve(net.layers.size() + 1);
  tape.acts.push_back(clamp_to_domain(net, x));
  for (const auto& layer : net.layers) tape.acts.push_back(apply_layer(layer, tape.acts.back()));
  return tape;
}

/// Backpropagates `grad_out` (d loss / d output) through every layer,
/// accumulating parameter gradients into `grads` when given. Returns
/// d loss / d input (zero for coordinates clamped to D).
inline Matrix backward_tape(const Network& net, const ForwardTape& tape, const Matrix& grad_out,
                            GradientSet* grads, const Matrix* raw_input = nullptr) {
  Matrix g = grad_out;
  std::vector<double> basis(kMaxOrder + 2), lower(kMaxOrder + 2);
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Matrix& in = tape.acts[li];
    const Layer& layer = net.layers[li];
    if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
      if (grads) {
        grads->layers[li].weight.noalias() += g * in.transpose();
        grads->layers[li].bias += g.rowwise().sum();
      }
      g = aff->weight.transpose() * g;
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      const Shape3 os = conv->output();
      const int per_channel = os.height * os.width;
      Matrix g_in = Matrix::Zero(in.rows(), in.cols());
      for (Eigen::Index s = 0; s < in.cols(); ++s) {
        if (grads) {
          detail::conv_weight_grad(*conv, in.col(s).data(), g.col(s).data(), grads->layers[li].weight);
          for (int oc = 0; oc < os.channels; ++oc)
            grads->layers[li].bias[oc] += g.col(s).segment(oc * per_channel, per_channel).sum();
        }
        detail::conv_apply(*conv, conv->weight, g.col(s).data(), g_in.col(s).data(), true);
      }
      g = std::move(g_in);
    } else {
      const auto& bern = std::get<BernLayer>(layer);
      const int n = bern.order;
      Matrix g_in(in.rows(), in.cols());
      for (Eigen::Index s = 0; s < in.cols(); ++s) {
        for (int i = 0; i < bern.size(); ++i) {
          const double lo = bern.stored_lo[i], hi = bern.stored_hi[i];
          const double x = in(i, s);
          const double gi = g(i, s);
          const double tau = (std::clamp(x, lo, hi) - lo) / (hi - lo);
          detail::basis_values(n, tau, basis, lower);
          const auto c = bern.row(i);
          if (grads)
            for (int k = 0; k <= n; ++k) grads->layers[li].coeffs(i, k) += gi * basis[k];
          if (x < lo || x > hi) {
            g_in(i, s) = 0.0;
          } else {
            double d = 0.0;
            for (int k = 0; k < n; ++k) d += (c[k + 1] - c[k]) * lower[k];
            g_in(i, s) = gi * d * n / (hi - lo);
          }
        }
      }
      g = std::move(g_in);
    }
  }
  if (raw_input) {
    const auto& dom = net.input_domain;
    for (Eigen::Index s = 0; s < g.cols(); ++s)
      for (Eigen::Index f = 0; f < g.rows(); ++f) {
        const double v = (*raw_input)(f, s);
        if (v < dom.lo[f] || v > dom.hi[f]) g(f, s) = 0.0;
      }
  }
  return g;
}

/// Per-sample cross-entropy and its gradient with respect to the logits.
inline Vector cross_entropy(const Matrix& logits, const std::vector<int>& labels, Matrix* grad = nullptr) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
    throw std::invalid_argument("cross_entropy: label count mismatch");
  Vector loss(logits.cols());
  if (grad) grad->resize(logits.rows(), logits.cols());
  for (Eigen::Index s = 0; s < logits.cols(); ++s) {
    const int t = labels[static_cast<std::size_t>(s)];
    if (t < 0 || t >= logits.rows()) throw std::invalid_argument("cross_entropy: label out of range");
    const double mx = logits.col(s).maxCoeff();
    const Vector e = (logits.col(s).array() - mx).exp();
    const double z = e.sum();
    loss[s] = std::log(z) + mx - logits(t, s);
    if (grad) {
      grad->col(s) = e / z;
      (*grad)(t, s) -= 1.0;
    }
  }
  return loss;
}

struct LossAndGradient {
  double loss = 0.0;
  GradientSet grads;
};

/// Mean loss over the batch and its gradient with respect to all parameters.
inline LossAndGradient backward(const Network& net, const Batch& batch,
                                LossKind kind = LossKind::cross_entropy) {
  const ForwardTape tape = forward_tape(net, batch.inputs);
  const double inv = 1.0 / static_cast<double>(batch.inputs.cols());
  Matrix g;
  double loss = 0.0;
  if (kind == LossKind::cross_entropy) {
    loss = cross_entropy(tape.output(), batch.labels, &g).mean();
  } else {
    if (batch.targets.rows() != tape.output().rows() || batch.targets.cols() != tape.output().cols())
      throw std::invalid_argument("backward: target shape mismatch");
    const Matrix diff = tape.output() - batch.targets;
    loss = 0.5 * diff.squaredNorm() * inv;
    g = diff;
  }
  g *= inv;
  if (!std::isfinite(loss)) throw NonFiniteError("backward: non-finite loss " + std::to_string(loss));
  LossAndGradient out{loss, GradientSet::zeros_like(net)};
  backward_tape(net, tape, g, &out.grads);
  if (!out.grads.all_finite()) throw NonFiniteError("backward: non-finite gradient");
  return out;
}

/// d CE(x_s, y_s) / d x_s for every column (not averaged).
inline Matrix input_gradient(const Network& net, const Matrix& x, const std::vector<int>& labels,
                             Vector* loss = nullptr) {
  const ForwardTape tape = forward_tape(net, x);
  Matrix g;
  const Vector l = cross_entropy(tape.output(), labels, &g);
  if (loss) *loss = l;
  return backward_tape(net, tape, g, nullptr, &x);
}

// ---------------------------------------------------------------------------
// Interval path (refined Bernstein bounds)

/// Boxes entering each layer for a batch of input boxes: lo[k]/hi[k] enter
/// layer k; the last entry is the output box.
struct IntervalTape {
  std::vector<Matrix> lo, hi;
};

inline IntervalTape interval_forward(const Network& net, const Matrix& lo, const Matrix& hi,
                                     std::size_t n_layers) {
  IntervalTape tape;
  const Matrix dlo = net.input_domain.lo.replicate(1, lo.cols());
  const Matrix dhi = net.input_domain.hi.replicate(1, lo.cols());
  tape.lo.push_back(lo.cwiseMax(dlo).cwiseMin(dhi));
  tape.hi.push_back(hi.cwiseMax(tape.lo.back()).cwiseMin(dhi));
  for (std::size_t li = 0; li < n_layers; ++li) {
    const Layer& layer = net.layers[li];
    const Matrix& a = tape.lo.back();
    const Matrix& b = tape.hi.back();
    Matrix out_lo, out_hi;
    if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
      const Matrix center = aff->weight * (0.5 * (a + b));
      const Matrix radius = aff->weight.cwiseAbs() * (0.5 * (b - a));
      out_lo = (center - radius).colwise() + aff->bias;
      out_hi = (center + radius).colwise() + aff->bias;
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      out_lo.resize(conv->out_size(), a.cols());
      out_hi.resize(conv->out_size(), a.cols());
      for (Eigen::Index s = 0; s < a.cols(); ++s) {
        const BoxBounds box = conv_ibp(*conv, BoxBounds(a.col(s), b.col(s)));
        out_lo.col(s) = box.lo;
        out_hi.col(s) = box.hi;
      }
    } else {
      const auto& bern = std::get<BernLayer>(layer);
      out_lo.resize(a.rows(), a.cols());
      out_hi.resize(a.rows(), a.cols());
      for (Eigen::Index s = 0; s < a.cols(); ++s)
        for (int i = 0; i < bern.size(); ++i) {
          const Interval r = detail::refined_range(bern.row(i), bern.domain(i), {a(i, s), b(i, s)}, nullptr);
          out_lo(i, s) = r.lo;
          out_hi(i, s) = r.hi;
        }
    }
    tape.lo.push_back(std::move(out_lo));
    tape.hi.push_back(std::move(out_hi));
  }
  return tape;
}

/// Reverse pass of interval_forward over its first `n_layers` layers, given
/// gradients on the last recorded box.
inline void interval_backward(const Network& net, const IntervalTape& tape, std::size_t n_layers,
                              Matrix g_lo, Matrix g_hi, GradientSet& grads) {
  detail::RefinedWorkspace ws;
  for (std::size_t li = n_layers; li-- > 0;) {
    const Layer& layer = net.layers[li];
    const Matrix& a = tape.lo[li];
    const Matrix& b = tape.hi[li];
    if (const auto* aff = std::get_if<AffineLayer>(&layer)) {
      const Matrix g_center = g_lo + g_hi;
      const Matrix g_radius = g_hi - g_lo;
      const Matrix center = 0.5 * (a + b);
      const Matrix radius = 0.5 * (b - a);
      grads.layers[li].weight.noalias() += g_center * center.transpose();
      grads.layers[li].weight += aff->weight.cwiseSign().cwiseProduct(g_radius * radius.transpose());
      grads.layers[li].bias += g_center.rowwise().sum();
      const Matrix gc_in = aff->weight.transpose() * g_center;
      const Matrix gr_in = aff->weight.cwiseAbs().transpose() * g_radius;
      g_lo = 0.5 * (gc_in - gr_in);
      g_hi = 0.5 * (gc_in + gr_in);
    } else if (const auto* conv = std::get_if<Conv2dLayer>(&layer)) {
      const Shape3 os = conv->output();
      const int per_channel = os.height * os.width;
      const Matrix abs_w = conv->weight.cwiseAbs();
      Matrix gw_radius = Matrix::Zero(conv->weight.rows(), conv->weight.cols());
      Matrix n_lo = Matrix::Zero(a.rows(), a.cols()), n_hi = Matrix::Zero(a.rows(), a.cols());
      for (Eigen::Index s = 0; s < a.cols(); ++s) {
        const Vector g_center = g_lo.col(s) + g_hi.col(s);
        const Vector g_radius = g_hi.col(s) - g_lo.col(s);
        const Vector center = 0.5 * (a.col(s) + b.col(s));
        const Vector radius = 0.5 * (b.col(s) - a.col(s));
        detail::conv_weight_grad(*conv, center.data(), g_center.data(), grads.layers[li].weight);
        detail::conv_weight_grad(*conv, radius.data(), g_radius.data(), gw_radius);
        for (int oc = 0; oc < os.channels; ++oc)
          grads.layers[li].bias[oc] += g_center.segment(oc * per_channel, per_channel).sum();
        Vector gc_in = Vector::Zero(a.rows()), gr_in = Vector::Zero(a.rows());
        detail::conv_apply(*conv, conv->weight, g_center.data(), gc_in.data(), true);
        detail::conv_apply(*conv, abs_w, g_radius.data(), gr_in.data(), true);
        n_lo.col(s) = 0.5 * (gc_in - gr_in);
        n_hi.col(s) = 0.5 * (gc_in + gr_in);
      }
      grads.layers[li].weight += conv->weight.cwiseSign().cwiseProduct(gw_radius);
      g_lo = std::move(n_lo);
      g_hi = std::move(n_hi);
    } else {
      const auto& bern = std::get<BernLayer>(layer);
      Matrix n_lo = Matrix::Zero(a.rows(), a.cols()), n_hi = Matrix::Zero(a.rows(), a.cols());
      const auto m = static_cast<std::size_t>(bern.order + 1);
      for (Eigen::Index s = 0; s < a.cols(); ++s)
        for (int i = 0; i < bern.size(); ++i) {
          if (g_lo(i, s) == 0.0 && g_hi(i, s) == 0.0) continue;
          std::span<double> g_c(grads.layers[li].coeffs.row(i).data(), m);
          detail::refined_range_backward(bern.row(i), bern.domain(i), a(i, s), b(i, s), g_lo(i, s),
                                         g_hi(i, s), g_c, n_lo(i, s), n_hi(i, s), ws);
        }
      g_lo = std::move(n_lo);
      g_hi = std::move(n_hi);
    }
  }
}

/// Upper bounds of logit_i - logit_t over each sample's box (one column per
/// sample; row t is 0). When the last layer is affine its rows are merged
/// into W_i - W_t before bounding; otherwise U(logit_i) - L(logit_t) is used.
/// Optionally accumulates gradients given d loss / d bounds in `g_bounds`.
struct LogitDifferenceBounds {
  Matrix upper;
  IntervalTape tape;
  bool merged = false;
};

inline LogitDifferenceBounds logit_difference_bounds(const Network& net, const Matrix& lo,
                                                     const Matrix& hi, const std::vector<int>& targets) {
  LogitDifferenceBounds out;
  const std::size_t L = net.layers.size();
  out.merged = L > 0 && std::holds_alternative<AffineLayer>(net.layers.back());
  out.tape = interval_forward(net, lo, hi, out.merged ? L - 1 : L);
  const Matrix& a = out.tape.lo.back();
  const Matrix& b = out.tape.hi.back();
  const int classes = net.output_size();
  out.upper.resize(classes, lo.cols());
  if (out.merged) {
    const auto& last = std::get<AffineLayer>(net.layers.back());
    for (Eigen::Index s = 0; s < lo.cols(); ++s) {
      const int t = targets[static_cast<std::size_t>(s)];
      const Vector center = 0.5 * (a.col(s) + b.col(s));
      const Vector radius = 0.5 * (b.col(s) - a.col(s));
      for (int i = 0; i < classes; ++i) {
        if (i == t) {
          out.upper(i, s) = 0.0;
          continue;
        }
        const auto row = last.weight.row(i) - last.weight.row(t);
        out.upper(i, s) = row.dot(center) + row.cwiseAbs().dot(radius) + last.bias[i] - last.bias[t];
      }
    }
  } else {
    for (Eigen::Index s = 0; s < lo.cols(); ++s) {
      const int t = targets[static_cast<std::size_t>(s)];
      for (int i = 0; i < classes; ++i) out.upper(i, s) = (i == t) ? 0.0 : b(i, s) - a(t, s);
    }
  }
  return out;
}

inline void logit_difference_backward(const Network& net, const LogitDifferenceBounds& bounds,
                                      const std::vector<int>& targets, const Matrix& g_upper,
                                      GradientSet& grads) {
  const std::size_t L = net.layers.size();
  const Matrix& a = bounds.tape.lo.back();
  const Matrix& b = bounds.tape.hi.back();
  Matrix g_lo = Matrix::Zero(a.rows(), a.cols()), g_hi = Matrix::Zero(a.rows(), a.cols());
  const int classes = net.output_size();
  if (bounds.merged) {
    const auto& last = std::get<AffineLayer>(net.layers.back());
    auto& gl = grads.layers[L - 1];
    for (Eigen::Index s = 0; s < a.cols(); ++s) {
      const int t = targets[static_cast<std::size_t>(s)];
      const Vector center = 0.5 * (a.col(s) + b.col(s));
      const Vector radius = 0.5 * (b.col(s) - a.col(s));
      Vector g_center = Vector::Zero(a.rows()), g_radius = Vector::Zero(a.rows());
      for (int i = 0; i < classes; ++i) {
        const double g = g_upper(i, s);
        if (i == t || g == 0.0) continue;
        const Eigen::RowVectorXd row = last.weight.row(i) - last.weight.row(t);
        const Eigen::RowVectorXd d_row =
            g * (center.transpose() + row.cwiseSign().cwiseProduct(radius.transpose()));
        gl.weight.row(i) += d_row;
        gl.weight.row(t) -= d_row;
        gl.bias[i] += g;
        gl.bias[t] -= g;
        g_center += g * row.transpose();
        g_radius += g * row.cwiseAbs().transpose();
      }
      g_lo.col(s) = 0.5 * (g_center - g_radius);
      g_hi.col(s) = 0.5 * (g_center + g_radius);
    }
    interval_backward(net, bounds.tape, L - 1, std::move(g_lo), std::move(g_hi), grads);
  } else {
    for (Eigen::Index s = 0; s < a.cols(); ++s) {
      const int t = targets[static_cast<std::size_t>(s)];
      for (int i = 0; i < classes; ++i) {
        if (i == t) continue;
        g_hi(i, s) += g_upper(i, s);
        g_lo(t, s) -= g_upper(i, s);
      }
    }
    interval_backward(net, bounds.tape, L, std::move(g_lo), std::move(g_hi), grads);
  }
}

/// Mean over the batch of (1 - lambda) CE(logits, y) + lambda CE(yhat, y),
/// where yhat holds refined upper bounds of logit_i - logit_y over the
/// l-infinity ball of radius epsilon (intersected with D). Accumulates the
/// gradient into `grads` when given.
inline double certified_loss(const Network& net, const Batch& batch, double epsilon, double lambda,
                             GradientSet* grads = nullptr) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("certified_loss: lambda outside [0, 1]");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("certified_loss: negative epsilon");
  const auto B = static_cast<double>(batch.inputs.cols());
  double total = 0.0;

  if (lambda < 1.0) {
    const ForwardTape tape = forward_tape(net, batch.inputs);
    Matrix g;
    total += (1.0 - lambda) * cross_entropy(tape.output(), batch.labels, grads ? &g : nullptr).mean();
    if (grads) backward_tape(net, tape, g * ((1.0 - lambda) / B), grads);
  }
  if (lambda > 0.0) {
    const auto bounds = logit_difference_bounds(net, batch.inputs.array() - epsilon,
                                                batch.inputs.array() + epsilon, batch.labels);
    Matrix g;
    total += lambda * cross_entropy(bounds.upper, batch.labels, grads ? &g : nullptr).mean();
    if (grads) logit_difference_backward(net, bounds, batch.labels, g * (lambda / B), *grads);
  }
  if (!std::isfinite(total)) throw NonFiniteError("certified_loss: non-finite loss");
  if (grads && !grads->all_finite()) throw NonFiniteError("certified_loss: non-finite gradient");
  return total;
}

}  // namespace bernnet
