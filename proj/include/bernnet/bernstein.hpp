#pragma once

// Univariate polynomials in Bernstein form on an interval [l, u]:
//
//   P(x) = sum_k c_k * C(n,k) (x - l)^k (u - x)^(n-k) / (u - l)^n
//
// All routines work in the normalized coordinate tau = (x - l) / (u - l)
// and use the de Casteljau recurrence, which only forms convex combinations
// of the coefficients.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bernnet {

/// Domains narrower than this are widened symmetrically before use.
inline constexpr double kMinDomainWidth = 1e-12;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  [[nodiscard]] double width() const { return hi - lo; }
  [[nodiscard]] double mid() const { return 0.5 * (lo + hi); }
  [[nodiscard]] bool contains(double x) const { return lo <= x && x <= hi; }
  [[nodiscard]] bool contains(const Interval& other) const {
    return lo <= other.lo && other.hi <= hi;
  }

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Returns `domain` widened symmetrically to kMinDomainWidth when narrower.
inline Interval floor_width(Interval domain) {
  if (domain.hi - domain.lo < kMinDomainWidth) {
    const double mid = domain.mid();
    domain.lo = mid - 0.5 * kMinDomainWidth;
    domain.hi = mid + 0.5 * kMinDomainWidth;
  }
  return domain;
}

/// C(n, k) through the multiplicative recurrence; exact for n <= 64 up to
/// double rounding.
inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

namespace detail {

// Value at tau of the Bernstein polynomial with the given coefficients on
// the unit interval. `scratch` must hold coeffs.size() entries.
inline double de_casteljau(std::span<const double> coeffs, double tau,
                           std::span<double> scratch) {
  const std::size_t m = coeffs.size();
  std::copy(coeffs.begin(), coeffs.end(), scratch.begin());
  const double s = 1.0 - tau;
  for (std::size_t level = 1; level < m; ++level)
    for (std::size_t j = 0; j + level < m; ++j)
      scratch[j] = s * scratch[j] + tau * scratch[j + 1];
  return scratch[0];
}

inline double de_casteljau(std::span<const double> coeffs, double tau) {
  double buf[72];
  if (coeffs.size() <= std::size(buf))
    return de_casteljau(coeffs, tau, std::span<double>(buf, coeffs.size()));
  std::vector<double> scratch(coeffs.size());
  return de_casteljau(coeffs, tau, scratch);
}

// Splits the unit-interval polynomial at tau. `left` receives the
// coefficients on [0, tau], `right` those on [tau, 1]; either may be empty
// when not needed. Both must otherwise have coeffs.size() entries.
inline void split(std::span<const double> coeffs, double tau,
                  std::span<double> left, std::span<double> right) {
  const std::size_t m = coeffs.size();
  double buf[72];
  std::vector<double> heap;
  std::span<double> row;
  if (m <= std::size(buf)) {
    row = std::span<double>(buf, m);
  } else {
    heap.resize(m);
    row = heap;
  }
  std::copy(coeffs.begin(), coeffs.end(), row.begin());
  const double s = 1.0 - tau;
  // After level k, row[j] holds c_{j+k}^k in the usual triangle indexing.
  if (!left.empty()) left[0] = row[0];
  if (!right.empty()) right[m - 1] = row[m - 1];
  for (std::size_t level = 1; level < m; ++level) {
    for (std::size_t j = 0; j + level < m; ++j)
      row[j] = s * row[j] + tau * row[j + 1];
    if (!left.empty()) left[level] = row[0];
    if (!right.empty()) right[m - 1 - level] = row[m - 1 - level];
  }
}

// Coefficients of the same polynomial on [t0, t1] within [0, 1].
inline void restrict_unit(std::span<const double> coeffs, double t0, double t1,
                          std::span<double> out) {
  const std::size_t m = coeffs.size();
  double buf[72];
  std::vector<double> heap;
  std::span<double> right;
  if (m <= std::size(buf)) {
    right = std::span<double>(buf, m);
  } else {
    heap.resize(m);
    right = heap;
  }
  split(coeffs, t0, {}, right);
  // [t0, 1] is the new unit interval; t1 maps to (t1 - t0) / (1 - t0).
  const double rel = (t0 < 1.0) ? std::clamp((t1 - t0) / (1.0 - t0), 0.0, 1.0) : 1.0;
  split(right, rel, out, {});
}

}  // namespace detail

class BernsteinPoly {
 public:
  BernsteinPoly() : coeffs_{0.0}, domain_{0.0, 1.0} {}

  BernsteinPoly(std::vector<double> coeffs, Interval domain)
      : coeffs_(std::move(coeffs)) {
    if (coeffs_.empty())
      throw std::invalid_argument("BernsteinPoly: needs at least one coefficient");
    if (!std::isfinite(domain.lo) || !std::isfinite(domain.hi) || domain.lo > domain.hi)
      throw std::invalid_argument("BernsteinPoly: invalid domain");
    domain_ = floor_width(domain);
    for (double c : coeffs_)
      if (!std::isfinite(c)) throw std::invalid_argument("BernsteinPoly: non-finite coefficient");
  }

  [[nodiscard]] int degree() const { return static_cast<int>(coeffs_.size()) - 1; }
  [[nodiscard]] const Interval& domain() const { return domain_; }
  [[nodiscard]] std::span<const double> coeffs() const { return coeffs_; }
  [[nodiscard]] double coeff(int k) const { return coeffs_.at(static_cast<std::size_t>(k)); }

  /// Normalized coordinate of x in the domain.
  [[nodiscard]] double tau(double x) const { return (x - domain_.lo) / domain_.width(); }

 private:
  std::vector<double> coeffs_;
  Interval domain_;
};

/// b_{n,k}(x) on `domain`.
inline double basis_eval(int n, int k, Interval domain, double x) {
  if (n < 0 || k < 0 || k > n)
    throw std::domain_error("basis_eval: index k=" + std::to_string(k) +
                            " outside [0, " + std::to_string(n) + "]");
  domain = floor_width(domain);
  if (!domain.contains(x))
    throw std::domain_error("basis_eval: x outside the domain");
  const double t = (x - domain.lo) / domain.width();
  return binomial(n, k) * std::pow(t, k) * std::pow(1.0 - t, n - k);
}

/// Value of the polynomial at x. x must lie in the domain.
inline double eval(const BernsteinPoly& poly, double x) {
  if (!poly.domain().contains(x)) throw std::domain_error("eval: x outside the domain");
  return detail::de_casteljau(poly.coeffs(), poly.tau(x));
}

/// Range enclosure: [min_k c_k, max_k c_k].
inline Interval enclosure(const BernsteinPoly& poly) {
  const auto [lo, hi] = std::minmax_element(poly.coeffs().begin(), poly.coeffs().end());
  return {*lo, *hi};
}

/// Splits at alpha into the pieces on [l, alpha] and [alpha, u].
inline std::pair<BernsteinPoly, BernsteinPoly> subdivide(const BernsteinPoly& poly,
                                                         double alpha) {
  const Interval dom = poly.domain();
  if (!dom.contains(alpha)) throw std::domain_error("subdivide: alpha outside the domain");
  const std::size_t m = poly.coeffs().size();
  std::vector<double> left(m), right(m);
  detail::split(poly.coeffs(), poly.tau(alpha), left, right);
  return {BernsteinPoly(std::move(left), {dom.lo, alpha}),
          BernsteinPoly(std::move(right), {alpha, dom.hi})};
}

/// The same polynomial represented on `sub` (which must lie in the domain).
/// Splits at sub.lo first and then splits the right piece at sub.hi.
inline BernsteinPoly restrict_to(const BernsteinPoly& poly, Interval sub) {
  const Interval dom = poly.domain();
  if (!(sub.lo <= sub.hi) || !dom.contains(sub))
    throw std::domain_error("restrict_to: sub-interval not contained in the domain");
  const Interval target = floor_width(sub);
  std::vector<double> out(poly.coeffs().size());
  detail::restrict_unit(poly.coeffs(), poly.tau(target.lo), poly.tau(target.hi), out);
  return BernsteinPoly(std::move(out), target);
}

/// dP/dx as a degree n-1 polynomial on the same domain. The normalized basis
/// derivative picks up a 1/(u - l) factor from the chain rule.
inline BernsteinPoly derivative(const BernsteinPoly& poly) {
  const int n = poly.degree();
  if (n == 0) return BernsteinPoly({0.0}, poly.domain());
  const auto c = poly.coeffs();
  const double scale = n / poly.domain().width();
  std::vector<double> d(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) d[k] = scale * (c[k + 1] - c[k]);
  return BernsteinPoly(std::move(d), poly.domain());
}

/// Upper bound on |dP/dx| over the domain: 2 n max_k |c_k| / (u - l).
/// On the unit domain this is the familiar 2 n max_k |c_k|, which bounds the
/// derivative with respect to the normalized coordinate on any domain.
inline double derivative_sup_bound(const BernsteinPoly& poly) {
  double m = 0.0;
  for (double c : poly.coeffs()) m = std::max(m, std::abs(c));
  return 2.0 * poly.degree() * m / poly.domain().width();
}

/// Converts sum_i a_i x^i to Bernstein form on `domain`.
inline BernsteinPoly from_power_basis(std::span<const double> power, Interval domain) {
  if (power.empty()) throw std::invalid_argument("from_power_basis: empty coefficient list");
  domain = floor_width(domain);
  const int n = static_cast<int>(power.size()) - 1;
  // Re-expand around l in the scaled variable t: x = l + w t, so
  // a'_j = w^j * sum_{i>=j} C(i,j) a_i l^(i-j).
  const double l = domain.lo, w = domain.width();
  std::vector<double> shifted(power.size(), 0.0);
  for (int j = 0; j <= n; ++j) {
    double s = 0.0;
    for (int i = j; i <= n; ++i) s += binomial(i, j) * power[i] * std::pow(l, i - j);
    shifted[j] = s * std::pow(w, j);
  }
  // c_k = sum_{j<=k} C(k,j)/C(n,j) a'_j on the unit interval.
  std::vector<double> coeffs(power.size(), 0.0);
  for (int k = 0; k <= n; ++k) {
    double s = 0.0;
    for (int j = 0; j <= k; ++j) s += binomial(k, j) / binomial(n, j) * shifted[j];
    coeffs[k] = s;
  }
  return BernsteinPoly(std::move(coeffs), domain);
}

}  // namespace bernnet
