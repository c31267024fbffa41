#pragma once

// Projected gradient descent (sign-gradient ascent on cross-entropy) inside
// the l-infinity ball around x intersected with the input domain.

#include <Eigen/Dense>

#include <algorithm>
#include <vector>

#include "bernnet/gradients.hpp"

namespace bernnet {

struct PgdOptions {
  double epsilon = 0.0;
  int steps = 100;
  /// Non-positive means the default 2.5 * epsilon / steps.
  double step_size = 0.0;
};

/// Adversarial batch: column s is the iterate with the highest loss seen for
/// sample s (the clean input counts as iterate 0).
inline Matrix pgd_attack(const Network& net, const Matrix& x, const std::vector<int>& labels,
                         const PgdOptions& opt, Vector* best_loss = nullptr) {
  const Matrix origin = clamp_to_domain(net, x);
  if (opt.epsilon <= 0.0 || opt.steps <= 0) {
    if (best_loss) *best_loss = cross_entropy(forward_batch(net, origin), labels);
    return origin;
  }
  const double step = opt.step_size > 0.0 ? opt.step_size : 2.5 * opt.epsilon / opt.steps;
  const Matrix lo = (origin.array() - opt.epsilon).matrix().cwiseMax(net.input_domain.lo.replicate(1, x.cols()));
  const Matrix hi = (origin.array() + opt.epsilon).matrix().cwiseMin(net.input_domain.hi.replicate(1, x.cols()));

  Matrix cur = origin;
  Matrix best = origin;
  Vector loss;
  Matrix grad = input_gradient(net, cur, labels, &loss);
  Vector best_l = loss;
  for (int it = 0; it < opt.steps; ++it) {
    cur = (cur + step * grad.cwiseSign()).cwiseMax(lo).cwiseMin(hi);
    grad = input_gradient(net, cur, labels, &loss);
    for (Eigen::Index s = 0; s < cur.cols(); ++s)
      if (loss[s] > best_l[s]) {
        best_l[s] = loss[s];
        best.col(s) = cur.col(s);
      }
  }
  if (best_loss) *best_loss = best_l;
  return best;
}

inline Vector pgd_attack(const Network& net, const Vector& x, int label, const PgdOptions& opt) {
  return pgd_attack(net, Matrix(x), std::vector<int>{label}, opt).col(0);
}

}  // namespace bernnet
