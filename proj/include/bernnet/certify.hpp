#pragma once

// Incomplete certification: global output checks, local box checks, robust
// margins and certified accuracy.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "bernnet/attack.hpp"
#include "bernnet/dataset.hpp"
#include "bernnet/network.hpp"
#include "bernnet/parallel.hpp"

namespace bernnet {

enum class Verdict { certified, unknown };

inline const char* to_string(Verdict v) { return v == Verdict::certified ? "CERTIFIED" : "UNKNOWN"; }

struct CertResult {
  Verdict verdict = Verdict::unknown;
  double margin = -std::numeric_limits<double>::infinity();
  BoundMethod method = BoundMethod::bern_ibp;
  double elapsed = 0.0;  // seconds
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline CertResult make_result(double margin, BoundMethod method, std::chrono::steady_clock::time_point t0) {
  // NaN margins (possible from inf - inf on the naive path) never certify.
  return {margin > 0.0 ? Verdict::certified : Verdict::unknown, margin, method, seconds_since(t0)};
}

}  // namespace detail

/// Checks "every output is positive on all of D". With a Bernstein output
/// layer this reads only that layer's coefficients; otherwise it falls back
/// to one refined propagation of D.
inline CertResult certify_global(const Network& net) {
  const auto t0 = std::chrono::steady_clock::now();
  double margin = 0.0;
  if (!net.layers.empty() && std::holds_alternative<BernLayer>(net.layers.back())) {
    margin = std::get<BernLayer>(net.layers.back()).coeffs.minCoeff();
  } else {
    margin = propagate(net, net.input_domain, BoundMethod::bern_ibp).back().lo.minCoeff();
  }
  return detail::make_result(margin, BoundMethod::bern_ibp, t0);
}

/// Checks "every output is positive on `box`" (clipped to D).
inline CertResult certify_local(const Network& net, const BoxBounds& box,
                                BoundMethod method = BoundMethod::bern_ibp,
                                PropagationReport* report = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const double margin = propagate(net, box, method, std::nullopt, report).back().lo.minCoeff();
  return detail::make_result(margin, method, t0);
}

/// Lower bounds of logit_t - logit_i over `box` for every i (entry t is
/// +inf). The last affine layer is folded into W_t - W_i rows when present.
inline Vector logit_gap_lower_bounds(const Network& net, const BoxBounds& box, int target,
                                     BoundMethod method, PropagationReport* report = nullptr) {
  const int classes = net.output_size();
  if (target < 0 || target >= classes) throw std::invalid_argument("robust_margin: target out of range");
  const bool merged = !net.layers.empty() && std::holds_alternative<AffineLayer>(net.layers.back());
  const auto boxes = propagate(net, box, method, merged ? net.layers.size() - 1 : net.layers.size(), report);
  const BoxBounds& last = boxes.back();
  Vector gaps = Vector::Constant(classes, std::numeric_limits<double>::infinity());
  if (merged) {
    const auto& aff = std::get<AffineLayer>(net.layers.back());
    const Vector center = 0.5 * (last.lo + last.hi);
    const Vector radius = 0.5 * (last.hi - last.lo);
    for (int i = 0; i < classes; ++i) {
      if (i == target) continue;
      const Eigen::RowVectorXd row = aff.weight.row(target) - aff.weight.row(i);
      // 0 * inf terms from zero weights on unbounded naive boxes count as 0.
      double r = 0.0;
      for (Eigen::Index j = 0; j < row.size(); ++j)
        if (row[j] != 0.0) r += std::abs(row[j]) * radius[j];
      double c = 0.0;
      for (Eigen::Index j = 0; j < row.size(); ++j)
        if (row[j] != 0.0) c += row[j] * center[j];
      gaps[i] = c - r + aff.bias[target] - aff.bias[i];
    }
  } else {
    for (int i = 0; i < classes; ++i)
      if (i != target) gaps[i] = last.lo[target] - last.hi[i];
  }
  return gaps;
}

/// Lower bound on min_{i != target} (logit_target - logit_i) over the
/// l-infinity ball of radius epsilon around x, intersected with D.
inline double robust_margin(const Network& net, const Vector& x, double epsilon, int target,
                            BoundMethod method, PropagationReport* report = nullptr) {
  if (epsilon < 0.0) throw std::invalid_argument("robust_margin: negative epsilon");
  const BoxBounds ball{(x.array() - epsilon).matrix(), (x.array() + epsilon).matrix()};
  const Vector gaps = logit_gap_lower_bounds(net, ball, target, method, report);
  if (gaps.hasNaN()) return -std::numeric_limits<double>::infinity();
  return gaps.minCoeff();
}

inline CertResult certify_robust(const Network& net, const Vector& x, double epsilon, int target,
                                 BoundMethod method, PropagationReport* report = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const double m = robust_margin(net, x, epsilon, target, method, report);
  return detail::make_result(m, method, t0);
}

inline int predict(const Vector& logits) {
  Eigen::Index k = 0;
  logits.maxCoeff(&k);
  return static_cast<int>(k);
}

inline std::vector<int> predict_batch(const Network& net, const Matrix& x) {
  const Matrix logits = forward_batch(net, x);
  std::vector<int> out(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index s = 0; s < x.cols(); ++s) out[static_cast<std::size_t>(s)] = predict(logits.col(s));
  return out;
}

inline double accuracy(const Network& net, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const auto pred = predict_batch(net, ds.inputs);
  int ok = 0;
  for (int s = 0; s < ds.size(); ++s) ok += pred[static_cast<std::size_t>(s)] == ds.labels[static_cast<std::size_t>(s)];
  return static_cast<double>(ok) / ds.size();
}

struct SampleCertification {
  int label = 0;
  int prediction = 0;
  CertResult result;
};

struct CertificationReport {
  double epsilon = 0.0;
  BoundMethod method = BoundMethod::bern_ibp;
  double certified_accuracy = 0.0;  // fraction in [0, 1]
  std::vector<SampleCertification> samples;
  std::size_t clipped_neurons = 0;
};

/// Fraction of samples that are classified correctly and have a positive
/// robust margin, plus the per-sample margins.
inline CertificationReport certified_accuracy(const Network& net, const Dataset& ds, double epsilon,
                                              BoundMethod method) {
  CertificationReport rep;
  rep.epsilon = epsilon;
  rep.method = method;
  rep.samples.resize(static_cast<std::size_t>(ds.size()));
  std::vector<PropagationReport> clips(rep.samples.size());
  const auto pred = predict_batch(net, ds.inputs);
  parallel_for(rep.samples.size(), [&](std::size_t s) {
    auto& out = rep.samples[s];
    out.label = ds.labels[s];
    out.prediction = pred[s];
    out.result = certify_robust(net, ds.inputs.col(static_cast<Eigen::Index>(s)), epsilon, out.label,
                                method, &clips[s]);
  });
  int ok = 0;
  for (std::size_t s = 0; s < rep.samples.size(); ++s) {
    const auto& r = rep.samples[s];
    ok += r.prediction == r.label && r.result.verdict == Verdict::certified;
    rep.clipped_neurons += clips[s].clipped_neurons;
  }
  rep.certified_accuracy = rep.samples.empty() ? 0.0 : static_cast<double>(ok) / rep.samples.size();
  return rep;
}

/// Fraction of samples on which a PGD attack fails to change a correct
/// prediction: an upper bound on certified accuracy.
inline double pgd_upper_bound_accuracy(const Network& net, const Dataset& ds, double epsilon,
                                       int steps = 100, int batch = 256) {
  if (ds.size() == 0) return 0.0;
  std::vector<char> robust(static_cast<std::size_t>(ds.size()), 0);
  const int chunks = (ds.size() + batch - 1) / batch;
  parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
    const Dataset part = ds.slice(static_cast<int>(c) * batch, batch);
    const auto clean = predict_batch(net, part.inputs);
    const Matrix adv = pgd_attack(net, part.inputs, part.labels, {epsilon, steps, 0.0});
    const auto attacked = predict_batch(net, adv);
    for (int s = 0; s < part.size(); ++s) {
      const auto i = static_cast<std::size_t>(s);
      robust[c * static_cast<std::size_t>(batch) + i] =
          clean[i] == part.labels[i] && attacked[i] == part.labels[i];
    }
  });
  return static_cast<double>(std::count(robust.begin(), robust.end(), 1)) / ds.size();
}

inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  const double f = pos - static_cast<double>(i);
  return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
}

/// Per-sample CSV for one epsilon: both methods side by side.
/// Columns: sample_id,label,prediction,margin_bern,margin_naive,verdict_bern,verdict_naive,time_bern,time_naive
inline void write_certification_csv(std::ostream& out, const CertificationReport& bern,
                                    const CertificationReport& naive, bool header = true) {
  if (header)
    out << "epsilon,sample_id,label,prediction,margin_bern,margin_naive,verdict_bern,verdict_naive,"
           "time_bern,time_naive\n";
  const auto old = out.precision(17);
  for (std::size_t s = 0; s < bern.samples.size(); ++s) {
    const auto& b = bern.samples[s];
    const auto& n = naive.samples[s];
    out << bern.epsilon << ',' << s << ',' << b.label << ',' << b.prediction << ',' << b.result.margin
        << ',' << n.result.margin << ',' << to_string(b.result.verdict) << ','
        << to_string(n.result.verdict) << ',' << b.result.elapsed << ',' << n.result.elapsed << '\n';
  }
  out.precision(old);
}

inline nlohmann::json summary_json(const CertificationReport& rep, std::optional<double> pgd_ub = std::nullopt) {
  std::vector<double> times;
  for (const auto& s : rep.samples) times.push_back(s.result.elapsed);
  nlohmann::json j = {{"epsilon", rep.epsilon},
                      {"method", to_string(rep.method)},
                      {"samples", rep.samples.size()},
                      {"certified_acc", rep.certified_accuracy},
                      {"clipped_neurons", rep.clipped_neurons},
                      {"time_p50", percentile(times, 0.5)},
                      {"time_p90", percentile(times, 0.9)},
                      {"time_p99", percentile(times, 0.99)}};
  if (pgd_ub) j["pgd_ub"] = *pgd_ub;
  return j;
}

}  // namespace bernnet
