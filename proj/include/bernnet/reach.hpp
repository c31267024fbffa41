#pragma once

// Box reachability for x_{k+1} = A x_k + B u_k with u_k = controller(x_k).

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bernnet/network.hpp"
#include "bernnet/parallel.hpp"
#include "bernnet/training.hpp"

namespace bernnet {

struct LinearSystem {
  std::string name;
  Matrix A;  // d x d
  Matrix B;  // d x m
  BoxBounds x0;
  int horizon = 6;
  /// Reference feedback u = -K x used to fit demonstration controllers
  /// (optional; m x d).
  Matrix gain;
  /// Box the controller is trained and bounded on.
  BoxBounds controller_domain;

  [[nodiscard]] int state_dim() const { return static_cast<int>(A.rows()); }
  [[nodiscard]] int input_dim() const { return static_cast<int>(B.cols()); }

  void validate() const {
    if (A.rows() != A.cols()) throw std::invalid_argument("system: A must be square");
    if (B.rows() != A.rows()) throw std::invalid_argument("system: B must have as many rows as A");
    if (!A.allFinite() || !B.allFinite()) throw std::invalid_argument("system: non-finite A or B");
    if (x0.size() != state_dim()) throw std::invalid_argument("system: x0 box has the wrong dimension");
    if (horizon < 1) throw std::invalid_argument("system: horizon must be >= 1");
    if (gain.size() > 0 && (gain.rows() != input_dim() || gain.cols() != state_dim()))
      throw std::invalid_argument("system: gain must be m x d");
    if (controller_domain.size() != 0 && controller_domain.size() != state_dim())
      throw std::invalid_argument("system: controller domain has the wrong dimension");
  }
};

/// Next-state box: the controller's output box over `box` (clipped to its
/// input domain), then interval arithmetic on [A B] [x; u].
inline BoxBounds step_reach(const LinearSystem& sys, const Network& controller, const BoxBounds& box,
                            BoundMethod method = BoundMethod::bern_ibp,
                            PropagationReport* report = nullptr) {
  if (box.size() != sys.state_dim() || controller.input_size() != sys.state_dim() ||
      controller.output_size() != sys.input_dim())
    throw std::invalid_argument("step_reach: dimension mismatch between system, box and controller");
  const BoxBounds u = propagate(controller, box, method, std::nullopt, report).back();
  const int d = sys.state_dim(), m = sys.input_dim();
  Matrix AB(d, d + m);
  AB << sys.A, sys.B;
  Vector lo(d + m), hi(d + m);
  lo << box.lo, u.lo;
  hi << box.hi, u.hi;
  return affine_ibp(AB, Vector::Zero(d), BoxBounds(lo, hi));
}

inline double box_volume(const BoxBounds& box) {
  double v = 1.0;
  for (int i = 0; i < box.size(); ++i) v *= std::max(0.0, box.hi[i] - box.lo[i]);
  return v;
}

/// States after 0..T steps for `n` trajectories started uniformly in x0;
/// result[k] is d x n. Sample i draws from its own generator, so the result
/// does not depend on the thread count.
inline std::vector<Matrix> simulate(const LinearSystem& sys, const Network& controller, const BoxBounds& x0,
                                    int steps, int n, std::uint64_t seed) {
  const int d = sys.state_dim();
  Matrix x(d, n);
  for (int i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int j = 0; j < d; ++j) x(j, i) = x0.lo[j] + (x0.hi[j] - x0.lo[j]) * unit(rng);
  }
  std::vector<Matrix> out{x};
  constexpr int kChunk = 1024;
  const int chunks = (n + kChunk - 1) / kChunk;
  for (int k = 0; k < steps; ++k) {
    const Matrix& cur = out.back();
    Matrix next(d, n);
    parallel_for(static_cast<std::size_t>(chunks), [&](std::size_t c) {
      const int first = static_cast<int>(c) * kChunk;
      const int count = std::min(kChunk, n - first);
      const auto xs = cur.middleCols(first, count);
      next.middleCols(first, count) = sys.A * xs + sys.B * forward_batch(controller, xs);
    });
    out.push_back(std::move(next));
  }
  return out;
}

inline BoxBounds bounding_box(const Matrix& states) {
  return {states.rowwise().minCoeff(), states.rowwise().maxCoeff()};
}

/// Volume of the bounding box of simulated states after `step` steps.
inline double sampled_volume(const LinearSystem& sys, const Network& controller, const BoxBounds& x0,
                             int step, int n_samples, std::uint64_t seed = 0) {
  if (n_samples < 1) throw std::invalid_argument("sampled_volume: need at least one sample");
  return box_volume(bounding_box(simulate(sys, controller, x0, step, n_samples, seed).back()));
}

struct ReachTrace {
  BoundMethod method = BoundMethod::bern_ibp;
  std::vector<BoxBounds> boxes;        // T + 1, boxes[0] = x0
  std::vector<double> volumes;         // box volume per step
  std::vector<double> sampled_volumes; // sampled bounding-box volume per step
  std::vector<double> errors;          // (V_hat - V) / V
  std::size_t clipped_neurons = 0;
};

inline double volume_error(double estimate, double sampled) {
  if (sampled > 0.0) return (estimate - sampled) / sampled;
  return estimate > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

inline ReachTrace reach_horizon(const LinearSystem& sys, const Network& controller, const BoxBounds& x0,
                                int T, BoundMethod method = BoundMethod::bern_ibp, int n_samples = 10000,
                                std::uint64_t seed = 0) {
  if (T < 1) throw std::invalid_argument("reach_horizon: T must be >= 1");
  ReachTrace tr;
  tr.method = method;
  tr.boxes.push_back(x0);
  PropagationReport report;
  for (int k = 1; k <= T; ++k) {
    BoxBounds next = step_reach(sys, controller, tr.boxes.back(), method, &report);
    if (!next.finite()) throw std::runtime_error("reach_horizon: non-finite box at step " + std::to_string(k));
    tr.boxes.push_back(std::move(next));
  }
  tr.clipped_neurons = report.clipped_neurons;
  const auto states = n_samples > 0 ? simulate(sys, controller, x0, T, n_samples, seed) : std::vector<Matrix>{};
  for (int k = 0; k <= T; ++k) {
    tr.volumes.push_back(box_volume(tr.boxes[static_cast<std::size_t>(k)]));
    const double v = states.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : box_volume(bounding_box(states[static_cast<std::size_t>(k)]));
    tr.sampled_volumes.push_back(v);
    tr.errors.push_back(volume_error(tr.volumes.back(), v));
  }
  return tr;
}

/// Columns: step, lo_0..lo_{d-1}, hi_0..hi_{d-1}, volume, sampled_volume, error
inline void write_trace_csv(std::ostream& out, const ReachTrace& tr) {
  const int d = tr.boxes.front().size();
  out << "step";
  for (int j = 0; j < d; ++j) out << ",lo_" << j;
  for (int j = 0; j < d; ++j) out << ",hi_" << j;
  out << ",volume,sampled_volume,error\n";
  const auto old = out.precision(17);
  for (std::size_t k = 0; k < tr.boxes.size(); ++k) {
    out << k;
    for (int j = 0; j < d; ++j) out << ',' << tr.boxes[k].lo[j];
    for (int j = 0; j < d; ++j) out << ',' << tr.boxes[k].hi[j];
    out << ',' << tr.volumes[k] << ',' << tr.sampled_volumes[k] << ',' << tr.errors[k] << '\n';
  }
  out.precision(old);
}

namespace detail {

inline Matrix json_matrix(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].empty() || !j[key][0].is_array())
    throw std::invalid_argument("system: '" + key + "' must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j[key].size());
  const auto cols = static_cast<Eigen::Index>(j[key][0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[key][static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw std::invalid_argument("system: '" + key + "' has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline BoxBounds json_box(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].contains("lo") || !j[key].contains("hi"))
    throw std::invalid_argument("system: '" + key + "' needs lo and hi arrays");
  const auto lo = j[key]["lo"].get<std::vector<double>>();
  const auto hi = j[key]["hi"].get<std::vector<double>>();
  if (lo.size() != hi.size()) throw std::invalid_argument("system: '" + key + "' lo/hi size mismatch");
  return {Eigen::Map<const Vector>(lo.data(), static_cast<Eigen::Index>(lo.size())),
          Eigen::Map<const Vector>(hi.data(), static_cast<Eigen::Index>(hi.size()))};
}

}  // namespace detail

/// JSON system description:
///   {"name": s, "A": [[..]], "B": [[..]], "x0": {"lo": [..], "hi": [..]},
///    "T": 6, "gain": [[..]] (optional), "controller_domain": {"lo", "hi"} (optional)}
inline LinearSystem system_from_json(const nlohmann::json& j) {
  LinearSystem sys;
  try {
    sys.name = j.value("name", std::string("system"));
    sys.A = detail::json_matrix(j, "A");
    sys.B = detail::json_matrix(j, "B");
    sys.x0 = detail::json_box(j, "x0");
    sys.horizon = j.value("T", 6);
    if (j.contains("gain")) sys.gain = detail::json_matrix(j, "gain");
    if (j.contains("controller_domain")) sys.controller_domain = detail::json_box(j, "controller_domain");
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("system: ") + e.what());
  }
  sys.validate();
  return sys;
}

inline LinearSystem load_system(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open system file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("system file '" + path + "': " + e.what());
  }
  return system_from_json(j);
}

/// `axes` decoupled discrete double integrators (position, velocity) with
/// time step dt and a stabilizing PD gain.
inline LinearSystem double_integrators(int axes, double dt, const std::string& name) {
  const int d = 2 * axes;
  LinearSystem sys;
  sys.name = name;
  sys.A = Matrix::Identity(d, d);
  sys.B = Matrix::Zero(d, axes);
  sys.gain = Matrix::Zero(axes, d);
  for (int a = 0; a < axes; ++a) {
    sys.A(a, axes + a) = dt;
    sys.B(a, a) = 0.5 * dt * dt;
    sys.B(axes + a, a) = dt;
    sys.gain(a, a) = 4.0;
    sys.gain(a, axes + a) = 4.0;
  }
  sys.x0 = {Vector::Constant(d, 0.4), Vector::Constant(d, 0.6)};
  sys.controller_domain = {Vector::Constant(d, -1.0), Vector::Constant(d, 1.0)};
  sys.horizon = 6;
  return sys;
}

inline LinearSystem builtin_system(const std::string& name) {
  if (name == "double-integrator-2d") return double_integrators(1, 0.1, name);
  if (name == "stable-4d") {
    LinearSystem sys = double_integrators(2, 0.1, name);
    sys.A(0, 1) = 0.02;  // weak coupling between the two axes
    return sys;
  }
  if (name == "stable-6d") return double_integrators(3, 0.1, name);
  throw std::invalid_argument("unknown built-in system '" + name +
                              "' (expected double-integrator-2d, stable-4d or stable-6d)");
}

/// Fits a Bernstein controller to the system's reference feedback -K x on
/// uniform samples of the controller domain.
inline Network train_controller(const LinearSystem& sys, int order, int hidden, std::uint64_t seed,
                                int epochs = 60, int samples = 2000) {
  if (sys.gain.size() == 0) throw std::invalid_argument("train_controller: system has no reference gain");
  const BoxBounds dom = sys.controller_domain.size() ? sys.controller_domain : sys.x0;
  Network net = init({LayerSpec::affine(hidden), LayerSpec::bern(order), LayerSpec::affine(hidden),
                      LayerSpec::bern(order), LayerSpec::affine(sys.input_dim())},
                     dom, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Matrix X(sys.state_dim(), samples);
  for (int s = 0; s < samples; ++s)
    for (int j = 0; j < sys.state_dim(); ++j) X(j, s) = dom.lo[j] + (dom.hi[j] - dom.lo[j]) * unit(rng);
  const Matrix Y = -sys.gain * X;
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.seed = seed;
  fit_regression(net, X, Y, cfg);
  return net;
}

}  // namespace bernnet
