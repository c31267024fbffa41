#pragma once

// Optimizer, schedules and the training loop (plain, PGD-adversarial and
// certified regimes).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bernnet/attack.hpp"
#include "bernnet/certify.hpp"
#include "bernnet/dataset.hpp"
#include "bernnet/gradients.hpp"
#include "bernnet/parallel.hpp"

namespace bernnet {

class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(const Network& net) {
    for (auto t : parameters(const_cast<Network&>(net))) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void step(Network& net, GradientSet& grads, double lr) {
    auto params = parameters(net);
    auto gs = grads.tensors();
    if (params.size() != gs.size() || params.size() != m_.size())
      throw std::invalid_argument("Adam: gradient set does not match the network");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, t_);
    const double c2 = 1.0 - std::pow(beta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (params[k].size() != gs[k].size()) throw std::invalid_argument("Adam: tensor size mismatch");
      for (std::size_t i = 0; i < params[k].size(); ++i) {
        const double g = gs[k][i];
        m_[k][i] = beta1 * m_[k][i] + (1.0 - beta1) * g;
        v_[k][i] = beta2 * v_[k][i] + (1.0 - beta2) * g * g;
        params[k][i] -= lr * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps);
      }
    }
  }

  [[nodiscard]] long steps() const { return t_; }

 private:
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

enum class Regime { plain, pgd, certified };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::plain: return "plain";
    case Regime::pgd: return "pgd";
    case Regime::certified: return "certified";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "plain") return Regime::plain;
  if (s == "pgd") return Regime::pgd;
  if (s == "certified") return Regime::certified;
  throw std::invalid_argument("unknown regime '" + s + "' (expected plain, pgd or certified)");
}

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 5e-3;
  double lr_decay = 0.999;      // per epoch, after decay_start
  int decay_start = 50;
  int warmup_epochs = 10;       // certified regime: lambda stays 0
  int ramp_epochs = 0;          // lambda ramp length; 0 = until the last epoch
  double lambda_max = 0.5;
  double epsilon = 0.0;
  int epsilon_ramp_epochs = 0;  // certified regime: epsilon grows with lambda when > 0
  Regime regime = Regime::plain;
  int pgd_steps = 100;
  std::uint64_t seed = 0;
  int probe_size = 200;         // test samples certified per epoch (certified regime)
  bool verbose = false;

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw std::invalid_argument("train: epochs >= 0 and batch_size >= 1 required");
    if (!(lambda_max >= 0.0 && lambda_max <= 1.0)) throw std::invalid_argument("train: lambda_max must lie in [0, 1]");
    if (!(epsilon >= 0.0)) throw std::invalid_argument("train: epsilon must be >= 0");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train: learning_rate must be >= 0");
  }

  /// lambda at fractional epoch `progress` (epoch index + fraction done).
  [[nodiscard]] double lambda_at(double progress) const {
    if (regime != Regime::certified) return 0.0;
    const double len = ramp_epochs > 0 ? ramp_epochs : std::max(1, epochs - warmup_epochs);
    return lambda_max * std::clamp((progress - warmup_epochs) / len, 0.0, 1.0);
  }

  [[nodiscard]] double epsilon_at(double progress) const {
    if (regime != Regime::certified || epsilon_ramp_epochs <= 0) return epsilon;
    return epsilon * std::clamp((progress - warmup_epochs) / epsilon_ramp_epochs, 0.0, 1.0);
  }

  [[nodiscard]] double lr_at(int epoch) const {
    return learning_rate * std::pow(lr_decay, std::max(0, epoch - decay_start));
  }
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double cert_acc = std::numeric_limits<double>::quiet_NaN();
  double lambda = 0.0;
  double lr = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, int epoch, long step)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ": " + what) {}
};

inline void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& rows) {
  out << "epoch,loss,train_acc,test_acc,cert_acc,lambda,lr\n";
  const auto old = out.precision(10);
  auto cell = [&](double v) -> std::ostream& {
    if (!std::isnan(v)) out << v;
    return out;
  };
  for (const auto& r : rows) {
    out << r.epoch << ',';
    cell(r.loss) << ',';
    cell(r.train_acc) << ',';
    cell(r.test_acc) << ',';
    cell(r.cert_acc) << ',';
    cell(r.lambda) << ',';
    cell(r.lr) << '\n';
  }
  out.precision(old);
}

namespace detail {

inline void add_into(GradientSet& acc, const GradientSet& g) {
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    acc.layers[i].weight += g.layers[i].weight;
    acc.layers[i].bias += g.layers[i].bias;
    acc.layers[i].coeffs += g.layers[i].coeffs;
  }
}

// Splits a batch into fixed-size chunks, evaluates `loss_fn(chunk, grads)`
// (which returns the chunk's summed loss) on each in parallel and reduces in
// chunk order, so the result is independent of the thread count.
template <class LossFn>
double chunked_gradient(const Network& net, const Batch& batch, GradientSet& out, LossFn&& loss_fn) {
  constexpr Eigen::Index kChunk = 64;
  const Eigen::Index n = batch.inputs.cols();
  const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
  std::vector<GradientSet> grads(chunks, GradientSet::zeros_like(net));
  std::vector<double> losses(chunks, 0.0);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index first = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index count = std::min(kChunk, n - first);
    Batch part;
    part.inputs = batch.inputs.middleCols(first, count);
    if (!batch.labels.empty())
      part.labels.assign(batch.labels.begin() + first, batch.labels.begin() + first + count);
    if (batch.targets.size() > 0) part.targets = batch.targets.middleCols(first, count);
    losses[c] = loss_fn(part, grads[c]);
  });
  out = GradientSet::zeros_like(net);
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    add_into(out, grads[c]);
    total += losses[c];
  }
  const double inv = 1.0 / static_cast<double>(n);
  out *= inv;
  return total * inv;
}

}  // namespace detail

/// Mean-reduced loss and gradient for one step of the given regime.
inline double regime_gradient(const Network& net, const Batch& batch, const TrainConfig& cfg,
                              double lambda, double epsilon, GradientSet& grads) {
  switch (cfg.regime) {
    case Regime::plain:
    case Regime::pgd:
      return detail::chunked_gradient(net, batch, grads, [&](const Batch& part, GradientSet& g) {
        auto r = backward(net, part, LossKind::cross_entropy);
        const double k = static_cast<double>(part.inputs.cols());
        g = std::move(r.grads);
        g *= k;
        return r.loss * k;
      });
    case Regime::certified:
      return detail::chunked_gradient(net, batch, grads, [&](const Batch& part, GradientSet& g) {
        const double k = static_cast<double>(part.inputs.cols());
        const double l = certified_loss(net, part, epsilon, lambda, &g);
        g *= k;
        return l * k;
      });
  }
  return 0.0;
}

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  long steps = 0;
};

/// Trains `net` in place. Each step follows: refresh stored bounds, forward,
/// backward, Adam update. Bounds are refreshed once more after the last step.
inline TrainResult train(Network& net, const Dataset& train_set, const Dataset* test_set,
                         const TrainConfig& cfg,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (train_set.features() != net.input_size())
    throw std::invalid_argument("train: dataset has " + std::to_string(train_set.features()) +
                                " features, network expects " + std::to_string(net.input_size()));
  if (!train_set.inputs.allFinite()) throw std::invalid_argument("train: non-finite training inputs");

  std::mt19937_64 rng(cfg.seed);
  Adam opt(net);
  TrainResult result;
  std::vector<int> order(static_cast<std::size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);
  const int n_batches = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = cfg.lr_at(epoch);
    double loss_sum = 0.0;
    double lambda = 0.0;
    for (int b = 0; b < n_batches; ++b) {
      const int first = b * cfg.batch_size;
      const int count = std::min(cfg.batch_size, train_set.size() - first);
      const std::vector<int> idx(order.begin() + first, order.begin() + first + count);
      const Dataset part = train_set.select(idx);

      refresh_domain_bounds(net);
      Batch batch{part.inputs, part.labels, {}};
      if (cfg.regime == Regime::pgd && cfg.epsilon > 0.0)
        batch.inputs = pgd_attack(net, part.inputs, part.labels, {cfg.epsilon, cfg.pgd_steps, 0.0});
      const double progress = epoch + static_cast<double>(b) / n_batches;
      lambda = cfg.lambda_at(progress);
      GradientSet grads;
      double loss = 0.0;
      try {
        loss = regime_gradient(net, batch, cfg, lambda, cfg.epsilon_at(progress), grads);
      } catch (const NonFiniteError& e) {
        throw TrainingDiverged(e.what(), epoch, result.steps);
      }
      opt.step(net, grads, lr);
      ++result.steps;
      loss_sum += loss * count;
    }
    refresh_domain_bounds(net);

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / train_set.size();
    m.train_acc = accuracy(net, train_set);
    m.lambda = lambda;
    m.lr = lr;
    if (test_set && test_set->size() > 0) {
      m.test_acc = accuracy(net, *test_set);
      if (cfg.regime == Regime::certified && cfg.probe_size > 0)
        m.cert_acc = certified_accuracy(net, test_set->slice(0, cfg.probe_size), cfg.epsilon,
                                        BoundMethod::bern_ibp)
                         .certified_accuracy;
    }
    if (!std::isfinite(m.loss)) throw TrainingDiverged("non-finite epoch loss", epoch, result.steps);
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  refresh_domain_bounds(net);
  return result;
}

/// Mean-squared-error regression of net(x) onto `targets` (outputs x samples).
inline std::vector<double> fit_regression(Network& net, const Matrix& inputs, const Matrix& targets,
                                          const TrainConfig& cfg) {
  cfg.validate();
  if (inputs.cols() != targets.cols() || targets.rows() != net.output_size())
    throw std::invalid_argument("fit_regression: shape mismatch");
  std::mt19937_64 rng(cfg.seed);
  Adam opt(net);
  std::vector<int> order(static_cast<std::size_t>(inputs.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  const int n = static_cast<int>(inputs.cols());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (int first = 0; first < n; first += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, n - first);
      Batch batch;
      batch.inputs.resize(inputs.rows(), count);
      batch.targets.resize(targets.rows(), count);
      for (int s = 0; s < count; ++s) {
        batch.inputs.col(s) = inputs.col(order[static_cast<std::size_t>(first + s)]);
        batch.targets.col(s) = targets.col(order[static_cast<std::size_t>(first + s)]);
      }
      refresh_domain_bounds(net);
      auto r = backward(net, batch, LossKind::mean_squared_error);
      opt.step(net, r.grads, cfg.lr_at(epoch));
      total += r.loss * count;
    }
    losses.push_back(total / n);
  }
  refresh_domain_bounds(net);
  return losses;
}

}  // namespace bernnet
