#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "bernnet/bernnet.hpp"

using namespace bernnet;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
};

struct DataArgs {
  std::string data;
  std::string labels;
  int limit = 0;

  void add(CLI::App* cmd, const std::string& prefix = "", bool required = true) {
    auto* opt = cmd->add_option("--" + prefix + "data", data,
                                "CSV file, IDX image file (with --" + prefix + "labels) or 'two-moons'");
    if (required) opt->required();
    cmd->add_option("--" + prefix + "labels", labels, "IDX label file");
    cmd->add_option("--" + prefix + "limit", limit, "Use only the first N samples")->check(CLI::NonNegativeNumber);
  }

  [[nodiscard]] Dataset load(std::uint64_t seed) const {
    Dataset ds;
    if (data == "two-moons")
      ds = make_two_moons(limit > 0 ? limit : 1000, 0.1, seed);
    else if (!labels.empty())
      ds = load_idx(resolve_data_path(data), resolve_data_path(labels));
    else
      ds = load_csv(resolve_data_path(data));
    return limit > 0 ? ds.slice(0, limit) : ds;
  }
};

std::vector<int> parse_widths(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    int w = 0;
    try {
      w = std::stoi(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size() || w < 1) throw CLI::ValidationError("--arch", "expected comma-separated positive widths");
    out.push_back(w);
  }
  if (out.empty()) throw CLI::ValidationError("--arch", "empty architecture");
  return out;
}

void warn_clipping(std::size_t clipped, const Globals& g) {
  static bool warned = false;
  if (clipped == 0 || warned || g.quiet) return;
  warned = true;
  std::cerr << "warning: " << clipped
            << " neuron queries left their stored domain and were clipped; consider refreshing bounds\n";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  DataArgs data, test;
  std::string config, out, metrics, arch = "20,20,10", regime;
  int order = 4;
  double domain_lo = 0.0, domain_hi = 1.0;
  TrainConfig cfg;
  std::map<std::string, CLI::Option*> flags;
};

void apply_config(TrainConfig& cfg, TrainArgs& a, const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "epochs", "batch_size", "learning_rate", "lr_decay", "decay_start", "warmup_epochs", "ramp_epochs",
      "lambda_max", "epsilon", "epsilon_ramp_epochs", "regime", "pgd_steps", "probe_size", "arch", "order",
      "domain_lo", "domain_hi"};
  if (!j.is_object()) throw std::runtime_error("config: expected a flat JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw std::runtime_error("config: unknown key '" + key + "'");
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key) && !(a.flags.contains(key) && a.flags[key]->count() > 0))
      dst = j[key].get<std::remove_reference_t<decltype(dst)>>();
  };
  get("epochs", cfg.epochs);
  get("batch_size", cfg.batch_size);
  get("learning_rate", cfg.learning_rate);
  get("lr_decay", cfg.lr_decay);
  get("decay_start", cfg.decay_start);
  get("warmup_epochs", cfg.warmup_epochs);
  get("ramp_epochs", cfg.ramp_epochs);
  get("lambda_max", cfg.lambda_max);
  get("epsilon", cfg.epsilon);
  get("epsilon_ramp_epochs", cfg.epsilon_ramp_epochs);
  get("pgd_steps", cfg.pgd_steps);
  get("probe_size", cfg.probe_size);
  get("regime", a.regime);
  get("arch", a.arch);
  get("order", a.order);
  get("domain_lo", a.domain_lo);
  get("domain_hi", a.domain_hi);
}

void add_train(CLI::App& app, TrainArgs& a, const Globals& g, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("train", "Train a network");
  a.data.add(cmd);
  a.test.add(cmd, "test-", false);
  cmd->add_option("--config", a.config, "Flat JSON config; flags override its values");
  a.flags["regime"] = cmd->add_option("--regime", a.regime, "plain | pgd | certified")
                         ->check(CLI::IsMember({"plain", "pgd", "certified"}));
  a.flags["arch"] = cmd->add_option("--arch", a.arch, "Affine widths, the last one being the class count");
  a.flags["order"] = cmd->add_option("--order", a.order, "Bernstein order")->check(CLI::Range(1, kMaxOrder));
  a.flags["epochs"] = cmd->add_option("--epochs", a.cfg.epochs);
  a.flags["batch_size"] = cmd->add_option("--batch-size", a.cfg.batch_size);
  a.flags["learning_rate"] = cmd->add_option("--lr", a.cfg.learning_rate);
  a.flags["epsilon"] = cmd->add_option("--epsilon", a.cfg.epsilon, "Training perturbation radius");
  a.flags["lambda_max"] = cmd->add_option("--lambda-max", a.cfg.lambda_max);
  a.flags["warmup_epochs"] = cmd->add_option("--warmup-epochs", a.cfg.warmup_epochs);
  a.flags["pgd_steps"] = cmd->add_option("--pgd-steps", a.cfg.pgd_steps);
  a.flags["domain_lo"] = cmd->add_option("--domain-lo", a.domain_lo, "Input domain lower bound (all features)");
  a.flags["domain_hi"] = cmd->add_option("--domain-hi", a.domain_hi, "Input domain upper bound (all features)");
  cmd->add_option("--out", a.out, "Model checkpoint path")->required();
  cmd->add_option("--metrics", a.metrics, "Per-epoch metrics CSV");
  run = [&a, &g] {
    if (!a.config.empty()) {
      std::ifstream in(a.config);
      if (!in) throw std::runtime_error("cannot open config '" + a.config + "'");
      apply_config(a.cfg, a, nlohmann::json::parse(in));
    }
    a.cfg.regime = a.regime.empty() ? Regime::plain : parse_regime(a.regime);
    a.cfg.seed = g.seed;
    a.cfg.validate();

    const Dataset train_set = a.data.load(g.seed);
    std::optional<Dataset> test_set;
    if (!a.test.data.empty()) test_set = a.test.load(g.seed + 1);
    const auto widths = parse_widths(a.arch);
    if (widths.back() != train_set.num_classes)
      throw std::runtime_error("--arch ends in " + std::to_string(widths.back()) + " outputs but the data has " +
                               std::to_string(train_set.num_classes) + " classes");
    std::vector<LayerSpec> arch;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      arch.push_back(LayerSpec::affine(widths[i]));
      if (i + 1 < widths.size()) arch.push_back(LayerSpec::bern(a.order));
    }
    const int d = train_set.features();
    Network net = init(arch, {Vector::Constant(d, a.domain_lo), Vector::Constant(d, a.domain_hi)}, g.seed);
    const auto result = train(net, train_set, test_set ? &*test_set : nullptr, a.cfg,
                              [&](const EpochMetrics& m) {
                                if (g.quiet) return;
                                std::cerr << "epoch " << m.epoch << " loss " << m.loss << " train_acc " << m.train_acc;
                                if (!std::isnan(m.test_acc)) std::cerr << " test_acc " << m.test_acc;
                                if (!std::isnan(m.cert_acc)) std::cerr << " cert_acc " << m.cert_acc;
                                std::cerr << '\n';
                              });
    save_model(net, a.out);
    if (!a.metrics.empty()) {
      auto out = open_out(a.metrics);
      write_metrics_csv(out, result.metrics);
    }
    if (!g.quiet) std::cout << "saved " << a.out << " after " << result.steps << " steps\n";
  };
}

// ---- certify / compare-bounds -------------------------------------------------

struct CertifyArgs {
  std::string model, method = "bern", csv, json;
  DataArgs data;
  std::vector<double> eps{0.0};
  int pgd_steps = 0;
};

void add_certify(CLI::App& app, CertifyArgs& a, const Globals& g, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("certify", "Certified accuracy over a dataset for a list of epsilons");
  cmd->add_option("--model", a.model)->required();
  a.data.add(cmd);
  cmd->add_option("--eps", a.eps, "Perturbation radii")->delimiter(',')->check(CLI::NonNegativeNumber);
  cmd->add_option("--method", a.method)->check(CLI::IsMember({"bern", "naive"}));
  cmd->add_option("--csv", a.csv, "Per-sample CSV output");
  cmd->add_option("--json", a.json, "Summary JSON output");
  cmd->add_option("--pgd-steps", a.pgd_steps, "Also report the PGD upper bound with this many steps");
  run = [&a, &g] {
    const Network net = load_model(a.model);
    const Dataset ds = a.data.load(g.seed);
    const BoundMethod method = a.method == "bern" ? BoundMethod::bern_ibp : BoundMethod::naive_ibp;
    std::optional<std::ofstream> csv;
    if (!a.csv.empty()) {
      csv = open_out(a.csv);
      *csv << "epsilon,sample_id,label,prediction,margin,verdict,time\n";
      csv->precision(17);
    }
    nlohmann::json summary = nlohmann::json::array();
    for (double eps : a.eps) {
      const auto rep = certified_accuracy(net, ds, eps, method);
      warn_clipping(rep.clipped_neurons, g);
      std::optional<double> ub;
      if (a.pgd_steps > 0) ub = pgd_upper_bound_accuracy(net, ds, eps, a.pgd_steps);
      summary.push_back(summary_json(rep, ub));
      if (csv)
        for (std::size_t s = 0; s < rep.samples.size(); ++s) {
          const auto& r = rep.samples[s];
          *csv << eps << ',' << s << ',' << r.label << ',' << r.prediction << ',' << r.result.margin << ','
               << to_string(r.result.verdict) << ',' << r.result.elapsed << '\n';
        }
      if (!g.quiet) {
        std::cout << "eps " << eps << " certified_accuracy " << rep.certified_accuracy;
        if (ub) std::cout << " pgd_upper_bound " << *ub;
        std::cout << '\n';
      }
    }
    if (!a.json.empty()) open_out(a.json) << summary.dump(2) << '\n';
  };
}

void add_compare(CLI::App& app, CertifyArgs& a, const Globals& g, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("compare-bounds", "Per-sample Bern-IBP vs naive IBP robust margins");
  cmd->add_option("--model", a.model)->required();
  a.data.add(cmd);
  cmd->add_option("--eps", a.eps, "Perturbation radii")->delimiter(',')->check(CLI::NonNegativeNumber);
  cmd->add_option("--csv", a.csv, "Per-sample CSV output (stdout if omitted)");
  run = [&a, &g] {
    const Network net = load_model(a.model);
    const Dataset ds = a.data.load(g.seed);
    std::optional<std::ofstream> file;
    if (!a.csv.empty()) file = open_out(a.csv);
    std::ostream& out = file ? *file : std::cout;
    bool header = true;
    for (double eps : a.eps) {
      const auto bern = certified_accuracy(net, ds, eps, BoundMethod::bern_ibp);
      const auto naive = certified_accuracy(net, ds, eps, BoundMethod::naive_ibp);
      warn_clipping(bern.clipped_neurons + naive.clipped_neurons, g);
      write_certification_csv(out, bern, naive, header);
      header = false;
      if (!g.quiet && file) {
        std::vector<double> gaps;
        for (std::size_t s = 0; s < bern.samples.size(); ++s)
          gaps.push_back(bern.samples[s].result.margin - naive.samples[s].result.margin);
        std::cout << "eps " << eps << " bern " << bern.certified_accuracy << " naive " << naive.certified_accuracy
                  << " median_gap " << percentile(gaps, 0.5) << '\n';
      }
    }
  };
}

// ---- reach ------------------------------------------------------------------

struct ReachArgs {
  std::string system, model, csv, method = "bern", save_controller;
  int T = 0, samples = 10000, order = 3, hidden = 16;
};

void add_reach(CLI::App& app, ReachArgs& a, const Globals& g, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("reach", "Reachable-set boxes of a linear system under a network controller");
  cmd->add_option("--system", a.system, "System JSON or a built-in name")->required();
  cmd->add_option("--model", a.model, "Controller model; fitted to the system's reference gain if omitted");
  cmd->add_option("--T", a.T, "Horizon (default: the system's)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--method", a.method)->check(CLI::IsMember({"bern", "naive"}));
  cmd->add_option("--samples", a.samples, "Simulated trajectories")->check(CLI::PositiveNumber);
  cmd->add_option("--order", a.order, "Order of a fitted controller")->check(CLI::Range(1, kMaxOrder));
  cmd->add_option("--hidden", a.hidden, "Hidden width of a fitted controller")->check(CLI::PositiveNumber);
  cmd->add_option("--save-controller", a.save_controller);
  cmd->add_option("--csv", a.csv, "Trace CSV output (stdout if omitted)");
  run = [&a, &g] {
    const LinearSystem sys =
        std::filesystem::exists(a.system) ? load_system(a.system) : builtin_system(a.system);
    const Network ctrl = a.model.empty() ? train_controller(sys, a.order, a.hidden, g.seed) : load_model(a.model);
    if (!a.save_controller.empty()) save_model(ctrl, a.save_controller);
    const auto tr = reach_horizon(sys, ctrl, sys.x0, a.T > 0 ? a.T : sys.horizon,
                                  a.method == "bern" ? BoundMethod::bern_ibp : BoundMethod::naive_ibp, a.samples,
                                  g.seed);
    warn_clipping(tr.clipped_neurons, g);
    if (a.csv.empty()) {
      write_trace_csv(std::cout, tr);
    } else {
      auto out = open_out(a.csv);
      write_trace_csv(out, tr);
    }
  };
}

// ---- eval / inspect ---------------------------------------------------------

struct ModelArgs {
  std::string model;
  DataArgs data;
};

void add_eval(CLI::App& app, ModelArgs& a, const Globals& g, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("eval", "Clean accuracy");
  cmd->add_option("--model", a.model)->required();
  a.data.add(cmd);
  run = [&a, &g] {
    const Network net = load_model(a.model);
    std::cout << "accuracy " << accuracy(net, a.data.load(g.seed)) << '\n';
  };
}

void add_inspect(CLI::App& app, ModelArgs& a, std::function<void()>& run) {
  auto* cmd = app.add_subcommand("inspect", "Summarize a model");
  cmd->add_option("--model", a.model)->required();
  run = [&a] {
    Network net = load_model(a.model);
    const auto& s = net.input_shape;
    std::cout << "input " << s.channels << 'x' << s.height << 'x' << s.width << " domain ["
              << net.input_domain.lo.minCoeff() << ", " << net.input_domain.hi.maxCoeff() << "]\n";
    std::size_t total = 0;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      std::cout << "layer " << i << ": ";
      std::visit(
          [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            std::size_t params = 0;
            if constexpr (std::is_same_v<T, AffineLayer>) {
              params = static_cast<std::size_t>(l.weight.size() + l.bias.size());
              std::cout << "affine " << l.weight.cols() << " -> " << l.weight.rows();
            } else if constexpr (std::is_same_v<T, Conv2dLayer>) {
              params = static_cast<std::size_t>(l.weight.size() + l.bias.size());
              std::cout << "conv2d " << l.out_channels << " channels, kernel " << l.kernel;
            } else {
              params = static_cast<std::size_t>(l.coeffs.size());
              std::cout << "bern order " << l.order << ", " << l.coeffs.rows() << " neurons, stored bounds ["
                        << l.stored_lo.minCoeff() << ", " << l.stored_hi.maxCoeff() << "]";
            }
            std::cout << ", " << params << " parameters\n";
            total += params;
          },
          net.layers[i]);
    }
    std::cout << "total parameters " << total << '\n';
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bernstein-polynomial networks: training, certification and reachability"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress output and warnings");

  TrainArgs train_args;
  CertifyArgs certify_args, compare_args;
  ReachArgs reach_args;
  ModelArgs eval_args, inspect_args;
  std::map<std::string, std::function<void()>> runners;
  add_train(app, train_args, g, runners["train"]);
  add_certify(app, certify_args, g, runners["certify"]);
  add_compare(app, compare_args, g, runners["compare-bounds"]);
  add_reach(app, reach_args, g, runners["reach"]);
  add_eval(app, eval_args, g, runners["eval"]);
  add_inspect(app, inspect_args, runners["inspect"]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return 1;
  }

  try {
    set_threads(g.threads);
    runners.at(app.get_subcommands().front()->get_name())();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
