// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "qmlhfl/errors.hpp"
#include "qmlhfl/quantizer.hpp"
#include "qmlhfl/rng.hpp"

namespace qmlhfl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stream tags for the config-level random draws.
constexpr std::uint64_t kTaskStream = 0x7A5C;
constexpr std::uint64_t kPoolStream = 0x9001;
constexpr std::uint64_t kSplitStream = 0x5B1F;
constexpr std::uint64_t kPartitionStream = 0xDA7A;
constexpr std::uint64_t kFrequencyStream = 0xF4E0;
constexpr std::uint64_t kMeasureStream = 0x3EA5;
constexpr std::uint64_t kSigmaStream = 0x5163;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ParamVector starting_model(const RunConfig& config, const Task& task) {
  return task.initial_model(config.seed, config.task.init_scale);
}

RunMetrics run_engine(const RunConfig& resolved, const PreparedTask& prepared, const Topology& topology,
                      const std::vector<int>& taus, std::span<const QuantizerSpec> quantizers, double latency) {
  RunOptions opt;
  opt.learning_rate = resolved.learning_rate;
  opt.weighted = resolved.weighted;
  opt.seed = resolved.seed;
  opt.batch_size = resolved.batch_size;
  opt.initial_model = starting_model(resolved, prepared.task);
  opt.round_latency = latency;
  opt.test_set = prepared.test_set;
  return run(prepared.task, topology, Schedule{taus, resolved.schedule.global_rounds}, quantizers, opt);
}

// Surfaces inner-module errors with the config context they came from.
template <typename F>
auto with_context(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    throw Error(e.code(), std::string(what) + ": " + e.what());
  }
}

}  // namespace

PreparedTask build_task(const RunConfig& config) {
  return with_context("task", [&] {
    const auto& k = config.task;
    const int devices = config.topology.num_devices();
    if (k.kind == TaskKind::kQuadratic) {
      RandomStream rng(derive_seed(config.seed, {kTaskStream}));
      return PreparedTask{
          make_random_quadratic_task(devices, k.dimension, k.anchor_std, k.size_lo, k.size_hi, k.noise_std, rng), {}};
    }
    LabeledPool pool;
    if (!k.csv_path.empty()) {
      pool = load_pool_csv(k.csv_path);
    } else {
      RandomStream rng(derive_seed(config.seed, {kPoolStream}));
      pool = make_synthetic_pool(k.num_classes, k.feature_dim, k.per_class, k.separation, rng);
    }
    RandomStream split_rng(derive_seed(config.seed, {kSplitStream}));
    auto [train, test] = split_pool(pool, k.test_fraction, split_rng);
    RandomStream part_rng(derive_seed(config.seed, {kPartitionStream}));
    auto datasets = partition(train, config.topology, k.partition_case, k.size_lo, k.size_hi, part_rng);
    Task task = k.kind == TaskKind::kLogistic ? Task::logistic(std::move(datasets), train.num_classes)
                                              : Task::tiny_mlp(std::move(datasets), train.num_classes, k.hidden_units);
    return PreparedTask{std::move(task), std::move(test.samples)};
  });
}

RunConfig resolve_config(RunConfig config, const Task& task) {
  auto& lat = config.latency;
  lat.global_rounds = config.schedule.global_rounds;
  if (config.frequency_range) {
    RandomStream rng(derive_seed(config.seed, {kFrequencyStream}));
    lat.frequencies.clear();
    for (int i = 0; i < config.topology.num_devices(); ++i) {
      lat.frequencies.push_back(rng.uniform(config.frequency_range->first, config.frequency_range->second));
    }
    config.frequency_range.reset();
  }
  lat.resolve_model_bits(task.dimension());
  const int N = config.topology.num_layers();
  if (lat.edge_times.empty() && N > 1) {
    // Inter-edge times are expressed against the unscaled device hop.
    LatencyParams reference = lat;
    reference.kappa = 1.0;
    const double t_de = with_context("latency", [&] { return compute_tde(reference); });
    if (config.edge_time_multiples.empty()) {
      lat.edge_times = scaled_edge_times(N, t_de);
    } else {
      for (double m : config.edge_time_multiples) lat.edge_times.push_back(m * t_de);
    }
  }
  config.edge_time_multiples.clear();
  for (std::size_t n = 0; n < config.quantizers.size(); ++n) {
    auto& q = config.quantizers[n];
    if (!q.measured_q) {
      measure_q(q, static_cast<int>(task.dimension()), config.measure_trials,
                derive_seed(config.seed, {kMeasureStream, n}));
    }
  }
  return config;
}

TheoryReport evaluate_theory(const RunConfig& resolved, const Task& task, std::span<const int> taus) {
  return with_context("theory", [&] {
    TheoryReport r;
    for (const auto& q : resolved.quantizers) r.q.push_back(q.variance_constant());
    const ParamVector w0 = starting_model(resolved, task);
    if (resolved.theory.sigma2) {
      r.sigma2 = *resolved.theory.sigma2;
    } else if (task.kind() == TaskKind::kQuadratic) {
      r.sigma2 = quadratic_sigma2(task, resolved.batch_size);
    } else {
      r.sigma2 = estimate_sigma2(task, w0, resolved.batch_size, resolved.theory.sigma2_trials,
                                 derive_seed(resolved.seed, {kSigmaStream}));
    }
    const double f0 = global_loss_flat(task, w0, resolved.weighted);
    if (task.kind() == TaskKind::kQuadratic) {
      // F is a weighted mean of 1/2 |w - a_i|^2, minimized at the weighted anchor mean.
      ParamVector best(task.dimension(), 0.0);
      double total = 0.0;
      for (std::size_t i = 0; i < task.num_devices(); ++i) {
        const double p = resolved.weighted ? static_cast<double>(task.dataset_size(i)) : 1.0;
        total += p;
        for (std::size_t j = 0; j < best.size(); ++j) best[j] += p * task.centroid(i)[j];
      }
      for (double& v : best) v /= total;
      r.gap0 = std::max(0.0, f0 - global_loss_flat(task, best, resolved.weighted));
    } else {
      r.gap0 = f0;  // losses are non-negative, so F(w0) bounds the gap
    }
    TheoryParams params;
    params.lipschitz = resolved.theory.lipschitz;
    params.sigma2 = r.sigma2;
    params.mu = resolved.learning_rate;
    params.gap0 = r.gap0;
    params.q = r.q;
    params.topology = resolved.topology;
    params.taus.assign(taus.begin(), taus.end());
    r.condition_lhs = condition_lhs(params);
    r.condition_holds = r.condition_lhs >= 0.0;
    r.max_feasible_mu = max_feasible_mu(params);
    r.bound = rate_bound(params, resolved.schedule.global_rounds);
    return r;
  });
}

ObjectiveSpec objective_spec(const RunConfig& resolved) {
  return with_context("optimize", [&] {
    std::vector<double> q;
    for (const auto& spec : resolved.quantizers) q.push_back(spec.variance_constant());
    const double alpha = resolved.optimize ? resolved.optimize->alpha : 0.5;
    ObjectiveSpec spec = make_objective_spec(resolved.topology, std::move(q), resolved.latency, alpha);
    if (resolved.optimize) {
      spec.speed_scale = resolved.optimize->speed_scale;
      spec.error_scale = resolved.optimize->error_scale;
    }
    spec.validate();
    return spec;
  });
}

ExperimentResult run_experiment(const RunConfig& config) {
  const PreparedTask prepared = build_task(config);
  ExperimentResult out;
  out.resolved = resolve_config(config, prepared.task);
  auto& resolved = out.resolved;
  if (resolved.optimize) {
    const ObjectiveSpec spec = objective_spec(resolved);
    OptimizeOptions opt;
    opt.tolerance = resolved.optimize->tolerance;
    opt.max_iterations = resolved.optimize->max_iterations;
    opt.tau_cap = resolved.optimize->tau_cap;
    out.optimizer = with_context("optimize", [&] { return optimize(spec, opt); });
    resolved.schedule.taus = out.optimizer->taus_integer;
  }
  out.taus = resolved.schedule.taus;
  out.round_latency = with_context("latency", [&] { return round_latency(resolved.latency, out.taus); });
  if (resolved.latency.deadline > 0.0) out.deadline = deadline_ok(resolved.latency, out.taus);
  out.theory = evaluate_theory(resolved, prepared.task, out.taus);
  out.metrics = with_context("engine", [&] {
    return run_engine(resolved, prepared, resolved.topology, out.taus, resolved.quantizers, out.round_latency);
  });
  return out;
}

void write_metrics_csv(const RunMetrics& metrics, std::ostream& out) {
  out << "round,loss,grad_norm_sq,latency,cumulative_time\n";
  for (const auto& r : metrics.rounds) {
    out << r.round << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm_sq) << ','
        << format_double(r.latency) << ',' << format_double(r.cumulative_time) << '\n';
  }
}

json optimizer_to_json(const OptimizerResult& r) {
  return json{{"taus_continuous", r.taus_continuous},
              {"taus_integer", r.taus_integer},
              {"objective_continuous", r.objective_continuous},
              {"objective_integer", r.objective_integer},
              {"iterations", r.iterations},
              {"converged", r.converged},
              {"slack", r.slack},
              {"delta_history", r.delta_history}};
}

json summary_json(const ExperimentResult& r) {
  json s;
  s["taus"] = r.taus;
  s["round_latency"] = r.round_latency;
  if (r.deadline) s["deadline"] = {{"ok", r.deadline->ok}, {"slack", r.deadline->slack}};
  json fin{{"loss", r.metrics.final_loss}, {"grad_norm_sq", r.metrics.final_grad_norm_sq}};
  fin["accuracy"] = r.metrics.final_accuracy ? json(*r.metrics.final_accuracy) : json(nullptr);
  s["final"] = fin;
  s["mean_grad_norm_sq"] = r.metrics.mean_grad_norm_sq();
  const auto& t = r.theory;
  s["theory"] = {{"q", t.q},
                 {"sigma2", t.sigma2},
                 {"gap0", t.gap0},
                 {"condition_lhs", t.condition_lhs},
                 {"condition_holds", t.condition_holds},
                 {"max_feasible_mu", t.max_feasible_mu},
                 {"speed_term", t.bound.speed_term},
                 {"error_term", t.bound.error_term},
                 {"bound_total", t.bound.total}};
  s["optimizer"] = r.optimizer ? optimizer_to_json(*r.optimizer) : json(nullptr);
  s["config"] = to_json(r.resolved);
  return s;
}

void write_artifacts(const ExperimentResult& result, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string() + ": " + ec.message());
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("metrics.csv");
    write_metrics_csv(result.metrics, f);
  }
  {
    auto f = open("summary.json");
    f << summary_json(result).dump(2) << '\n';
  }
  {
    auto f = open("config.resolved.json");
    f << to_json(result.resolved).dump(2) << '\n';
  }
}

std::vector<DepthRow> compare_depths(const RunConfig& base, std::span<const int> depths) {
  const int N = base.topology.num_layers();
  if (!base.topology.fanouts()) throw Error(ErrorCode::kNotUniform, "compare_depths needs a uniform tree");
  const PreparedTask prepared = build_task(base);
  RunConfig resolved = resolve_config(base, prepared.task);
  if (resolved.optimize) {
    OptimizeOptions opt;
    opt.tolerance = resolved.optimize->tolerance;
    opt.max_iterations = resolved.optimize->max_iterations;
    opt.tau_cap = resolved.optimize->tau_cap;
    resolved.schedule.taus = optimize(objective_spec(resolved), opt).taus_integer;
  }
  std::vector<int> wanted(depths.begin(), depths.end());
  if (wanted.empty()) {
    for (int d = N; d >= 1; --d) wanted.push_back(d);
  }

  std::vector<DepthRow> rows;
  for (int layers : wanted) {
    if (layers < 1 || layers > N) throw Error(ErrorCode::kTooDeep, "depth " + std::to_string(layers) + " out of range");
    const int removed = N - layers;
    const Topology topo = removed == 0 ? resolved.topology : reduce_depth(resolved.topology, removed);
    const auto& base_taus = resolved.schedule.taus;
    std::vector<int> taus{1};
    for (int m = 0; m <= removed; ++m) taus[0] *= base_taus[m];
    taus.insert(taus.end(), base_taus.begin() + removed + 1, base_taus.end());
    const std::vector<QuantizerSpec> quantizers(resolved.quantizers.begin() + removed, resolved.quantizers.end());

    LatencyParams lat = resolved.latency;
    lat.edge_times.assign(resolved.latency.edge_times.end() - (layers - 1), resolved.latency.edge_times.end());
    const auto kappa = resolved.compare.kappas.find(layers);
    if (kappa != resolved.compare.kappas.end()) lat.kappa = kappa->second;

    DepthRow row;
    row.layers = layers;
    row.taus = taus;
    row.kappa = lat.kappa;
    row.round_latency = round_latency(lat, taus);
    RunConfig variant = resolved;
    variant.topology = topo;
    const RunMetrics m = run_engine(variant, prepared, topo, taus, quantizers, row.round_latency);
    const bool use_loss = resolved.compare.metric == "loss";
    auto value = [&](double loss, double grad) { return use_loss ? loss : grad; };
    for (const auto& r : m.rounds) {
      if (value(r.loss, r.grad_norm_sq) <= resolved.compare.threshold) {
        row.rounds_to_threshold = r.round;
        break;
      }
    }
    if (!row.rounds_to_threshold && value(m.final_loss, m.final_grad_norm_sq) <= resolved.compare.threshold) {
      row.rounds_to_threshold = static_cast<int>(m.rounds.size());
    }
    if (row.rounds_to_threshold) row.time_to_threshold = *row.rounds_to_threshold * row.round_latency;
    row.final_loss = m.final_loss;
    row.final_grad_norm_sq = m.final_grad_norm_sq;
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_depth_csv(std::span<const DepthRow> rows, std::ostream& out) {
  out << "layers,taus,kappa,round_latency,rounds_to_threshold,time_to_threshold,final_loss,final_grad_norm_sq\n";
  for (const auto& r : rows) {
    std::string taus;
    for (std::size_t i = 0; i < r.taus.size(); ++i) taus += (i ? " " : "") + std::to_string(r.taus[i]);
    out << r.layers << ',' << taus << ',' << format_double(r.kappa) << ',' << format_double(r.round_latency) << ','
        << (r.rounds_to_threshold ? std::to_string(*r.rounds_to_threshold) : "") << ','
        << (r.time_to_threshold ? format_double(*r.time_to_threshold) : "") << ',' << format_double(r.final_loss)
        << ',' << format_double(r.final_grad_norm_sq) << '\n';
  }
}

}  // namespace qmlhfl
