// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "qmlhfl/errors.hpp"

namespace qmlhfl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::kConfigError, path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!ok.count(key)) fail(join(path, key), "unknown key");
  }
}

template <typename T>
T read(const json& obj, const std::string& path, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(join(path, key), std::string("wrong type (") + e.what() + ")");
  }
}

template <typename T>
T require(const json& obj, const std::string& path, const char* key) {
  if (!obj.contains(key)) fail(join(path, key), "missing required key");
  return read<T>(obj, path, key, T{});
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path out(p);
  return out.is_relative() && !base.empty() ? base / out : out;
}

fs::path existing_file(const fs::path& base, const std::string& p, const std::string& path) {
  const auto out = resolve(base, p);
  if (!fs::is_regular_file(out)) fail(path, "file not found: " + out.string());
  return out;
}

Topology parse_topology(const json& t, const fs::path& base, const std::string& path) {
  check_keys(t, path, {"fanouts", "layer_sizes", "parents", "file"});
  try {
    if (t.contains("file")) {
      const auto file = existing_file(base, read<std::string>(t, path, "file", ""), join(path, "file"));
      std::ifstream in(file);
      json inner;
      try {
        in >> inner;
      } catch (const json::exception& e) {
        fail(join(path, "file"), std::string("invalid JSON: ") + e.what());
      }
      return parse_topology(inner, file.parent_path(), join(path, "file"));
    }
    if (t.contains("fanouts")) {
      return Topology::from_fanouts(read<std::vector<int>>(t, path, "fanouts", {}));
    }
    const auto sizes = require<std::vector<int>>(t, path, "layer_sizes");
    const auto parents = require<std::vector<int>>(t, path, "parents");
    return Topology::build(sizes, parents);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigError) throw;
    fail(path, std::string(to_string(e.code())) + ": " + e.what());
  }
}

QuantizerSpec parse_quantizer(const json& q, const std::string& path) {
  check_keys(q, path, {"kind", "levels", "q"});
  const auto kind = require<std::string>(q, path, "kind");
  QuantizerSpec spec;
  if (kind == "identity") {
    spec = QuantizerSpec::identity();
  } else if (kind == "stochastic") {
    const int levels = require<int>(q, path, "levels");
    if (levels < 1) fail(join(path, "levels"), "must be at least 1");
    spec = QuantizerSpec::stochastic(levels);
    if (q.contains("q")) {
      const double v = read<double>(q, path, "q", 0.0);
      if (!(v >= 0.0)) fail(join(path, "q"), "must be non-negative");
      spec.measured_q = v;
    }
  } else {
    fail(join(path, "kind"), "expected \"identity\" or \"stochastic\", got \"" + kind + "\"");
  }
  return spec;
}

json quantizer_to_json(const QuantizerSpec& q) {
  if (q.is_identity()) return json{{"kind", "identity"}};
  json out{{"kind", "stochastic"}, {"levels", q.levels}};
  if (q.measured_q) out["q"] = *q.measured_q;
  return out;
}

}  // namespace

Topology topology_from_json(const json& doc, const fs::path& base_dir) { return parse_topology(doc, base_dir, "topology"); }

json topology_to_json(const Topology& topology) {
  json out{{"layer_sizes", topology.layer_sizes()}, {"parents", topology.flat_parents()}};
  return out;
}

RunConfig parse_config(const json& doc, const fs::path& base_dir) {
  check_keys(doc, "", {"seed", "topology", "task", "schedule", "optimize", "quantizers", "measure_q", "learning_rate",
                       "batch_size", "weighted", "latency", "theory", "compare_depths", "output_dir"});
  RunConfig c;
  if (!doc.contains("seed")) fail("seed", "missing required key");
  c.seed = read<std::uint64_t>(doc, "", "seed", 0);

  if (!doc.contains("topology")) fail("topology", "missing required key");
  c.topology = parse_topology(doc.at("topology"), base_dir, "topology");
  const int N = c.topology.num_layers();

  if (doc.contains("task")) {
    const auto& t = doc.at("task");
    check_keys(t, "task", {"kind", "size_range", "dimension", "anchor_std", "noise_std", "csv", "classes", "features",
                           "per_class", "separation", "partition_case", "test_fraction", "hidden_units", "init_scale"});
    auto& k = c.task;
    const auto kind = read<std::string>(t, "task", "kind", "quadratic");
    try {
      k.kind = task_kind_from_string(kind);
    } catch (const Error&) {
      fail("task.kind", "unknown task kind \"" + kind + "\"");
    }
    if (t.contains("size_range")) {
      const auto r = read<std::vector<int>>(t, "task", "size_range", {});
      if (r.size() != 2 || r[0] < 1 || r[1] < r[0]) fail("task.size_range", "expected [lo, hi] with 1 <= lo <= hi");
      k.size_lo = r[0];
      k.size_hi = r[1];
    }
    k.dimension = read<int>(t, "task", "dimension", k.dimension);
    k.anchor_std = read<double>(t, "task", "anchor_std", k.anchor_std);
    k.noise_std = read<double>(t, "task", "noise_std", k.noise_std);
    if (t.contains("csv")) {
      k.csv_path = existing_file(base_dir, read<std::string>(t, "task", "csv", ""), "task.csv").string();
    }
    k.num_classes = read<int>(t, "task", "classes", k.num_classes);
    k.feature_dim = read<int>(t, "task", "features", k.feature_dim);
    k.per_class = read<int>(t, "task", "per_class", k.per_class);
    k.separation = read<double>(t, "task", "separation", k.separation);
    k.partition_case = read<int>(t, "task", "partition_case", k.partition_case);
    k.test_fraction = read<double>(t, "task", "test_fraction", k.test_fraction);
    k.hidden_units = read<int>(t, "task", "hidden_units", k.hidden_units);
    k.init_scale = read<double>(t, "task", "init_scale", k.init_scale);
    if (k.dimension < 1) fail("task.dimension", "must be at least 1");
    if (k.partition_case < 1 || k.partition_case > 3) fail("task.partition_case", "must be 1, 2 or 3");
    if (!(k.test_fraction >= 0.0 && k.test_fraction < 1.0)) fail("task.test_fraction", "must lie in [0, 1)");
  }

  if (!doc.contains("schedule")) fail("schedule", "missing required key");
  {
    const auto& s = doc.at("schedule");
    check_keys(s, "schedule", {"taus", "rounds"});
    c.schedule.global_rounds = require<int>(s, "schedule", "rounds");
    c.schedule.taus = read<std::vector<int>>(s, "schedule", "taus", {});
    if (c.schedule.global_rounds < 1) fail("schedule.rounds", "must be at least 1");
  }
  if (doc.contains("optimize")) {
    const auto& o = doc.at("optimize");
    if (o.is_boolean()) {
      if (o.get<bool>()) c.optimize = OptimizeConfig{};
    } else if (!o.is_null()) {
      check_keys(o, "optimize", {"alpha", "tolerance", "max_iterations", "tau_cap", "speed_scale", "error_scale"});
      OptimizeConfig oc;
      oc.alpha = read<double>(o, "optimize", "alpha", oc.alpha);
      oc.tolerance = read<double>(o, "optimize", "tolerance", oc.tolerance);
      oc.max_iterations = read<int>(o, "optimize", "max_iterations", oc.max_iterations);
      if (o.contains("tau_cap")) oc.tau_cap = read<double>(o, "optimize", "tau_cap", 0.0);
      oc.speed_scale = read<double>(o, "optimize", "speed_scale", oc.speed_scale);
      oc.error_scale = read<double>(o, "optimize", "error_scale", oc.error_scale);
      if (!(oc.alpha >= 0.0 && oc.alpha <= 1.0)) fail("optimize.alpha", "must lie in [0, 1]");
      c.optimize = oc;
    }
  }
  if (!c.optimize) {
    if (static_cast<int>(c.schedule.taus.size()) != N) {
      fail("schedule.taus", "expected " + std::to_string(N) + " entries (one per layer)");
    }
    for (int t : c.schedule.taus) {
      if (t < 1) fail("schedule.taus", "every tau must be at least 1");
    }
  }

  if (doc.contains("quantizers")) {
    const auto& qs = doc.at("quantizers");
    if (!qs.is_array()) fail("quantizers", "expected an array");
    if (static_cast<int>(qs.size()) != N) fail("quantizers", "expected " + std::to_string(N) + " entries (one per layer)");
    for (std::size_t i = 0; i < qs.size(); ++i) c.quantizers.push_back(parse_quantizer(qs[i], "quantizers[" + std::to_string(i) + "]"));
  } else {
    c.quantizers.assign(N, QuantizerSpec::identity());
  }
  if (doc.contains("measure_q")) {
    check_keys(doc.at("measure_q"), "measure_q", {"trials"});
    c.measure_trials = read<int>(doc.at("measure_q"), "measure_q", "trials", c.measure_trials);
    if (c.measure_trials < 1) fail("measure_q.trials", "must be at least 1");
  }
  c.learning_rate = read<double>(doc, "", "learning_rate", c.learning_rate);
  if (!(c.learning_rate > 0.0)) fail("learning_rate", "must be positive");
  c.batch_size = read<std::size_t>(doc, "", "batch_size", c.batch_size);
  c.weighted = read<bool>(doc, "", "weighted", c.weighted);

  if (doc.contains("latency")) {
    const auto& l = doc.at("latency");
    check_keys(l, "latency", {"cycles_per_sample", "frequencies", "frequency_range", "batch_size", "model_bits",
                              "bandwidth", "power", "channel_gain", "noise_power", "edge_times",
                              "edge_time_multiples", "kappa", "path_loss_exp", "deadline"});
    auto& p = c.latency;
    p.cycles_per_sample = read<double>(l, "latency", "cycles_per_sample", p.cycles_per_sample);
    p.frequencies = read<std::vector<double>>(l, "latency", "frequencies", p.frequencies);
    if (l.contains("frequency_range")) {
      const auto r = read<std::vector<double>>(l, "latency", "frequency_range", {});
      if (r.size() != 2 || !(r[0] > 0.0) || r[1] < r[0]) fail("latency.frequency_range", "expected [lo, hi] with 0 < lo <= hi");
      c.frequency_range = std::make_pair(r[0], r[1]);
    }
    p.batch_size = read<int>(l, "latency", "batch_size", p.batch_size);
    p.model_bits = read<double>(l, "latency", "model_bits", p.model_bits);
    p.bandwidth = read<double>(l, "latency", "bandwidth", p.bandwidth);
    p.power = read<double>(l, "latency", "power", p.power);
    p.channel_gain = read<double>(l, "latency", "channel_gain", p.channel_gain);
    p.noise_power = read<double>(l, "latency", "noise_power", p.noise_power);
    p.edge_times = read<std::vector<double>>(l, "latency", "edge_times", {});
    c.edge_time_multiples = read<std::vector<double>>(l, "latency", "edge_time_multiples", {});
    p.kappa = read<double>(l, "latency", "kappa", p.kappa);
    p.path_loss_exp = read<double>(l, "latency", "path_loss_exp", p.path_loss_exp);
    p.deadline = read<double>(l, "latency", "deadline", p.deadline);
    for (const char* key : {"cycles_per_sample", "bandwidth", "power", "channel_gain", "noise_power", "kappa"}) {
      if (l.contains(key) && !(l.at(key).get<double>() > 0.0)) fail(join("latency", key), "must be positive");
    }
    if (!p.edge_times.empty() && static_cast<int>(p.edge_times.size()) != N - 1) {
      fail("latency.edge_times", "expected " + std::to_string(N - 1) + " entries");
    }
    if (!c.edge_time_multiples.empty() && static_cast<int>(c.edge_time_multiples.size()) != N - 1) {
      fail("latency.edge_time_multiples", "expected " + std::to_string(N - 1) + " entries");
    }
  }
  c.latency.global_rounds = c.schedule.global_rounds;
  if (c.optimize && !(c.latency.deadline > 0.0)) fail("latency.deadline", "required (and positive) when optimizing");

  if (doc.contains("theory")) {
    const auto& t = doc.at("theory");
    check_keys(t, "theory", {"lipschitz", "sigma2", "sigma2_trials"});
    c.theory.lipschitz = read<double>(t, "theory", "lipschitz", c.theory.lipschitz);
    if (t.contains("sigma2")) c.theory.sigma2 = read<double>(t, "theory", "sigma2", 0.0);
    c.theory.sigma2_trials = read<int>(t, "theory", "sigma2_trials", c.theory.sigma2_trials);
    if (!(c.theory.lipschitz > 0.0)) fail("theory.lipschitz", "must be positive");
  }

  if (doc.contains("compare_depths")) {
    const auto& d = doc.at("compare_depths");
    check_keys(d, "compare_depths", {"depths", "kappas", "threshold", "metric"});
    c.compare.depths = read<std::vector<int>>(d, "compare_depths", "depths", {});
    for (int depth : c.compare.depths) {
      if (depth < 1 || depth > N) fail("compare_depths.depths", "each depth must lie in 1.." + std::to_string(N));
    }
    if (d.contains("kappas")) {
      const auto& k = d.at("kappas");
      if (!k.is_object()) fail("compare_depths.kappas", "expected an object mapping layer count to kappa");
      for (const auto& [key, value] : k.items()) {
        int depth = 0;
        try {
          depth = std::stoi(key);
        } catch (const std::exception&) {
          fail("compare_depths.kappas." + key, "key must be a layer count");
        }
        if (!value.is_number() || !(value.get<double>() > 0.0)) fail("compare_depths.kappas." + key, "must be positive");
        c.compare.kappas[depth] = value.get<double>();
      }
    }
    c.compare.threshold = read<double>(d, "compare_depths", "threshold", c.compare.threshold);
    c.compare.metric = read<std::string>(d, "compare_depths", "metric", c.compare.metric);
    if (c.compare.metric != "grad_norm_sq" && c.compare.metric != "loss") {
      fail("compare_depths.metric", "expected \"grad_norm_sq\" or \"loss\"");
    }
  }
  c.output_dir = resolve(base_dir, read<std::string>(doc, "", "output_dir", "out"));
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, path.string() + ": cannot open config");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

json to_json(const RunConfig& c) {
  json out;
  out["seed"] = c.seed;
  out["topology"] = topology_to_json(c.topology);
  const auto& k = c.task;
  json task{{"kind", to_string(k.kind)}, {"size_range", {k.size_lo, k.size_hi}}};
  if (k.kind == TaskKind::kQuadratic) {
    task["dimension"] = k.dimension;
    task["anchor_std"] = k.anchor_std;
    task["noise_std"] = k.noise_std;
  } else {
    if (!k.csv_path.empty()) {
      task["csv"] = k.csv_path;
    } else {
      task["classes"] = k.num_classes;
      task["features"] = k.feature_dim;
      task["per_class"] = k.per_class;
      task["separation"] = k.separation;
    }
    task["partition_case"] = k.partition_case;
    task["test_fraction"] = k.test_fraction;
    if (k.kind == TaskKind::kTinyMlp) {
      task["hidden_units"] = k.hidden_units;
      task["init_scale"] = k.init_scale;
    }
  }
  out["task"] = task;
  out["schedule"] = {{"taus", c.schedule.taus}, {"rounds", c.schedule.global_rounds}};
  if (c.optimize) {
    const auto& o = *c.optimize;
    json opt{{"alpha", o.alpha},
             {"tolerance", o.tolerance},
             {"max_iterations", o.max_iterations},
             {"speed_scale", o.speed_scale},
             {"error_scale", o.error_scale}};
    if (o.tau_cap) opt["tau_cap"] = *o.tau_cap;
    out["optimize"] = opt;
  }
  json qs = json::array();
  for (const auto& q : c.quantizers) qs.push_back(quantizer_to_json(q));
  out["quantizers"] = qs;
  out["measure_q"] = {{"trials", c.measure_trials}};
  out["learning_rate"] = c.learning_rate;
  out["batch_size"] = c.batch_size;
  out["weighted"] = c.weighted;
  const auto& p = c.latency;
  json lat{{"cycles_per_sample", p.cycles_per_sample},
           {"frequencies", p.frequencies},
           {"batch_size", p.batch_size},
           {"model_bits", p.model_bits},
           {"bandwidth", p.bandwidth},
           {"power", p.power},
           {"channel_gain", p.channel_gain},
           {"noise_power", p.noise_power},
           {"kappa", p.kappa},
           {"path_loss_exp", p.path_loss_exp},
           {"deadline", p.deadline}};
  if (!p.edge_times.empty() || c.edge_time_multiples.empty()) {
    lat["edge_times"] = p.edge_times;
  } else {
    lat["edge_time_multiples"] = c.edge_time_multiples;
  }
  out["latency"] = lat;
  json theory{{"lipschitz", c.theory.lipschitz}, {"sigma2_trials", c.theory.sigma2_trials}};
  if (c.theory.sigma2) theory["sigma2"] = *c.theory.sigma2;
  out["theory"] = theory;
  json kap = json::object();
  for (const auto& [depth, kappa] : c.compare.kappas) kap[std::to_string(depth)] = kappa;
  out["compare_depths"] = {{"depths", c.compare.depths},
                           {"kappas", kap},
                           {"threshold", c.compare.threshold},
                           {"metric", c.compare.metric}};
  out["output_dir"] = c.output_dir.string();
  return out;
}

}  // namespace qmlhfl
