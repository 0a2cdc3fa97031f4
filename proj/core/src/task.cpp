// SPDX-License-Identifier: Apache-2.0
#include "qmlhfl/task.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qmlhfl/errors.hpp"

namespace qmlhfl {

namespace {

std::size_t common_feature_dim(const std::vector<LocalDataset>& datasets) {
  if (datasets.empty()) throw Error(ErrorCode::kInvalidParams, "task needs at least one device");
  std::size_t dim = 0;
  bool seen = false;
  for (const auto& ds : datasets) {
    if (ds.samples.empty()) throw Error(ErrorCode::kInvalidParams, "every device needs at least one sample");
    for (const auto& s : ds.samples) {
      if (!seen) {
        dim = s.features.size();
        seen = true;
      } else if (s.features.size() != dim) {
        throw Error(ErrorCode::kDimensionMismatch, "samples disagree on feature dimension");
      }
    }
  }
  return dim;
}

// Numerically stable softmax in place.
void softmax(std::span<double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return m + std::log(sum);
}

}  // namespace

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kQuadratic: return "quadratic";
    case TaskKind::kLogistic: return "logistic";
    case TaskKind::kTinyMlp: return "tiny_mlp";
  }
  return "unknown";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "quadratic") return TaskKind::kQuadratic;
  if (name == "logistic") return TaskKind::kLogistic;
  if (name == "tiny_mlp") return TaskKind::kTinyMlp;
  throw Error(ErrorCode::kConfigError, "unknown task kind '" + name + "'");
}

Task Task::quadratic(std::vector<LocalDataset> datasets) {
  Task t;
  t.kind_ = TaskKind::kQuadratic;
  t.feature_dim_ = common_feature_dim(datasets);
  t.dimension_ = t.feature_dim_;
  for (const auto& ds : datasets) {
    ParamVector c(t.dimension_, 0.0);
    for (const auto& s : ds.samples) {
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += s.features[j];
    }
    for (double& v : c) v /= static_cast<double>(ds.size());
    t.centroids_.push_back(std::move(c));
  }
  t.datasets_ = std::move(datasets);
  return t;
}

Task Task::logistic(std::vector<LocalDataset> datasets, int num_classes) {
  if (num_classes < 2) throw Error(ErrorCode::kInvalidParams, "classification needs at least two classes");
  Task t;
  t.kind_ = TaskKind::kLogistic;
  t.feature_dim_ = common_feature_dim(datasets);
  t.num_classes_ = num_classes;
  t.dimension_ = static_cast<std::size_t>(num_classes) * (t.feature_dim_ + 1);
  t.datasets_ = std::move(datasets);
  return t;
}

Task Task::tiny_mlp(std::vector<LocalDataset> datasets, int num_classes, int hidden_units) {
  if (num_classes < 2) throw Error(ErrorCode::kInvalidParams, "classification needs at least two classes");
  if (hidden_units < 1 || hidden_units > 32) {
    throw Error(ErrorCode::kInvalidParams, "hidden layer must have between 1 and 32 units");
  }
  Task t;
  t.kind_ = TaskKind::kTinyMlp;
  t.feature_dim_ = common_feature_dim(datasets);
  t.num_classes_ = num_classes;
  t.hidden_ = hidden_units;
  const std::size_t H = static_cast<std::size_t>(hidden_units);
  const std::size_t K = static_cast<std::size_t>(num_classes);
  t.dimension_ = H * t.feature_dim_ + H + K * H + K;
  t.datasets_ = std::move(datasets);
  return t;
}

void Task::validate_device(std::size_t device) const {
  if (device >= datasets_.size()) {
    throw Error(ErrorCode::kUnknownDevice, "device " + std::to_string(device) + " does not exist");
  }
}

void Task::check_dimension(std::span<const double> w) const {
  if (w.size() != dimension_) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model has " + std::to_string(w.size()) + " entries, task expects " + std::to_string(dimension_));
  }
}

const LocalDataset& Task::dataset(std::size_t device) const {
  validate_device(device);
  return datasets_[device];
}

const ParamVector& Task::centroid(std::size_t device) const {
  validate_device(device);
  if (kind_ != TaskKind::kQuadratic) throw Error(ErrorCode::kInvalidParams, "centroids exist for quadratic tasks only");
  return centroids_[device];
}

double Task::sample_loss(std::size_t device, const Sample& s, std::span<const double> w) const {
  switch (kind_) {
    case TaskKind::kQuadratic: {
      const auto& a = centroids_[device];
      double dw = 0.0, dx = 0.0;
      for (std::size_t j = 0; j < dimension_; ++j) {
        dw += (w[j] - s.features[j]) * (w[j] - s.features[j]);
        dx += (s.features[j] - a[j]) * (s.features[j] - a[j]);
      }
      return 0.5 * (dw - dx);
    }
    case TaskKind::kLogistic: {
      const std::size_t F = feature_dim_, K = static_cast<std::size_t>(num_classes_);
      std::vector<double> z(K);
      for (std::size_t k = 0; k < K; ++k) {
        double acc = w[K * F + k];
        for (std::size_t j = 0; j < F; ++j) acc += w[k * F + j] * s.features[j];
        z[k] = acc;
      }
      return log_sum_exp(z) - z[static_cast<std::size_t>(s.label)];
    }
    case TaskKind::kTinyMlp: {
      const std::size_t F = feature_dim_, H = static_cast<std::size_t>(hidden_),
                        K = static_cast<std::size_t>(num_classes_);
      const double* W1 = w.data();
      const double* b1 = W1 + H * F;
      const double* W2 = b1 + H;
      const double* b2 = W2 + K * H;
      std::vector<double> h(H), z(K);
      for (std::size_t u = 0; u < H; ++u) {
        double acc = b1[u];
        for (std::size_t j = 0; j < F; ++j) acc += W1[u * F + j] * s.features[j];
        h[u] = std::tanh(acc);
      }
      for (std::size_t k = 0; k < K; ++k) {
        double acc = b2[k];
        for (std::size_t u = 0; u < H; ++u) acc += W2[k * H + u] * h[u];
        z[k] = acc;
      }
      return log_sum_exp(z) - z[static_cast<std::size_t>(s.label)];
    }
  }
  return 0.0;
}

void Task::add_sample_gradient(std::size_t /*device*/, const Sample& s, std::span<const double> w, double weight,
                               std::span<double> grad) const {
  switch (kind_) {
    case TaskKind::kQuadratic:
      for (std::size_t j = 0; j < dimension_; ++j) grad[j] += weight * (w[j] - s.features[j]);
      return;
    case TaskKind::kLogistic: {
      const std::size_t F = feature_dim_, K = static_cast<std::size_t>(num_classes_);
      std::vector<double> p(K);
      for (std::size_t k = 0; k < K; ++k) {
        double acc = w[K * F + k];
        for (std::size_t j = 0; j < F; ++j) acc += w[k * F + j] * s.features[j];
        p[k] = acc;
      }
      softmax(p);
      p[static_cast<std::size_t>(s.label)] -= 1.0;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < F; ++j) grad[k * F + j] += weight * p[k] * s.features[j];
        grad[K * F + k] += weight * p[k];
      }
      return;
    }
    case TaskKind::kTinyMlp: {
      const std::size_t F = feature_dim_, H = static_cast<std::size_t>(hidden_),
                        K = static_cast<std::size_t>(num_classes_);
      const double* W1 = w.data();
      const double* b1 = W1 + H * F;
      const double* W2 = b1 + H;
      const double* b2 = W2 + K * H;
      std::vector<double> h(H), p(K), dh(H, 0.0);
      for (std::size_t u = 0; u < H; ++u) {
        double acc = b1[u];
        for (std::size_t j = 0; j < F; ++j) acc += W1[u * F + j] * s.features[j];
        h[u] = std::tanh(acc);
      }
      for (std::size_t k = 0; k < K; ++k) {
        double acc = b2[k];
        for (std::size_t u = 0; u < H; ++u) acc += W2[k * H + u] * h[u];
        p[k] = acc;
      }
      softmax(p);
      p[static_cast<std::size_t>(s.label)] -= 1.0;
      double* gW1 = grad.data();
      double* gb1 = gW1 + H * F;
      double* gW2 = gb1 + H;
      double* gb2 = gW2 + K * H;
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t u = 0; u < H; ++u) {
          gW2[k * H + u] += weight * p[k] * h[u];
          dh[u] += p[k] * W2[k * H + u];
        }
        gb2[k] += weight * p[k];
      }
      for (std::size_t u = 0; u < H; ++u) {
        const double da = dh[u] * (1.0 - h[u] * h[u]);
        for (std::size_t j = 0; j < F; ++j) gW1[u * F + j] += weight * da * s.features[j];
        gb1[u] += weight * da;
      }
      return;
    }
  }
}

double Task::local_loss(std::size_t device, std::span<const double> w) const {
  validate_device(device);
  check_dimension(w);
  if (kind_ == TaskKind::kQuadratic) {
    // Closed form of the sample mean (the correction terms cancel exactly).
    const auto& a = centroids_[device];
    double acc = 0.0;
    for (std::size_t j = 0; j < dimension_; ++j) acc += (w[j] - a[j]) * (w[j] - a[j]);
    return 0.5 * acc;
  }
  double acc = 0.0;
  for (const auto& s : datasets_[device].samples) acc += sample_loss(device, s, w);
  return acc / static_cast<double>(datasets_[device].size());
}

ParamVector Task::local_gradient(std::size_t device, std::span<const double> w) const {
  validate_device(device);
  check_dimension(w);
  ParamVector g(dimension_, 0.0);
  if (kind_ == TaskKind::kQuadratic) {
    const auto& a = centroids_[device];
    for (std::size_t j = 0; j < dimension_; ++j) g[j] = w[j] - a[j];
    return g;
  }
  const double inv = 1.0 / static_cast<double>(datasets_[device].size());
  for (const auto& s : datasets_[device].samples) add_sample_gradient(device, s, w, inv, g);
  return g;
}

ParamVector Task::stochastic_gradient(std::size_t device, std::span<const double> w, std::size_t batch_size,
                                      RandomStream& rng) const {
  validate_device(device);
  check_dimension(w);
  const auto& ds = datasets_[device];
  if (batch_size == 0 || batch_size > ds.size()) {
    throw Error(ErrorCode::kBatchTooLarge, "batch of " + std::to_string(batch_size) + " from a dataset of " +
                                               std::to_string(ds.size()));
  }
  ParamVector g(dimension_, 0.0);
  const double inv = 1.0 / static_cast<double>(batch_size);
  if (batch_size == ds.size()) {
    for (const auto& s : ds.samples) add_sample_gradient(device, s, w, inv, g);
    return g;
  }
  // Partial Fisher-Yates over an index permutation.
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.index(ds.size() - k));
    std::swap(idx[k], idx[j]);
    add_sample_gradient(device, ds.samples[idx[k]], w, inv, g);
  }
  return g;
}

double Task::loss_on(std::span<const Sample> samples, std::span<const double> w) const {
  check_dimension(w);
  if (samples.empty()) return 0.0;
  if (kind_ == TaskKind::kQuadratic) throw Error(ErrorCode::kInvalidParams, "held-out loss needs a classification task");
  double acc = 0.0;
  for (const auto& s : samples) acc += sample_loss(0, s, w);
  return acc / static_cast<double>(samples.size());
}

int Task::predict(const Sample& s, std::span<const double> w) const {
  const std::size_t F = feature_dim_, K = static_cast<std::size_t>(num_classes_);
  std::vector<double> z(K);
  if (kind_ == TaskKind::kLogistic) {
    for (std::size_t k = 0; k < K; ++k) {
      double acc = w[K * F + k];
      for (std::size_t j = 0; j < F; ++j) acc += w[k * F + j] * s.features[j];
      z[k] = acc;
    }
  } else {
    const std::size_t H = static_cast<std::size_t>(hidden_);
    const double* W1 = w.data();
    const double* b1 = W1 + H * F;
    const double* W2 = b1 + H;
    const double* b2 = W2 + K * H;
    std::vector<double> h(H);
    for (std::size_t u = 0; u < H; ++u) {
      double acc = b1[u];
      for (std::size_t j = 0; j < F; ++j) acc += W1[u * F + j] * s.features[j];
      h[u] = std::tanh(acc);
    }
    for (std::size_t k = 0; k < K; ++k) {
      double acc = b2[k];
      for (std::size_t u = 0; u < H; ++u) acc += W2[k * H + u] * h[u];
      z[k] = acc;
    }
  }
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

double Task::accuracy_on(std::span<const Sample> samples, std::span<const double> w) const {
  check_dimension(w);
  if (kind_ == TaskKind::kQuadratic) throw Error(ErrorCode::kInvalidParams, "accuracy needs a classification task");
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& s : samples) hits += predict(s, w) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

ParamVector Task::initial_model(std::uint64_t seed, double scale) const {
  ParamVector w(dimension_, 0.0);
  if (kind_ == TaskKind::kTinyMlp) {
    RandomStream rng(derive_seed(seed, {0x1A17}));
    for (double& v : w) v = scale * rng.normal();
  }
  return w;
}

namespace {

// Weight of a node in the hierarchical average: device count or sample count.
std::vector<std::vector<double>> node_weights(const Task& task, const Topology& topology, bool weighted) {
  const int N = topology.num_layers();
  std::vector<std::vector<double>> weight(N + 1);
  weight[0].resize(topology.num_devices());
  for (int i = 0; i < topology.num_devices(); ++i) {
    weight[0][i] = weighted ? static_cast<double>(task.dataset_size(static_cast<std::size_t>(i))) : 1.0;
  }
  for (int n = 1; n <= N; ++n) {
    weight[n].assign(topology.layer_size(n), 0.0);
    for (int i = 0; i < topology.layer_size(n); ++i) {
      for (int c : topology.children({n, i})) weight[n][i] += weight[n - 1][c];
    }
  }
  return weight;
}

}  // namespace

double global_loss(const Task& task, const Topology& topology, std::span<const double> w, bool weighted) {
  if (static_cast<std::size_t>(topology.num_devices()) != task.num_devices()) {
    throw Error(ErrorCode::kDimensionMismatch, "topology and task disagree on the number of devices");
  }
  const int N = topology.num_layers();
  const auto weight = node_weights(task, topology, weighted);
  std::vector<double> below(topology.num_devices());
  for (int i = 0; i < topology.num_devices(); ++i) below[i] = task.local_loss(static_cast<std::size_t>(i), w);
  for (int n = 1; n <= N; ++n) {
    std::vector<double> here(topology.layer_size(n), 0.0);
    for (int i = 0; i < topology.layer_size(n); ++i) {
      for (int c : topology.children({n, i})) here[i] += weight[n - 1][c] / weight[n][i] * below[c];
    }
    below = std::move(here);
  }
  return below[0];
}

double global_loss_flat(const Task& task, std::span<const double> w, bool weighted) {
  double acc = 0.0, total = 0.0;
  for (std::size_t i = 0; i < task.num_devices(); ++i) {
    const double wt = weighted ? static_cast<double>(task.dataset_size(i)) : 1.0;
    acc += wt * task.local_loss(i, w);
    total += wt;
  }
  return acc / total;
}

ParamVector global_gradient(const Task& task, std::span<const double> w, bool weighted) {
  ParamVector g(task.dimension(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < task.num_devices(); ++i) total += weighted ? static_cast<double>(task.dataset_size(i)) : 1.0;
  for (std::size_t i = 0; i < task.num_devices(); ++i) {
    const double wt = (weighted ? static_cast<double>(task.dataset_size(i)) : 1.0) / total;
    const ParamVector gi = task.local_gradient(i, w);
    for (std::size_t j = 0; j < g.size(); ++j) g[j] += wt * gi[j];
  }
  return g;
}

Task make_quadratic_task(std::span<const ParamVector> anchors, int size_lo, int size_hi, double noise_std,
                         RandomStream& rng) {
  if (size_lo < 1 || size_hi < size_lo) throw Error(ErrorCode::kInvalidParams, "invalid dataset size range");
  std::vector<LocalDataset> datasets;
  for (const auto& a : anchors) {
    LocalDataset ds;
    const auto count = rng.integer(size_lo, size_hi);
    for (std::int64_t k = 0; k < count; ++k) {
      Sample s;
      s.features.resize(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) s.features[j] = a[j] + noise_std * rng.normal();
      ds.samples.push_back(std::move(s));
    }
    datasets.push_back(std::move(ds));
  }
  return Task::quadratic(std::move(datasets));
}

Task make_random_quadratic_task(int num_devices, int dimension, double anchor_std, int size_lo, int size_hi,
                                double noise_std, RandomStream& rng) {
  std::vector<ParamVector> anchors(static_cast<std::size_t>(num_devices), ParamVector(dimension));
  for (auto& a : anchors) {
    for (double& v : a) v = anchor_std * rng.normal();
  }
  return make_quadratic_task(anchors, size_lo, size_hi, noise_std, rng);
}

double quadratic_sigma2(const Task& task, std::size_t batch_size) {
  if (task.kind() != TaskKind::kQuadratic) throw Error(ErrorCode::kInvalidParams, "exact sigma^2 needs a quadratic task");
  ParamVector mean(task.dimension(), 0.0);
  for (std::size_t i = 0; i < task.num_devices(); ++i) {
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += task.centroid(i)[j];
  }
  for (double& v : mean) v /= static_cast<double>(task.num_devices());

  double worst = 0.0;
  for (std::size_t i = 0; i < task.num_devices(); ++i) {
    const auto& a = task.centroid(i);
    const auto& ds = task.dataset(i);
    const std::size_t D = ds.size();
    if (batch_size > D) throw Error(ErrorCode::kBatchTooLarge, "batch larger than a device dataset");
    double drift = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) drift += (a[j] - mean[j]) * (a[j] - mean[j]);
    double spread = 0.0;
    for (const auto& s : ds.samples) {
      for (std::size_t j = 0; j < a.size(); ++j) spread += (s.features[j] - a[j]) * (s.features[j] - a[j]);
    }
    spread /= static_cast<double>(D);
    const double b = static_cast<double>(batch_size == 0 ? D : batch_size);
    const double noise = D > 1 ? (static_cast<double>(D) - b) / (b * (static_cast<double>(D) - 1.0)) * spread : 0.0;
    worst = std::max(worst, drift + noise);
  }
  return worst;
}

double estimate_sigma2(const Task& task, std::span<const double> w0, std::size_t batch_size, int trials,
                       std::uint64_t seed) {
  const ParamVector full = global_gradient(task, w0, false);
  double worst = 0.0;
  for (std::size_t i = 0; i < task.num_devices(); ++i) {
    RandomStream rng(derive_seed(seed, {0x5161, i}));
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
      const ParamVector g = task.stochastic_gradient(i, w0, batch_size == 0 ? task.dataset_size(i) : batch_size, rng);
      for (std::size_t j = 0; j < g.size(); ++j) acc += (g[j] - full[j]) * (g[j] - full[j]);
    }
    worst = std::max(worst, acc / trials);
  }
  return worst;
}

LabeledPool make_synthetic_pool(int num_classes, int feature_dim, int per_class, double separation,
                                RandomStream& rng) {
  LabeledPool pool;
  pool.num_classes = num_classes;
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(feature_dim));
  for (auto& c : centers) {
    for (double& v : c) v = separation * rng.normal();
  }
  for (int k = 0; k < num_classes; ++k) {
    for (int m = 0; m < per_class; ++m) {
      Sample s;
      s.label = k;
      s.features.resize(feature_dim);
      for (int j = 0; j < feature_dim; ++j) s.features[j] = centers[k][j] + rng.normal();
      pool.samples.push_back(std::move(s));
    }
  }
  return pool;
}

LabeledPool load_pool_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open pool file " + path.string());
  LabeledPool pool;
  std::string line;
  std::size_t line_no = 0;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        cells.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (pool.samples.empty()) continue;  // header
      throw Error(ErrorCode::kIoError, path.string() + ":" + std::to_string(line_no) + ": non-numeric cell");
    }
    if (cells.size() < 2) throw Error(ErrorCode::kIoError, path.string() + ":" + std::to_string(line_no) + ": too few columns");
    Sample s;
    s.label = static_cast<int>(cells.back());
    if (s.label < 0 || static_cast<double>(s.label) != cells.back()) {
      throw Error(ErrorCode::kIoError, path.string() + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
    }
    cells.pop_back();
    s.features = std::move(cells);
    if (!pool.samples.empty() && s.features.size() != pool.samples.front().features.size()) {
      throw Error(ErrorCode::kIoError, path.string() + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    max_label = std::max(max_label, s.label);
    pool.samples.push_back(std::move(s));
  }
  pool.num_classes = max_label + 1;
  return pool;
}

std::pair<LabeledPool, LabeledPool> split_pool(const LabeledPool& pool, double test_fraction, RandomStream& rng) {
  std::vector<std::size_t> idx(pool.samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[rng.index(k)]);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
  LabeledPool train, test;
  train.num_classes = test.num_classes = pool.num_classes;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    (k < n_test ? test : train).samples.push_back(pool.samples[idx[k]]);
  }
  return {std::move(train), std::move(test)};
}

std::vector<LocalDataset> partition(const LabeledPool& pool, const Topology& topology, int heterogeneity_case,
                                    int size_lo, int size_hi, RandomStream& rng) {
  if (size_lo < 1 || size_hi < size_lo) throw Error(ErrorCode::kInvalidParams, "invalid dataset size range");
  int classes_per_device = 0;
  switch (heterogeneity_case) {
    case 1: classes_per_device = 2; break;
    case 2: classes_per_device = 6; break;
    case 3: classes_per_device = pool.num_classes; break;
    default: throw Error(ErrorCode::kInvalidParams, "heterogeneity case must be 1, 2 or 3");
  }
  if (pool.num_classes < classes_per_device) {
    throw Error(ErrorCode::kInsufficientPool, "pool has " + std::to_string(pool.num_classes) + " classes, case " +
                                                  std::to_string(heterogeneity_case) + " needs " +
                                                  std::to_string(classes_per_device));
  }
  if (size_lo < classes_per_device) {
    throw Error(ErrorCode::kInvalidParams, "minimum dataset size cannot cover every selected class");
  }
  std::vector<std::vector<std::size_t>> by_class(pool.num_classes);
  for (std::size_t k = 0; k < pool.samples.size(); ++k) by_class[pool.samples[k].label].push_back(k);

  std::vector<LocalDataset> out;
  for (int dev = 0; dev < topology.num_devices(); ++dev) {
    std::vector<int> classes(pool.num_classes);
    std::iota(classes.begin(), classes.end(), 0);
    for (int k = 0; k < classes_per_device; ++k) {
      std::swap(classes[k], classes[k + static_cast<int>(rng.index(classes.size() - k))]);
    }
    classes.resize(classes_per_device);
    std::sort(classes.begin(), classes.end());

    const auto count = static_cast<int>(rng.integer(size_lo, size_hi));
    std::vector<int> per_class(classes_per_device, 1);
    for (int m = classes_per_device; m < count; ++m) ++per_class[rng.index(classes_per_device)];

    LocalDataset ds;
    for (int c = 0; c < classes_per_device; ++c) {
      auto candidates = by_class[classes[c]];
      if (static_cast<int>(candidates.size()) < per_class[c]) {
        throw Error(ErrorCode::kInsufficientPool, "class " + std::to_string(classes[c]) + " has " +
                                                      std::to_string(candidates.size()) + " samples, device " +
                                                      std::to_string(dev) + " needs " + std::to_string(per_class[c]));
      }
      for (int m = 0; m < per_class[c]; ++m) {
        std::swap(candidates[m], candidates[m + rng.index(candidates.size() - m)]);
        ds.samples.push_back(pool.samples[candidates[m]]);
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace qmlhfl
