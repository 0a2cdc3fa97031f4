// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qmlhfl/rng.hpp"
#include "qmlhfl/topology.hpp"

namespace qmlhfl {

using ParamVector = std::vector<double>;

struct Sample {
  std::vector<double> features;
  int label = 0;
};

struct LocalDataset {
  std::vector<Sample> samples;
  std::size_t size() const noexcept { return samples.size(); }
};

/// A labeled pool from which per-device datasets are partitioned.
struct LabeledPool {
  std::vector<Sample> samples;
  int num_classes = 0;
  std::size_t feature_dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
};

enum class TaskKind { kQuadratic, kLogistic, kTinyMlp };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& name);

/// Loss/gradient oracle over per-device datasets.
///
/// Quadratic: a sample x contributes l(x; w) = 1/2 |w - x|^2 - 1/2 |x - a_i|^2,
/// where a_i is the device's sample mean, so F_i(w) = 1/2 |w - a_i|^2 exactly
/// and the per-sample gradient is w - x (L = 1).
/// Logistic: multinomial softmax regression, w = [W (K x F) | b (K)].
/// Tiny MLP: one tanh hidden layer, w = [W1 (H x F) | b1 (H) | W2 (K x H) | b2 (K)].
class Task {
 public:
  static Task quadratic(std::vector<LocalDataset> datasets);
  static Task logistic(std::vector<LocalDataset> datasets, int num_classes);
  static Task tiny_mlp(std::vector<LocalDataset> datasets, int num_classes, int hidden_units);

  TaskKind kind() const noexcept { return kind_; }
  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t num_devices() const noexcept { return datasets_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  int num_classes() const noexcept { return num_classes_; }
  int hidden_units() const noexcept { return hidden_; }
  const LocalDataset& dataset(std::size_t device) const;
  std::size_t dataset_size(std::size_t device) const { return dataset(device).size(); }

  /// Quadratic only: the device centroid a_i.
  const ParamVector& centroid(std::size_t device) const;

  /// F_i(w): mean loss over the device's full dataset.
  double local_loss(std::size_t device, std::span<const double> w) const;
  /// Full-batch gradient of F_i.
  ParamVector local_gradient(std::size_t device, std::span<const double> w) const;

  /// Mean gradient over a mini-batch of b samples drawn uniformly without
  /// replacement; b equal to the dataset size uses every sample in order and
  /// draws nothing from the stream.
  ParamVector stochastic_gradient(std::size_t device, std::span<const double> w, std::size_t batch_size,
                                  RandomStream& rng) const;

  /// Mean loss / accuracy over an arbitrary sample list (held-out evaluation).
  double loss_on(std::span<const Sample> samples, std::span<const double> w) const;
  double accuracy_on(std::span<const Sample> samples, std::span<const double> w) const;

  /// Suggested starting point: zeros, except small seeded weights for the MLP.
  ParamVector initial_model(std::uint64_t seed, double scale = 0.1) const;

 private:
  Task() = default;
  void validate_device(std::size_t device) const;
  double sample_loss(std::size_t device, const Sample& s, std::span<const double> w) const;
  void add_sample_gradient(std::size_t device, const Sample& s, std::span<const double> w, double weight,
                           std::span<double> grad) const;
  int predict(const Sample& s, std::span<const double> w) const;
  void check_dimension(std::span<const double> w) const;

  TaskKind kind_ = TaskKind::kQuadratic;
  std::vector<LocalDataset> datasets_;
  std::vector<ParamVector> centroids_;
  std::size_t dimension_ = 0;
  std::size_t feature_dim_ = 0;
  int num_classes_ = 0;
  int hidden_ = 0;
};

/// Global loss F(w). Unweighted: (1/N_tot) sum F_i. Weighted: dataset-size
/// weighted mean. Evaluated bottom-up through the tree (per-server aggregated
/// losses), which equals the flat average.
double global_loss(const Task& task, const Topology& topology, std::span<const double> w, bool weighted);
/// Flat form of the same quantity, used to cross-check the hierarchical path.
double global_loss_flat(const Task& task, std::span<const double> w, bool weighted);
ParamVector global_gradient(const Task& task, std::span<const double> w, bool weighted);

/// Quadratic task: device centroids a_i plus per-device Gaussian samples.
/// Sample counts are uniform in [size_lo, size_hi].
Task make_quadratic_task(std::span<const ParamVector> anchors, int size_lo, int size_hi, double noise_std,
                         RandomStream& rng);

/// Quadratic task with random anchors N(0, anchor_std^2 I) in dimension d.
Task make_random_quadratic_task(int num_devices, int dimension, double anchor_std, int size_lo, int size_hi,
                                double noise_std, RandomStream& rng);

/// Exact Assumption-3 constant for a quadratic task at batch size b:
/// max_i E|g_i(w, xi) - grad F(w)|^2 = |a_i - a|^2 + (D_i - b)/(b (D_i - 1)) s_i^2,
/// with s_i^2 the mean squared deviation of the device's samples from a_i.
/// Batch size 0 means the full local dataset, as in the engine.
double quadratic_sigma2(const Task& task, std::size_t batch_size);

/// Empirical sigma^2: max over devices of the mean |g_i(w0, xi) - grad F(w0)|^2
/// over `trials` mini-batches.
double estimate_sigma2(const Task& task, std::span<const double> w0, std::size_t batch_size, int trials,
                       std::uint64_t seed);

/// Gaussian class clusters: class means ~ N(0, separation^2 I), unit noise.
LabeledPool make_synthetic_pool(int num_classes, int feature_dim, int per_class, double separation,
                                RandomStream& rng);

/// CSV pool: one sample per line, feature columns then an integer label.
/// Lines starting with '#' and a non-numeric header line are skipped.
LabeledPool load_pool_csv(const std::filesystem::path& path);

/// Deterministic split of a pool into (train, held-out test).
std::pair<LabeledPool, LabeledPool> split_pool(const LabeledPool& pool, double test_fraction, RandomStream& rng);

/// Non-IID partition. Case 1: 2 random classes per device, case 2: 6 random
/// classes, case 3: all classes. Each device receives a sample count uniform
/// in [size_lo, size_hi], every selected class at least once, samples drawn
/// without replacement within a device.
std::vector<LocalDataset> partition(const LabeledPool& pool, const Topology& topology, int heterogeneity_case,
                                    int size_lo, int size_hi, RandomStream& rng);

}  // namespace qmlhfl
