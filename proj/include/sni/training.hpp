#pragma once

// Adversarial training: non-saturating logistic loss for both players, R1
// gradient penalty on reals for the discriminator, Adam for both.
//
// Every random draw in a step comes from seeds derived from (run seed,
// step index), and the data stream position is part of the run record, so
// a run resumed from a checkpoint repeats the uninterrupted run exactly.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sni/data.hpp"
#include "sni/discriminator.hpp"
#include "sni/metrics.hpp"
#include "sni/synthesis.hpp"
#include "sni/tensor.hpp"

namespace sni {

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;

  nlohmann::json to_json() const;
  static AdamConfig from_json(const nlohmann::json& j);
  bool operator==(const AdamConfig&) const = default;
};

/// Adam over a fixed list of parameter tensors, updated in place.
class Adam {
 public:
  Adam() = default;
  Adam(AdamConfig config, std::vector<NamedTensor> params);

  void step(const std::vector<Tensor>& grads);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<NamedTensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t steps_ = 0;
};

struct TrainHyper {
  AdamConfig g_adam;
  AdamConfig d_adam;
  double r1_gamma = 10.0;
  /// R1 evaluated every k-th step with weight gamma * k.
  int r1_interval = 1;
  int batch_size = 16;
  /// Generator EMA decay per step; 0 disables the EMA copy.
  double ema_beta = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainHyper from_json(const nlohmann::json& j);
  bool operator==(const TrainHyper&) const = default;
};

struct StepLosses {
  double d_adversarial = 0.0;
  double r1_penalty = 0.0;
  double d_total = 0.0;
  double g_loss = 0.0;
  bool operator==(const StepLosses&) const = default;
};

struct StepOptions {
  bool update_generator = true;
  bool update_discriminator = true;
};

/// One discriminator update then one generator update. Latents and noise
/// come from `seed`. Throws ModelFailure on a non-finite loss or gradient.
StepLosses train_step(GeneratorState& g, DiscriminatorState& d, Adam& g_opt, Adam& d_opt,
                      const Tensor& real, std::uint64_t seed, std::int64_t step,
                      const TrainHyper& hyper, const StepOptions& options = {});

/// Random latents for a batch: {style [n, S], spatial [n, L]}.
std::pair<Tensor, Tensor> sample_latent_batch(const NoiseStructure& s, int n, std::uint64_t seed);

struct MetricLogEntry {
  std::int64_t images_seen = 0;
  std::optional<double> fid;
  std::optional<double> ppl_z;
  std::optional<double> ppl_w;
  std::optional<double> separability;
  bool operator==(const MetricLogEntry&) const = default;
};

struct TrainRun {
  TrainHyper hyper;
  std::uint64_t seed = 0;
  std::int64_t images_seen = 0;
  std::int64_t step = 0;
  StreamPosition data_position;
  std::string dataset_hash;
  std::vector<MetricLogEntry> metric_log;

  nlohmann::json to_json() const;
  static TrainRun from_json(const nlohmann::json& j);
  bool operator==(const TrainRun&) const = default;
};

/// Everything a checkpoint holds.
struct TrainState {
  GeneratorState generator;
  DiscriminatorState discriminator;
  Adam g_opt;
  Adam d_opt;
  std::optional<GeneratorState> ema;
  TrainRun run;

  static TrainState init(const GeneratorConfig& g, const DiscriminatorConfig& d,
                         const TrainHyper& hyper, std::uint64_t seed);
  /// Generator to render with: the EMA copy when present.
  const GeneratorState& inference_generator() const { return ema ? *ema : generator; }
};

struct MetricSchedule {
  int fid_samples = 256;
  int real_samples = 1024;
  int ppl_samples = 0;  // 0 disables path length logging
  int separability_samples = 0;
  int extractor_dim = 64;
  std::uint64_t extractor_seed = 0x5EEDF1D;
  std::uint64_t eval_seed = 12345;

  nlohmann::json to_json() const;
  static MetricSchedule from_json(const nlohmann::json& j);
  bool operator==(const MetricSchedule&) const = default;
};

struct TrainerOptions {
  std::int64_t images_target = 10000;
  std::int64_t checkpoint_every = 5000;  // images; 0 = only at the end
  std::int64_t metrics_every = 5000;     // images; 0 = only at start and end
  MetricSchedule metrics;
  bool flip = false;
  std::filesystem::path out_dir;
  std::string config_hash;
};

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t images_seen = 0;
  StepLosses losses;
};

/// Drives train_step over a batch stream with checkpoint and metric cadence.
/// Writes under out_dir: losses.csv, metrics.csv, checkpoints/<images>/ and
/// checkpoints/latest (a text file naming the newest checkpoint).
class Trainer {
 public:
  Trainer(TrainState state, const ImageCache& data, TrainerOptions options);

  /// Runs until images_seen >= images_target. `on_step` sees every step.
  void run(const std::function<void(const StepRecord&)>& on_step = {});

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  /// Logs one metric row for the current weights.
  MetricLogEntry evaluate_now();
  std::filesystem::path save_checkpoint_now();

 private:
  void truncate_logs();
  void append_loss(const StepRecord& r);
  void append_metrics(const MetricLogEntry& e);

  TrainState state_;
  const ImageCache* data_;
  TrainerOptions options_;
  BatchStream stream_;
  std::optional<GaussianStats> real_stats_;
};

/// Stats of the first `n` items of the epoch-0 permutation seeded by `seed`.
GaussianStats real_image_stats(const ImageCache& data, std::size_t n, std::uint64_t seed,
                               const FeatureExtractor& extractor);

/// Writes a CSV header + rows (images_seen, fid, ppl_z, ppl_w, separability).
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricLogEntry& e);

}  // namespace sni
