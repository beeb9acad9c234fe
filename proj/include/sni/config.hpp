#pragma once

// Run configuration shared by every CLI subcommand. Every field has a
// default, unknown keys are rejected at every level, and the hash is taken
// over the canonical (sorted-key) JSON dump so key order never matters.
//
// {
//   "seed": 0,
//   "generator": { GeneratorConfig },
//   "discriminator": { "channels": { "<resolution>": n } },
//   "training": { TrainHyper },
//   "schedule": { "images_seen", "checkpoint_every", "metrics_every", "flip", "workers" },
//   "metrics": { MetricSchedule },
//   "service": { "host", "port", "cors", "history_limit" }
// }

#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "sni/discriminator.hpp"
#include "sni/synthesis.hpp"
#include "sni/training.hpp"

namespace sni {

struct ScheduleConfig {
  std::int64_t images_seen = 100000;
  std::int64_t checkpoint_every = 10000;
  std::int64_t metrics_every = 10000;
  bool flip = false;
  int workers = 2;
  bool operator==(const ScheduleConfig&) const = default;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  bool cors = false;
  int history_limit = 100;
  bool operator==(const ServiceConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  std::map<int, int> discriminator_channels;
  TrainHyper training;
  ScheduleConfig schedule;
  MetricSchedule metrics;
  ServiceConfig service;

  DiscriminatorConfig discriminator() const;
  /// Throws ConfigError / StructureError.
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical dump.
  std::string hash() const;
  bool operator==(const RunConfig& o) const { return to_json() == o.to_json(); }
};

/// Recursively overlays `patch` onto `base` (objects merge, everything else replaces).
nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch);

/// Reads a JSON config file; throws ConfigError.
nlohmann::json read_config_file(const std::string& path);

}  // namespace sni
