#include "sni/config.hpp"

#include <fstream>
#include <set>

#include "sni/error.hpp"
#include "sni/hash.hpp"

namespace sni {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

}  // namespace

DiscriminatorConfig RunConfig::discriminator() const {
  DiscriminatorConfig d = DiscriminatorConfig::mirror(generator);
  for (const auto& [r, c] : discriminator_channels) d.channels[r] = c;
  return d;
}

void RunConfig::validate() const {
  generator.validate();
  discriminator().validate();
  training.validate();
  if (schedule.images_seen < 0 || schedule.checkpoint_every < 0 || schedule.metrics_every < 0) {
    throw ConfigError("schedule counts must be non-negative");
  }
  if (schedule.workers < 1) throw ConfigError("workers must be at least 1");
  if (service.port < 0 || service.port > 65535) throw ConfigError("port out of range");
  if (service.history_limit < 1) throw ConfigError("history_limit must be at least 1");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json dch = nlohmann::json::object();
  for (const auto& [r, c] : discriminator_channels) dch[std::to_string(r)] = c;
  return {{"seed", seed},
          {"generator", generator.to_json()},
          {"discriminator", {{"channels", dch}}},
          {"training", training.to_json()},
          {"schedule",
           {{"images_seen", schedule.images_seen},
            {"checkpoint_every", schedule.checkpoint_every},
            {"metrics_every", schedule.metrics_every},
            {"flip", schedule.flip},
            {"workers", schedule.workers}}},
          {"metrics", metrics.to_json()},
          {"service",
           {{"host", service.host},
            {"port", service.port},
            {"cors", service.cors},
            {"history_limit", service.history_limit}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"seed", "generator", "discriminator", "training", "schedule", "metrics", "service"}, "config");
  try {
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("generator")) c.generator = GeneratorConfig::from_json(j.at("generator"));
    if (j.contains("discriminator")) {
      const auto& d = j.at("discriminator");
      reject_unknown(d, {"channels"}, "discriminator");
      if (d.contains("channels"))
        for (const auto& [k, v] : d.at("channels").items()) c.discriminator_channels[std::stoi(k)] = v.get<int>();
    }
    if (j.contains("training")) c.training = TrainHyper::from_json(j.at("training"));
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      reject_unknown(s, {"images_seen", "checkpoint_every", "metrics_every", "flip", "workers"}, "schedule");
      c.schedule.images_seen = s.value("images_seen", c.schedule.images_seen);
      c.schedule.checkpoint_every = s.value("checkpoint_every", c.schedule.checkpoint_every);
      c.schedule.metrics_every = s.value("metrics_every", c.schedule.metrics_every);
      c.schedule.flip = s.value("flip", c.schedule.flip);
      c.schedule.workers = s.value("workers", c.schedule.workers);
    }
    if (j.contains("metrics")) c.metrics = MetricSchedule::from_json(j.at("metrics"));
    if (j.contains("service")) {
      const auto& s = j.at("service");
      reject_unknown(s, {"host", "port", "cors", "history_limit"}, "service");
      c.service.host = s.value("host", c.service.host);
      c.service.port = s.value("port", c.service.port);
      c.service.cors = s.value("cors", c.service.cors);
      c.service.history_limit = s.value("history_limit", c.service.history_limit);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("discriminator channel keys must be resolutions");
  }
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

nlohmann::json merge_json(nlohmann::json base, const nlohmann::json& patch) {
  if (!patch.is_object() || !base.is_object()) return patch;
  for (const auto& [key, value] : patch.items()) {
    base[key] = base.contains(key) ? merge_json(base[key], value) : value;
  }
  return base;
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace sni
