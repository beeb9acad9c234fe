#include "sni/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "sni/error.hpp"
#include "sni/hash.hpp"

namespace sni {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "sni-checkpoint";

struct Blob {
  std::string name;
  Tensor tensor;
};

std::vector<Blob> collect(const TrainState& s) {
  std::vector<Blob> out;
  for (const auto& p : s.generator.parameters()) out.push_back({"generator/" + p.name, p.tensor});
  for (const auto& p : s.discriminator.parameters()) out.push_back({"discriminator/" + p.name, p.tensor});
  auto add_opt = [&](const char* prefix, const Adam& a) {
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      out.push_back({std::string(prefix) + "/m/" + a.params()[i].name, a.first_moments()[i]});
      out.push_back({std::string(prefix) + "/v/" + a.params()[i].name, a.second_moments()[i]});
    }
  };
  add_opt("adam_g", s.g_opt);
  add_opt("adam_d", s.d_opt);
  if (s.ema)
    for (const auto& p : s.ema->parameters()) out.push_back({"ema/" + p.name, p.tensor});
  return out;
}

struct Loaded {
  nlohmann::json manifest;
  std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
};

nlohmann::json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no checkpoint manifest in " + dir.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string{}) != kFormat) {
    throw CheckpointError(dir.string() + " is not a checkpoint");
  }
  if (j.value("version", -1) != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + j.value("version", nlohmann::json(nullptr)).dump() +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  return j;
}

Loaded read_all(const fs::path& dir, const NoiseStructure* expected) {
  Loaded l;
  l.manifest = read_manifest(dir);
  if (expected) {
    NoiseStructure stored;
    try {
      stored = GeneratorConfig::from_json(l.manifest.at("generator")).structure;
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("checkpoint manifest lacks a generator config: ") + e.what());
    }
    if (!(stored == *expected)) {
      throw StructureError("checkpoint noise structure " + stored.to_json().dump() + " does not match " +
                           expected->to_json().dump());
    }
  }
  std::ifstream in(dir / "tensors.bin", std::ios::binary);
  if (!in) throw CheckpointError("missing tensors.bin in " + dir.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  if (bytes.size() % sizeof(float) != 0) throw CheckpointError("tensors.bin is truncated");
  std::vector<float> all(bytes.size() / sizeof(float));
  std::memcpy(all.data(), bytes.data(), bytes.size());
  try {
    for (const auto& e : l.manifest.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_numel(shape) || offset > all.size() || count > all.size() - offset) {
        throw CheckpointError("tensor " + name + " lies outside tensors.bin");
      }
      std::vector<float> data(all.begin() + static_cast<std::ptrdiff_t>(offset),
                              all.begin() + static_cast<std::ptrdiff_t>(offset + count));
      if (sha256_hex(std::span<const float>(data)) != e.at("sha256").get<std::string>()) {
        throw CheckpointError("checksum mismatch for tensor " + name);
      }
      if (!l.tensors.emplace(name, std::make_pair(shape, std::move(data))).second) {
        throw CheckpointError("duplicate tensor " + name);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt tensor index: ") + e.what());
  }
  return l;
}

void assign(Loaded& l, const std::string& name, Tensor& target) {
  auto it = l.tensors.find(name);
  if (it == l.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + name);
  if (it->second.first != target.shape()) {
    throw CheckpointError("tensor " + name + " has shape " + shape_str(it->second.first) + ", expected " +
                          shape_str(target.shape()));
  }
  std::copy(it->second.second.begin(), it->second.second.end(), target.values().begin());
}

template <typename F>
auto manifest_guard(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

}  // namespace

std::string save_checkpoint(const fs::path& dir, const TrainState& state, const nlohmann::json& extra) {
  const auto blobs = collect(state);
  nlohmann::json index = nlohmann::json::array();
  std::size_t offset = 0;
  std::string id_material;
  for (const auto& b : blobs) {
    const std::string h = sha256_hex(b.tensor.values());
    index.push_back({{"name", b.name}, {"shape", b.tensor.shape()}, {"offset", offset},
                     {"count", b.tensor.numel()}, {"sha256", h}});
    offset += b.tensor.numel();
    id_material += b.name + ":" + h + ";";
  }
  nlohmann::json manifest = {
      {"format", kFormat},
      {"version", kCheckpointVersion},
      {"generator", state.generator.config().to_json()},
      {"discriminator", state.discriminator.config().to_json()},
      {"run", state.run.to_json()},
      {"optimizer", {{"g_steps", state.g_opt.steps()}, {"d_steps", state.d_opt.steps()}}},
      {"has_ema", state.ema.has_value()},
      {"tensors", index},
      {"extra", extra}};
  id_material += manifest["generator"].dump() + manifest["discriminator"].dump();
  const std::string id = sha256_hex(id_material).substr(0, 16);
  manifest["checkpoint_id"] = id;

  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream out(tmp / "tensors.bin", std::ios::binary | std::ios::trunc);
    for (const auto& b : blobs)
      out.write(reinterpret_cast<const char*>(b.tensor.data()),
                static_cast<std::streamsize>(b.tensor.numel() * sizeof(float)));
    if (!out) throw CheckpointError("cannot write " + (tmp / "tensors.bin").string());
  }
  {
    std::ofstream out(tmp / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << '\n';
    if (!out) throw CheckpointError("cannot write " + (tmp / "manifest.json").string());
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
  return id;
}

TrainState load_checkpoint(const fs::path& dir, const NoiseStructure* expected) {
  Loaded l = read_all(dir, expected);
  return manifest_guard([&] {
    const auto& m = l.manifest;
    const auto gc = GeneratorConfig::from_json(m.at("generator"));
    const auto dc = DiscriminatorConfig::from_json(m.at("discriminator"));
    const auto run = TrainRun::from_json(m.at("run"));
    gc.validate();
    TrainState s = TrainState::init(gc, dc, run.hyper, run.seed);
    s.run = run;
    for (auto& p : s.generator.parameters()) assign(l, "generator/" + p.name, p.tensor);
    for (auto& p : s.discriminator.parameters()) assign(l, "discriminator/" + p.name, p.tensor);
    auto load_opt = [&](const char* prefix, Adam& a, std::int64_t steps) {
      for (std::size_t i = 0; i < a.params().size(); ++i) {
        assign(l, std::string(prefix) + "/m/" + a.params()[i].name, a.first_moments()[i]);
        assign(l, std::string(prefix) + "/v/" + a.params()[i].name, a.second_moments()[i]);
      }
      a.set_steps(steps);
    };
    load_opt("adam_g", s.g_opt, m.at("optimizer").at("g_steps").get<std::int64_t>());
    load_opt("adam_d", s.d_opt, m.at("optimizer").at("d_steps").get<std::int64_t>());
    if (m.at("has_ema").get<bool>() != s.ema.has_value()) {
      throw CheckpointError("EMA flag disagrees with the stored hyperparameters");
    }
    if (s.ema)
      for (auto& p : s.ema->parameters()) assign(l, "ema/" + p.name, p.tensor);
    return s;
  });
}

GeneratorSnapshot load_generator(const fs::path& dir, const NoiseStructure* expected) {
  TrainState s = load_checkpoint(dir, expected);
  GeneratorSnapshot snap{s.ema ? std::move(*s.ema) : std::move(s.generator), "", read_manifest(dir)};
  snap.id = snap.manifest.value("checkpoint_id", std::string{});
  return snap;
}

fs::path resolve_checkpoint_dir(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) return dir;
  const fs::path latest = dir / "checkpoints" / "latest";
  if (std::ifstream in{latest}) {
    std::string name;
    std::getline(in, name);
    return dir / "checkpoints" / name;
  }
  return dir;
}

}  // namespace sni
