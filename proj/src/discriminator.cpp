#include "sni/discriminator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include "sni/error.hpp"
#include "sni/rng.hpp"

namespace sni {

namespace {
const float kSqrt2 = std::sqrt(2.0f);
}

DiscriminatorConfig DiscriminatorConfig::mirror(const GeneratorConfig& g) {
  DiscriminatorConfig d;
  d.resolution = g.output_resolution;
  d.final_resolution = g.start_resolution;
  for (int r : g.block_resolutions()) d.channels[r] = g.channels_at(r);
  return d;
}

int DiscriminatorConfig::channels_at(int resolution) const {
  auto it = channels.find(resolution);
  return it != channels.end() ? it->second : GeneratorConfig::default_channels(resolution);
}

void DiscriminatorConfig::validate() const {
  auto pow2 = [](int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); };
  if (!pow2(resolution) || !pow2(final_resolution) || final_resolution > resolution) {
    throw ConfigError("discriminator resolutions must be powers of two with final <= input");
  }
  for (int r = final_resolution; r <= resolution; r *= 2)
    if (channels_at(r) < 1) throw ConfigError("discriminator channel count must be positive");
}

nlohmann::json DiscriminatorConfig::to_json() const {
  nlohmann::json ch = nlohmann::json::object();
  for (int r = final_resolution; r <= resolution && r > 0; r *= 2) ch[std::to_string(r)] = channels_at(r);
  return {{"resolution", resolution}, {"final_resolution", final_resolution}, {"channels", ch}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"resolution", "final_resolution", "channels"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown discriminator key '" + key + "'");
  try {
    DiscriminatorConfig d;
    d.resolution = j.value("resolution", d.resolution);
    d.final_resolution = j.value("final_resolution", d.final_resolution);
    if (j.contains("channels"))
      for (const auto& [key, v] : j.at("channels").items()) d.channels[std::stoi(key)] = v.get<int>();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed discriminator config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("channel schedule keys must be resolutions");
  }
}

DiscriminatorState DiscriminatorState::init(const DiscriminatorConfig& config, std::uint64_t seed) {
  config.validate();
  DiscriminatorState d;
  d.config_ = config;
  std::uint64_t tag = 0;
  auto next_seed = [&] { return derive_seed(seed, {0xD15Cull, tag++}); };
  d.from_rgb = ConvLayer::init(3, config.channels_at(config.resolution), 1, kSqrt2, next_seed());
  for (int r = config.resolution; r > config.final_resolution; r /= 2) {
    Block b;
    b.resolution = r;
    b.conv0 = ConvLayer::init(config.channels_at(r), config.channels_at(r), 3, kSqrt2, next_seed());
    b.conv1 = ConvLayer::init(config.channels_at(r), config.channels_at(r / 2), 3, kSqrt2, next_seed());
    d.blocks.push_back(std::move(b));
  }
  const int c = config.channels_at(config.final_resolution);
  const int f = config.final_resolution;
  d.final_conv = ConvLayer::init(c, c, 3, kSqrt2, next_seed());
  d.dense = DenseLayer::init(c * f * f, c, kSqrt2, 1.0f, 0.0f, next_seed());
  d.out = DenseLayer::init(c, 1, 1.0f, 1.0f, 0.0f, next_seed());
  for (auto& p : d.parameters()) p.tensor.set_requires_grad(true);
  return d;
}

std::vector<NamedTensor> DiscriminatorState::parameters() const {
  std::vector<NamedTensor> out_params{{"from_rgb.weight", from_rgb.weight}, {"from_rgb.bias", from_rgb.bias}};
  for (const auto& b : blocks) {
    const std::string p = "block" + std::to_string(b.resolution);
    out_params.push_back({p + ".conv0.weight", b.conv0.weight});
    out_params.push_back({p + ".conv0.bias", b.conv0.bias});
    out_params.push_back({p + ".conv1.weight", b.conv1.weight});
    out_params.push_back({p + ".conv1.bias", b.conv1.bias});
  }
  out_params.push_back({"final_conv.weight", final_conv.weight});
  out_params.push_back({"final_conv.bias", final_conv.bias});
  out_params.push_back({"dense.weight", dense.weight});
  out_params.push_back({"dense.bias", dense.bias});
  out_params.push_back({"out.weight", out.weight});
  out_params.push_back({"out.bias", out.bias});
  return out_params;
}

DiscriminatorState DiscriminatorState::clone() const {
  DiscriminatorState d = init(config_, 0);
  const auto src = parameters();
  auto dst = d.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(), dst[i].tensor.values().begin());
  }
  return d;
}

Tensor DiscriminatorState::forward(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != config_.resolution ||
      images.dim(3) != config_.resolution) {
    throw ShapeError("discriminator expects [N, 3, " + std::to_string(config_.resolution) + ", " +
                     std::to_string(config_.resolution) + "], got " + shape_str(images.shape()));
  }
  Tensor x = leaky_relu(from_rgb.forward(images));
  for (const auto& b : blocks) {
    x = leaky_relu(b.conv0.forward(x));
    x = leaky_relu(b.conv1.forward(x));
    x = avg_pool2(x);
  }
  x = leaky_relu(final_conv.forward(x));
  const int n = x.dim(0);
  x = reshape(x, {n, static_cast<int>(x.numel()) / n});
  x = leaky_relu(dense.forward(x));
  return out.forward(x);
}

}  // namespace sni
