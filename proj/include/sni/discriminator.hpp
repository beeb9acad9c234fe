#pragma once

// Mirror-image classifier: fromRGB 1x1 -> (conv3x3, conv3x3, avgpool) per
// resolution down to the generator's start resolution -> conv3x3 -> dense
// -> dense -> one realness logit per image. Every op here is twice
// differentiable so the R1 penalty can be backpropagated.

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "sni/synthesis.hpp"
#include "sni/tensor.hpp"

namespace sni {

struct DiscriminatorConfig {
  int resolution = 64;
  int final_resolution = 8;
  std::map<int, int> channels;

  /// Same resolutions and channel schedule as the generator.
  static DiscriminatorConfig mirror(const GeneratorConfig& g);
  int channels_at(int resolution) const;
  void validate() const;

  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
  bool operator==(const DiscriminatorConfig& o) const { return to_json() == o.to_json(); }
};

class DiscriminatorState {
 public:
  static DiscriminatorState init(const DiscriminatorConfig& config, std::uint64_t seed);

  const DiscriminatorConfig& config() const { return config_; }

  struct Block {
    int resolution = 0;
    ConvLayer conv0;
    ConvLayer conv1;
  };

  ConvLayer from_rgb;
  std::vector<Block> blocks;  // from `resolution` down to final_resolution * 2
  ConvLayer final_conv;
  DenseLayer dense;
  DenseLayer out;

  std::vector<NamedTensor> parameters() const;
  DiscriminatorState clone() const;

  /// images [N, 3, R, R] -> logits [N, 1].
  Tensor forward(const Tensor& images) const;

 private:
  DiscriminatorConfig config_;
};

}  // namespace sni
