#pragma once

// The generator: structured input tensor -> (upsample, conv3x3, conv3x3)
// blocks -> 1x1 RGB head -> tanh. The style code goes through an MLP to w;
// every styled conv gets its own AdaIN scale/shift from w.
//
// Style start is given as a resolution R: the second conv of the block at R
// and every conv after it are styled. With the default 8x8 input this puts
// modulation at layer 5 (input tensor = layer 1, two convs at 8x8, the
// first conv at 16x16, then the second conv at 16x16). A style start of 0
// modulates every conv.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sni/image.hpp"
#include "sni/latent.hpp"
#include "sni/mapping.hpp"
#include "sni/tensor.hpp"

namespace sni {

inline constexpr int kStyleAllLayers = 0;

struct ConvSpec {
  int resolution = 0;
  int in_channels = 0;
  int out_channels = 0;
  bool upsample = false;
  bool styled = false;
  int index_in_block = 0;
};

struct GeneratorConfig {
  int start_resolution = 8;
  int output_resolution = 64;
  /// resolution -> channels; missing entries fall back to default_channels().
  std::map<int, int> channels;
  int style_start = 16;
  int mapping_depth = 8;
  /// Extra per-group (C -> C, leaky-ReLU) layers after the first structured map.
  int mapping_hidden_layers = 0;
  bool per_pixel_noise = false;
  NoiseStructure structure;

  /// 128 @ <=16, 64 @ 32, 32 @ 64, 16 beyond.
  static int default_channels(int resolution);
  int channels_at(int resolution) const;

  /// Throws ConfigError / StructureError.
  void validate() const;
  std::vector<ConvSpec> layout() const;
  int styled_layer_count() const;
  std::vector<int> block_resolutions() const;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
  bool operator==(const GeneratorConfig& o) const { return to_json() == o.to_json(); }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Fully connected layer with runtime weight scaling (equalised learning rate).
struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  float weight_scale = 1.0f;
  float bias_scale = 1.0f;

  static DenseLayer init(int in, int out, float gain, float lr_mul, float bias_init,
                         std::uint64_t seed);
  Tensor forward(const Tensor& x) const;  // x [N, in] -> [N, out]
};

/// Same-padded stride-1 conv with runtime weight scaling.
struct ConvLayer {
  Tensor weight;  // [O, I, K, K]
  Tensor bias;    // [O]
  float weight_scale = 1.0f;

  static ConvLayer init(int in, int out, int kernel, float gain, std::uint64_t seed);
  Tensor forward(const Tensor& x) const;
};

struct GroupLayer {
  Tensor weight;  // [G, C, C]
  Tensor bias;    // [G, C]
};

struct StyledConv {
  ConvSpec spec;
  ConvLayer conv;
  Tensor noise_strength;  // [O], only with per-pixel noise on a styled conv
  DenseLayer gamma;       // only when styled
  DenseLayer beta;
};

/// Intermediate latent and the per-styled-layer AdaIN parameters.
struct StyleState {
  std::vector<float> w;
  struct LayerStyle {
    int conv_index = 0;
    std::vector<float> gamma;
    std::vector<float> beta;
  };
  std::vector<LayerStyle> layers;
};

/// Capture of intermediate activations during a forward pass.
struct ForwardTrace {
  Tensor input_tensor;
  std::map<int, Tensor> block_outputs;
  /// One entry per conv, after its activation (and AdaIN when styled).
  std::vector<Tensor> conv_outputs;
  Tensor rgb_pre_activation;
};

class GeneratorState {
 public:
  static GeneratorState init(const GeneratorConfig& config, std::uint64_t seed);

  const GeneratorConfig& config() const { return config_; }
  const NoiseStructure& structure() const { return config_.structure; }

  MappingParameters mapping;
  std::vector<GroupLayer> group_layers;
  std::vector<DenseLayer> style_net;
  std::vector<StyledConv> convs;
  ConvLayer to_rgb;

  /// Every learnable tensor under a stable name, in a stable order.
  std::vector<NamedTensor> parameters() const;
  /// Deep copy; the copy shares no storage with this state.
  GeneratorState clone() const;
  /// Style MLP plus all AdaIN affines.
  std::vector<Tensor> style_parameters() const;

  /// Per-pixel noise planes for each noise-injecting conv; empty when noise is off.
  std::vector<Tensor> make_noise(int batch, std::uint64_t seed) const;

  /// style_codes [N, style_dim] -> w [N, style_dim].
  Tensor map_style(const Tensor& style_codes) const;

  /// Batched forward from w. Returns tanh(RGB) [N, 3, H, W]. When
  /// stop_resolution is set the pass ends after that block (the trace holds it).
  Tensor forward_w(const Tensor& w, const Tensor& spatial, const std::vector<Tensor>& noise,
                   ForwardTrace* trace = nullptr,
                   std::optional<int> stop_resolution = std::nullopt) const;
  Tensor forward(const Tensor& style_codes, const Tensor& spatial,
                 const std::vector<Tensor>& noise, ForwardTrace* trace = nullptr,
                 std::optional<int> stop_resolution = std::nullopt) const;

 private:
  GeneratorConfig config_;
  std::shared_ptr<const CellCodeTable> table_;
};

/// Batch tensors from latents: {style [N, S], spatial [N, L]}.
std::pair<Tensor, Tensor> latent_batch(std::span<const StructuredLatent> latents);

Image image_from_tensor(const Tensor& images, int index);
Tensor images_to_tensor(std::span<const Image> images);

/// Noise planes for a batch where item i uses make_noise(1, seeds[i]).
/// Empty when per-pixel noise is off.
std::vector<Tensor> batch_noise(const GeneratorState& state, std::span<const std::uint64_t> seeds);

/// Renders one latent. Deterministic given the latent and noise_seed; with
/// per-pixel noise on and no seed, a random seed is drawn.
Image synthesize(const GeneratorState& state, const StructuredLatent& latent,
                 std::optional<std::uint64_t> noise_seed = std::nullopt);
std::vector<Image> synthesize_batch(const GeneratorState& state,
                                    std::span<const StructuredLatent> latents,
                                    std::optional<std::uint64_t> noise_seed = std::nullopt);

StyleState map_style(const GeneratorState& state, std::span<const float> style_code);

/// Activations [C, H, W] after the block at `resolution`. At the output
/// resolution this is the RGB head before tanh.
Tensor feature_tap(const GeneratorState& state, const StructuredLatent& latent, int resolution,
                   std::optional<std::uint64_t> noise_seed = std::nullopt);

}  // namespace sni
