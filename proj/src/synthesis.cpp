#include "sni/synthesis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <set>

#include "sni/error.hpp"
#include "sni/rng.hpp"

namespace sni {

namespace {

constexpr float kLeak = 0.2f;
const float kSqrt2 = std::sqrt(2.0f);

bool is_pow2(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }

std::vector<float> normal_vector(std::size_t n, float stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// x[N, C, gh, gw]; every cell is mapped by its group's [C, C] matrix.
Tensor grouped_pointwise(const Tensor& x, const Tensor& weight, const Tensor& bias,
                         const std::shared_ptr<const CellCodeTable>& table) {
  const int n = x.dim(0), c = x.dim(1);
  const int cells = table->grid_h * table->grid_w;
  if (x.dim(2) * x.dim(3) != cells || weight.dim(1) != c || weight.dim(2) != c) {
    throw ShapeError("grouped_pointwise: shape mismatch");
  }
  std::vector<float> out(x.numel());
  for (int ni = 0; ni < n; ++ni)
    for (int cell = 0; cell < cells; ++cell) {
      const int g = table->group[static_cast<std::size_t>(cell)];
      const float* w = weight.data() + static_cast<std::size_t>(g) * c * c;
      for (int o = 0; o < c; ++o) {
        float acc = bias.data()[static_cast<std::size_t>(g) * c + o];
        for (int i = 0; i < c; ++i)
          acc += w[static_cast<std::size_t>(o) * c + i] *
                 x.data()[(static_cast<std::size_t>(ni) * c + i) * cells + cell];
        out[(static_cast<std::size_t>(ni) * c + o) * cells + cell] = acc;
      }
    }
  return detail::make_result(
      x.shape(), std::move(out), {x, weight, bias},
      [x, weight, table, n, c, cells](const Tensor& grad, const std::vector<char>& need) {
        std::vector<float> gx(x.numel(), 0.0f), gw(weight.numel(), 0.0f);
        std::vector<float> gb(static_cast<std::size_t>(weight.dim(0)) * c, 0.0f);
        for (int ni = 0; ni < n; ++ni)
          for (int cell = 0; cell < cells; ++cell) {
            const int g = table->group[static_cast<std::size_t>(cell)];
            const float* w = weight.data() + static_cast<std::size_t>(g) * c * c;
            for (int o = 0; o < c; ++o) {
              const float go = grad.data()[(static_cast<std::size_t>(ni) * c + o) * cells + cell];
              gb[static_cast<std::size_t>(g) * c + o] += go;
              for (int i = 0; i < c; ++i) {
                const std::size_t xi = (static_cast<std::size_t>(ni) * c + i) * cells + cell;
                gx[xi] += go * w[static_cast<std::size_t>(o) * c + i];
                gw[(static_cast<std::size_t>(g) * c + o) * c + i] += go * x.data()[xi];
              }
            }
          }
        return std::vector<Tensor>{need[0] ? Tensor(x.shape(), std::move(gx)) : Tensor{},
                                   need[1] ? Tensor(weight.shape(), std::move(gw)) : Tensor{},
                                   Tensor(Shape{weight.dim(0), c}, std::move(gb))};
      },
      "grouped_pointwise", false);
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: nothing to concatenate");
  Shape shape = parts.front().shape();
  std::vector<float> data;
  int n = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    s[0] = shape[0];
    if (s != shape) throw ShapeError("concat_batch: trailing shapes differ");
    n += p.dim(0);
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  shape[0] = n;
  return Tensor(shape, std::move(data));
}

}  // namespace

// ---------------------------------------------------------------------------
// GeneratorConfig

int GeneratorConfig::default_channels(int resolution) {
  if (resolution <= 16) return 128;
  if (resolution == 32) return 64;
  if (resolution == 64) return 32;
  return 16;
}

int GeneratorConfig::channels_at(int resolution) const {
  auto it = channels.find(resolution);
  return it != channels.end() ? it->second : default_channels(resolution);
}

std::vector<int> GeneratorConfig::block_resolutions() const {
  std::vector<int> out;
  for (int r = start_resolution; r <= output_resolution && r > 0; r *= 2) out.push_back(r);
  return out;
}

void GeneratorConfig::validate() const {
  if (!is_pow2(start_resolution) || !is_pow2(output_resolution)) {
    throw ConfigError("resolutions must be powers of two");
  }
  if (start_resolution > output_resolution) {
    throw ConfigError("start_resolution exceeds output_resolution");
  }
  if (style_start != kStyleAllLayers &&
      (!is_pow2(style_start) || style_start < start_resolution || style_start > output_resolution)) {
    throw ConfigError("style_start " + std::to_string(style_start) +
                      " must be 'all' or a power of two in [" + std::to_string(start_resolution) +
                      ", " + std::to_string(output_resolution) + "]");
  }
  if (mapping_depth < 0 || mapping_hidden_layers < 0) {
    throw ConfigError("mapping depths must be non-negative");
  }
  for (int r : block_resolutions())
    if (channels_at(r) < 1) throw ConfigError("channel count must be positive");
  for (const auto& [r, ch] : channels) {
    if (!is_pow2(r)) throw ConfigError("channel schedule key " + std::to_string(r) + " is not a power of two");
  }
  structure.validate();
  if (structure.grid_h() != start_resolution || structure.grid_w() != start_resolution) {
    throw StructureError("noise grid " + std::to_string(structure.grid_h()) + "x" +
                         std::to_string(structure.grid_w()) + " must equal the " +
                         std::to_string(start_resolution) + "x" + std::to_string(start_resolution) +
                         " input tensor");
  }
}

std::vector<ConvSpec> GeneratorConfig::layout() const {
  std::vector<ConvSpec> out;
  for (int r : block_resolutions()) {
    const int in_ch = r == start_resolution ? channels_at(r) : channels_at(r / 2);
    for (int k = 0; k < 2; ++k) {
      ConvSpec s;
      s.resolution = r;
      s.in_channels = k == 0 ? in_ch : channels_at(r);
      s.out_channels = channels_at(r);
      s.upsample = k == 0 && r != start_resolution;
      s.index_in_block = k;
      s.styled = style_start == kStyleAllLayers || r > style_start || (r == style_start && k == 1);
      out.push_back(s);
    }
  }
  return out;
}

int GeneratorConfig::styled_layer_count() const {
  const auto l = layout();
  return static_cast<int>(std::count_if(l.begin(), l.end(), [](const ConvSpec& s) { return s.styled; }));
}

nlohmann::json GeneratorConfig::to_json() const {
  nlohmann::json ch = nlohmann::json::object();
  for (int r : block_resolutions()) ch[std::to_string(r)] = channels_at(r);
  return {{"start_resolution", start_resolution},
          {"output_resolution", output_resolution},
          {"channels", ch},
          {"style_start", style_start == kStyleAllLayers ? nlohmann::json("all") : nlohmann::json(style_start)},
          {"mapping_depth", mapping_depth},
          {"mapping_hidden_layers", mapping_hidden_layers},
          {"per_pixel_noise", per_pixel_noise},
          {"structure", structure.to_json()}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"start_resolution", "output_resolution", "channels",
                                           "style_start",      "mapping_depth",     "mapping_hidden_layers",
                                           "per_pixel_noise",  "structure"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown generator key '" + key + "'");
  try {
    GeneratorConfig c;
    c.start_resolution = j.value("start_resolution", c.start_resolution);
    c.output_resolution = j.value("output_resolution", c.output_resolution);
    if (j.contains("channels")) {
      for (const auto& [key, v] : j.at("channels").items()) c.channels[std::stoi(key)] = v.get<int>();
    }
    if (j.contains("style_start")) {
      const auto& s = j.at("style_start");
      if (s.is_string()) {
        if (s.get<std::string>() != "all") throw ConfigError("style_start must be 'all' or a resolution");
        c.style_start = kStyleAllLayers;
      } else {
        c.style_start = s.get<int>();
      }
    }
    c.mapping_depth = j.value("mapping_depth", c.mapping_depth);
    c.mapping_hidden_layers = j.value("mapping_hidden_layers", c.mapping_hidden_layers);
    c.per_pixel_noise = j.value("per_pixel_noise", c.per_pixel_noise);
    if (j.contains("structure")) c.structure = NoiseStructure::from_json(j.at("structure"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("channel schedule keys must be resolutions");
  }
}

// ---------------------------------------------------------------------------
// Layers

DenseLayer DenseLayer::init(int in, int out, float gain, float lr_mul, float bias_init,
                            std::uint64_t seed) {
  DenseLayer d;
  d.weight = Tensor({out, in}, normal_vector(static_cast<std::size_t>(in) * out, 1.0f / lr_mul, seed));
  d.bias = Tensor({out}, bias_init / lr_mul);
  d.weight_scale = gain * lr_mul / std::sqrt(static_cast<float>(in));
  d.bias_scale = lr_mul;
  return d;
}

Tensor DenseLayer::forward(const Tensor& x) const {
  Tensor b = bias_scale == 1.0f ? bias : scale(bias, bias_scale);
  return add_bias(matmul(x, scale(weight, weight_scale), false, true), b);
}

ConvLayer ConvLayer::init(int in, int out, int kernel, float gain, std::uint64_t seed) {
  ConvLayer c;
  c.weight = Tensor({out, in, kernel, kernel},
                    normal_vector(static_cast<std::size_t>(out) * in * kernel * kernel, 1.0f, seed));
  c.bias = Tensor({out}, 0.0f);
  c.weight_scale = gain / std::sqrt(static_cast<float>(in * kernel * kernel));
  return c;
}

Tensor ConvLayer::forward(const Tensor& x) const {
  return add_bias(conv2d(x, scale(weight, weight_scale)), bias);
}

// ---------------------------------------------------------------------------
// GeneratorState

GeneratorState GeneratorState::init(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  GeneratorState g;
  g.config_ = config;
  g.table_ = CellCodeTable::build(config.structure);
  std::uint64_t tag = 0;
  auto next_seed = [&] { return derive_seed(seed, {tag++}); };

  const int c0 = config.channels_at(config.start_resolution);
  const int groups = config.structure.n_groups();
  g.mapping = MappingParameters::init(config.structure, c0, next_seed());
  for (int k = 0; k < config.mapping_hidden_layers; ++k) {
    GroupLayer gl;
    gl.weight = Tensor({groups, c0, c0},
                       normal_vector(static_cast<std::size_t>(groups) * c0 * c0,
                                     kSqrt2 / std::sqrt(static_cast<float>(c0)), next_seed()));
    gl.bias = Tensor({groups, c0}, 0.0f);
    g.group_layers.push_back(std::move(gl));
  }
  const int sd = config.structure.style_dim();
  for (int k = 0; k < config.mapping_depth; ++k)
    g.style_net.push_back(DenseLayer::init(sd, sd, kSqrt2, 0.01f, 0.0f, next_seed()));
  for (const auto& spec : config.layout()) {
    StyledConv sc;
    sc.spec = spec;
    sc.conv = ConvLayer::init(spec.in_channels, spec.out_channels, 3, kSqrt2, next_seed());
    if (spec.styled) {
      if (config.per_pixel_noise) sc.noise_strength = Tensor({spec.out_channels}, 0.0f);
      sc.gamma = DenseLayer::init(sd, spec.out_channels, 1.0f, 1.0f, 1.0f, next_seed());
      sc.beta = DenseLayer::init(sd, spec.out_channels, 1.0f, 1.0f, 0.0f, next_seed());
    }
    g.convs.push_back(std::move(sc));
  }
  g.to_rgb = ConvLayer::init(config.channels_at(config.output_resolution), 3, 1, 1.0f, next_seed());
  for (auto& p : g.parameters()) p.tensor.set_requires_grad(true);
  return g;
}

std::vector<NamedTensor> GeneratorState::parameters() const {
  std::vector<NamedTensor> out{{"mapping.weight", mapping.weight}, {"mapping.bias", mapping.bias}};
  for (std::size_t k = 0; k < group_layers.size(); ++k) {
    out.push_back({"group" + std::to_string(k) + ".weight", group_layers[k].weight});
    out.push_back({"group" + std::to_string(k) + ".bias", group_layers[k].bias});
  }
  for (std::size_t k = 0; k < style_net.size(); ++k) {
    out.push_back({"style" + std::to_string(k) + ".weight", style_net[k].weight});
    out.push_back({"style" + std::to_string(k) + ".bias", style_net[k].bias});
  }
  for (std::size_t k = 0; k < convs.size(); ++k) {
    const std::string p = "conv" + std::to_string(k);
    out.push_back({p + ".weight", convs[k].conv.weight});
    out.push_back({p + ".bias", convs[k].conv.bias});
    if (convs[k].noise_strength.defined()) out.push_back({p + ".noise", convs[k].noise_strength});
    if (convs[k].spec.styled) {
      out.push_back({p + ".gamma.weight", convs[k].gamma.weight});
      out.push_back({p + ".gamma.bias", convs[k].gamma.bias});
      out.push_back({p + ".beta.weight", convs[k].beta.weight});
      out.push_back({p + ".beta.bias", convs[k].beta.bias});
    }
  }
  out.push_back({"to_rgb.weight", to_rgb.weight});
  out.push_back({"to_rgb.bias", to_rgb.bias});
  return out;
}

GeneratorState GeneratorState::clone() const {
  GeneratorState g = init(config_, 0);
  const auto src = parameters();
  auto dst = g.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].tensor.values().begin(), src[i].tensor.values().end(), dst[i].tensor.values().begin());
  }
  return g;
}

std::vector<Tensor> GeneratorState::style_parameters() const {
  std::vector<Tensor> out;
  for (const auto& d : style_net) {
    out.push_back(d.weight);
    out.push_back(d.bias);
  }
  for (const auto& c : convs) {
    if (!c.spec.styled) continue;
    out.push_back(c.gamma.weight);
    out.push_back(c.gamma.bias);
    out.push_back(c.beta.weight);
    out.push_back(c.beta.bias);
  }
  return out;
}

std::vector<Tensor> GeneratorState::make_noise(int batch, std::uint64_t seed) const {
  std::vector<Tensor> out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (const auto& c : convs) {
    if (!c.noise_strength.defined()) continue;
    Tensor t({batch, 1, c.spec.resolution, c.spec.resolution});
    for (auto& v : t.values()) v = dist(rng);
    out.push_back(std::move(t));
  }
  return out;
}

Tensor GeneratorState::map_style(const Tensor& style_codes) const {
  if (style_codes.rank() != 2 || style_codes.dim(1) != config_.structure.style_dim()) {
    throw StructureError("style code batch " + shape_str(style_codes.shape()) +
                         " does not match style_dim " + std::to_string(config_.structure.style_dim()));
  }
  Tensor w = style_codes;
  for (const auto& layer : style_net) w = leaky_relu(layer.forward(w), kLeak);
  return w;
}

Tensor GeneratorState::forward_w(const Tensor& w, const Tensor& spatial,
                                 const std::vector<Tensor>& noise, ForwardTrace* trace,
                                 std::optional<int> stop_resolution) const {
  if (spatial.rank() != 2 ||
      static_cast<std::size_t>(spatial.dim(1)) != config_.structure.spatial_length()) {
    throw StructureError("spatial code batch " + shape_str(spatial.shape()) +
                         " does not match structure length " +
                         std::to_string(config_.structure.spatial_length()));
  }
  if (stop_resolution) {
    const auto res = config_.block_resolutions();
    if (std::find(res.begin(), res.end(), *stop_resolution) == res.end()) {
      throw ArgumentError("no block at resolution " + std::to_string(*stop_resolution));
    }
  }
  std::size_t expected_noise = 0;
  for (const auto& c : convs) expected_noise += c.noise_strength.defined() ? 1 : 0;
  if (noise.size() != expected_noise) {
    throw ArgumentError("expected " + std::to_string(expected_noise) + " noise planes, got " +
                        std::to_string(noise.size()));
  }

  Tensor x = structured_map(spatial, mapping.weight, mapping.bias, table_);
  for (const auto& gl : group_layers) x = leaky_relu(grouped_pointwise(x, gl.weight, gl.bias, table_), kLeak);
  if (trace) trace->input_tensor = x;

  std::size_t noise_index = 0;
  for (const auto& c : convs) {
    if (c.spec.upsample) x = upsample2(x);
    x = conv2d(x, scale(c.conv.weight, c.conv.weight_scale));
    if (c.noise_strength.defined()) x = add_noise(x, noise[noise_index++], c.noise_strength);
    x = leaky_relu(add_bias(x, c.conv.bias), kLeak);
    if (c.spec.styled) {
      if (!w.defined() || w.dim(0) != x.dim(0)) throw ShapeError("w batch does not match spatial batch");
      x = adain(x, c.gamma.forward(w), c.beta.forward(w));
    }
    if (trace) trace->conv_outputs.push_back(x);
    if (c.spec.index_in_block == 1) {
      if (trace) trace->block_outputs[c.spec.resolution] = x;
      if (stop_resolution && *stop_resolution == c.spec.resolution &&
          c.spec.resolution != config_.output_resolution) {
        return x;
      }
    }
  }
  Tensor rgb = to_rgb.forward(x);
  if (trace) trace->rgb_pre_activation = rgb;
  if (stop_resolution) return rgb;
  return tanh(rgb);
}

Tensor GeneratorState::forward(const Tensor& style_codes, const Tensor& spatial,
                               const std::vector<Tensor>& noise, ForwardTrace* trace,
                               std::optional<int> stop_resolution) const {
  Tensor w = config_.styled_layer_count() > 0 ? map_style(style_codes) : Tensor{};
  if (style_codes.dim(0) != spatial.dim(0)) throw ShapeError("style and spatial batches differ");
  return forward_w(w, spatial, noise, trace, stop_resolution);
}

// ---------------------------------------------------------------------------
// Single-latent helpers

std::pair<Tensor, Tensor> latent_batch(std::span<const StructuredLatent> latents) {
  if (latents.empty()) throw ArgumentError("empty latent batch");
  const auto& s = latents.front().structure;
  std::vector<float> style, spatial;
  for (const auto& z : latents) {
    if (!(z.structure == s)) throw StructureError("latent batch mixes structures");
    z.validate();
    style.insert(style.end(), z.style.begin(), z.style.end());
    const auto sp = z.spatial();
    spatial.insert(spatial.end(), sp.begin(), sp.end());
  }
  const int n = static_cast<int>(latents.size());
  return {Tensor({n, s.style_dim()}, std::move(style)),
          Tensor({n, static_cast<int>(s.spatial_length())}, std::move(spatial))};
}

Image image_from_tensor(const Tensor& images, int index) {
  if (images.rank() != 4 || images.dim(1) != 3) throw ShapeError("expected [N, 3, H, W] images");
  const int h = images.dim(2), w = images.dim(3);
  Image out{h, w, std::vector<float>(static_cast<std::size_t>(h) * w * 3)};
  const float* p = images.data() + static_cast<std::size_t>(index) * 3 * h * w;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            p[(static_cast<std::size_t>(c) * h + y) * w + x];
  return out;
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ArgumentError("empty image batch");
  const int h = images.front().height, w = images.front().width;
  const int n = static_cast<int>(images.size());
  Tensor t({n, 3, h, w});
  for (int i = 0; i < n; ++i) {
    const auto& img = images[static_cast<std::size_t>(i)];
    if (img.height != h || img.width != w) throw ShapeError("images differ in size");
    float* p = t.data() + static_cast<std::size_t>(i) * 3 * h * w;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          p[(static_cast<std::size_t>(c) * h + y) * w + x] =
              img.rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  return t;
}

namespace {

void check_structure(const GeneratorState& state, const StructuredLatent& z) {
  if (!(z.structure == state.structure())) {
    throw StructureError("latent structure does not match the generator's noise structure");
  }
}

std::uint64_t resolve_noise_seed(std::optional<std::uint64_t> seed) {
  if (seed) return *seed;
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

}  // namespace

std::vector<Tensor> batch_noise(const GeneratorState& state, std::span<const std::uint64_t> seeds) {
  if (!state.config().per_pixel_noise || seeds.empty()) return {};
  std::vector<std::vector<Tensor>> per_item;
  for (auto s : seeds) per_item.push_back(state.make_noise(1, s));
  std::vector<Tensor> out;
  for (std::size_t layer = 0; layer < per_item.front().size(); ++layer) {
    std::vector<Tensor> parts;
    for (const auto& item : per_item) parts.push_back(item[layer]);
    out.push_back(concat_batch(parts));
  }
  return out;
}

std::vector<Image> synthesize_batch(const GeneratorState& state,
                                    std::span<const StructuredLatent> latents,
                                    std::optional<std::uint64_t> noise_seed) {
  if (latents.empty()) return {};
  for (const auto& z : latents) check_structure(state, z);
  NoGradGuard no_grad;
  auto [style, spatial] = latent_batch(latents);
  std::vector<std::uint64_t> seeds;
  const std::uint64_t base = state.config().per_pixel_noise ? resolve_noise_seed(noise_seed) : 0;
  for (std::size_t i = 0; i < latents.size(); ++i) seeds.push_back(i == 0 ? base : derive_seed(base, {i}));
  Tensor out = state.forward(style, spatial, batch_noise(state, seeds));
  check_finite(out, "synthesize");
  std::vector<Image> images;
  for (int i = 0; i < out.dim(0); ++i) images.push_back(image_from_tensor(out, i));
  return images;
}

Image synthesize(const GeneratorState& state, const StructuredLatent& latent,
                 std::optional<std::uint64_t> noise_seed) {
  return synthesize_batch(state, std::span<const StructuredLatent>(&latent, 1), noise_seed).front();
}

StyleState map_style(const GeneratorState& state, std::span<const float> style_code) {
  if (style_code.size() != static_cast<std::size_t>(state.structure().style_dim())) {
    throw StructureError("style code has " + std::to_string(style_code.size()) + " entries, expected " +
                         std::to_string(state.structure().style_dim()));
  }
  NoGradGuard no_grad;
  Tensor z({1, static_cast<int>(style_code.size())}, std::vector<float>(style_code.begin(), style_code.end()));
  Tensor w = state.map_style(z);
  StyleState out;
  out.w = w.to_vector();
  for (std::size_t k = 0; k < state.convs.size(); ++k) {
    const auto& c = state.convs[k];
    if (!c.spec.styled) continue;
    out.layers.push_back({static_cast<int>(k), c.gamma.forward(w).to_vector(), c.beta.forward(w).to_vector()});
  }
  return out;
}

Tensor feature_tap(const GeneratorState& state, const StructuredLatent& latent, int resolution,
                   std::optional<std::uint64_t> noise_seed) {
  check_structure(state, latent);
  NoGradGuard no_grad;
  auto [style, spatial] = latent_batch(std::span<const StructuredLatent>(&latent, 1));
  const std::uint64_t seeds[] = {state.config().per_pixel_noise ? resolve_noise_seed(noise_seed) : 0};
  Tensor out = state.forward(style, spatial, batch_noise(state, seeds), nullptr, resolution);
  Shape s = out.shape();
  return reshape(out, Shape(s.begin() + 1, s.end()));
}

}  // namespace sni
