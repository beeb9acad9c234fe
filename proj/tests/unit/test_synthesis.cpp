#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sni/error.hpp"
#include "sni/synthesis.hpp"

using namespace sni;

namespace {

GeneratorConfig small_config(int output = 32, int style_start = 16) {
  GeneratorConfig c;
  c.output_resolution = output;
  c.style_start = style_start;
  c.channels = {{8, 16}, {16, 12}, {32, 8}, {64, 8}};
  c.mapping_depth = 2;
  return c;
}

struct Run {
  Tensor image;
  ForwardTrace trace;
};

Run run(const GeneratorState& g, const StructuredLatent& l) {
  NoGradGuard ng;
  auto [style, spatial] = latent_batch(std::span<const StructuredLatent>(&l, 1));
  Run r;
  r.image = g.forward(style, spatial, {}, &r.trace);
  return r;
}

// Pixels (i, j) of an [1, C, H, W] pair that differ in any channel.
oracle::CellSet changed(const Tensor& a, const Tensor& b) {
  const int c = a.dim(1), h = a.dim(2), w = a.dim(3);
  oracle::CellSet out;
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t at = (static_cast<std::size_t>(k) * h + i) * w + j;
        if (a.values()[at] != b.values()[at]) out.insert({i, j});
      }
  return out;
}

bool identical(const Tensor& a, const Tensor& b) { return a.shape() == b.shape() && a.to_vector() == b.to_vector(); }

}  // namespace

TEST(GeneratorConfig, DefaultLayout) {
  GeneratorConfig c;
  c.validate();
  EXPECT_EQ(c.block_resolutions(), (std::vector<int>{8, 16, 32, 64}));
  const auto layout = c.layout();
  ASSERT_EQ(layout.size(), 8u);
  EXPECT_EQ(c.styled_layer_count(), 5);
  // input tensor counts as layer 1: convs are layers 2..9, styling starts at 5
  for (std::size_t k = 0; k < layout.size(); ++k) EXPECT_EQ(layout[k].styled, k + 2 >= 5) << k;
  EXPECT_FALSE(layout[0].upsample);
  EXPECT_TRUE(layout[2].upsample);
  EXPECT_FALSE(layout[3].upsample);
}

TEST(GeneratorConfig, StyleStartAllAndOutput) {
  auto c = small_config(32, kStyleAllLayers);
  EXPECT_EQ(c.styled_layer_count(), 6);
  c.style_start = 32;
  EXPECT_EQ(c.styled_layer_count(), 1);
}

TEST(GeneratorConfig, ValidateRejects) {
  auto c = small_config();
  c.style_start = 12;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.style_start = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.output_resolution = 48;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.structure = NoiseStructure(4, 4, PartitionKind::pixel, 4, {{1, 1, 1}}, 8);
  EXPECT_THROW(c.validate(), StructureError);
  c = small_config();
  c.channels[16] = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(GeneratorConfig, JsonRoundTrip) {
  auto c = small_config();
  c.per_pixel_noise = true;
  c.mapping_hidden_layers = 1;
  EXPECT_EQ(GeneratorConfig::from_json(c.to_json()), c);
}

TEST(Generator, OutputShapeAndRange) {
  const auto g = GeneratorState::init(small_config(), 1);
  const auto img = synthesize(g, sample_latent(g.structure(), 3));
  EXPECT_EQ(img.height, 32);
  EXPECT_EQ(img.width, 32);
  for (float v : img.rgb) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Generator, DeterministicAcrossInstances) {
  const auto cfg = small_config();
  const auto a = GeneratorState::init(cfg, 5), b = GeneratorState::init(cfg, 5);
  const auto l = sample_latent(cfg.structure, 9);
  EXPECT_EQ(synthesize(a, l), synthesize(b, l));
  EXPECT_EQ(synthesize(a, l), synthesize(a, l));
  const auto c = GeneratorState::init(cfg, 6);
  EXPECT_NE(synthesize(a, l), synthesize(c, l));
}

TEST(Generator, PerPixelNoiseFollowsSeed) {
  auto cfg = small_config();
  cfg.per_pixel_noise = true;
  auto g = GeneratorState::init(cfg, 2);
  const auto l = sample_latent(cfg.structure, 1);
  // strengths start at zero
  EXPECT_EQ(synthesize(g, l, 4), synthesize(g, l, 5));
  for (auto& c : g.convs)
    if (c.noise_strength.defined())
      for (float& v : c.noise_strength.values()) v = 0.5f;
  EXPECT_EQ(synthesize(g, l, 4), synthesize(g, l, 4));
  EXPECT_NE(synthesize(g, l, 4), synthesize(g, l, 5));
}

TEST(Generator, BatchMatchesSingle) {
  const auto g = GeneratorState::init(small_config(), 3);
  std::vector<StructuredLatent> ls{sample_latent(g.structure(), 1), sample_latent(g.structure(), 2)};
  const auto batch = synthesize_batch(g, ls);
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const auto single = synthesize(g, ls[i]);
    for (std::size_t k = 0; k < single.rgb.size(); ++k) EXPECT_NEAR(batch[i].rgb[k], single.rgb[k], 1e-5);
  }
}

TEST(Generator, WrongStructureLatentRejected) {
  const auto g = GeneratorState::init(small_config(), 3);
  const NoiseStructure other(8, 8, PartitionKind::row, 16, {{1, 1, 1}, {2, 2, 1}}, 128);
  EXPECT_THROW(synthesize(g, sample_latent(other, 1)), StructureError);
}

TEST(Generator, StyleCodeLeavesEarlyLayersBitIdentical) {
  for (int style_start : {8, 16, 32}) {
    const auto cfg = small_config(32, style_start);
    const auto g = GeneratorState::init(cfg, 4);
    const auto a = sample_latent(cfg.structure, 1);
    const auto b = replace(a, StyleSlot{}, sample_slot(cfg.structure, StyleSlot{}, 2));
    const auto ra = run(g, a), rb = run(g, b);
    EXPECT_TRUE(identical(ra.trace.input_tensor, rb.trace.input_tensor));
    const auto layout = cfg.layout();
    bool seen_styled = false;
    for (std::size_t k = 0; k < layout.size(); ++k) {
      if (!layout[k].styled) {
        EXPECT_TRUE(identical(ra.trace.conv_outputs[k], rb.trace.conv_outputs[k])) << style_start << " conv " << k;
        EXPECT_FALSE(seen_styled);
      } else {
        seen_styled = true;
        EXPECT_FALSE(identical(ra.trace.conv_outputs[k], rb.trace.conv_outputs[k])) << style_start << " conv " << k;
      }
    }
  }
}

TEST(Generator, StyleStartAllChangesFirstConv) {
  const auto cfg = small_config(32, kStyleAllLayers);
  const auto g = GeneratorState::init(cfg, 4);
  const auto a = sample_latent(cfg.structure, 1);
  const auto b = replace(a, StyleSlot{}, sample_slot(cfg.structure, StyleSlot{}, 2));
  EXPECT_FALSE(identical(run(g, a).trace.conv_outputs[0], run(g, b).trace.conv_outputs[0]));
}

TEST(Generator, LocalEditStaysInReceptiveCone) {
  const auto cfg = small_config(32, 32);
  const auto g = GeneratorState::init(cfg, 7);
  for (Cell cell : {Cell{2, 5}, Cell{0, 0}, Cell{7, 3}}) {
    const auto a = sample_latent(cfg.structure, 11);
    const auto b = replace(a, CellSelection({cell}), sample_slot(cfg.structure, CellSelection({cell}), 12));
    const auto ra = run(g, a), rb = run(g, b);
    EXPECT_EQ(changed(ra.trace.input_tensor, rb.trace.input_tensor), (oracle::CellSet{{cell.row, cell.col}}));
    for (int r : {8, 16}) {
      const auto cone = oracle::receptive_cone(cfg, cell, r);
      const auto diff = changed(ra.trace.block_outputs.at(r), rb.trace.block_outputs.at(r));
      EXPECT_FALSE(diff.empty());
      for (auto [i, j] : diff) EXPECT_TRUE(cone.contains(i, j)) << r << ": " << i << "," << j;
    }
    // the styled conv at 32 normalises over the whole plane
    const auto cone32 = oracle::receptive_cone(cfg, cell, 32);
    EXPECT_EQ(cone32.r1 - cone32.r0 + 1, 32);
    EXPECT_EQ(changed(ra.image, rb.image).size(), 32u * 32u);
  }
}

TEST(Generator, ConeOracleIsLocalBeforeStyling) {
  const auto cfg = small_config(32, 32);
  const auto r = oracle::receptive_cone(cfg, {2, 5}, 16);
  // [0, 4] x [3, 7] after the 8x8 convs, [0, 9] x [6, 15] upsampled, then two convs
  EXPECT_EQ(r.r0, 0);
  EXPECT_EQ(r.r1, 11);
  EXPECT_EQ(r.c0, 4);
  EXPECT_EQ(r.c1, 15);
}

TEST(Generator, SharedScaleEditReachesItsBlock) {
  const auto cfg = small_config(16, 16);
  const auto g = GeneratorState::init(cfg, 8);
  const auto a = sample_latent(cfg.structure, 1);
  const auto b = replace(a, ScaleSlot{1}, sample_slot(cfg.structure, ScaleSlot{1}, 3));
  const auto ra = run(g, a), rb = run(g, b);
  const auto diff = changed(ra.trace.input_tensor, rb.trace.input_tensor);
  EXPECT_EQ(diff.size(), 64u);
}

TEST(Generator, ZeroDepthMappingIsIdentity) {
  auto cfg = small_config();
  cfg.mapping_depth = 0;
  const auto g = GeneratorState::init(cfg, 1);
  const auto l = sample_latent(cfg.structure, 2);
  const auto s = map_style(g, l.style);
  EXPECT_EQ(s.w, l.style);
  EXPECT_EQ(s.layers.size(), static_cast<std::size_t>(cfg.styled_layer_count()));
}

TEST(Generator, MapStyleLayersMatchLayout) {
  const GeneratorConfig cfg;
  const auto g = GeneratorState::init(cfg, 1);
  const auto s = map_style(g, sample_latent(cfg.structure, 2).style);
  ASSERT_EQ(s.layers.size(), 5u);
  const auto layout = cfg.layout();
  for (const auto& l : s.layers) {
    EXPECT_TRUE(layout[l.conv_index].styled);
    EXPECT_EQ(static_cast<int>(l.gamma.size()), layout[l.conv_index].out_channels);
  }
  EXPECT_THROW(map_style(g, std::vector<float>(5)), StructureError);
}

TEST(Generator, FeatureTapMatchesTrace) {
  const auto cfg = small_config();
  const auto g = GeneratorState::init(cfg, 9);
  const auto l = sample_latent(cfg.structure, 4);
  const auto r = run(g, l);
  for (int res : {8, 16}) {
    const Tensor tap = feature_tap(g, l, res);
    const auto& want = r.trace.block_outputs.at(res);
    EXPECT_EQ(tap.shape(), Shape(want.shape().begin() + 1, want.shape().end()));
    EXPECT_EQ(tap.to_vector(), want.to_vector());
  }
  const Tensor top = feature_tap(g, l, 32);
  EXPECT_EQ(top.to_vector(), r.trace.rgb_pre_activation.to_vector());
  const auto img = r.image.to_vector();
  for (std::size_t k = 0; k < img.size(); ++k) EXPECT_FLOAT_EQ(std::tanh(top.values()[k]), img[k]);
  EXPECT_THROW(feature_tap(g, l, 12), ArgumentError);
}

TEST(Generator, TruncatedForwardEqualsFullPrefix) {
  const auto cfg = small_config();
  const auto g = GeneratorState::init(cfg, 10);
  const auto l = sample_latent(cfg.structure, 4);
  NoGradGuard ng;
  auto [style, spatial] = latent_batch(std::span<const StructuredLatent>(&l, 1));
  ForwardTrace t;
  const Tensor cut = g.forward(style, spatial, {}, &t, 8);
  EXPECT_EQ(t.conv_outputs.size(), 2u);
  EXPECT_EQ(cut.to_vector(), run(g, l).trace.block_outputs.at(8).to_vector());
}

TEST(Generator, ParametersAreNamedAndCloneIsDeep) {
  const auto g = GeneratorState::init(small_config(), 1);
  std::set<std::string> names;
  for (const auto& p : g.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  auto c = g.clone();
  c.to_rgb.bias.values()[0] += 1;
  EXPECT_NE(g.to_rgb.bias.values()[0], c.to_rgb.bias.values()[0]);
  for (std::size_t k = 0; k < g.parameters().size(); ++k)
    EXPECT_FALSE(g.parameters()[k].tensor.same_storage(c.parameters()[k].tensor));
}

TEST(Generator, EveryParameterReceivesGradient) {
  auto cfg = small_config();
  cfg.per_pixel_noise = true;
  cfg.mapping_hidden_layers = 1;
  auto g = GeneratorState::init(cfg, 3);
  std::vector<StructuredLatent> ls{sample_latent(cfg.structure, 1), sample_latent(cfg.structure, 2)};
  auto [style, spatial] = latent_batch(ls);
  std::vector<Tensor> params;
  for (auto& p : g.parameters()) {
    p.tensor.set_requires_grad(true);
    params.push_back(p.tensor);
  }
  const std::uint64_t seeds[] = {1, 2};
  const Tensor out = g.forward(style, spatial, batch_noise(g, seeds));
  Tensor probe(out.shape());
  for (std::size_t k = 0; k < probe.numel(); ++k) probe.values()[k] = std::sin(0.1f * k);
  const auto grads = gradients(sum(mul(out, probe)), params);
  const auto named = g.parameters();
  for (std::size_t k = 0; k < grads.size(); ++k) {
    double n = 0;
    for (float v : grads[k].values()) n += std::abs(v);
    EXPECT_GT(n, 0.0) << named[k].name;
  }
}
