#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sni/error.hpp"
#include "sni/mapping.hpp"

using namespace sni;

namespace {

std::vector<float> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

MappingParameters random_params(const NoiseStructure& s, int channels, std::uint64_t seed) {
  MappingParameters p;
  const int g = s.n_groups(), l = static_cast<int>(s.cell_code_length());
  p.weight = Tensor({g, channels, l}, gaussian(std::size_t(g) * channels * l, seed));
  p.bias = Tensor({g, channels}, gaussian(std::size_t(g) * channels, seed + 1));
  return p;
}

oracle::CellSet to_set(const std::vector<Cell>& cells) {
  oracle::CellSet out;
  for (auto c : cells) out.insert({c.row, c.col});
  return out;
}

oracle::SlotKey key_of(const CodeSlot& s) {
  switch (s.kind) {
    case CodeSlot::Kind::style: return {0};
    case CodeSlot::Kind::scale_block: return {1, s.scale, s.block};
    default: return {2, -1, -1, s.group};
  }
}

}  // namespace

TEST(MapDense, ZeroWeightsGiveBias) {
  const std::vector<float> z = gaussian(10, 1);
  const std::vector<float> w(2 * 3 * 4 * 10, 0.0f);
  const std::vector<float> b{0.5f, -1.0f, 2.0f, 3.0f};
  const auto t = map_dense(z, w, b, 2, 3, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < 4; ++c) EXPECT_EQ(t.at(i, j, c), b[c]);
}

TEST(MapDense, FullScaleShape) {
  const std::vector<float> z = gaussian(128, 2);
  const std::vector<float> w = gaussian(std::size_t(4) * 4 * 512 * 128, 3);
  const std::vector<float> b(512, 0.0f);
  const auto t = map_dense(z, w, b, 4, 4, 512);
  EXPECT_EQ(t.grid_h, 4);
  EXPECT_EQ(t.grid_w, 4);
  EXPECT_EQ(t.channels, 512);
  EXPECT_EQ(t.values.size(), 4u * 4 * 512);
}

TEST(MapDense, MatchesNaiveLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::vector<float> z = gaussian(7, seed);
    const std::vector<float> w = gaussian(2 * 2 * 3 * 7, seed + 100);
    const std::vector<float> b = gaussian(2 * 2 * 3, seed + 200);
    const auto t = map_dense(z, w, b, 2, 2, 3);
    const auto want = oracle::dense_loop(z, w, b);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(t.values[k], want[k], 1e-5 * (1 + std::abs(want[k])));
  }
}

TEST(MapDense, RejectsBadShapes) {
  const std::vector<float> z(5);
  EXPECT_THROW(map_dense(z, std::vector<float>(9), std::vector<float>(2), 1, 1, 2), ShapeError);
  EXPECT_THROW(map_dense(z, std::vector<float>(10), std::vector<float>(3), 1, 1, 2), ShapeError);
}

TEST(MapStructured, IdentityMapReturnsCellCodes) {
  const NoiseStructure s;
  const int l = static_cast<int>(s.cell_code_length());
  MappingParameters p;
  std::vector<float> w(std::size_t(s.n_groups()) * l * l, 0.0f);
  for (int g = 0; g < s.n_groups(); ++g)
    for (int k = 0; k < l; ++k) w[(std::size_t(g) * l + k) * l + k] = 1.0f;
  p.weight = Tensor({s.n_groups(), l, l}, w);
  p.bias = Tensor({s.n_groups(), l});
  const auto latent = sample_latent(s, 5);
  const auto t = map_structured(latent, p);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const auto code = cell_code(latent, {i, j});
      for (int c = 0; c < l; ++c) EXPECT_EQ(t.at(i, j, c), code[c]);
    }
}

TEST(MapStructured, LocalCodeChangeStaysInItsCell) {
  const NoiseStructure s;
  const auto p = random_params(s, 6, 9);
  const auto a = sample_latent(s, 1);
  const CellSelection cell({{2, 5}});
  const auto b = replace(a, cell, sample_slot(s, cell, 2));
  const auto ta = map_structured(a, p), tb = map_structured(b, p);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      bool differs = false;
      for (int c = 0; c < 6; ++c) differs |= ta.at(i, j, c) != tb.at(i, j, c);
      EXPECT_EQ(differs, i == 2 && j == 5) << i << "," << j;
    }
}

TEST(MapStructured, EqualsBlockDenseAssembly) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 1 << (rng() % 4), w = 1 << (rng() % 4);
    std::vector<SharedScale> scales{{1, 1, 1 + int(rng() % 2)}};
    if (h >= 2 && w >= 2) scales.push_back({2, 2, 1});
    const auto kind = static_cast<PartitionKind>(rng() % 3);
    const NoiseStructure s(h, w, kind, 1 + int(rng() % 6), scales, 3);
    const int channels = 1 + int(rng() % 8);
    const auto p = random_params(s, channels, trial);
    const auto groups = oracle::canonical_groups(oracle::partition_labels(kind, h, w));
    const auto dense = oracle::assemble_block_dense(s, groups, p.weight.values(), p.bias.values(), channels);
    const auto latent = sample_latent(s, trial + 50);
    const auto spatial = latent.spatial();
    const auto want = oracle::dense_loop(spatial, dense.weight, dense.bias);
    const auto got = map_structured(latent, p);
    ASSERT_EQ(got.values.size(), want.size());
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got.values[k], want[k], 1e-5 * (1 + std::abs(want[k])));
    // the library's own assembly agrees with the oracle's matrix
    const auto lib = assemble_dense(s, p);
    EXPECT_EQ(lib.weight, dense.weight);
    EXPECT_EQ(lib.bias, dense.bias);
  }
}

TEST(MapStructured, BatchedOpMatchesSingle) {
  const NoiseStructure s(4, 4, PartitionKind::column, 3, {{1, 1, 1}, {2, 2, 2}}, 4);
  const auto p = random_params(s, 5, 4);
  const auto table = CellCodeTable::build(s);
  std::vector<float> rows;
  std::vector<StructuredLatent> ls;
  for (int n = 0; n < 3; ++n) {
    ls.push_back(sample_latent(s, n));
    const auto sp = ls.back().spatial();
    rows.insert(rows.end(), sp.begin(), sp.end());
  }
  const Tensor out = structured_map(Tensor({3, int(s.spatial_length())}, rows), p.weight, p.bias, table);
  ASSERT_EQ(out.shape(), (Shape{3, 5, 4, 4}));
  for (int n = 0; n < 3; ++n) {
    const auto ref = map_structured(ls[n], p);
    for (int c = 0; c < 5; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) EXPECT_EQ(out.values()[((n * 5 + c) * 4 + i) * 4 + j], ref.at(i, j, c));
  }
}

TEST(MapStructured, JacobianIsBlockSparse) {
  const NoiseStructure s(4, 4, PartitionKind::pixel, 3, {{1, 1, 1}, {2, 2, 1}}, 2);
  const auto p = random_params(s, 4, 8);
  const auto table = CellCodeTable::build(s);
  const auto latent = sample_latent(s, 3);
  Tensor spatial({1, int(s.spatial_length())}, latent.spatial());
  spatial.set_requires_grad(true);
  const Tensor out = structured_map(spatial, p.weight, p.bias, table);
  const auto geo = oracle::geometry_masks(s, s.cell_groups());
  const auto slots = oracle::slot_indices(s, s.cell_groups());
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      Tensor pick({1, 4, 4, 4});
      for (int c = 0; c < 4; ++c) pick.values()[(c * 4 + i) * 4 + j] = 1.0f + c;
      const auto g = gradients(sum(mul(out, pick)), {spatial})[0];
      for (const auto& [key, idx] : slots) {
        if (key.kind == 0) continue;
        const bool reaches = geo.at(key).count({i, j}) > 0;
        for (auto k : idx) {
          const float d = g.values()[k - s.style_dim()];
          if (!reaches) {
            EXPECT_EQ(d, 0.0f);
          }
        }
      }
    }
}

TEST(MappingParameters, CheckRejectsMismatch) {
  const NoiseStructure s;
  auto p = MappingParameters::init(s, 8, 1);
  EXPECT_NO_THROW(p.check(s));
  const NoiseStructure rows(8, 8, PartitionKind::row, 16, {{1, 1, 1}, {2, 2, 1}}, 128);
  EXPECT_THROW(p.check(rows), StructureError);
  const NoiseStructure wide(8, 8, PartitionKind::pixel, 4, {{1, 1, 1}, {2, 2, 1}}, 128);
  EXPECT_THROW(p.check(wide), StructureError);
}

TEST(MappingParameters, InitHasUnitOutputVariance) {
  const NoiseStructure s;
  const auto p = MappingParameters::init(s, 64, 7);
  double sq = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (float v : map_structured(sample_latent(s, seed), p).values) {
      sq += double(v) * v;
      ++n;
    }
  EXPECT_NEAR(sq / n, 1.0, 0.1);
}

TEST(Influence, GlobalReachesAllCells) {
  const NoiseStructure s;
  const auto masks = influence_mask(s, MappingParameters::init(s, 4, 1));
  const auto& global = masks[1];
  ASSERT_EQ(global.slot.kind, CodeSlot::Kind::scale_block);
  EXPECT_EQ(global.slot.scale, 0);
  EXPECT_EQ(global.cells.size(), 64u);
}

TEST(Influence, FirstQuadrantIsTopLeft) {
  const NoiseStructure s;
  const auto masks = influence_mask(s, MappingParameters::init(s, 4, 1));
  const auto& q0 = masks[2];
  ASSERT_EQ(q0.slot.scale, 1);
  ASSERT_EQ(q0.slot.block, 0);
  EXPECT_EQ(q0.cells.size(), 16u);
  for (auto c : q0.cells) EXPECT_TRUE(c.row < 4 && c.col < 4);
}

TEST(Influence, DeclaredEqualsPerturbationMasks) {
  const std::vector<NoiseStructure> structures{
      NoiseStructure{},
      NoiseStructure(8, 8, PartitionKind::row, 4, {{1, 1, 1}, {2, 2, 1}}, 4),
      NoiseStructure(4, 8, PartitionKind::column, 2, {{1, 1, 2}, {2, 2, 1}, {4, 4, 1}}, 4),
      NoiseStructure::manual(4, 4, {3, 3, 1, 1, 3, 3, 1, 1, 0, 0, 2, 2, 0, 2, 2, 2}, 3, {{1, 1, 1}, {2, 2, 1}}, 4)};
  for (const auto& s : structures) {
    const auto p = random_params(s, 3, 11);
    const auto slots = oracle::slot_indices(s, s.cell_groups());
    const auto base = sample_latent(s, 2);
    const auto empirical = oracle::empirical_masks(slots, base.flatten(), s.grid_h(), s.grid_w(),
                                                   [&](const std::vector<float>& flat) {
                                                     return map_structured(StructuredLatent::unflatten(s, flat), p).values;
                                                   });
    const auto geo = oracle::geometry_masks(s, s.cell_groups());
    const auto declared = influence_mask(s, p);
    ASSERT_EQ(declared.size(), slots.size());
    for (const auto& d : declared) {
      EXPECT_EQ(to_set(d.cells), empirical.at(key_of(d.slot))) << d.slot.name();
      EXPECT_EQ(to_set(d.cells), geo.at(key_of(d.slot))) << d.slot.name();
    }
    EXPECT_EQ(measured_influence(s, p, 5), declared);
  }
}

TEST(Influence, SlotIndicesMatchCanonicalLayout) {
  const NoiseStructure s(4, 4, PartitionKind::row, 3, {{1, 1, 2}, {2, 2, 1}}, 5);
  const auto want = oracle::slot_indices(s, s.cell_groups());
  for (const auto& slot : code_slots(s)) EXPECT_EQ(slot.flat_indices(s), want.at(key_of(slot))) << slot.name();
}

TEST(Influence, FormatIsOneMatrixPerSlot) {
  const NoiseStructure s(2, 2, PartitionKind::row, 1, {{1, 1, 1}}, 1);
  const auto text = format_influence(s, influence_mask(s, MappingParameters::init(s, 2, 1)));
  EXPECT_EQ(text,
            "# style\n0 0\n0 0\n"
            "# scale0.block0\n1 1\n1 1\n"
            "# local.group0\n1 1\n0 0\n"
            "# local.group1\n0 0\n1 1\n");
}
