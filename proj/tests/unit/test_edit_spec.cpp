#include <gtest/gtest.h>

#include "sni/edit_spec.hpp"
#include "sni/error.hpp"

using namespace sni;

namespace {

NoiseStructure structure() { return NoiseStructure(8, 8, PartitionKind::pixel, 4, {{1, 1, 2}, {2, 2, 1}}, 6); }

std::vector<Cell> cells_of(const EditSpec& s) { return std::get<CellSelection>(*s.target).cells(); }

}  // namespace

TEST(EditSpecParse, CellsResampleWithSeed) {
  const auto s = parse_edit_spec("cells=(2,5)|(0,0);op=resample;arg=42", structure());
  EXPECT_EQ(cells_of(s), (std::vector<Cell>{{2, 5}, {0, 0}}));
  EXPECT_EQ(s.op, EditSpec::Op::resample);
  EXPECT_EQ(s.seed, 42u);
}

TEST(EditSpecParse, WhitespaceOrderAndVersion) {
  const auto a = parse_edit_spec(" v=1 ; op = resample:9 ; cells = ( 1 , 2 ) ", structure());
  EXPECT_EQ(cells_of(a), (std::vector<Cell>{{1, 2}}));
  EXPECT_EQ(a.seed, 9u);
  EXPECT_THROW(parse_edit_spec("v=2;style;op=resample", structure()), ArgumentError);
}

TEST(EditSpecParse, ResampleDefaultsToGivenSeed) {
  EXPECT_EQ(parse_edit_spec("style;op=resample", structure(), 77).seed, 77u);
}

TEST(EditSpecParse, TargetsResolve) {
  EXPECT_TRUE(std::holds_alternative<StyleSlot>(*parse_edit_spec("style;op=resample", structure()).target));
  EXPECT_EQ(std::get<ScaleSlot>(*parse_edit_spec("scale=1;op=resample", structure()).target).index, 1u);
  EXPECT_EQ(std::get<ScaleSlot>(*parse_edit_spec("global;op=resample", structure()).target).index, 0u);
  const auto none = parse_edit_spec("none", structure());
  EXPECT_FALSE(none.target.has_value());
}

TEST(EditSpecParse, SetAndInterpArguments) {
  const auto set = parse_edit_spec("cells=(3,3);op=set;arg=0.5, -1,2e-1,4", structure());
  EXPECT_EQ(set.values, (std::vector<float>{0.5f, -1.0f, 0.2f, 4.0f}));
  const auto file = parse_edit_spec("style;op=interp:other.json:0.25", structure());
  EXPECT_EQ(file.other_path, "other.json");
  EXPECT_DOUBLE_EQ(file.t, 0.25);
  EXPECT_FALSE(file.other_seed);
  const auto seeded = parse_edit_spec("scale=0;op=interp;arg=seed:12:1", structure());
  EXPECT_EQ(seeded.other_seed, 12u);
  EXPECT_DOUBLE_EQ(seeded.t, 1.0);
}

TEST(EditSpecParse, MalformedTextIsArgumentError) {
  const auto st = structure();
  for (const char* bad :
       {"", "op=resample", "cells=2,5;op=resample", "cells=(1,1);op=blur", "style", "style;op=set",
        "style;op=resample;arg=-3", "style;op=interp;arg=x.json", "style;op=interp;arg=x.json:1.5",
        "style;op=set;arg=1,two", "style;scale=0;op=resample", "none;op=resample", "color=red",
        "cells=(1,1)|(1,1);op=resample", "style;op=resample:1;arg=2", "style;op=interp;arg=:0.5"}) {
    EXPECT_THROW(parse_edit_spec(bad, st), ArgumentError) << bad;
  }
}

TEST(EditSpecParse, MissingSlotsAreStructureError) {
  const auto st = structure();
  EXPECT_THROW(parse_edit_spec("cells=(8,0);op=resample", st), StructureError);
  EXPECT_THROW(parse_edit_spec("cells=(-1,0);op=resample", st), StructureError);
  EXPECT_THROW(parse_edit_spec("scale=2;op=resample", st), StructureError);
  const NoiseStructure no_global(8, 8, PartitionKind::pixel, 4, {{2, 2, 1}}, 6);
  EXPECT_THROW(parse_edit_spec("global;op=resample", no_global), StructureError);
}

TEST(ApplyEdit, ResampleTouchesOnlyTarget) {
  const auto base = sample_latent(structure(), 1);
  const auto out = apply_edit(base, parse_edit_spec("cells=(2,5);op=resample;arg=3", structure()));
  const int g = structure().group_of({2, 5});
  for (int k = 0; k < structure().n_groups(); ++k) {
    const auto a = base.local_code(k), b = out.local_code(k);
    const bool same = std::equal(a.begin(), a.end(), b.begin());
    EXPECT_EQ(same, k != g);
  }
  EXPECT_EQ(out.style, base.style);
  EXPECT_EQ(out.scales, base.scales);
  EXPECT_EQ(apply_edit(base, parse_edit_spec("cells=(2,5);op=resample;arg=3", structure())), out);
}

TEST(ApplyEdit, StyleResampleKeepsSpatialDigest) {
  const auto base = sample_latent(structure(), 2);
  const auto out = apply_edit(base, parse_edit_spec("style;op=resample;arg=8", structure()));
  EXPECT_NE(out.style, base.style);
  EXPECT_EQ(latent_digests(out).spatial, latent_digests(base).spatial);
  EXPECT_NE(latent_digests(out).full, latent_digests(base).full);
}

TEST(ApplyEdit, SetWithCurrentValuesIsIdentity) {
  const auto base = sample_latent(structure(), 3);
  const SlotTarget t = ScaleSlot{1};
  EditSpec spec = parse_edit_spec("scale=1;op=set;arg=0", structure());
  spec.values = slot_values(base, t);
  EXPECT_EQ(apply_edit(base, spec), base);
  EXPECT_EQ(apply_edit(base, parse_edit_spec("none", structure())), base);
}

TEST(ApplyEdit, InterpEndpointsAndLoader) {
  const auto st = structure();
  const auto base = sample_latent(st, 4), other = sample_latent(st, 5);
  EXPECT_EQ(apply_edit(base, parse_edit_spec("style;op=interp;arg=seed:5:0", st)), base);
  const auto full = apply_edit(base, parse_edit_spec("style;op=interp;arg=seed:5:1", st));
  EXPECT_EQ(full.style, other.style);
  EXPECT_EQ(full.local, base.local);
  const auto half = apply_edit(base, parse_edit_spec("style;op=interp;arg=o.json:0.5", st),
                               [&](const std::string& p) {
                                 EXPECT_EQ(p, "o.json");
                                 return other;
                               });
  for (std::size_t k = 0; k < half.style.size(); ++k)
    EXPECT_NEAR(half.style[k], 0.5 * (base.style[k] + other.style[k]), 1e-6);
  EXPECT_THROW(apply_edit(base, parse_edit_spec("style;op=interp;arg=o.json:0.5", st)), ArgumentError);
  const NoiseStructure diff(8, 8, PartitionKind::row, 4, {{1, 1, 2}, {2, 2, 1}}, 6);
  EXPECT_THROW(apply_edit(base, parse_edit_spec("style;op=interp;arg=o.json:0.5", st),
                          [&](const std::string&) { return sample_latent(diff, 1); }),
               StructureError);
}

TEST(ApplyEdit, WrongSetLengthRejected) {
  const auto base = sample_latent(structure(), 6);
  EXPECT_THROW(apply_edit(base, parse_edit_spec("style;op=set;arg=1,2", structure())), Error);
}
