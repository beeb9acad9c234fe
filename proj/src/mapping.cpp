#include "sni/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "sni/error.hpp"

namespace sni {

MappingParameters MappingParameters::init(const NoiseStructure& structure, int channels,
                                          std::uint64_t seed) {
  if (channels < 1) throw ArgumentError("mapping needs at least one output channel");
  const int g = structure.n_groups();
  const int l = static_cast<int>(structure.cell_code_length());
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(l)));
  std::vector<float> w(static_cast<std::size_t>(g) * channels * l);
  for (auto& v : w) v = dist(rng);
  MappingParameters p;
  p.weight = Tensor({g, channels, l}, std::move(w));
  p.bias = Tensor({g, channels}, 0.0f);
  return p;
}

std::span<const float> MappingParameters::group_weight(int group) const {
  const auto n = static_cast<std::size_t>(channels()) * code_length();
  return weight.values().subspan(static_cast<std::size_t>(group) * n, n);
}

std::span<const float> MappingParameters::group_bias(int group) const {
  return bias.values().subspan(static_cast<std::size_t>(group) * channels(),
                               static_cast<std::size_t>(channels()));
}

void MappingParameters::check(const NoiseStructure& structure) const {
  if (!weight.defined() || weight.rank() != 3 || !bias.defined() || bias.rank() != 2) {
    throw StructureError("mapping parameters are not initialised");
  }
  if (n_groups() != structure.n_groups()) {
    throw StructureError("mapping has " + std::to_string(n_groups()) + " groups, structure " +
                         std::to_string(structure.n_groups()));
  }
  if (static_cast<std::size_t>(code_length()) != structure.cell_code_length()) {
    throw StructureError("mapping expects cell codes of length " + std::to_string(code_length()) +
                         ", structure provides " + std::to_string(structure.cell_code_length()));
  }
  if (bias.dim(0) != n_groups() || bias.dim(1) != channels()) {
    throw StructureError("mapping bias shape disagrees with weight");
  }
}

InputTensor map_dense(std::span<const float> z, std::span<const float> weight,
                      std::span<const float> bias, int grid_h, int grid_w, int channels) {
  const std::size_t rows = static_cast<std::size_t>(grid_h) * grid_w * channels;
  if (rows == 0) throw ShapeError("map_dense: empty output");
  if (weight.size() != rows * z.size()) {
    throw ShapeError("map_dense: weight has " + std::to_string(weight.size()) + " entries, need " +
                     std::to_string(rows) + "x" + std::to_string(z.size()));
  }
  const bool broadcast = bias.size() == static_cast<std::size_t>(channels);
  if (!broadcast && bias.size() != rows) {
    throw ShapeError("map_dense: bias must have " + std::to_string(channels) + " or " +
                     std::to_string(rows) + " entries");
  }
  InputTensor out{grid_h, grid_w, channels, std::vector<float>(rows)};
  for (std::size_t r = 0; r < rows; ++r) {
    const float* w = weight.data() + r * z.size();
    float acc = 0.0f;
    for (std::size_t k = 0; k < z.size(); ++k) acc += w[k] * z[k];
    out.values[r] = acc + bias[broadcast ? r % static_cast<std::size_t>(channels) : r];
  }
  return out;
}

std::shared_ptr<const CellCodeTable> CellCodeTable::build(const NoiseStructure& structure) {
  structure.validate();
  auto t = std::make_shared<CellCodeTable>();
  t->grid_h = structure.grid_h();
  t->grid_w = structure.grid_w();
  t->code_length = static_cast<int>(structure.cell_code_length());
  t->spatial_length = structure.spatial_length();
  for (int i = 0; i < t->grid_h; ++i)
    for (int j = 0; j < t->grid_w; ++j) {
      t->group.push_back(structure.group_of({i, j}));
      for (std::size_t idx : structure.cell_code_indices({i, j}))
        t->indices.push_back(static_cast<std::uint32_t>(idx));
    }
  return t;
}

Tensor structured_map(const Tensor& spatial, const Tensor& weight, const Tensor& bias,
                      const std::shared_ptr<const CellCodeTable>& table) {
  if (spatial.rank() != 2 || static_cast<std::size_t>(spatial.dim(1)) != table->spatial_length) {
    throw ShapeError("structured_map: spatial code " + shape_str(spatial.shape()) +
                     " does not match structure length " + std::to_string(table->spatial_length));
  }
  const int n = spatial.dim(0);
  const int g = weight.dim(0);
  const int c = weight.dim(1);
  const int l = table->code_length;
  if (weight.dim(2) != l || bias.shape() != Shape{g, c}) {
    throw ShapeError("structured_map: parameters " + shape_str(weight.shape()) + "/" +
                     shape_str(bias.shape()) + " vs cell code length " + std::to_string(l));
  }
  const int cells = table->grid_h * table->grid_w;
  const std::size_t sl = table->spatial_length;
  std::vector<float> out(static_cast<std::size_t>(n) * c * cells);
  std::vector<float> code(static_cast<std::size_t>(l));
  for (int ni = 0; ni < n; ++ni) {
    const float* z = spatial.data() + static_cast<std::size_t>(ni) * sl;
    for (int cell = 0; cell < cells; ++cell) {
      const int grp = table->group[static_cast<std::size_t>(cell)];
      if (grp >= g) throw StructureError("structured_map: group id exceeds parameter groups");
      const std::uint32_t* idx = table->indices.data() + static_cast<std::size_t>(cell) * l;
      for (int k = 0; k < l; ++k) code[static_cast<std::size_t>(k)] = z[idx[k]];
      const float* w = weight.data() + static_cast<std::size_t>(grp) * c * l;
      const float* b = bias.data() + static_cast<std::size_t>(grp) * c;
      for (int ci = 0; ci < c; ++ci) {
        float acc = b[ci];
        const float* wr = w + static_cast<std::size_t>(ci) * l;
        for (int k = 0; k < l; ++k) acc += wr[k] * code[static_cast<std::size_t>(k)];
        out[(static_cast<std::size_t>(ni) * c + ci) * cells + cell] = acc;
      }
    }
  }
  return detail::make_result(
      {n, c, table->grid_h, table->grid_w}, std::move(out), {spatial, weight, bias},
      [spatial, weight, table, n, g, c, l, cells, sl](const Tensor& grad,
                                                      const std::vector<char>& need) {
        std::vector<float> gz(need[0] ? spatial.numel() : 0, 0.0f);
        std::vector<float> gw(need[1] ? weight.numel() : 0, 0.0f);
        std::vector<float> gb(static_cast<std::size_t>(g) * c, 0.0f);
        std::vector<float> code(static_cast<std::size_t>(l));
        for (int ni = 0; ni < n; ++ni) {
          const float* z = spatial.data() + static_cast<std::size_t>(ni) * sl;
          for (int cell = 0; cell < cells; ++cell) {
            const int grp = table->group[static_cast<std::size_t>(cell)];
            const std::uint32_t* idx = table->indices.data() + static_cast<std::size_t>(cell) * l;
            for (int k = 0; k < l; ++k) code[static_cast<std::size_t>(k)] = z[idx[k]];
            const float* w = weight.data() + static_cast<std::size_t>(grp) * c * l;
            for (int ci = 0; ci < c; ++ci) {
              const float go = grad.data()[(static_cast<std::size_t>(ni) * c + ci) * cells + cell];
              if (go == 0.0f) continue;
              gb[static_cast<std::size_t>(grp) * c + ci] += go;
              const float* wr = w + static_cast<std::size_t>(ci) * l;
              if (need[0]) {
                float* gzn = gz.data() + static_cast<std::size_t>(ni) * sl;
                for (int k = 0; k < l; ++k) gzn[idx[k]] += go * wr[k];
              }
              if (need[1]) {
                float* gwr = gw.data() + (static_cast<std::size_t>(grp) * c + ci) * l;
                for (int k = 0; k < l; ++k) gwr[k] += go * code[static_cast<std::size_t>(k)];
              }
            }
          }
        }
        return std::vector<Tensor>{
            need[0] ? Tensor(spatial.shape(), std::move(gz)) : Tensor{},
            need[1] ? Tensor(weight.shape(), std::move(gw)) : Tensor{},
            Tensor({g, c}, std::move(gb))};
      },
      "structured_map", false);
}

InputTensor map_structured(const StructuredLatent& latent, const MappingParameters& params) {
  latent.validate();
  params.check(latent.structure);
  const auto table = CellCodeTable::build(latent.structure);
  const auto spatial = latent.spatial();
  Tensor out;
  {
    NoGradGuard no_grad;
    out = structured_map(Tensor({1, static_cast<int>(spatial.size())}, spatial), params.weight,
                         params.bias, table);
  }
  const int c = params.channels();
  const int gh = table->grid_h;
  const int gw = table->grid_w;
  InputTensor result{gh, gw, c, std::vector<float>(out.numel())};
  for (int ci = 0; ci < c; ++ci)
    for (int cell = 0; cell < gh * gw; ++cell)
      result.values[static_cast<std::size_t>(cell) * c + ci] =
          out.data()[static_cast<std::size_t>(ci) * gh * gw + cell];
  return result;
}

DenseEquivalent assemble_dense(const NoiseStructure& structure, const MappingParameters& params) {
  params.check(structure);
  const int c = params.channels();
  const int l = params.code_length();
  DenseEquivalent d;
  d.rows = structure.cell_count() * c;
  d.cols = static_cast<int>(structure.spatial_length());
  d.weight.assign(static_cast<std::size_t>(d.rows) * d.cols, 0.0f);
  d.bias.assign(static_cast<std::size_t>(d.rows), 0.0f);
  for (int i = 0; i < structure.grid_h(); ++i)
    for (int j = 0; j < structure.grid_w(); ++j) {
      const int cell = i * structure.grid_w() + j;
      const int g = structure.group_of({i, j});
      const auto idx = structure.cell_code_indices({i, j});
      const auto w = params.group_weight(g);
      const auto b = params.group_bias(g);
      for (int ci = 0; ci < c; ++ci) {
        const std::size_t row = static_cast<std::size_t>(cell) * c + ci;
        d.bias[row] = b[static_cast<std::size_t>(ci)];
        for (int k = 0; k < l; ++k)
          d.weight[row * d.cols + idx[static_cast<std::size_t>(k)]] +=
              w[static_cast<std::size_t>(ci) * l + k];
      }
    }
  return d;
}

// ---------------------------------------------------------------------------
// Influence

std::string CodeSlot::name() const {
  switch (kind) {
    case Kind::style: return "style";
    case Kind::scale_block:
      return "scale" + std::to_string(scale) + ".block" + std::to_string(block);
    case Kind::local_group: return "local.group" + std::to_string(group);
  }
  return "?";
}

std::vector<std::size_t> CodeSlot::flat_indices(const NoiseStructure& s) const {
  std::vector<std::size_t> out;
  const auto style = static_cast<std::size_t>(s.style_dim());
  switch (kind) {
    case Kind::style:
      for (std::size_t i = 0; i < style; ++i) out.push_back(i);
      break;
    case Kind::scale_block: {
      const int dim = s.shared_scales().at(static_cast<std::size_t>(scale)).dim;
      const std::size_t base =
          style + s.scale_offset(static_cast<std::size_t>(scale)) + static_cast<std::size_t>(block) * dim;
      for (int d = 0; d < dim; ++d) out.push_back(base + static_cast<std::size_t>(d));
      break;
    }
    case Kind::local_group: {
      const std::size_t base = style + s.local_offset(group);
      for (int d = 0; d < s.local_dim(); ++d) out.push_back(base + static_cast<std::size_t>(d));
      break;
    }
  }
  return out;
}

std::vector<CodeSlot> code_slots(const NoiseStructure& s) {
  std::vector<CodeSlot> out{{CodeSlot::Kind::style}};
  for (std::size_t k = 0; k < s.shared_scales().size(); ++k) {
    const auto& sc = s.shared_scales()[k];
    for (int b = 0; b < sc.rows * sc.cols; ++b)
      out.push_back({CodeSlot::Kind::scale_block, static_cast<int>(k), b, -1});
  }
  for (int g = 0; g < s.n_groups(); ++g) out.push_back({CodeSlot::Kind::local_group, -1, -1, g});
  return out;
}

std::vector<SlotInfluence> influence_mask(const NoiseStructure& structure,
                                          const MappingParameters& params) {
  structure.validate();
  params.check(structure);
  std::vector<SlotInfluence> out;
  for (const auto& slot : code_slots(structure)) {
    SlotInfluence inf{slot, {}};
    if (slot.kind == CodeSlot::Kind::scale_block) {
      inf.cells = structure.cells_of_block(static_cast<std::size_t>(slot.scale), slot.block);
    } else if (slot.kind == CodeSlot::Kind::local_group) {
      inf.cells = structure.cells_of_group(slot.group);
    }
    std::sort(inf.cells.begin(), inf.cells.end());
    out.push_back(std::move(inf));
  }
  return out;
}

std::vector<SlotInfluence> measured_influence(const NoiseStructure& structure,
                                             const MappingParameters& params, std::uint64_t seed) {
  structure.validate();
  params.check(structure);
  const StructuredLatent base = sample_latent(structure, seed);
  const InputTensor ref = map_structured(base, params);
  const auto flat = base.flatten();
  std::vector<SlotInfluence> out;
  for (const auto& slot : code_slots(structure)) {
    std::vector<float> moved = flat;
    for (std::size_t i : slot.flat_indices(structure)) moved[i] += 1.0f;
    const InputTensor t = map_structured(StructuredLatent::unflatten(structure, moved), params);
    SlotInfluence inf{slot, {}};
    for (int r = 0; r < structure.grid_h(); ++r)
      for (int c = 0; c < structure.grid_w(); ++c)
        for (int k = 0; k < t.channels; ++k)
          if (t.at(r, c, k) != ref.at(r, c, k)) {
            inf.cells.push_back({r, c});
            break;
          }
    out.push_back(std::move(inf));
  }
  return out;
}

std::string format_influence(const NoiseStructure& structure,
                             const std::vector<SlotInfluence>& masks) {
  std::ostringstream os;
  for (const auto& m : masks) {
    os << "# " << m.slot.name() << '\n';
    std::vector<char> hit(static_cast<std::size_t>(structure.cell_count()), 0);
    for (const auto& c : m.cells) hit[static_cast<std::size_t>(c.row * structure.grid_w() + c.col)] = 1;
    for (int i = 0; i < structure.grid_h(); ++i) {
      for (int j = 0; j < structure.grid_w(); ++j)
        os << (j ? " " : "") << (hit[static_cast<std::size_t>(i * structure.grid_w() + j)] ? '1' : '0');
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace sni
