#include "sni/latent.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "sni/error.hpp"
#include "sni/hash.hpp"

namespace sni {

namespace {

constexpr const char* kLatentFormat = "sni-latent";
constexpr int kLatentVersion = 1;

std::vector<float> normal_values(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

void check_cell(const NoiseStructure& s, Cell c) {
  if (!s.contains(c)) {
    throw ArgumentError("cell (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                        ") outside " + std::to_string(s.grid_h()) + "x" +
                        std::to_string(s.grid_w()) + " grid");
  }
}

void check_scale_index(const NoiseStructure& s, std::size_t k) {
  if (k >= s.shared_scales().size()) {
    throw ArgumentError("shared scale index " + std::to_string(k) + " out of range (" +
                        std::to_string(s.shared_scales().size()) + " scales)");
  }
}

}  // namespace

std::string to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::pixel: return "pixel";
    case PartitionKind::row: return "row";
    case PartitionKind::column: return "column";
    case PartitionKind::manual: return "manual";
  }
  return "?";
}

PartitionKind partition_kind_from_string(const std::string& name) {
  if (name == "pixel") return PartitionKind::pixel;
  if (name == "row") return PartitionKind::row;
  if (name == "column") return PartitionKind::column;
  if (name == "manual") return PartitionKind::manual;
  throw StructureError("unknown partition kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// NoiseStructure

NoiseStructure::NoiseStructure()
    : NoiseStructure(8, 8, PartitionKind::pixel, 16, {{1, 1, 1}, {2, 2, 1}}, 128) {}

NoiseStructure::NoiseStructure(int grid_h, int grid_w, PartitionKind kind, int local_dim,
                               std::vector<SharedScale> scales, int style_dim)
    : grid_h_(grid_h),
      grid_w_(grid_w),
      kind_(kind),
      local_dim_(local_dim),
      scales_(std::move(scales)),
      style_dim_(style_dim) {
  if (kind == PartitionKind::manual) {
    throw StructureError("manual partitions are built with NoiseStructure::manual");
  }
  build_partition();
  validate();
}

NoiseStructure NoiseStructure::manual(int grid_h, int grid_w, const std::vector<int>& cell_labels,
                                      int local_dim, std::vector<SharedScale> scales,
                                      int style_dim) {
  if (grid_h < 1 || grid_w < 1 ||
      cell_labels.size() != static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w)) {
    throw StructureError("manual partition needs one label per cell");
  }
  NoiseStructure s;
  s.grid_h_ = grid_h;
  s.grid_w_ = grid_w;
  s.kind_ = PartitionKind::manual;
  s.local_dim_ = local_dim;
  s.scales_ = std::move(scales);
  s.style_dim_ = style_dim;
  std::map<int, int> renumber;
  s.cell_groups_.clear();
  for (int label : cell_labels) {
    auto it = renumber.find(label);
    if (it == renumber.end()) it = renumber.emplace(label, static_cast<int>(renumber.size())).first;
    s.cell_groups_.push_back(it->second);
  }
  s.n_groups_ = static_cast<int>(renumber.size());
  s.validate();
  return s;
}

void NoiseStructure::build_partition() {
  if (grid_h_ < 1 || grid_w_ < 1) throw StructureError("grid dimensions must be positive");
  cell_groups_.assign(static_cast<std::size_t>(grid_h_) * grid_w_, 0);
  for (int i = 0; i < grid_h_; ++i)
    for (int j = 0; j < grid_w_; ++j) {
      int g = 0;
      switch (kind_) {
        case PartitionKind::pixel: g = i * grid_w_ + j; break;
        case PartitionKind::row: g = i; break;
        case PartitionKind::column: g = j; break;
        case PartitionKind::manual: break;
      }
      cell_groups_[static_cast<std::size_t>(i * grid_w_ + j)] = g;
    }
  n_groups_ = kind_ == PartitionKind::pixel ? grid_h_ * grid_w_
              : kind_ == PartitionKind::row ? grid_h_
                                            : grid_w_;
}

void NoiseStructure::validate() const {
  if (grid_h_ < 1 || grid_w_ < 1) throw StructureError("grid dimensions must be positive");
  if (local_dim_ < 1) throw StructureError("local_dim must be positive");
  if (style_dim_ < 1) throw StructureError("style_dim must be positive");
  if (cell_groups_.size() != static_cast<std::size_t>(grid_h_) * grid_w_) {
    throw StructureError("partition does not cover the grid");
  }
  int next = 0;
  for (int g : cell_groups_) {
    if (g < 0 || g > next) {
      throw StructureError("group ids must be contiguous from 0 in row-major first-appearance order");
    }
    if (g == next) ++next;
  }
  if (next != n_groups_) throw StructureError("group count mismatch");
  int prev_blocks = 0;
  for (const auto& sc : scales_) {
    if (sc.rows < 1 || sc.cols < 1 || sc.dim < 1) {
      throw StructureError("shared scale entries must be positive");
    }
    if (grid_h_ % sc.rows != 0 || grid_w_ % sc.cols != 0) {
      throw StructureError("shared scale " + std::to_string(sc.rows) + "x" +
                           std::to_string(sc.cols) + " does not tile a " +
                           std::to_string(grid_h_) + "x" + std::to_string(grid_w_) + " grid");
    }
    if (sc.rows * sc.cols < prev_blocks) {
      throw StructureError("shared scales must be listed coarse to fine");
    }
    prev_blocks = sc.rows * sc.cols;
  }
}

int NoiseStructure::group_of(Cell cell) const {
  check_cell(*this, cell);
  return cell_groups_[static_cast<std::size_t>(cell.row * grid_w_ + cell.col)];
}

std::vector<Cell> NoiseStructure::cells_of_group(int group) const {
  std::vector<Cell> out;
  for (int i = 0; i < grid_h_; ++i)
    for (int j = 0; j < grid_w_; ++j)
      if (cell_groups_[static_cast<std::size_t>(i * grid_w_ + j)] == group) out.push_back({i, j});
  return out;
}

int NoiseStructure::block_of(std::size_t scale, Cell cell) const {
  check_scale_index(*this, scale);
  check_cell(*this, cell);
  const auto& sc = scales_[scale];
  const int bi = cell.row * sc.rows / grid_h_;
  const int bj = cell.col * sc.cols / grid_w_;
  return bi * sc.cols + bj;
}

std::vector<Cell> NoiseStructure::cells_of_block(std::size_t scale, int block) const {
  std::vector<Cell> out;
  for (int i = 0; i < grid_h_; ++i)
    for (int j = 0; j < grid_w_; ++j)
      if (block_of(scale, {i, j}) == block) out.push_back({i, j});
  return out;
}

std::size_t NoiseStructure::scale_length(std::size_t scale) const {
  check_scale_index(*this, scale);
  const auto& sc = scales_[scale];
  return static_cast<std::size_t>(sc.rows) * sc.cols * sc.dim;
}

std::size_t NoiseStructure::spatial_length() const {
  std::size_t n = static_cast<std::size_t>(n_groups_) * local_dim_;
  for (std::size_t k = 0; k < scales_.size(); ++k) n += scale_length(k);
  return n;
}

std::size_t NoiseStructure::cell_code_length() const {
  std::size_t n = static_cast<std::size_t>(local_dim_);
  for (const auto& sc : scales_) n += static_cast<std::size_t>(sc.dim);
  return n;
}

std::size_t NoiseStructure::scale_offset(std::size_t scale) const {
  check_scale_index(*this, scale);
  std::size_t off = 0;
  for (std::size_t k = 0; k < scale; ++k) off += scale_length(k);
  return off;
}

std::size_t NoiseStructure::local_offset(int group) const {
  if (group < 0 || group >= n_groups_) throw ArgumentError("group id out of range");
  std::size_t off = 0;
  for (std::size_t k = 0; k < scales_.size(); ++k) off += scale_length(k);
  return off + static_cast<std::size_t>(group) * local_dim_;
}

std::vector<std::size_t> NoiseStructure::cell_code_indices(Cell cell) const {
  std::vector<std::size_t> idx;
  idx.reserve(cell_code_length());
  for (std::size_t k = 0; k < scales_.size(); ++k) {
    const std::size_t base =
        scale_offset(k) + static_cast<std::size_t>(block_of(k, cell)) * scales_[k].dim;
    for (int d = 0; d < scales_[k].dim; ++d) idx.push_back(base + static_cast<std::size_t>(d));
  }
  const std::size_t base = local_offset(group_of(cell));
  for (int d = 0; d < local_dim_; ++d) idx.push_back(base + static_cast<std::size_t>(d));
  return idx;
}

nlohmann::json NoiseStructure::to_json() const {
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& sc : scales_) scales.push_back({sc.rows, sc.cols, sc.dim});
  nlohmann::json partition{{"kind", to_string(kind_)}};
  if (kind_ == PartitionKind::manual) partition["groups"] = cell_groups_;
  return {{"grid_h", grid_h_},     {"grid_w", grid_w_},       {"partition", partition},
          {"local_dim", local_dim_}, {"shared_scales", scales}, {"style_dim", style_dim_}};
}

NoiseStructure NoiseStructure::from_json(const nlohmann::json& j) {
  try {
    static const std::set<std::string> known{"grid_h",    "grid_w",        "partition",
                                             "local_dim", "shared_scales", "style_dim"};
    for (const auto& [key, _] : j.items()) {
      if (!known.count(key)) throw StructureError("unknown structure key '" + key + "'");
    }
    const NoiseStructure defaults;
    const int gh = j.value("grid_h", defaults.grid_h_);
    const int gw = j.value("grid_w", defaults.grid_w_);
    const int local = j.value("local_dim", defaults.local_dim_);
    const int style = j.value("style_dim", defaults.style_dim_);
    std::vector<SharedScale> scales = defaults.scales_;
    if (j.contains("shared_scales")) {
      scales.clear();
      for (const auto& e : j.at("shared_scales")) {
        if (!e.is_array() || e.size() != 3) {
          throw StructureError("shared_scales entries are [rows, cols, dim]");
        }
        scales.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
      }
    }
    PartitionKind kind = PartitionKind::pixel;
    nlohmann::json partition = j.value("partition", nlohmann::json::object());
    if (partition.is_string()) partition = {{"kind", partition}};
    for (const auto& [key, _] : partition.items()) {
      if (key != "kind" && key != "groups") {
        throw StructureError("unknown partition key '" + key + "'");
      }
    }
    kind = partition_kind_from_string(partition.value("kind", std::string("pixel")));
    if (kind == PartitionKind::manual) {
      if (!partition.contains("groups")) throw StructureError("manual partition needs 'groups'");
      return manual(gh, gw, partition.at("groups").get<std::vector<int>>(), local,
                    std::move(scales), style);
    }
    return NoiseStructure(gh, gw, kind, local, std::move(scales), style);
  } catch (const nlohmann::json::exception& e) {
    throw StructureError(std::string("malformed structure: ") + e.what());
  }
}

bool NoiseStructure::operator==(const NoiseStructure& o) const {
  return grid_h_ == o.grid_h_ && grid_w_ == o.grid_w_ && kind_ == o.kind_ &&
         local_dim_ == o.local_dim_ && scales_ == o.scales_ && style_dim_ == o.style_dim_ &&
         cell_groups_ == o.cell_groups_;
}

// ---------------------------------------------------------------------------
// CellSelection / SlotMask

CellSelection::CellSelection(std::vector<Cell> cells) : cells_(std::move(cells)) {
  std::set<Cell> seen;
  for (const auto& c : cells_) {
    if (!seen.insert(c).second) {
      throw ArgumentError("duplicate cell (" + std::to_string(c.row) + "," +
                          std::to_string(c.col) + ") in selection");
    }
  }
}

std::vector<int> CellSelection::groups(const NoiseStructure& structure) const {
  std::set<int> gs;
  for (const auto& c : cells_) gs.insert(structure.group_of(c));
  return {gs.begin(), gs.end()};
}

SlotMask SlotMask::none(const NoiseStructure& s) {
  SlotMask m;
  m.scales.assign(s.shared_scales().size(), 0);
  m.groups.assign(static_cast<std::size_t>(s.n_groups()), 0);
  return m;
}

SlotMask SlotMask::all(const NoiseStructure& s) {
  SlotMask m;
  m.style = true;
  m.scales.assign(s.shared_scales().size(), 1);
  m.groups.assign(static_cast<std::size_t>(s.n_groups()), 1);
  return m;
}

SlotMask SlotMask::of(const NoiseStructure& s, const SlotTarget& target) {
  SlotMask m = none(s);
  if (std::holds_alternative<StyleSlot>(target)) {
    m.style = true;
  } else if (const auto* sc = std::get_if<ScaleSlot>(&target)) {
    check_scale_index(s, sc->index);
    m.scales[sc->index] = 1;
  } else {
    for (int g : std::get<CellSelection>(target).groups(s)) m.groups[static_cast<std::size_t>(g)] = 1;
  }
  return m;
}

SlotMask& SlotMask::operator|=(const SlotMask& other) {
  if (other.scales.size() != scales.size() || other.groups.size() != groups.size()) {
    throw StructureError("slot masks from different structures");
  }
  style = style || other.style;
  for (std::size_t k = 0; k < scales.size(); ++k) scales[k] = scales[k] || other.scales[k];
  for (std::size_t g = 0; g < groups.size(); ++g) groups[g] = groups[g] || other.groups[g];
  return *this;
}

std::vector<char> SlotMask::flat(const NoiseStructure& s) const {
  if (scales.size() != s.shared_scales().size() ||
      groups.size() != static_cast<std::size_t>(s.n_groups())) {
    throw StructureError("slot mask does not match structure");
  }
  std::vector<char> out;
  out.reserve(s.total_length());
  out.insert(out.end(), static_cast<std::size_t>(s.style_dim()), style ? 1 : 0);
  for (std::size_t k = 0; k < scales.size(); ++k) out.insert(out.end(), s.scale_length(k), scales[k]);
  for (std::size_t g = 0; g < groups.size(); ++g)
    out.insert(out.end(), static_cast<std::size_t>(s.local_dim()), groups[g]);
  return out;
}

// ---------------------------------------------------------------------------
// StructuredLatent

void StructuredLatent::validate() const {
  structure.validate();
  if (style.size() != static_cast<std::size_t>(structure.style_dim())) {
    throw StructureError("style code length " + std::to_string(style.size()) + " != " +
                         std::to_string(structure.style_dim()));
  }
  if (scales.size() != structure.shared_scales().size()) {
    throw StructureError("latent has " + std::to_string(scales.size()) + " shared scales, structure " +
                         std::to_string(structure.shared_scales().size()));
  }
  for (std::size_t k = 0; k < scales.size(); ++k) {
    if (scales[k].size() != structure.scale_length(k)) {
      throw StructureError("shared scale " + std::to_string(k) + " has wrong length");
    }
  }
  if (local.size() != static_cast<std::size_t>(structure.n_groups()) * structure.local_dim()) {
    throw StructureError("local code block has wrong length");
  }
}

std::vector<float> StructuredLatent::flatten() const {
  std::vector<float> out;
  out.reserve(structure.total_length());
  out.insert(out.end(), style.begin(), style.end());
  for (const auto& sc : scales) out.insert(out.end(), sc.begin(), sc.end());
  out.insert(out.end(), local.begin(), local.end());
  return out;
}

std::vector<float> StructuredLatent::spatial() const {
  std::vector<float> out;
  out.reserve(structure.spatial_length());
  for (const auto& sc : scales) out.insert(out.end(), sc.begin(), sc.end());
  out.insert(out.end(), local.begin(), local.end());
  return out;
}

StructuredLatent StructuredLatent::unflatten(const NoiseStructure& structure,
                                             std::span<const float> flat, std::uint64_t seed) {
  structure.validate();
  if (flat.size() != structure.total_length()) {
    throw StructureError("flat latent has " + std::to_string(flat.size()) + " entries, structure needs " +
                         std::to_string(structure.total_length()));
  }
  StructuredLatent z;
  z.structure = structure;
  z.seed = seed;
  auto it = flat.begin();
  z.style.assign(it, it + structure.style_dim());
  it += structure.style_dim();
  for (std::size_t k = 0; k < structure.shared_scales().size(); ++k) {
    const auto n = static_cast<std::ptrdiff_t>(structure.scale_length(k));
    z.scales.emplace_back(it, it + n);
    it += n;
  }
  z.local.assign(it, flat.end());
  return z;
}

std::span<const float> StructuredLatent::local_code(int group) const {
  if (group < 0 || group >= structure.n_groups()) throw ArgumentError("group id out of range");
  return std::span<const float>(local).subspan(
      static_cast<std::size_t>(group) * structure.local_dim(),
      static_cast<std::size_t>(structure.local_dim()));
}

bool StructuredLatent::operator==(const StructuredLatent& o) const {
  return structure == o.structure && style == o.style && scales == o.scales && local == o.local;
}

StructuredLatent sample_latent(const NoiseStructure& structure, std::uint64_t seed) {
  structure.validate();
  return StructuredLatent::unflatten(structure, normal_values(structure.total_length(), seed), seed);
}

std::vector<float> cell_code(const StructuredLatent& latent, Cell cell) {
  const auto& s = latent.structure;
  check_cell(s, cell);
  std::vector<float> out;
  out.reserve(s.cell_code_length());
  for (std::size_t k = 0; k < s.shared_scales().size(); ++k) {
    const int dim = s.shared_scales()[k].dim;
    const auto base = static_cast<std::size_t>(s.block_of(k, cell)) * dim;
    out.insert(out.end(), latent.scales[k].begin() + static_cast<std::ptrdiff_t>(base),
               latent.scales[k].begin() + static_cast<std::ptrdiff_t>(base + dim));
  }
  const auto code = latent.local_code(s.group_of(cell));
  out.insert(out.end(), code.begin(), code.end());
  return out;
}

// ---------------------------------------------------------------------------
// Editing

std::size_t slot_length(const NoiseStructure& structure, const SlotTarget& target) {
  if (std::holds_alternative<StyleSlot>(target)) return static_cast<std::size_t>(structure.style_dim());
  if (const auto* sc = std::get_if<ScaleSlot>(&target)) return structure.scale_length(sc->index);
  const auto& sel = std::get<CellSelection>(target);
  if (sel.empty()) throw ArgumentError("empty cell selection");
  return sel.groups(structure).size() * static_cast<std::size_t>(structure.local_dim());
}

std::vector<float> slot_values(const StructuredLatent& latent, const SlotTarget& target) {
  const auto& s = latent.structure;
  if (std::holds_alternative<StyleSlot>(target)) return latent.style;
  if (const auto* sc = std::get_if<ScaleSlot>(&target)) {
    check_scale_index(s, sc->index);
    return latent.scales[sc->index];
  }
  std::vector<float> out;
  for (int g : std::get<CellSelection>(target).groups(s)) {
    const auto code = latent.local_code(g);
    out.insert(out.end(), code.begin(), code.end());
  }
  return out;
}

std::vector<float> sample_slot(const NoiseStructure& structure, const SlotTarget& target,
                               std::uint64_t seed) {
  return normal_values(slot_length(structure, target), seed);
}

StructuredLatent replace(const StructuredLatent& latent, const SlotTarget& target,
                         std::span<const float> values) {
  latent.validate();
  const auto& s = latent.structure;
  StructuredLatent out = latent;
  auto mismatch = [&](std::size_t expected) {
    return ShapeError("replace: expected " + std::to_string(expected) + " values, got " +
                      std::to_string(values.size()));
  };
  if (std::holds_alternative<StyleSlot>(target)) {
    if (values.size() != out.style.size()) throw mismatch(out.style.size());
    out.style.assign(values.begin(), values.end());
  } else if (const auto* sc = std::get_if<ScaleSlot>(&target)) {
    check_scale_index(s, sc->index);
    auto& dst = out.scales[sc->index];
    if (values.size() != dst.size()) throw mismatch(dst.size());
    dst.assign(values.begin(), values.end());
  } else {
    const auto& sel = std::get<CellSelection>(target);
    if (sel.empty()) throw ArgumentError("empty cell selection");
    const auto groups = sel.groups(s);
    const auto dim = static_cast<std::size_t>(s.local_dim());
    const bool broadcast = values.size() == dim;
    if (!broadcast && values.size() != groups.size() * dim) throw mismatch(groups.size() * dim);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto src = values.subspan(broadcast ? 0 : k * dim, dim);
      std::copy(src.begin(), src.end(),
                out.local.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(groups[k]) * dim));
    }
  }
  return out;
}

StructuredLatent blend(const StructuredLatent& a, const StructuredLatent& b, double wa, double wb,
                       const SlotMask& mask) {
  if (!(a.structure == b.structure)) throw StructureError("interpolate: latents differ in structure");
  a.validate();
  b.validate();
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  const auto m = mask.flat(a.structure);
  std::vector<float> out(fa);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m[i]) out[i] = static_cast<float>(wa * fa[i] + wb * fb[i]);
  }
  return StructuredLatent::unflatten(a.structure, out, a.seed);
}

StructuredLatent interpolate(const StructuredLatent& a, const StructuredLatent& b, double t,
                             const SlotMask& mask) {
  if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("interpolation t must lie in [0, 1]");
  return blend(a, b, 1.0 - t, t, mask);
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json latent_to_json(const StructuredLatent& latent,
                              std::optional<std::uint64_t> noise_seed) {
  latent.validate();
  nlohmann::json j{{"format", kLatentFormat},
                   {"version", kLatentVersion},
                   {"structure", latent.structure.to_json()},
                   {"seed", latent.seed},
                   {"codes", latent.flatten()}};
  if (noise_seed) j["noise_seed"] = *noise_seed;
  return j;
}

StructuredLatent latent_from_json(const nlohmann::json& j,
                                  std::optional<std::uint64_t>* noise_seed) {
  try {
    if (j.value("format", std::string()) != kLatentFormat) {
      throw StructureError("not a latent record (format != sni-latent)");
    }
    if (j.value("version", 0) != kLatentVersion) {
      throw StructureError("unsupported latent record version");
    }
    const auto structure = NoiseStructure::from_json(j.at("structure"));
    const auto codes = j.at("codes").get<std::vector<float>>();
    auto z = StructuredLatent::unflatten(structure, codes, j.value("seed", std::uint64_t{0}));
    if (noise_seed) {
      *noise_seed = j.contains("noise_seed") ? std::optional<std::uint64_t>(j["noise_seed"].get<std::uint64_t>())
                                             : std::nullopt;
    }
    return z;
  } catch (const nlohmann::json::exception& e) {
    throw StructureError(std::string("malformed latent record: ") + e.what());
  }
}

std::string latent_digest(const StructuredLatent& latent) { return sha256_hex(latent.flatten()); }

LatentDigests latent_digests(const StructuredLatent& latent) {
  std::vector<float> scales;
  for (const auto& sc : latent.scales) scales.insert(scales.end(), sc.begin(), sc.end());
  return {latent_digest(latent), sha256_hex(latent.style), sha256_hex(latent.spatial()),
          sha256_hex(scales), sha256_hex(latent.local)};
}

}  // namespace sni
