#pragma once

// Structured latent codes.
//
// A NoiseStructure lays a grid of cells over the generator's input tensor.
// Cells are partitioned into groups; every group owns an independent local
// code. On top of that, each shared scale (s_h x s_w blocks, `dim` entries
// per block) contributes entries that all cells of a block see. The style
// code is separate and never enters the input tensor.
//
// Canonical flat order: style code, then shared scales in list order
// (coarse to fine, blocks row-major, dim innermost), then local codes of
// groups 0..n-1. Group ids are numbered by first appearance in row-major
// cell order, so "groups in row-major cell order" and "ascending group id"
// are the same thing.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace sni {

enum class PartitionKind { pixel, row, column, manual };

std::string to_string(PartitionKind kind);
PartitionKind partition_kind_from_string(const std::string& name);

struct SharedScale {
  int rows = 1;
  int cols = 1;
  int dim = 1;
  bool operator==(const SharedScale&) const = default;
};

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
  auto operator<=>(const Cell&) const = default;
};

class NoiseStructure {
 public:
  /// 8x8 grid, one group per cell, 16-entry local codes, a single global
  /// entry plus one entry per 2x2 quadrant, 128-entry style code.
  NoiseStructure();

  NoiseStructure(int grid_h, int grid_w, PartitionKind kind, int local_dim,
                 std::vector<SharedScale> scales, int style_dim);

  /// Manual regions. `cell_labels` (row-major, grid_h * grid_w) may use any
  /// integer labels; they are renumbered into canonical group ids.
  static NoiseStructure manual(int grid_h, int grid_w, const std::vector<int>& cell_labels,
                               int local_dim, std::vector<SharedScale> scales, int style_dim);

  /// Throws StructureError when any invariant is violated.
  void validate() const;

  int grid_h() const { return grid_h_; }
  int grid_w() const { return grid_w_; }
  int cell_count() const { return grid_h_ * grid_w_; }
  PartitionKind partition_kind() const { return kind_; }
  int local_dim() const { return local_dim_; }
  int style_dim() const { return style_dim_; }
  const std::vector<SharedScale>& shared_scales() const { return scales_; }
  const std::vector<int>& cell_groups() const { return cell_groups_; }

  int n_groups() const { return n_groups_; }
  int group_of(Cell cell) const;
  std::vector<Cell> cells_of_group(int group) const;
  bool contains(Cell cell) const {
    return cell.row >= 0 && cell.row < grid_h_ && cell.col >= 0 && cell.col < grid_w_;
  }

  /// Block index (row-major within the scale) of the block covering `cell`.
  int block_of(std::size_t scale, Cell cell) const;
  std::vector<Cell> cells_of_block(std::size_t scale, int block) const;
  std::size_t scale_length(std::size_t scale) const;

  /// Length of the spatially-variable code (shared scales + local codes).
  std::size_t spatial_length() const;
  std::size_t total_length() const { return static_cast<std::size_t>(style_dim_) + spatial_length(); }
  /// Entries a single cell sees: one block of each shared scale plus its local code.
  std::size_t cell_code_length() const;

  /// Offsets into the spatial code (not counting the style code).
  std::size_t scale_offset(std::size_t scale) const;
  std::size_t local_offset(int group) const;
  /// Spatial-code indices that make up cell_code(cell), in cell-code order.
  std::vector<std::size_t> cell_code_indices(Cell cell) const;

  nlohmann::json to_json() const;
  static NoiseStructure from_json(const nlohmann::json& j);

  bool operator==(const NoiseStructure& other) const;

 private:
  void build_partition();

  int grid_h_ = 8;
  int grid_w_ = 8;
  PartitionKind kind_ = PartitionKind::pixel;
  int local_dim_ = 16;
  std::vector<SharedScale> scales_;
  int style_dim_ = 128;
  std::vector<int> cell_groups_;
  int n_groups_ = 0;
};

/// Set of distinct grid cells. Bounds are checked against a structure at use.
class CellSelection {
 public:
  CellSelection() = default;
  explicit CellSelection(std::vector<Cell> cells);
  const std::vector<Cell>& cells() const { return cells_; }
  bool empty() const { return cells_.empty(); }
  std::size_t size() const { return cells_.size(); }
  /// Distinct groups touched by the selection, ascending.
  std::vector<int> groups(const NoiseStructure& structure) const;

 private:
  std::vector<Cell> cells_;
};

struct StyleSlot {};
struct ScaleSlot {
  std::size_t index = 0;
};
/// What a replace() writes: the local codes of the groups under some cells,
/// one shared scale, or the style code.
using SlotTarget = std::variant<CellSelection, ScaleSlot, StyleSlot>;

/// Slot-level mask over a structure's codes.
struct SlotMask {
  bool style = false;
  std::vector<char> scales;
  std::vector<char> groups;

  static SlotMask none(const NoiseStructure& s);
  static SlotMask all(const NoiseStructure& s);
  static SlotMask of(const NoiseStructure& s, const SlotTarget& target);
  SlotMask& operator|=(const SlotMask& other);
  /// Per-entry mask in canonical flat order (style first).
  std::vector<char> flat(const NoiseStructure& s) const;
};

struct StructuredLatent {
  NoiseStructure structure;
  std::vector<float> style;
  /// One vector per shared scale, rows*cols*dim entries.
  std::vector<std::vector<float>> scales;
  /// n_groups * local_dim entries.
  std::vector<float> local;
  std::uint64_t seed = 0;

  /// Throws StructureError when any shape disagrees with `structure`.
  void validate() const;

  std::vector<float> flatten() const;
  std::vector<float> spatial() const;
  static StructuredLatent unflatten(const NoiseStructure& structure, std::span<const float> flat,
                                    std::uint64_t seed = 0);

  std::span<const float> local_code(int group) const;
  bool operator==(const StructuredLatent& other) const;
};

/// Every entry i.i.d. N(0, 1), deterministic in `seed`.
StructuredLatent sample_latent(const NoiseStructure& structure, std::uint64_t seed);

/// Concatenation of the shared-scale entries covering `cell` (list order)
/// and the local code of its group.
std::vector<float> cell_code(const StructuredLatent& latent, Cell cell);

/// Number of values a replace() on `target` expects (the per-group form for cells).
std::size_t slot_length(const NoiseStructure& structure, const SlotTarget& target);
/// Current values in the targeted slots, in the order replace() consumes them.
std::vector<float> slot_values(const StructuredLatent& latent, const SlotTarget& target);
/// Fresh N(0, 1) values for the targeted slots.
std::vector<float> sample_slot(const NoiseStructure& structure, const SlotTarget& target,
                               std::uint64_t seed);

/// Copy of `latent` with the targeted slots overwritten. For a cell target,
/// `values` holds either one local code per selected group (ascending group
/// id) or a single local code written to every selected group.
StructuredLatent replace(const StructuredLatent& latent, const SlotTarget& target,
                         std::span<const float> values);

/// Masked slots: (1 - t) * a + t * b. Everything else: a.
StructuredLatent interpolate(const StructuredLatent& a, const StructuredLatent& b, double t,
                             const SlotMask& mask);
/// Masked slots: wa * a + wb * b in double, rounded once. Swapping (a, wa)
/// with (b, wb) gives the identical result.
StructuredLatent blend(const StructuredLatent& a, const StructuredLatent& b, double wa, double wb,
                       const SlotMask& mask);

// Serialization and digests.

nlohmann::json latent_to_json(const StructuredLatent& latent,
                              std::optional<std::uint64_t> noise_seed = std::nullopt);
StructuredLatent latent_from_json(const nlohmann::json& j,
                                  std::optional<std::uint64_t>* noise_seed = nullptr);

/// SHA-256 of the canonical flattened latent.
std::string latent_digest(const StructuredLatent& latent);

struct LatentDigests {
  std::string full;
  std::string style;
  std::string spatial;
  std::string scales;
  std::string local;
};
LatentDigests latent_digests(const StructuredLatent& latent);

}  // namespace sni
