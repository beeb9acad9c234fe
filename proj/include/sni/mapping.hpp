#pragma once

// Noise-to-input-tensor mappings.
//
// The dense form is the classic InputTensor = W z + b with one matrix seeing
// every code entry. The structured form gives each partition group its own
// (W_g, b_g); a cell only ever reads its own cell code (shared-scale entries
// covering it plus its group's local code), so the equivalent dense matrix
// is zero outside those blocks.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sni/latent.hpp"
#include "sni/tensor.hpp"

namespace sni {

/// Row-major [grid_h, grid_w, channels].
struct InputTensor {
  int grid_h = 0;
  int grid_w = 0;
  int channels = 0;
  std::vector<float> values;

  float at(int row, int col, int channel) const {
    return values[(static_cast<std::size_t>(row) * grid_w + col) * channels + channel];
  }
};

/// Independent per-group affine maps: weight [G, C, L], bias [G, C] with
/// L = cell_code_length().
struct MappingParameters {
  Tensor weight;
  Tensor bias;

  /// Weights N(0, 1/L) so every group's outputs start with unit variance; zero bias.
  static MappingParameters init(const NoiseStructure& structure, int channels, std::uint64_t seed);

  int n_groups() const { return weight.dim(0); }
  int channels() const { return weight.dim(1); }
  int code_length() const { return weight.dim(2); }
  std::span<const float> group_weight(int group) const;
  std::span<const float> group_bias(int group) const;
  std::size_t parameter_count() const { return weight.numel() + bias.numel(); }

  /// Throws StructureError when the group count or code length disagree.
  void check(const NoiseStructure& structure) const;
};

/// Reshaped W z + b. `weight` is [grid_h*grid_w*channels, z.size()] row-major,
/// rows in row-major cell order with channels innermost. `bias` holds either
/// `channels` entries (broadcast to every cell) or one per output row.
InputTensor map_dense(std::span<const float> z, std::span<const float> weight,
                      std::span<const float> bias, int grid_h, int grid_w, int channels);

/// output[i, j, :] = W_g cell_code(latent, (i, j)) + b_g with g the cell's group.
InputTensor map_structured(const StructuredLatent& latent, const MappingParameters& params);

/// The dense matrix (rows as in map_dense, columns over the spatial code)
/// and per-row bias equivalent to `params`.
struct DenseEquivalent {
  std::vector<float> weight;
  std::vector<float> bias;
  int rows = 0;
  int cols = 0;
};
DenseEquivalent assemble_dense(const NoiseStructure& structure, const MappingParameters& params);

/// Gather table shared by every forward pass under one structure.
struct CellCodeTable {
  int grid_h = 0;
  int grid_w = 0;
  int code_length = 0;
  std::size_t spatial_length = 0;
  std::vector<int> group;              // per cell
  std::vector<std::uint32_t> indices;  // cells * code_length spatial-code indices

  static std::shared_ptr<const CellCodeTable> build(const NoiseStructure& structure);
};

/// Batched, differentiable structured mapping:
/// spatial [N, spatial_length] -> [N, C, grid_h, grid_w]. First order only.
Tensor structured_map(const Tensor& spatial, const Tensor& weight, const Tensor& bias,
                      const std::shared_ptr<const CellCodeTable>& table);

// ---------------------------------------------------------------------------
// Influence masks

struct CodeSlot {
  enum class Kind { style, scale_block, local_group };
  Kind kind = Kind::style;
  int scale = -1;
  int block = -1;
  int group = -1;

  std::string name() const;
  /// Canonical flat-latent indices (style first) that belong to this slot.
  std::vector<std::size_t> flat_indices(const NoiseStructure& structure) const;
  bool operator==(const CodeSlot&) const = default;
};

struct SlotInfluence {
  CodeSlot slot;
  std::vector<Cell> cells;  // sorted
  bool operator==(const SlotInfluence&) const = default;
};

/// Every slot of the structure, in canonical order.
std::vector<CodeSlot> code_slots(const NoiseStructure& structure);

/// Declared mask: local slot of group g -> cells of g, shared block -> its
/// cells, style -> no cells.
std::vector<SlotInfluence> influence_mask(const NoiseStructure& structure,
                                          const MappingParameters& params);

/// Cells whose input-tensor entries change when every entry of a slot is
/// shifted by one, starting from the latent sampled with `seed`.
std::vector<SlotInfluence> measured_influence(const NoiseStructure& structure,
                                             const MappingParameters& params, std::uint64_t seed);

/// One 0/1 matrix per slot, headed by "# <slot name>".
std::string format_influence(const NoiseStructure& structure,
                             const std::vector<SlotInfluence>& masks);

}  // namespace sni
