#pragma once

// Cross-environment meta state embedding h(s; z): maps an environment state
// plus the environment's domain knowledge z into a fixed 3x2 meta state
// shared by every environment of a run.

#include <array>
#include <string>

#include "hmrl/diffcore.hpp"
#include "hmrl/envs.hpp"

namespace hmrl {

inline constexpr std::size_t kMetaRows = 3;
inline constexpr std::size_t kMetaCols = 2;
inline constexpr std::size_t kMetaDim = kMetaRows * kMetaCols;

/// Rows: agent (x, y), goal (x, y), auxiliary (facing one-hot truncated to
/// east/north). Stored row-major.
struct MetaState {
  std::array<double, kMetaDim> values{};

  double& at(std::size_t row, std::size_t col) { return values[row * kMetaCols + col]; }
  double at(std::size_t row, std::size_t col) const { return values[row * kMetaCols + col]; }
  bool operator==(const MetaState&) const = default;
};

enum class EmbeddingMode {
  concat_fixed,      // raw coordinates
  affine_by_extent,  // coordinates divided by the scenario extents z
  learned_affine,    // affine_by_extent followed by a learned per-row scale/shift
  raw_state,         // (x, y, goal_x, goal_y) zero-padded; the no-meta-state ablation
};

struct EmbeddingSpec {
  EmbeddingMode mode = EmbeddingMode::affine_by_extent;
  /// Empty unless learned_affine: slices "scale" and "shift", each 3x2.
  ParamVector params;

  bool learnable() const { return mode == EmbeddingMode::learned_affine; }
};

/// learned_affine starts at identity scale and zero shift.
EmbeddingSpec make_embedding(EmbeddingMode mode);

/// The parameter-free part of the embedding (everything before the learned affine).
MetaState embed_base(EmbeddingMode mode, const AgentState& s, const TaskSpec& task);

MetaState apply_affine(const EmbeddingSpec& spec, const MetaState& base);

MetaState embed(const EmbeddingSpec& spec, const AgentState& s, const TaskSpec& task);

/// d(upstream . embed)/d(params) given the base features; empty for fixed modes.
Gradient affine_backward(const EmbeddingSpec& spec, const MetaState& base, const MetaState& upstream);

Gradient embed_backward(const EmbeddingSpec& spec, const AgentState& s, const TaskSpec& task,
                        const MetaState& upstream);

std::string to_string(EmbeddingMode m);
EmbeddingMode embedding_mode_from_string(const std::string& s);

}  // namespace hmrl
