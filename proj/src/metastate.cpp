#include "hmrl/metastate.hpp"

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

ParamLayout affine_layout() {
  ParamLayout l;
  l.add("scale", {kMetaRows, kMetaCols});
  l.add("shift", {kMetaRows, kMetaCols});
  return l;
}

}  // namespace

EmbeddingSpec make_embedding(EmbeddingMode mode) {
  EmbeddingSpec spec;
  spec.mode = mode;
  if (mode == EmbeddingMode::learned_affine) {
    spec.params = ParamVector::zeros(affine_layout());
    for (double& s : spec.params.slice("scale")) s = 1.0;
  }
  return spec;
}

MetaState embed_base(EmbeddingMode mode, const AgentState& s, const TaskSpec& task) {
  MetaState m;
  if (mode == EmbeddingMode::raw_state) {
    m.at(0, 0) = s.pos.x;
    m.at(0, 1) = s.pos.y;
    m.at(1, 0) = task.goal.x;
    m.at(1, 1) = task.goal.y;
    return m;
  }
  double sx = 1.0;
  double sy = 1.0;
  if (mode != EmbeddingMode::concat_fixed) {
    const auto z = task.env.domain_knowledge();
    if (z[0] == 0.0 || z[1] == 0.0)
      throw ConfigError("embed: zero scenario extent in env '" + task.env.name + "'");
    sx = 1.0 / z[0];
    sy = 1.0 / z[1];
  }
  m.at(0, 0) = s.pos.x * sx;
  m.at(0, 1) = s.pos.y * sy;
  m.at(1, 0) = task.goal.x * sx;
  m.at(1, 1) = task.goal.y * sy;
  m.at(2, 0) = s.facing == east ? 1.0 : 0.0;
  m.at(2, 1) = s.facing == north ? 1.0 : 0.0;
  return m;
}

MetaState apply_affine(const EmbeddingSpec& spec, const MetaState& base) {
  if (!spec.learnable()) return base;
  const auto scale = spec.params.slice("scale");
  const auto shift = spec.params.slice("shift");
  MetaState out;
  for (std::size_t i = 0; i < kMetaDim; ++i) out.values[i] = scale[i] * base.values[i] + shift[i];
  return out;
}

MetaState embed(const EmbeddingSpec& spec, const AgentState& s, const TaskSpec& task) {
  return apply_affine(spec, embed_base(spec.mode, s, task));
}

Gradient affine_backward(const EmbeddingSpec& spec, const MetaState& base, const MetaState& upstream) {
  if (!spec.learnable()) return Gradient{};
  Gradient g = Gradient::zeros_like(spec.params);
  auto gs = g.slice("scale");
  auto gb = g.slice("shift");
  for (std::size_t i = 0; i < kMetaDim; ++i) {
    gs[i] = upstream.values[i] * base.values[i];
    gb[i] = upstream.values[i];
  }
  return g;
}

Gradient embed_backward(const EmbeddingSpec& spec, const AgentState& s, const TaskSpec& task,
                        const MetaState& upstream) {
  if (!spec.learnable()) return Gradient{};
  return affine_backward(spec, embed_base(spec.mode, s, task), upstream);
}

std::string to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::concat_fixed: return "concat-fixed";
    case EmbeddingMode::affine_by_extent: return "affine-by-extent";
    case EmbeddingMode::learned_affine: return "learned-affine";
    case EmbeddingMode::raw_state: return "raw-state";
  }
  return "?";
}

EmbeddingMode embedding_mode_from_string(const std::string& s) {
  if (s == "concat-fixed") return EmbeddingMode::concat_fixed;
  if (s == "affine-by-extent") return EmbeddingMode::affine_by_extent;
  if (s == "learned-affine") return EmbeddingMode::learned_affine;
  if (s == "raw-state") return EmbeddingMode::raw_state;
  throw ConfigError("unknown embedding mode '" + s +
                    "' (expected concat-fixed|affine-by-extent|learned-affine|raw-state)");
}

}  // namespace hmrl
