#pragma once

// Meta reward shaping: a potential network over meta states, the
// potential-based shaping signal F = gamma * phi(s_m') - phi(s_m), return
// targets for the potential, and the joint regression loss for phi and h.

#include <optional>
#include <span>
#include <vector>

#include "hmrl/diffcore.hpp"
#include "hmrl/metastate.hpp"
#include "hmrl/trajectory.hpp"

namespace hmrl {

struct PotentialNet {
  MlpSpec spec;
  ParamVector params;
};

/// 6 -> hidden... -> 1, ReLU, Glorot-initialized.
PotentialNet make_potential(Rng& rng, const std::vector<std::size_t>& hidden = {32, 32});
/// Same shape with every parameter zero (phi == 0 everywhere).
PotentialNet zero_potential(const std::vector<std::size_t>& hidden = {32, 32});

double potential(const PotentialNet& net, const MetaState& s_m);
/// Row-batched phi over meta states.
std::vector<double> potentials(const PotentialNet& net, std::span<const MetaState> states);

/// gamma * phi(s_m') - phi(s_m), with phi(s_m') taken as 0 when `terminal`.
double shape(const PotentialNet& net, const MetaState& s_m, const MetaState& s_m_next,
             double gamma, bool terminal);

struct ShapedStep {
  double original_reward = 0.0;
  double shaping = 0.0;
  double shaped_reward = 0.0;
};

/// Attaches meta states and shaping to a finished raw trajectory. The last
/// transition is terminal (goal or horizon), so its successor potential is 0.
/// A null `net` means no shaping (F == 0).
void extend_trajectory(Trajectory& traj, const TaskSpec& task, const EmbeddingSpec& emb,
                       const PotentialNet* net, double gamma);

ShapedStep shaped_step(const Trajectory& traj, std::size_t t);

/// Return(s_t) = r_t + gamma * Return(s_{t+1}), Return(s_T) = r_T.
std::vector<double> discounted_return(std::span<const double> rewards, double gamma);

struct ReturnTarget {
  MetaState meta_state;  // as embedded when the trajectory was extended
  MetaState base;        // pre-affine features, for re-embedding under new h
  double target = 0.0;
};

/// One target per visited step, from shaped rewards.
std::vector<ReturnTarget> collect_targets(std::span<const Trajectory> batch, double gamma);

struct ShapingLoss {
  double loss = 0.0;
  Gradient potential_grad;
  Gradient embedding_grad;  // empty unless the embedding is learnable
  bool skipped = false;     // no targets
};

/// Mean over targets of (target - phi(h(base)))^2; targets are constants.
ShapingLoss shaping_loss(std::span<const ReturnTarget> targets, const PotentialNet& net,
                         const EmbeddingSpec& emb);

/// Hash of the (phi, h) snapshot, 0 for no potential.
std::uint64_t shaping_snapshot_hash(const PotentialNet* net, const EmbeddingSpec& emb);

}  // namespace hmrl
