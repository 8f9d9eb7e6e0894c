#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hmrl/envs.hpp"
#include "hmrl/metastate.hpp"

namespace hmrl {

/// One episode. Per-step vectors have `length()` entries; state vectors have
/// `length() + 1` (s_0 .. s_T). The extension fields are filled by
/// extend_trajectory().
struct Trajectory {
  std::size_t obs_dim = 0;
  std::vector<double> observations;  // length() x obs_dim, row-major, policy input (padded)
  std::vector<int> actions;
  std::vector<double> log_probs;  // at sampling time
  std::vector<double> rewards;    // original environment rewards
  std::vector<AgentState> states;
  bool reached_goal = false;

  // Extension: meta states, shaping F and shaped rewards R + F.
  std::vector<MetaState> meta_base;    // pre-affine features, one per state
  std::vector<MetaState> meta_states;  // h(s; z), one per state
  std::vector<double> potentials;      // phi(h(s_t)) before terminal zeroing
  std::vector<double> shaping;
  std::vector<double> shaped_rewards;
  std::uint64_t shaping_snapshot = 0;  // hash of the (phi, h) parameters used to extend
  bool extended = false;

  std::size_t length() const { return actions.size(); }
  int steps_used() const { return static_cast<int>(actions.size()); }
  std::span<const double> observation(std::size_t t) const {
    return {observations.data() + t * obs_dim, obs_dim};
  }
  double original_return() const;  // undiscounted sum of original rewards
};

}  // namespace hmrl
