#pragma once

// Softmax policy over the four discrete actions, episode collection, and the
// policy-gradient surrogates used for both shaped and original returns.

#include <span>
#include <string>
#include <vector>

#include "hmrl/diffcore.hpp"
#include "hmrl/envs.hpp"
#include "hmrl/shaping.hpp"
#include "hmrl/trajectory.hpp"

namespace hmrl {

struct PolicySpec {
  MlpSpec spec;
  ParamVector params;

  std::size_t input_dim() const { return spec.input_dim; }
};

PolicySpec make_policy(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng);

/// Zero-pads an observation to the policy input width. Observations wider
/// than the policy input are a DimensionError.
std::vector<double> policy_input(std::span<const double> observation, std::size_t input_dim);

/// log softmax(logits); throws NumericError naming the slice on non-finite logits.
std::vector<double> action_log_probs(const PolicySpec& policy, std::span<const double> input);

struct ActionSample {
  int action = 0;
  double log_prob = 0.0;
};

ActionSample act(const PolicySpec& policy, std::span<const double> input, Rng& rng);
int act_greedy(const PolicySpec& policy, std::span<const double> input);

struct RolloutOptions {
  bool greedy = false;
};

/// Runs one episode to goal or horizon, then extends it with `emb`/`net`
/// (null net: no shaping).
Trajectory rollout(const PolicySpec& policy, const TaskSpec& task, const EmbeddingSpec& emb,
                   const PotentialNet* net, double gamma, Rng& rng, RolloutOptions opts = {});

enum class Baseline { none, mean_return };

struct PolicyLoss {
  double loss = 0.0;
  Gradient grad;
  std::size_t steps = 0;
};

/// Per-step discounted return-to-go for every step of the batch, flattened in
/// trajectory order.
std::vector<double> batch_returns(std::span<const Trajectory> batch, double gamma, bool use_shaped);

/// REINFORCE: -mean_t log pi(a_t | o_t) * (G_t - b), b = mean of G_t over the
/// batch's steps when baseline == mean_return.
PolicyLoss pg_loss(const PolicySpec& policy, std::span<const Trajectory> batch, double gamma,
                   bool use_shaped, Baseline baseline = Baseline::mean_return);

/// -mean_t min(r_t A_t, clip(r_t, 1 - eps, 1 + eps) A_t), r_t = pi / pi_sampling,
/// with the same advantages as pg_loss (shaped returns, mean baseline).
PolicyLoss clipped_surrogate_loss(const PolicySpec& policy, std::span<const Trajectory> batch,
                                  double gamma, double clip_eps, bool use_shaped = true);

/// One CSV row per step: episode,t,x,y,facing,action,reward,shaping.
std::string trajectory_csv(std::span<const Trajectory> batch);

}  // namespace hmrl
