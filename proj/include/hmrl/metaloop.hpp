#pragma once

// Outer meta-learning loop: sample environments and tasks, adapt the shared
// meta policy per task with one policy-gradient step on shaped returns, apply
// the first-order meta update from post-adaptation rollouts, then regress the
// potential (and learnable embedding) onto the batch's shaped returns.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hmrl/diffcore.hpp"
#include "hmrl/envs.hpp"
#include "hmrl/metastate.hpp"
#include "hmrl/policy.hpp"
#include "hmrl/shaping.hpp"

namespace hmrl {

enum class Method { hmrl, maml, hmrl_wo_ms, ppo_scratch };
enum class InnerObjective { reinforce, clipped };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(InnerObjective o);
InnerObjective inner_objective_from_string(const std::string& s);

struct RunConfig {
  Method method = Method::hmrl;
  std::uint64_t seed = 1;
  int meta_iters = 200;
  int workers = 1;
  /// "hallway", "maze", "desk", or a comma-separated list of env names.
  std::string catalog = "hallway";
  /// "auto": concat-fixed for hallway-only catalogs, learned-affine otherwise.
  std::string embedding = "auto";

  double alpha = 0.05;
  double beta = 0.01;
  double gamma = 0.99;
  double shaping_lr = 0.01;
  InnerObjective inner_objective = InnerObjective::reinforce;
  double clip_eps = 0.2;
  int clip_epochs = 4;
  bool meta_sgd = false;

  int m = 10;
  int ell = 10;
  int env_batch = 2;
  int task_batch = 4;

  std::vector<std::size_t> policy_hidden{64, 64};
  std::vector<std::size_t> potential_hidden{32, 32};

  bool force_zero_potential = false;
  bool freeze_shaping_on_finetune = false;
  int finetune_steps = 50;

  int checkpoint_every = 0;  // 0: final checkpoint only
  int eval_tasks = 10;
  int eval_episodes = 20;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

std::vector<EnvSpec> resolve_catalog(const std::string& catalog);
EmbeddingMode resolve_embedding(const RunConfig& cfg, const std::vector<EnvSpec>& catalog);
/// Widest observation in the catalog; the shared policy's input width.
std::size_t catalog_input_dim(const std::vector<EnvSpec>& catalog);

struct MetaModel {
  PolicySpec policy;
  std::optional<PotentialNet> potential;  // absent: no shaping (maml, ppo-scratch)
  EmbeddingSpec embedding;
  std::int64_t iteration = 0;
  ParamVector inner_lr;  // per-parameter inner step sizes; empty unless meta-SGD
  AdamState potential_adam;
  AdamState embedding_adam;

  const PotentialNet* potential_ptr() const { return potential ? &*potential : nullptr; }
};

MetaModel init_model(const RunConfig& cfg, const std::vector<EnvSpec>& catalog);

/// Gradient of the configured inner objective at `policy` on `batch`.
PolicyLoss inner_objective_gradient(const RunConfig& cfg, const PolicySpec& policy,
                                    std::span<const Trajectory> batch);

struct AdaptedTask {
  TaskSpec task;
  PolicySpec adapted;                 // theta_T
  std::vector<Trajectory> pre;        // D, sampled under theta
  Gradient pre_grad;                  // grad L(theta; D)
  std::vector<Trajectory> post;       // D', sampled under theta_T
};

/// m rollouts under theta, theta_T = theta - alpha * grad. Does not sample D'.
AdaptedTask inner_adapt(const MetaModel& model, const TaskSpec& task, const RunConfig& cfg, Rng& rng);

/// Appends ell rollouts under the adapted policy.
void sample_post_adaptation(const MetaModel& model, AdaptedTask& adapted, const RunConfig& cfg,
                            Rng& rng);

/// theta <- theta - beta * sum_T grad L(theta_T; D'_T). Potential and embedding untouched.
MetaModel meta_update(const MetaModel& model, std::span<const AdaptedTask> adapted,
                      const RunConfig& cfg);

struct ShapingUpdate {
  MetaModel model;
  double loss = 0.0;
  bool skipped = false;
};

/// One Adam step of the shaping regression over every step of `trajectories`.
ShapingUpdate update_shaping(const MetaModel& model, std::span<const Trajectory> trajectories,
                             const RunConfig& cfg);

struct EnvStats {
  std::string env;
  int episodes = 0;
  double mean_return = 0.0;
  double mean_steps = 0.0;
  double success_rate = 0.0;
};

EnvStats summarize(const std::string& env, std::span<const Trajectory> trajectories);

struct IterationMetrics {
  std::int64_t iteration = 0;
  EnvStats overall;
  std::vector<EnvStats> per_env;  // one per catalog entry; episodes == 0 when not sampled
  double shaping_loss = 0.0;
  double wall_seconds = 0.0;
};

struct IterationReport {
  const MetaModel& model;  // after the iteration's updates
  const IterationMetrics& metrics;
  std::uint64_t snapshot_hash;  // shaping parameters at iteration start
  std::vector<std::uint64_t> trajectory_snapshots;  // one per collected trajectory
};

using IterationObserver = std::function<void(const IterationReport&)>;

struct TrainResult {
  MetaModel model;
  std::vector<IterationMetrics> metrics;
};

TrainResult train(const RunConfig& cfg, const IterationObserver& observer = {});
/// Continues training an existing model for cfg.meta_iters further iterations.
TrainResult train_from(MetaModel model, const RunConfig& cfg, const std::vector<EnvSpec>& catalog,
                       const IterationObserver& observer = {});

struct FinetuneOptions {
  int steps = 50;
  bool fresh_policy = false;
  bool use_shaping = true;
  bool freeze_shaping = false;
  int eval_episodes = 0;  // >0: success and steps come from a separate rollout batch
};

struct FinetuneStep {
  int step = 0;
  double success_rate = 0.0;
  double mean_steps = 0.0;
  double mean_return = 0.0;
  double shaping_loss = 0.0;
};

struct FinetuneResult {
  MetaModel model;  // fine-tuned policy with (possibly updated) shaping
  std::vector<FinetuneStep> steps;
};

/// Repeats {m extended rollouts -> policy-gradient step}, updating the
/// shaping after each step unless frozen. Zero steps leaves the model as is.
FinetuneResult finetune(const MetaModel& model, const TaskSpec& task, const RunConfig& cfg,
                        const FinetuneOptions& opts);

/// Runs `fn(i)` for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace hmrl
