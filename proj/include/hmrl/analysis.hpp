#pragma once

// Exact tabular checks of policy invariance under meta reward shaping,
// potential heatmaps, and evaluation summaries.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hmrl/envs.hpp"
#include "hmrl/metastate.hpp"
#include "hmrl/policy.hpp"
#include "hmrl/shaping.hpp"

namespace hmrl {

/// Deterministic finite MDP. Terminal states are absorbing with zero reward.
struct TabularMdp {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<std::size_t> next;  // [s * num_actions + a]
  std::vector<double> reward;     // [s * num_actions + a]
  std::vector<std::uint8_t> terminal;
  double gamma = 0.99;
  std::vector<AgentState> states;  // descriptors when built from a task

  std::size_t idx(std::size_t s, std::size_t a) const { return s * num_actions + a; }
  /// Throws DimensionError when tables are not total or terminals not absorbing.
  void validate() const;
  /// Index of a descriptor; throws UsageError when absent.
  std::size_t index_of(const AgentState& s) const;
};

/// Walkable cells (x facing, for rotational action sets) in (y, x, facing)
/// order. Reward is -1 per transition, the per-step form of the -steps_used
/// terminal reward.
TabularMdp to_tabular(const TaskSpec& task, double gamma);

struct PolicyTable {
  std::vector<std::vector<int>> optimal;  // argmax action set per state (empty for terminals)
};

struct ValueResult {
  std::vector<double> values;
  PolicyTable policy;
  int sweeps = 0;
  double residual = 0.0;
};

ValueResult value_iteration(const TabularMdp& mdp, double tol, int max_sweeps = 1000000,
                            double tie_tol = 1e-9);

/// Per-transition extra reward added on top of the shaping; used to inject a
/// non-potential-based signal as a negative control.
using ExtraReward = std::function<double(std::size_t state, std::size_t action, std::size_t next)>;

/// R + gamma * phi(s') - phi(s) with phi zeroed on terminal states.
TabularMdp shaped_mdp(const TabularMdp& mdp, std::span<const double> phi,
                      const ExtraReward& extra = {});

struct ConsistencyReport {
  bool passed = true;
  std::size_t num_states = 0;
  std::vector<std::size_t> policy_violations;  // states whose argmax sets differ
  std::vector<std::size_t> value_violations;   // states with |V' - V + phi| > value_tol
  double max_offset_error = 0.0;
  double value_tol = 1e-6;

  std::string text(const TabularMdp& mdp) const;
  std::string json(const std::string& label) const;
};

ConsistencyReport verify_with_potentials(const TabularMdp& mdp, std::span<const double> phi,
                                         double value_tol = 1e-6, const ExtraReward& extra = {});

/// phi(h(s)) for every state of a tabularized task.
std::vector<double> state_potentials(const TabularMdp& mdp, const TaskSpec& task,
                                     const EmbeddingSpec& emb, const PotentialNet* net);

ConsistencyReport verify_consistency(const TabularMdp& mdp, const TaskSpec& task,
                                     const EmbeddingSpec& emb, const PotentialNet* net,
                                     double value_tol = 1e-6, const ExtraReward& extra = {});

struct Heatmap {
  int min_x = 0;
  int min_y = 0;
  int cols = 0;
  int rows = 0;
  std::vector<double> values;        // rows x cols, NaN on walls
  std::vector<std::uint8_t> walkable;

  double at(int row, int col) const { return values[static_cast<std::size_t>(row * cols + col)]; }
  /// "row,col,value" for walkable cells; row = y - min_y, col = x - min_x.
  std::string csv() const;
};

/// phi(h(cell)) over the walkable bounding box; rotational tasks average the
/// four facings.
Heatmap potential_heatmap(const TaskSpec& task, const EmbeddingSpec& emb, const PotentialNet* net);

double spearman(std::span<const double> a, std::span<const double> b);

/// Spearman correlation between phi(h(cell)) and -grid distance to the goal.
double heatmap_goal_correlation(const TaskSpec& task, const Heatmap& map);

struct EvalRow {
  std::size_t task_index = 0;
  std::string env;
  double greedy_mean_steps = 0.0;
  int greedy_max_steps = 0;
  double greedy_success = 0.0;
  double stochastic_mean_steps = 0.0;
  int stochastic_max_steps = 0;
  double stochastic_success = 0.0;
};

std::vector<EvalRow> evaluate(const PolicySpec& policy, std::span<const TaskSpec> tasks, int episodes,
                              Rng& rng);

std::string eval_csv(std::span<const EvalRow> rows);

/// Mean stochastic steps over all rows.
double mean_stochastic_steps(std::span<const EvalRow> rows);

}  // namespace hmrl
