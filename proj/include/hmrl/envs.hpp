#pragma once

// Deterministic gridworld families (straight hallway, multi-room maze) with a
// sparse terminal reward of -steps_used.
//
// Coordinates: x grows east, y grows north; "up" is +y.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmrl/rng.hpp"

namespace hmrl {

enum class Family { hallway, maze };
enum class ObsMode { full, egocentric };
enum class ActionSet { cardinal, rotational };

enum Facing : int { east = 0, north = 1, west = 2, south = 3 };

// Action ids. Cardinal: up, down, left, right. Rotational: turn-left,
// turn-right, forward, back.
namespace action {
inline constexpr int up = 0, down = 1, left = 2, right = 3;
inline constexpr int turn_left = 0, turn_right = 1, forward = 2, back = 3;
}  // namespace action

inline constexpr int kNumActions = 4;
inline constexpr int kObsChannels = 4;  // wall, free, agent, goal

struct EnvSpec {
  std::string name;
  Family family = Family::hallway;
  int rooms = 1;
  int room_size = 2;  // cells per room side
  ObsMode obs_mode = ObsMode::full;
  int window_radius = 2;  // egocentric only
  ActionSet action_set = ActionSet::cardinal;
  int step_scale = 1;
  int horizon = 80;
  int goal_radius = 0;  // Chebyshev

  /// Throws ConfigError on a violated invariant.
  void validate() const;

  int width() const;
  int height() const;
  /// Domain knowledge z: the (width, height) extents of the scenario.
  std::array<double, 2> domain_knowledge() const;
  std::size_t observation_dim() const;

  bool operator==(const EnvSpec&) const = default;
};

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

struct AgentState {
  Cell pos;
  int facing = east;
  bool operator==(const AgentState&) const = default;
};

struct Grid {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> walls;  // row-major, index y * width + x

  bool in_bounds(Cell c) const { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; }
  /// Out-of-bounds cells count as walls.
  bool is_wall(Cell c) const;
  bool walkable(Cell c) const { return !is_wall(c); }
  std::vector<Cell> walkable_cells() const;
};

struct TaskSpec {
  EnvSpec env;
  std::uint64_t layout_seed = 0;
  Grid grid;
  AgentState start;
  Cell goal;
};

struct EpisodeState {
  AgentState agent;
  int steps_used = 0;
  bool done = false;
};

struct StepOutcome {
  AgentState next_state;
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  bool reached_goal = false;
  int steps_used = 0;

  EpisodeState episode() const { return {next_state, steps_used, done}; }
};

const EnvSpec& sample_environment(Rng& rng, std::span<const EnvSpec> catalog);

/// Hallway: open `rooms * room_size` x 3 corridor. Maze: `rooms` square rooms in
/// a row separated by one-cell walls, doorways placed by seeded recursive division.
Grid build_layout(const EnvSpec& env, std::uint64_t layout_seed);

/// Draws a layout seed, start and goal; retries until the goal is reachable.
TaskSpec sample_task(Rng& rng, const EnvSpec& env);

/// Builds a task with explicit endpoints; throws ConfigError when invalid or unreachable.
TaskSpec make_task(const EnvSpec& env, std::uint64_t layout_seed, AgentState start, Cell goal);

bool within_goal(const TaskSpec& task, Cell c);

/// Motion rule only: the state after `action`, ignoring termination.
AgentState apply_action(const TaskSpec& task, const AgentState& s, int action);

EpisodeState reset(const TaskSpec& task);
StepOutcome step(const TaskSpec& task, const EpisodeState& state, int action);

std::vector<double> observe(const TaskSpec& task, const AgentState& s);

/// Hallway pair (full, egocentric) followed by the maze triple (2RS3, 2RS4, 3RS3).
std::vector<EnvSpec> desk_catalog();
std::vector<EnvSpec> hallway_catalog();
std::vector<EnvSpec> maze_catalog();
/// Held-out hallway: shorter map, rotational actions, egocentric view.
EnvSpec transfer_hallway();
/// Looks up a name among desk_catalog() and transfer_hallway().
std::optional<EnvSpec> find_env(const std::string& name);

/// Cells reachable from `from` under the environment dynamics (breadth-first).
bool goal_reachable(const TaskSpec& task, const AgentState& from);
/// 4-neighbour shortest path length over walkable cells to the goal, -1 if unreachable.
std::vector<int> grid_distance_to_goal(const TaskSpec& task);

/// '#' wall, '.' free, 'S' start, 'G' goal, '@' agent; top row is the largest y.
std::string render_ascii(const TaskSpec& task, std::optional<AgentState> agent = std::nullopt);

std::string to_string(Family f);
std::string to_string(ObsMode m);
std::string to_string(ActionSet a);
Family family_from_string(const std::string& s);
ObsMode obs_mode_from_string(const std::string& s);
ActionSet action_set_from_string(const std::string& s);

}  // namespace hmrl
