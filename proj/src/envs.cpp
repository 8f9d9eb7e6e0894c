#include "hmrl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <sstream>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

constexpr int kHallwayHeight = 3;
constexpr int kMaxTaskAttempts = 1000;

Cell facing_vector(int facing) {
  switch (facing) {
    case east: return {1, 0};
    case north: return {0, 1};
    case west: return {-1, 0};
    default: return {0, -1};
  }
}

// Clockwise quarter turn of a direction vector.
Cell rotate_cw(Cell d) { return {d.y, -d.x}; }

int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

// Slides up to `cells` cells along `dir`, stopping before the first blocked cell.
Cell slide(const Grid& g, Cell from, Cell dir, int cells) {
  Cell at = from;
  for (int i = 0; i < cells; ++i) {
    const Cell next{at.x + dir.x, at.y + dir.y};
    if (g.is_wall(next)) break;
    at = next;
  }
  return at;
}

void divide_rooms(Grid& g, const EnvSpec& env, int lo, int hi, Rng& rng) {
  if (hi - lo <= 1) return;
  const int split = lo + 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(hi - lo - 1)));
  const int wall_x = split * (env.room_size + 1) - 1;
  const int door_y = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(g.height)));
  for (int y = 0; y < g.height; ++y)
    if (y != door_y) g.walls[static_cast<std::size_t>(y * g.width + wall_x)] = 1;
  divide_rooms(g, env, lo, split, rng);
  divide_rooms(g, env, split, hi, rng);
}

std::size_t window_cells(int r) { return static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)); }

}  // namespace

void EnvSpec::validate() const {
  auto fail = [this](const std::string& what) {
    throw ConfigError("env '" + name + "': " + what);
  };
  if (horizon < 1) fail("horizon must be >= 1");
  if (rooms < 1) fail("rooms must be >= 1");
  if (room_size < 2) fail("room_size must be >= 2");
  if (obs_mode == ObsMode::egocentric && window_radius < 1) fail("window_radius must be >= 1");
  if (step_scale < 1) fail("step_scale must be >= 1");
  if (goal_radius < 0) fail("goal_radius must be >= 0");
}

int EnvSpec::width() const {
  return family == Family::hallway ? rooms * room_size : rooms * room_size + (rooms - 1);
}

int EnvSpec::height() const { return family == Family::hallway ? kHallwayHeight : room_size; }

std::array<double, 2> EnvSpec::domain_knowledge() const {
  return {static_cast<double>(width()), static_cast<double>(height())};
}

std::size_t EnvSpec::observation_dim() const {
  std::size_t n = obs_mode == ObsMode::full
                      ? kObsChannels * static_cast<std::size_t>(width() * height()) + 4
                      : kObsChannels * window_cells(window_radius) + 2;
  if (action_set == ActionSet::rotational) n += 4;
  return n;
}

bool Grid::is_wall(Cell c) const {
  if (!in_bounds(c)) return true;
  return walls[static_cast<std::size_t>(c.y * width + c.x)] != 0;
}

std::vector<Cell> Grid::walkable_cells() const {
  std::vector<Cell> out;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (!is_wall({x, y})) out.push_back({x, y});
  return out;
}

const EnvSpec& sample_environment(Rng& rng, std::span<const EnvSpec> catalog) {
  if (catalog.empty()) throw ConfigError("sample_environment: empty catalog");
  return catalog[uniform_index(rng, catalog.size())];
}

Grid build_layout(const EnvSpec& env, std::uint64_t layout_seed) {
  env.validate();
  Grid g;
  g.width = env.width();
  g.height = env.height();
  g.walls.assign(static_cast<std::size_t>(g.width * g.height), 0);
  if (env.family == Family::maze) {
    Rng rng(layout_seed);
    divide_rooms(g, env, 0, env.rooms, rng);
  }
  return g;
}

bool within_goal(const TaskSpec& task, Cell c) {
  return chebyshev(c, task.goal) <= task.env.goal_radius;
}

AgentState apply_action(const TaskSpec& task, const AgentState& s, int action) {
  if (action < 0 || action >= kNumActions)
    throw UsageError("action " + std::to_string(action) + " outside the action set");
  AgentState next = s;
  const int scale = task.env.step_scale;
  if (task.env.action_set == ActionSet::cardinal) {
    static constexpr Cell dirs[kNumActions] = {{0, 1}, {0, -1}, {-1, 0}, {1, 0}};
    next.pos = slide(task.grid, s.pos, dirs[action], scale);
    return next;
  }
  switch (action) {
    case action::turn_left: next.facing = (s.facing + 1) % 4; break;
    case action::turn_right: next.facing = (s.facing + 3) % 4; break;
    case action::forward: next.pos = slide(task.grid, s.pos, facing_vector(s.facing), scale); break;
    default: {
      const Cell f = facing_vector(s.facing);
      next.pos = slide(task.grid, s.pos, {-f.x, -f.y}, scale);
    }
  }
  return next;
}

bool goal_reachable(const TaskSpec& task, const AgentState& from) {
  const Grid& g = task.grid;
  const int facings = task.env.action_set == ActionSet::rotational ? 4 : 1;
  auto key = [&](const AgentState& s) {
    return static_cast<std::size_t>((s.pos.y * g.width + s.pos.x) * facings +
                                    (facings == 1 ? 0 : s.facing));
  };
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(g.width * g.height * facings), 0);
  std::deque<AgentState> queue{from};
  seen[key(from)] = 1;
  while (!queue.empty()) {
    const AgentState s = queue.front();
    queue.pop_front();
    if (within_goal(task, s.pos)) return true;
    for (int a = 0; a < kNumActions; ++a) {
      const AgentState n = apply_action(task, s, a);
      if (!seen[key(n)]) {
        seen[key(n)] = 1;
        queue.push_back(n);
      }
    }
  }
  return false;
}

std::vector<int> grid_distance_to_goal(const TaskSpec& task) {
  const Grid& g = task.grid;
  std::vector<int> dist(static_cast<std::size_t>(g.width * g.height), -1);
  std::deque<Cell> queue{task.goal};
  dist[static_cast<std::size_t>(task.goal.y * g.width + task.goal.x)] = 0;
  static constexpr Cell dirs[4] = {{0, 1}, {0, -1}, {-1, 0}, {1, 0}};
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(c.y * g.width + c.x)];
    for (Cell dir : dirs) {
      const Cell n{c.x + dir.x, c.y + dir.y};
      if (g.is_wall(n)) continue;
      auto& slot = dist[static_cast<std::size_t>(n.y * g.width + n.x)];
      if (slot < 0) {
        slot = d + 1;
        queue.push_back(n);
      }
    }
  }
  return dist;
}

TaskSpec make_task(const EnvSpec& env, std::uint64_t layout_seed, AgentState start, Cell goal) {
  env.validate();
  TaskSpec t{env, layout_seed, build_layout(env, layout_seed), start, goal};
  if (t.grid.is_wall(start.pos)) throw ConfigError("task: start is not walkable");
  if (t.grid.is_wall(goal)) throw ConfigError("task: goal is not walkable");
  if (start.pos == goal || within_goal(t, start.pos))
    throw ConfigError("task: start lies inside the goal region");
  if (start.facing < 0 || start.facing > 3) throw ConfigError("task: facing must be in [0, 3]");
  if (!goal_reachable(t, start)) throw ConfigError("task: goal unreachable from start");
  return t;
}

TaskSpec sample_task(Rng& rng, const EnvSpec& env) {
  env.validate();
  for (int attempt = 0; attempt < kMaxTaskAttempts; ++attempt) {
    TaskSpec t;
    t.env = env;
    t.layout_seed = rng();
    t.grid = build_layout(env, t.layout_seed);
    const std::vector<Cell> cells = t.grid.walkable_cells();
    if (env.family == Family::hallway) {
      t.goal = {t.grid.width - 1, t.grid.height / 2};
    } else {
      t.goal = cells[uniform_index(rng, cells.size())];
    }
    std::vector<Cell> starts;
    for (Cell c : cells)
      if (!within_goal(t, c)) starts.push_back(c);
    if (starts.empty()) continue;
    t.start.pos = starts[uniform_index(rng, starts.size())];
    t.start.facing =
        env.action_set == ActionSet::rotational ? static_cast<int>(uniform_index(rng, 4)) : east;
    if (goal_reachable(t, t.start)) return t;
  }
  throw ConfigError("sample_task: no reachable task for env '" + env.name + "' after " +
                    std::to_string(kMaxTaskAttempts) + " attempts");
}

EpisodeState reset(const TaskSpec& task) { return {task.start, 0, false}; }

StepOutcome step(const TaskSpec& task, const EpisodeState& state, int action) {
  if (state.done) throw UsageError("step: episode already finished");
  StepOutcome out;
  out.next_state = apply_action(task, state.agent, action);
  out.steps_used = state.steps_used + 1;
  out.reached_goal = within_goal(task, out.next_state.pos);
  out.done = out.reached_goal || out.steps_used >= task.env.horizon;
  // Sparse reward: -steps_used at termination (equals -horizon on truncation).
  out.reward = out.done ? -static_cast<double>(out.steps_used) : 0.0;
  out.observation = observe(task, out.next_state);
  return out;
}

std::vector<double> observe(const TaskSpec& task, const AgentState& s) {
  const EnvSpec& env = task.env;
  const Grid& g = task.grid;
  std::vector<double> obs(env.observation_dim(), 0.0);
  const double w = static_cast<double>(g.width);
  const double h = static_cast<double>(g.height);
  auto fill_cell = [&](std::size_t base, Cell c) {
    const bool wall = g.is_wall(c);
    obs[base + 0] = wall ? 1.0 : 0.0;
    obs[base + 1] = wall ? 0.0 : 1.0;
    obs[base + 2] = c == s.pos ? 1.0 : 0.0;
    obs[base + 3] = (!wall && c == task.goal) ? 1.0 : 0.0;
  };
  std::size_t k = 0;
  if (env.obs_mode == ObsMode::full) {
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x, k += kObsChannels) fill_cell(k, {x, y});
    obs[k++] = s.pos.x / w;
    obs[k++] = s.pos.y / h;
    obs[k++] = task.goal.x / w;
    obs[k++] = task.goal.y / h;
  } else {
    const int r = env.window_radius;
    // Local frame: v along "forward", u along "right". Cardinal agents keep
    // the world frame (forward = north).
    const Cell fwd = env.action_set == ActionSet::rotational ? facing_vector(s.facing) : Cell{0, 1};
    const Cell rgt = rotate_cw(fwd);
    for (int v = -r; v <= r; ++v)
      for (int u = -r; u <= r; ++u, k += kObsChannels)
        fill_cell(k, {s.pos.x + u * rgt.x + v * fwd.x, s.pos.y + u * rgt.y + v * fwd.y});
    obs[k++] = s.pos.x / w;
    obs[k++] = s.pos.y / h;
  }
  if (env.action_set == ActionSet::rotational) obs[k + static_cast<std::size_t>(s.facing)] = 1.0;
  return obs;
}

std::vector<EnvSpec> hallway_catalog() {
  EnvSpec third{"hallway-3rd", Family::hallway, 2, 6, ObsMode::full, 2, ActionSet::cardinal, 1, 80, 1};
  EnvSpec first = third;
  first.name = "hallway-1st";
  first.obs_mode = ObsMode::egocentric;
  return {third, first};
}

std::vector<EnvSpec> maze_catalog() {
  return {
      {"2RS3", Family::maze, 2, 6, ObsMode::full, 2, ActionSet::cardinal, 1, 150, 0},
      {"2RS4", Family::maze, 2, 8, ObsMode::egocentric, 2, ActionSet::rotational, 1, 150, 0},
      {"3RS3", Family::maze, 3, 6, ObsMode::full, 2, ActionSet::cardinal, 2, 150, 1},
  };
}

std::vector<EnvSpec> desk_catalog() {
  std::vector<EnvSpec> out = hallway_catalog();
  for (auto& e : maze_catalog()) out.push_back(e);
  return out;
}

EnvSpec transfer_hallway() {
  return {"hallway-transfer", Family::hallway, 2, 5, ObsMode::egocentric, 2,
          ActionSet::rotational, 1, 80, 1};
}

std::optional<EnvSpec> find_env(const std::string& name) {
  for (auto& e : desk_catalog())
    if (e.name == name) return e;
  if (EnvSpec t = transfer_hallway(); t.name == name) return t;
  return std::nullopt;
}

std::string render_ascii(const TaskSpec& task, std::optional<AgentState> agent) {
  std::ostringstream os;
  const Grid& g = task.grid;
  for (int y = g.height - 1; y >= 0; --y) {
    for (int x = 0; x < g.width; ++x) {
      const Cell c{x, y};
      char ch = g.is_wall(c) ? '#' : '.';
      if (c == task.start.pos) ch = 'S';
      if (c == task.goal) ch = 'G';
      if (agent && c == agent->pos) ch = '@';
      os << ch;
    }
    os << '\n';
  }
  return os.str();
}

std::string to_string(Family f) { return f == Family::hallway ? "hallway" : "maze"; }
std::string to_string(ObsMode m) { return m == ObsMode::full ? "full" : "egocentric"; }
std::string to_string(ActionSet a) { return a == ActionSet::cardinal ? "cardinal" : "rotational"; }

Family family_from_string(const std::string& s) {
  if (s == "hallway") return Family::hallway;
  if (s == "maze") return Family::maze;
  throw ConfigError("unknown family '" + s + "' (expected hallway|maze)");
}

ObsMode obs_mode_from_string(const std::string& s) {
  if (s == "full") return ObsMode::full;
  if (s == "egocentric") return ObsMode::egocentric;
  throw ConfigError("unknown obs_mode '" + s + "' (expected full|egocentric)");
}

ActionSet action_set_from_string(const std::string& s) {
  if (s == "cardinal") return ActionSet::cardinal;
  if (s == "rotational") return ActionSet::rotational;
  throw ConfigError("unknown action_set '" + s + "' (expected cardinal|rotational)");
}

}  // namespace hmrl
