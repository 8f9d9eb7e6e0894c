#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "hmrl/analysis.hpp"
#include "hmrl/errors.hpp"

using namespace hmrl;

namespace {

EnvSpec room(int size, int horizon = 50) {
  return EnvSpec{"room" + std::to_string(size), Family::maze, 1, size, ObsMode::full, 2, ActionSet::cardinal, 1,
                 horizon, 0};
}

PolicySpec bias_policy(std::size_t dim, std::array<double, 4> logits) {
  PolicySpec p{MlpSpec{dim, {}, 4, Activation::relu, OutputHead::softmax_logits}, {}};
  p.params = ParamVector::zeros(p.spec.layout());
  for (std::size_t a = 0; a < 4; ++a) p.params.slice("l0.bias")[a] = logits[a];
  return p;
}

// Two live states and one terminal; see the hand values below.
TabularMdp two_state_mdp(double gamma) {
  TabularMdp m;
  m.num_states = 3;
  m.num_actions = 2;
  m.gamma = gamma;
  m.next = {1, 0, 2, 0, 2, 2};
  m.reward = {-1, -2, -1, -1, 0, 0};
  m.terminal = {0, 0, 1};
  return m;
}

}  // namespace

TEST_CASE("3x3 open room tabularizes to 9 states and 36 transitions") {
  const TaskSpec t = make_task(room(3), 0, {{0, 0}, east}, {2, 2});
  const TabularMdp m = to_tabular(t, 0.99);
  CHECK(m.num_states == 9);
  CHECK(m.next.size() == 36);
  CHECK(m.reward.size() == 36);
  CHECK(std::count(m.terminal.begin(), m.terminal.end(), 1) == 1);
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("tabular states are walkable and rotational tasks expand by facing") {
  Rng rng(4);
  for (const EnvSpec& e : desk_catalog()) {
    const TaskSpec t = sample_task(rng, e);
    const TabularMdp m = to_tabular(t, 0.99);
    const std::size_t cells = t.grid.walkable_cells().size();
    CHECK(m.num_states == (e.action_set == ActionSet::rotational ? 4 * cells : cells));
    for (const AgentState& s : m.states) CHECK(t.grid.walkable(s.pos));
  }
}

TEST_CASE("table agrees with the simulator on 1000 random probes") {
  Rng rng(10);
  for (int probe = 0; probe < 1000; ++probe) {
    const std::vector<EnvSpec> cat = desk_catalog();
    const EnvSpec& e = cat[uniform_index(rng, cat.size())];
    const TaskSpec t = sample_task(rng, e);
    const TabularMdp m = to_tabular(t, 0.99);
    const std::size_t s = uniform_index(rng, m.num_states);
    const int a = static_cast<int>(uniform_index(rng, 4));
    if (m.terminal[s]) {
      CHECK(m.next[m.idx(s, static_cast<std::size_t>(a))] == s);
      continue;
    }
    const StepOutcome o = step(t, EpisodeState{m.states[s], 0, false}, a);
    const std::size_t n = m.next[m.idx(s, static_cast<std::size_t>(a))];
    AgentState expect = o.next_state;
    if (e.action_set == ActionSet::cardinal) expect.facing = east;
    CHECK(m.states[n] == expect);
    CHECK(static_cast<bool>(m.terminal[n]) == o.reached_goal);
    CHECK(m.reward[m.idx(s, static_cast<std::size_t>(a))] == -1.0);
  }
}

TEST_CASE("validate rejects partial tables and leaky terminals") {
  TabularMdp m = two_state_mdp(0.9);
  m.next.pop_back();
  CHECK_THROWS_AS(m.validate(), DimensionError);
  m = two_state_mdp(0.9);
  m.next[5] = 0;
  CHECK_THROWS_AS(m.validate(), DimensionError);
}

TEST_CASE("value iteration: one-step MDP") {
  TabularMdp m;
  m.num_states = 2;
  m.num_actions = 1;
  m.next = {1, 1};
  m.reward = {-3.5, 0};
  m.terminal = {0, 1};
  const ValueResult v = value_iteration(m, 1e-12);
  CHECK(v.values[0] == -3.5);
  CHECK(v.values[1] == 0.0);
  CHECK(v.policy.optimal[0] == std::vector<int>{0});
  CHECK(v.policy.optimal[1].empty());
}

TEST_CASE("value iteration: 1x5 corridor policy moves toward the goal") {
  // Actions: 0 left, 1 right. Goal is cell 4.
  TabularMdp m;
  m.num_states = 5;
  m.num_actions = 2;
  m.gamma = 0.99;
  for (std::size_t s = 0; s < 5; ++s) {
    const bool term = s == 4;
    m.terminal.push_back(term);
    m.next.push_back(term ? s : (s == 0 ? 0 : s - 1));
    m.next.push_back(term ? s : s + 1);
    m.reward.push_back(term ? 0.0 : -1.0);
    m.reward.push_back(term ? 0.0 : -1.0);
  }
  const ValueResult v = value_iteration(m, 1e-12);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(v.policy.optimal[s] == std::vector<int>{1});
    // -(1 + g + ... + g^(k-1)) for k = 4 - s steps.
    const double k = static_cast<double>(4 - s);
    CHECK(v.values[s] == doctest::Approx(-(1.0 - std::pow(0.99, k)) / 0.01).epsilon(1e-10));
  }
}

TEST_CASE("value iteration: optimal actions on a task reduce the distance to the goal") {
  Rng rng(6);
  for (const EnvSpec& e : maze_catalog()) {
    if (e.action_set != ActionSet::cardinal || e.step_scale != 1) continue;
    const TaskSpec t = sample_task(rng, e);
    const TabularMdp m = to_tabular(t, 0.99);
    const ValueResult v = value_iteration(m, 1e-12);
    const std::vector<int> dist = grid_distance_to_goal(t);
    auto d = [&](Cell c) { return dist[static_cast<std::size_t>(c.y * t.grid.width + c.x)]; };
    for (std::size_t s = 0; s < m.num_states; ++s) {
      if (m.terminal[s] || d(m.states[s].pos) < 0) continue;
      REQUIRE_FALSE(v.policy.optimal[s].empty());
      for (int a : v.policy.optimal[s])
        CHECK(d(m.states[m.next[m.idx(s, static_cast<std::size_t>(a))]].pos) == d(m.states[s].pos) - 1);
    }
  }
}

TEST_CASE("value iteration: gamma = 0 gives the best immediate reward") {
  TabularMdp m = two_state_mdp(0.0);
  const ValueResult v = value_iteration(m, 1e-12);
  CHECK(v.values[0] == -1.0);
  CHECK(v.values[1] == -1.0);
  CHECK(v.policy.optimal[1] == std::vector<int>{0, 1});
}

TEST_CASE("value iteration reports the residual when it cannot converge") {
  const TaskSpec t = make_task(room(6), 0, {{0, 0}, east}, {5, 5});
  try {
    value_iteration(to_tabular(t, 0.99), 1e-12, 2);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("residual") != std::string::npos);
  }
  CHECK_THROWS_AS(value_iteration(two_state_mdp(0.9), 0.0), ConfigError);
}

TEST_CASE("hand 2-state MDP: potentials (1, 3) offset values by (-1, -3)") {
  // V(s1) = -1, V(s0) = -1 + 0.9 V(s1) = -1.9; shaped values subtract phi.
  const TabularMdp m = two_state_mdp(0.9);
  const std::vector<double> phi{1, 3, 7};  // the terminal entry is ignored
  const ValueResult v = value_iteration(m, 1e-13);
  CHECK(v.values[0] == doctest::Approx(-1.9).epsilon(1e-12));
  CHECK(v.values[1] == doctest::Approx(-1.0).epsilon(1e-12));
  const ValueResult vs = value_iteration(shaped_mdp(m, phi), 1e-13);
  CHECK(vs.values[0] == doctest::Approx(-2.9).epsilon(1e-12));
  CHECK(vs.values[1] == doctest::Approx(-4.0).epsilon(1e-12));
  CHECK(vs.values[0] - v.values[0] == doctest::Approx(-1.0).epsilon(1e-10));
  CHECK(vs.values[1] - v.values[1] == doctest::Approx(-3.0).epsilon(1e-10));
  const ConsistencyReport r = verify_with_potentials(m, phi);
  CHECK(r.passed);
  CHECK(r.max_offset_error < 1e-9);
}

TEST_CASE("zero potential: shaped MDP equals the original") {
  Rng rng(2);
  const TaskSpec t = sample_task(rng, maze_catalog()[0]);
  const TabularMdp m = to_tabular(t, 0.99);
  const PotentialNet zero = zero_potential();
  const EmbeddingSpec emb = make_embedding(EmbeddingMode::learned_affine);
  const TabularMdp s = shaped_mdp(m, state_potentials(m, t, emb, &zero));
  CHECK(s.reward == m.reward);
  CHECK(verify_consistency(m, t, emb, &zero).passed);
  CHECK(verify_consistency(m, t, emb, nullptr).passed);
}

TEST_CASE("random untrained potentials keep optimal actions on every catalog environment") {
  Rng rng(13);
  for (const EnvSpec& e : desk_catalog()) {
    for (int k = 0; k < 2; ++k) {
      const TaskSpec t = sample_task(rng, e);
      const PotentialNet net = make_potential(rng);
      EmbeddingSpec emb = make_embedding(EmbeddingMode::learned_affine);
      for (double& v : emb.params.values) v += uniform(rng, -0.5, 0.5);
      const TabularMdp m = to_tabular(t, 0.99);
      const ConsistencyReport r = verify_consistency(m, t, emb, &net);
      CHECK_MESSAGE(r.passed, e.name << ": " << r.text(m));
      CHECK(r.num_states == m.num_states);
    }
  }
}

TEST_CASE("a non-potential bonus is caught") {
  const TaskSpec t = make_task(room(4), 0, {{0, 0}, east}, {3, 3});
  const TabularMdp m = to_tabular(t, 0.99);
  const std::vector<double> phi(m.num_states, 0.0);
  // +5 for moving left: some states now prefer it.
  const ExtraReward bonus = [](std::size_t, std::size_t a, std::size_t) { return a == action::left ? 5.0 : 0.0; };
  const ConsistencyReport r = verify_with_potentials(m, phi, 1e-6, bonus);
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.policy_violations.empty());
  CHECK(r.json("room4").find("\"passed\":false") != std::string::npos);
  CHECK(r.text(m).find("violation") != std::string::npos);
}

TEST_CASE("report json carries the counts") {
  const ConsistencyReport r = verify_with_potentials(two_state_mdp(0.9), std::vector<double>{1, 3, 0});
  const std::string j = r.json("hand");
  CHECK(j.find("\"label\":\"hand\"") != std::string::npos);
  CHECK(j.find("\"passed\":true") != std::string::npos);
  CHECK(j.find("\"states\":3") != std::string::npos);
  CHECK(j.find("\"policy_violations\":0") != std::string::npos);
}

TEST_CASE("heatmap: zero net gives zeros over the walkable bounding box") {
  Rng rng(3);
  for (const EnvSpec& e : desk_catalog()) {
    const TaskSpec t = sample_task(rng, e);
    const PotentialNet zero = zero_potential();
    const Heatmap h = potential_heatmap(t, make_embedding(EmbeddingMode::affine_by_extent), &zero);
    int lo_x = 1 << 20, lo_y = 1 << 20, hi_x = -1, hi_y = -1;
    std::size_t walkable = 0;
    for (Cell c : t.grid.walkable_cells()) {
      lo_x = std::min(lo_x, c.x);
      lo_y = std::min(lo_y, c.y);
      hi_x = std::max(hi_x, c.x);
      hi_y = std::max(hi_y, c.y);
      ++walkable;
    }
    CHECK(h.cols == hi_x - lo_x + 1);
    CHECK(h.rows == hi_y - lo_y + 1);
    for (int r = 0; r < h.rows; ++r)
      for (int c = 0; c < h.cols; ++c) {
        const bool wall = t.grid.is_wall({c + h.min_x, r + h.min_y});
        if (wall) CHECK(std::isnan(h.at(r, c)));
        else CHECK(h.at(r, c) == 0.0);
      }
    const std::string csv = h.csv();
    CHECK(csv.rfind("row,col,value\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == walkable + 1);
  }
}

TEST_CASE("heatmap leaves the potential untouched and averages facings") {
  Rng rng(5);
  const TaskSpec t = sample_task(rng, maze_catalog()[1]);  // rotational
  const PotentialNet net = make_potential(rng);
  const EmbeddingSpec emb = make_embedding(EmbeddingMode::concat_fixed);
  const ParamVector before = net.params;
  const Heatmap h = potential_heatmap(t, emb, &net);
  CHECK(net.params.values == before.values);
  const Cell c = t.grid.walkable_cells()[0];
  double sum = 0.0;
  for (int f = 0; f < 4; ++f) sum += potential(net, embed(emb, {c, f}, t));
  CHECK(h.at(c.y - h.min_y, c.x - h.min_x) == doctest::Approx(sum / 4.0).epsilon(1e-12));
}

TEST_CASE("spearman correlation with average ranks") {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> rev{4, 3, 2, 1};
  const std::vector<double> tied{1, 2, 2, 3};
  CHECK(spearman(a, a) == doctest::Approx(1.0));
  CHECK(spearman(a, rev) == doctest::Approx(-1.0));
  CHECK(spearman(tied, a) == doctest::Approx(std::sqrt(0.9)).epsilon(1e-12));
}

TEST_CASE("a potential equal to minus distance correlates perfectly with the goal") {
  const TaskSpec t = make_task(room(5), 0, {{0, 0}, east}, {4, 2});
  Heatmap h = potential_heatmap(t, make_embedding(EmbeddingMode::concat_fixed), nullptr);
  const std::vector<int> dist = grid_distance_to_goal(t);
  for (Cell c : t.grid.walkable_cells())
    h.values[static_cast<std::size_t>((c.y - h.min_y) * h.cols + (c.x - h.min_x))] =
        -dist[static_cast<std::size_t>(c.y * t.grid.width + c.x)];
  CHECK(heatmap_goal_correlation(t, h) == doctest::Approx(1.0));
}

TEST_CASE("evaluate: always-right policy reaches the goal in k steps") {
  const TaskSpec t = make_task(hallway_catalog()[0], 0, {{5, 1}, east}, {11, 1});
  const PolicySpec p = bias_policy(t.env.observation_dim(), {0, 0, 0, 40});
  Rng rng(1);
  const auto rows = evaluate(p, std::vector<TaskSpec>{t}, 5, rng);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].greedy_mean_steps == 5.0);
  CHECK(rows[0].greedy_max_steps == 5);
  CHECK(rows[0].greedy_success == 1.0);
  CHECK(rows[0].stochastic_mean_steps == 5.0);
  CHECK(rows[0].stochastic_success == 1.0);
}

TEST_CASE("evaluate: uniform policy on a 4x4 room matches exact success probability") {
  const int horizon = 20;
  const TaskSpec t = make_task(room(4, horizon), 0, {{0, 0}, east}, {3, 3});
  // Exact oracle: propagate the state distribution under uniform actions.
  std::map<std::pair<int, int>, double> dist{{{0, 0}, 1.0}};
  double success = 0.0;
  for (int step = 0; step < horizon; ++step) {
    std::map<std::pair<int, int>, double> next;
    for (const auto& [cell, p] : dist)
      for (int a = 0; a < 4; ++a) {
        const AgentState n = apply_action(t, {{cell.first, cell.second}, east}, a);
        if (within_goal(t, n.pos)) success += p / 4.0;
        else next[{n.pos.x, n.pos.y}] += p / 4.0;
      }
    dist.swap(next);
  }
  REQUIRE(success > 0.05);
  REQUIRE(success < 0.95);
  const PolicySpec p = bias_policy(t.env.observation_dim(), {0, 0, 0, 0});
  Rng rng(77);
  const auto rows = evaluate(p, std::vector<TaskSpec>{t}, 10000, rng);
  MESSAGE("exact " << success << " simulated " << rows[0].stochastic_success);
  CHECK(std::abs(rows[0].stochastic_success - success) <= 0.05);
}

TEST_CASE("evaluate: one row per task, CSV with header") {
  Rng rng(9);
  std::vector<TaskSpec> tasks;
  std::size_t dim = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    tasks.push_back(sample_task(rng, hallway_catalog()[i % 2]));
    dim = std::max(dim, tasks.back().env.observation_dim());
  }
  const PolicySpec p = make_policy(dim, {8}, rng);
  const auto rows = evaluate(p, tasks, 3, rng);
  REQUIRE(rows.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(rows[i].task_index == i);
    CHECK(rows[i].env == tasks[i].env.name);
    CHECK(rows[i].stochastic_max_steps <= tasks[i].env.horizon);
    CHECK(rows[i].stochastic_mean_steps <= rows[i].stochastic_max_steps);
  }
  const std::string csv = eval_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK(csv.rfind("task,env,", 0) == 0);
  double mean = 0.0;
  for (const auto& r : rows) mean += r.stochastic_mean_steps;
  CHECK(mean_stochastic_steps(rows) == doctest::Approx(mean / 10.0));
}
