#include "hmrl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

void TabularMdp::validate() const {
  const std::size_t n = num_states * num_actions;
  if (next.size() != n || reward.size() != n || terminal.size() != num_states)
    throw DimensionError("tabular mdp: tables must cover every (state, action)");
  for (std::size_t s = 0; s < num_states; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      if (next[idx(s, a)] >= num_states) throw DimensionError("tabular mdp: next state out of range");
      if (terminal[s] && (next[idx(s, a)] != s || reward[idx(s, a)] != 0.0))
        throw DimensionError("tabular mdp: terminal state " + std::to_string(s) + " not absorbing");
    }
  }
}

std::size_t TabularMdp::index_of(const AgentState& s) const {
  for (std::size_t i = 0; i < states.size(); ++i)
    if (states[i] == s) return i;
  throw UsageError("tabular mdp: state not enumerated");
}

TabularMdp to_tabular(const TaskSpec& task, double gamma) {
  TabularMdp mdp;
  mdp.gamma = gamma;
  mdp.num_actions = kNumActions;
  const bool rotational = task.env.action_set == ActionSet::rotational;
  for (Cell c : task.grid.walkable_cells()) {
    if (rotational) {
      for (int f = 0; f < 4; ++f) mdp.states.push_back({c, f});
    } else {
      mdp.states.push_back({c, east});
    }
  }
  mdp.num_states = mdp.states.size();
  std::map<std::tuple<int, int, int>, std::size_t> lookup;
  for (std::size_t i = 0; i < mdp.states.size(); ++i)
    lookup[{mdp.states[i].pos.x, mdp.states[i].pos.y, mdp.states[i].facing}] = i;

  mdp.next.resize(mdp.num_states * mdp.num_actions);
  mdp.reward.resize(mdp.num_states * mdp.num_actions);
  mdp.terminal.resize(mdp.num_states);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    mdp.terminal[s] = within_goal(task, mdp.states[s].pos) ? 1 : 0;
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      if (mdp.terminal[s]) {
        mdp.next[mdp.idx(s, a)] = s;
        mdp.reward[mdp.idx(s, a)] = 0.0;
        continue;
      }
      const AgentState n = apply_action(task, mdp.states[s], static_cast<int>(a));
      mdp.next[mdp.idx(s, a)] = lookup.at({n.pos.x, n.pos.y, rotational ? n.facing : east});
      mdp.reward[mdp.idx(s, a)] = -1.0;
    }
  }
  return mdp;
}

ValueResult value_iteration(const TabularMdp& mdp, double tol, int max_sweeps, double tie_tol) {
  if (!(tol > 0.0)) throw ConfigError("value_iteration: tol must be > 0");
  mdp.validate();
  ValueResult out;
  std::vector<double> v(mdp.num_states, 0.0);
  std::vector<double> nv(mdp.num_states, 0.0);
  bool converged = false;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    double delta = 0.0;
    for (std::size_t s = 0; s < mdp.num_states; ++s) {
      if (mdp.terminal[s]) {
        nv[s] = 0.0;
        continue;
      }
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < mdp.num_actions; ++a)
        best = std::max(best, mdp.reward[mdp.idx(s, a)] + mdp.gamma * v[mdp.next[mdp.idx(s, a)]]);
      nv[s] = best;
      delta = std::max(delta, std::abs(nv[s] - v[s]));
    }
    v.swap(nv);
    out.sweeps = sweep;
    out.residual = delta;
    if (delta < tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "value_iteration: no convergence after " << max_sweeps << " sweeps (residual "
       << out.residual << ")";
    throw NumericError(os.str());
  }
  out.values = v;
  out.policy.optimal.resize(mdp.num_states);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    if (mdp.terminal[s]) continue;
    std::vector<double> q(mdp.num_actions);
    for (std::size_t a = 0; a < mdp.num_actions; ++a)
      q[a] = mdp.reward[mdp.idx(s, a)] + mdp.gamma * v[mdp.next[mdp.idx(s, a)]];
    const double best = *std::max_element(q.begin(), q.end());
    for (std::size_t a = 0; a < mdp.num_actions; ++a)
      if (q[a] >= best - tie_tol) out.policy.optimal[s].push_back(static_cast<int>(a));
  }
  return out;
}

TabularMdp shaped_mdp(const TabularMdp& mdp, std::span<const double> phi, const ExtraReward& extra) {
  if (phi.size() != mdp.num_states) throw DimensionError("shaped_mdp: one potential per state required");
  TabularMdp out = mdp;
  auto eff = [&](std::size_t s) { return mdp.terminal[s] ? 0.0 : phi[s]; };
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    if (mdp.terminal[s]) continue;
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      const std::size_t n = mdp.next[mdp.idx(s, a)];
      double r = mdp.reward[mdp.idx(s, a)] + mdp.gamma * eff(n) - eff(s);
      if (extra) r += extra(s, a, n);
      out.reward[mdp.idx(s, a)] = r;
    }
  }
  return out;
}

ConsistencyReport verify_with_potentials(const TabularMdp& mdp, std::span<const double> phi,
                                         double value_tol, const ExtraReward& extra) {
  // Tight solver tolerance so value errors stay far below the tie tolerance.
  constexpr double kSolverTol = 1e-12;
  const TabularMdp shaped = shaped_mdp(mdp, phi, extra);
  const ValueResult orig = value_iteration(mdp, kSolverTol);
  const ValueResult with = value_iteration(shaped, kSolverTol);
  ConsistencyReport rep;
  rep.num_states = mdp.num_states;
  rep.value_tol = value_tol;
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    if (mdp.terminal[s]) continue;
    if (orig.policy.optimal[s] != with.policy.optimal[s]) rep.policy_violations.push_back(s);
    const double err = std::abs(with.values[s] - orig.values[s] + phi[s]);
    rep.max_offset_error = std::max(rep.max_offset_error, err);
    if (!(err <= value_tol)) rep.value_violations.push_back(s);
  }
  rep.passed = rep.policy_violations.empty() && rep.value_violations.empty();
  return rep;
}

std::vector<double> state_potentials(const TabularMdp& mdp, const TaskSpec& task,
                                     const EmbeddingSpec& emb, const PotentialNet* net) {
  if (net == nullptr) return std::vector<double>(mdp.num_states, 0.0);
  std::vector<MetaState> metas;
  metas.reserve(mdp.states.size());
  for (const auto& s : mdp.states) metas.push_back(embed(emb, s, task));
  return potentials(*net, metas);
}

ConsistencyReport verify_consistency(const TabularMdp& mdp, const TaskSpec& task,
                                     const EmbeddingSpec& emb, const PotentialNet* net,
                                     double value_tol, const ExtraReward& extra) {
  const std::vector<double> phi = state_potentials(mdp, task, emb, net);
  return verify_with_potentials(mdp, phi, value_tol, extra);
}

std::string ConsistencyReport::text(const TabularMdp& mdp) const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << ": " << num_states << " states, "
     << policy_violations.size() << " argmax-set violations, " << value_violations.size()
     << " value-offset violations, max |V_shaped - V_orig + phi| = " << max_offset_error << '\n';
  auto describe = [&](std::size_t s) {
    std::ostringstream d;
    d << "state " << s;
    if (s < mdp.states.size())
      d << " (x=" << mdp.states[s].pos.x << ", y=" << mdp.states[s].pos.y
        << ", facing=" << mdp.states[s].facing << ")";
    return d.str();
  };
  for (auto s : policy_violations) os << "  argmax mismatch at " << describe(s) << '\n';
  for (auto s : value_violations) os << "  value offset mismatch at " << describe(s) << '\n';
  return os.str();
}

std::string ConsistencyReport::json(const std::string& label) const {
  std::ostringstream os;
  os << "{\"label\":\"" << label << "\",\"passed\":" << (passed ? "true" : "false")
     << ",\"states\":" << num_states << ",\"policy_violations\":" << policy_violations.size()
     << ",\"value_violations\":" << value_violations.size()
     << ",\"max_offset_error\":" << fmt(max_offset_error) << ",\"value_tol\":" << fmt(value_tol)
     << "}";
  return os.str();
}

Heatmap potential_heatmap(const TaskSpec& task, const EmbeddingSpec& emb, const PotentialNet* net) {
  const std::vector<Cell> cells = task.grid.walkable_cells();
  Heatmap h;
  if (cells.empty()) return h;
  int max_x = cells[0].x, max_y = cells[0].y;
  h.min_x = cells[0].x;
  h.min_y = cells[0].y;
  for (Cell c : cells) {
    h.min_x = std::min(h.min_x, c.x);
    h.min_y = std::min(h.min_y, c.y);
    max_x = std::max(max_x, c.x);
    max_y = std::max(max_y, c.y);
  }
  h.cols = max_x - h.min_x + 1;
  h.rows = max_y - h.min_y + 1;
  h.values.assign(static_cast<std::size_t>(h.rows * h.cols), std::numeric_limits<double>::quiet_NaN());
  h.walkable.assign(h.values.size(), 0);
  const int facings = task.env.action_set == ActionSet::rotational ? 4 : 1;
  std::vector<MetaState> metas;
  for (Cell c : cells)
    for (int f = 0; f < facings; ++f) metas.push_back(embed(emb, {c, facings == 1 ? east : f}, task));
  const std::vector<double> phi =
      net != nullptr ? potentials(*net, metas) : std::vector<double>(metas.size(), 0.0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    double sum = 0.0;
    for (int f = 0; f < facings; ++f) sum += phi[i * static_cast<std::size_t>(facings) + static_cast<std::size_t>(f)];
    const auto k = static_cast<std::size_t>((cells[i].y - h.min_y) * h.cols + (cells[i].x - h.min_x));
    h.values[k] = sum / facings;
    h.walkable[k] = 1;
  }
  return h;
}

std::string Heatmap::csv() const {
  std::ostringstream os;
  os << "row,col,value\n";
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (walkable[static_cast<std::size_t>(r * cols + c)]) os << r << ',' << c << ',' << fmt(at(r, c)) << '\n';
  return os.str();
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("spearman: need two equal-length samples (n >= 2)");
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double heatmap_goal_correlation(const TaskSpec& task, const Heatmap& map) {
  const std::vector<int> dist = grid_distance_to_goal(task);
  std::vector<double> phi, neg_dist;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      if (!map.walkable[static_cast<std::size_t>(r * map.cols + c)]) continue;
      const int x = c + map.min_x, y = r + map.min_y;
      const int d = dist[static_cast<std::size_t>(y * task.grid.width + x)];
      if (d < 0) continue;
      phi.push_back(map.at(r, c));
      neg_dist.push_back(-static_cast<double>(d));
    }
  }
  return spearman(phi, neg_dist);
}

std::vector<EvalRow> evaluate(const PolicySpec& policy, std::span<const TaskSpec> tasks, int episodes,
                              Rng& rng) {
  if (episodes < 1) throw UsageError("evaluate: episodes must be >= 1");
  std::vector<EvalRow> rows;
  const EmbeddingSpec none = make_embedding(EmbeddingMode::concat_fixed);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EvalRow row;
    row.task_index = i;
    row.env = tasks[i].env.name;
    // Greedy rollouts are deterministic; one episode represents all of them.
    const Trajectory g = rollout(policy, tasks[i], none, nullptr, 1.0, rng, {true});
    row.greedy_mean_steps = g.steps_used();
    row.greedy_max_steps = g.steps_used();
    row.greedy_success = g.reached_goal ? 1.0 : 0.0;
    for (int e = 0; e < episodes; ++e) {
      const Trajectory t = rollout(policy, tasks[i], none, nullptr, 1.0, rng);
      row.stochastic_mean_steps += t.steps_used();
      row.stochastic_max_steps = std::max(row.stochastic_max_steps, t.steps_used());
      row.stochastic_success += t.reached_goal ? 1.0 : 0.0;
    }
    row.stochastic_mean_steps /= episodes;
    row.stochastic_success /= episodes;
    rows.push_back(row);
  }
  return rows;
}

std::string eval_csv(std::span<const EvalRow> rows) {
  std::ostringstream os;
  os << "task,env,greedy_mean_steps,greedy_max_steps,greedy_success,stochastic_mean_steps,"
        "stochastic_max_steps,stochastic_success\n";
  for (const auto& r : rows)
    os << r.task_index << ',' << r.env << ',' << fmt(r.greedy_mean_steps) << ',' << r.greedy_max_steps
       << ',' << fmt(r.greedy_success) << ',' << fmt(r.stochastic_mean_steps) << ','
       << r.stochastic_max_steps << ',' << fmt(r.stochastic_success) << '\n';
  return os.str();
}

double mean_stochastic_steps(std::span<const EvalRow> rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.stochastic_mean_steps;
  return s / static_cast<double>(rows.size());
}

}  // namespace hmrl
