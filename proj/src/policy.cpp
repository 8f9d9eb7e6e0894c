#include "hmrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

void log_softmax_inplace(std::span<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (double& v : z) v -= lse;
}

void check_logits(const PolicySpec& policy, std::span<const double> logits) {
  if (std::all_of(logits.begin(), logits.end(), [](double v) { return std::isfinite(v); })) return;
  require_finite(policy.params, "policy parameters");
  throw NumericError("non-finite policy logits from output slice 'l" +
                     std::to_string(policy.spec.num_layers() - 1) + ".weight'");
}

Eigen::MatrixXd stack_observations(std::span<const Trajectory> batch, std::size_t dim,
                                   std::size_t total) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(dim));
  Eigen::Index row = 0;
  for (const auto& traj : batch) {
    if (traj.obs_dim != dim)
      throw DimensionError("policy loss: trajectory observation width " +
                           std::to_string(traj.obs_dim) + " != policy input " +
                           std::to_string(dim));
    for (std::size_t t = 0; t < traj.length(); ++t, ++row)
      x.row(row) = Eigen::Map<const Eigen::RowVectorXd>(traj.observations.data() + t * dim,
                                                        static_cast<Eigen::Index>(dim));
  }
  return x;
}

std::size_t total_steps(std::span<const Trajectory> batch) {
  std::size_t n = 0;
  for (const auto& t : batch) n += t.length();
  return n;
}

// Row-wise log-softmax of logits, in place.
void log_softmax_rows(const PolicySpec& policy, Eigen::MatrixXd& logits) {
  std::vector<double> row(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index j = 0; j < logits.cols(); ++j) row[static_cast<std::size_t>(j)] = logits(i, j);
    check_logits(policy, row);
    log_softmax_inplace(row);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) logits(i, j) = row[static_cast<std::size_t>(j)];
  }
}

std::vector<double> advantages(std::span<const Trajectory> batch, double gamma, bool use_shaped,
                               Baseline baseline) {
  std::vector<double> g = batch_returns(batch, gamma, use_shaped);
  if (baseline == Baseline::mean_return && !g.empty()) {
    const double b = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
    for (double& v : g) v -= b;
  }
  return g;
}

}  // namespace

PolicySpec make_policy(std::size_t input_dim, const std::vector<std::size_t>& hidden, Rng& rng) {
  PolicySpec p{MlpSpec{input_dim, hidden, static_cast<std::size_t>(kNumActions), Activation::relu,
                       OutputHead::softmax_logits},
               {}};
  p.params = mlp_init(p.spec, rng);
  return p;
}

std::vector<double> policy_input(std::span<const double> observation, std::size_t input_dim) {
  if (observation.size() > input_dim)
    throw DimensionError("observation width " + std::to_string(observation.size()) +
                         " exceeds policy input " + std::to_string(input_dim));
  std::vector<double> out(input_dim, 0.0);
  std::copy(observation.begin(), observation.end(), out.begin());
  return out;
}

std::vector<double> action_log_probs(const PolicySpec& policy, std::span<const double> input) {
  std::vector<double> z = mlp_forward(policy.spec, policy.params, input);
  check_logits(policy, z);
  log_softmax_inplace(z);
  return z;
}

ActionSample act(const PolicySpec& policy, std::span<const double> input, Rng& rng) {
  const std::vector<double> lp = action_log_probs(policy, input);
  const double u = uniform01(rng);
  double acc = 0.0;
  int chosen = static_cast<int>(lp.size()) - 1;
  for (std::size_t a = 0; a < lp.size(); ++a) {
    acc += std::exp(lp[a]);
    if (u < acc) {
      chosen = static_cast<int>(a);
      break;
    }
  }
  // Guard against rounding placing u past the cumulative sum onto a zero-probability tail.
  while (chosen > 0 && !std::isfinite(lp[static_cast<std::size_t>(chosen)])) --chosen;
  return {chosen, lp[static_cast<std::size_t>(chosen)]};
}

int act_greedy(const PolicySpec& policy, std::span<const double> input) {
  const std::vector<double> z = mlp_forward(policy.spec, policy.params, input);
  check_logits(policy, z);
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

Trajectory rollout(const PolicySpec& policy, const TaskSpec& task, const EmbeddingSpec& emb,
                   const PotentialNet* net, double gamma, Rng& rng, RolloutOptions opts) {
  Trajectory traj;
  const std::size_t dim = policy.input_dim();
  traj.obs_dim = dim;
  EpisodeState ep = reset(task);
  std::vector<double> obs = observe(task, ep.agent);
  traj.states.push_back(ep.agent);
  while (!ep.done) {
    const std::vector<double> x = policy_input(obs, dim);
    ActionSample a;
    if (opts.greedy) {
      a.action = act_greedy(policy, x);
      a.log_prob = action_log_probs(policy, x)[static_cast<std::size_t>(a.action)];
    } else {
      a = act(policy, x, rng);
    }
    StepOutcome out = step(task, ep, a.action);
    traj.observations.insert(traj.observations.end(), x.begin(), x.end());
    traj.actions.push_back(a.action);
    traj.log_probs.push_back(a.log_prob);
    traj.rewards.push_back(out.reward);
    traj.states.push_back(out.next_state);
    traj.reached_goal = out.reached_goal;
    ep = out.episode();
    obs = std::move(out.observation);
  }
  extend_trajectory(traj, task, emb, net, gamma);
  return traj;
}

std::vector<double> batch_returns(std::span<const Trajectory> batch, double gamma, bool use_shaped) {
  std::vector<double> out;
  for (const auto& traj : batch) {
    if (use_shaped && !traj.extended) throw UsageError("pg_loss: shaped returns need an extended trajectory");
    const auto& r = use_shaped ? traj.shaped_rewards : traj.rewards;
    const std::vector<double> g = discounted_return(r, gamma);
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

PolicyLoss pg_loss(const PolicySpec& policy, std::span<const Trajectory> batch, double gamma,
                   bool use_shaped, Baseline baseline) {
  if (batch.empty()) throw UsageError("pg_loss: empty batch");
  PolicyLoss out;
  out.grad = Gradient::zeros_like(policy.params);
  const std::size_t n = total_steps(batch);
  out.steps = n;
  if (n == 0) return out;
  const std::vector<double> adv = advantages(batch, gamma, use_shaped, baseline);
  const Eigen::MatrixXd x = stack_observations(batch, policy.input_dim(), n);
  Eigen::MatrixXd logp = mlp_forward_batch(policy.spec, policy.params, x);
  log_softmax_rows(policy, logp);

  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(logp.rows(), logp.cols());
  double loss = 0.0;
  Eigen::Index row = 0;
  for (const auto& traj : batch) {
    for (std::size_t t = 0; t < traj.length(); ++t, ++row) {
      const int a = traj.actions[t];
      const double A = adv[static_cast<std::size_t>(row)];
      loss -= logp(row, a) * A;
      // d(-logp_a * A)/dz = -A * (onehot(a) - softmax(z))
      for (Eigen::Index j = 0; j < logp.cols(); ++j)
        upstream(row, j) = A * inv_n * std::exp(logp(row, j));
      upstream(row, a) -= A * inv_n;
    }
  }
  out.loss = loss * inv_n;
  mlp_backward_batch(policy.spec, policy.params, x, upstream, out.grad);
  return out;
}

PolicyLoss clipped_surrogate_loss(const PolicySpec& policy, std::span<const Trajectory> batch,
                                  double gamma, double clip_eps, bool use_shaped) {
  if (batch.empty()) throw UsageError("clipped_surrogate_loss: empty batch");
  if (!(clip_eps > 0.0 && clip_eps < 1.0))
    throw ConfigError("clipped_surrogate_loss: clip_eps must be in (0, 1)");
  PolicyLoss out;
  out.grad = Gradient::zeros_like(policy.params);
  const std::size_t n = total_steps(batch);
  out.steps = n;
  if (n == 0) return out;
  const std::vector<double> adv = advantages(batch, gamma, use_shaped, Baseline::mean_return);
  const Eigen::MatrixXd x = stack_observations(batch, policy.input_dim(), n);
  Eigen::MatrixXd logp = mlp_forward_batch(policy.spec, policy.params, x);
  log_softmax_rows(policy, logp);

  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::MatrixXd upstream = Eigen::MatrixXd::Zero(logp.rows(), logp.cols());
  double loss = 0.0;
  Eigen::Index row = 0;
  for (const auto& traj : batch) {
    for (std::size_t t = 0; t < traj.length(); ++t, ++row) {
      const int a = traj.actions[t];
      const double A = adv[static_cast<std::size_t>(row)];
      const double ratio = std::exp(logp(row, a) - traj.log_probs[t]);
      const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
      const double unclipped_term = ratio * A;
      const double clipped_term = clipped * A;
      loss -= std::min(unclipped_term, clipped_term);
      if (unclipped_term <= clipped_term) {
        // d(-ratio * A)/dz = -A * ratio * (onehot(a) - softmax(z))
        const double c = A * ratio * inv_n;
        for (Eigen::Index j = 0; j < logp.cols(); ++j) upstream(row, j) = c * std::exp(logp(row, j));
        upstream(row, a) -= c;
      }
    }
  }
  out.loss = loss * inv_n;
  mlp_backward_batch(policy.spec, policy.params, x, upstream, out.grad);
  return out;
}

std::string trajectory_csv(std::span<const Trajectory> batch) {
  std::ostringstream os;
  os.precision(17);
  os << "episode,t,x,y,facing,action,reward,shaping\n";
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Trajectory& tr = batch[e];
    for (std::size_t t = 0; t < tr.length(); ++t) {
      const AgentState& s = tr.states[t];
      os << e << ',' << t << ',' << s.pos.x << ',' << s.pos.y << ',' << s.facing << ',' << tr.actions[t] << ','
         << tr.rewards[t] << ',' << (tr.extended ? tr.shaping[t] : 0.0) << '\n';
    }
  }
  return os.str();
}

}  // namespace hmrl
