#include "hmrl/shaping.hpp"

#include <numeric>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

MlpSpec potential_spec(const std::vector<std::size_t>& hidden) {
  return MlpSpec{kMetaDim, hidden, 1, Activation::relu, OutputHead::linear};
}

Eigen::MatrixXd stack(std::span<const MetaState> states) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(kMetaDim));
  for (std::size_t i = 0; i < states.size(); ++i)
    for (std::size_t j = 0; j < kMetaDim; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = states[i].values[j];
  return x;
}

}  // namespace

double Trajectory::original_return() const {
  return std::accumulate(rewards.begin(), rewards.end(), 0.0);
}

PotentialNet make_potential(Rng& rng, const std::vector<std::size_t>& hidden) {
  PotentialNet net{potential_spec(hidden), {}};
  net.params = mlp_init(net.spec, rng);
  return net;
}

PotentialNet zero_potential(const std::vector<std::size_t>& hidden) {
  PotentialNet net{potential_spec(hidden), {}};
  net.params = ParamVector::zeros(net.spec.layout());
  return net;
}

double potential(const PotentialNet& net, const MetaState& s_m) {
  return mlp_forward(net.spec, net.params, s_m.values)[0];
}

std::vector<double> potentials(const PotentialNet& net, std::span<const MetaState> states) {
  if (states.empty()) return {};
  const Eigen::MatrixXd y = mlp_forward_batch(net.spec, net.params, stack(states));
  return {y.data(), y.data() + y.size()};
}

double shape(const PotentialNet& net, const MetaState& s_m, const MetaState& s_m_next, double gamma,
             bool terminal) {
  const double next = terminal ? 0.0 : potential(net, s_m_next);
  return gamma * next - potential(net, s_m);
}

void extend_trajectory(Trajectory& traj, const TaskSpec& task, const EmbeddingSpec& emb,
                       const PotentialNet* net, double gamma) {
  const std::size_t T = traj.length();
  if (traj.states.size() != T + 1 || traj.rewards.size() != T)
    throw DimensionError("extend_trajectory: inconsistent trajectory lengths");
  traj.meta_base.resize(T + 1);
  traj.meta_states.resize(T + 1);
  for (std::size_t t = 0; t <= T; ++t) {
    traj.meta_base[t] = embed_base(emb.mode, traj.states[t], task);
    traj.meta_states[t] = apply_affine(emb, traj.meta_base[t]);
  }
  traj.potentials =
      net != nullptr ? potentials(*net, traj.meta_states) : std::vector<double>(T + 1, 0.0);
  traj.shaping.resize(T);
  traj.shaped_rewards.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const bool terminal = t + 1 == T;
    const double next = terminal ? 0.0 : traj.potentials[t + 1];
    traj.shaping[t] = gamma * next - traj.potentials[t];
    traj.shaped_rewards[t] = traj.rewards[t] + traj.shaping[t];
  }
  traj.shaping_snapshot = shaping_snapshot_hash(net, emb);
  traj.extended = true;
}

ShapedStep shaped_step(const Trajectory& traj, std::size_t t) {
  if (!traj.extended) throw UsageError("shaped_step: trajectory not extended");
  return {traj.rewards.at(t), traj.shaping.at(t), traj.shaped_rewards.at(t)};
}

std::vector<double> discounted_return(std::span<const double> rewards, double gamma) {
  std::vector<double> out(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = t + 1 == rewards.size() ? rewards[t] : rewards[t] + gamma * acc;
    out[t] = acc;
  }
  return out;
}

std::vector<ReturnTarget> collect_targets(std::span<const Trajectory> batch, double gamma) {
  std::vector<ReturnTarget> out;
  for (const auto& traj : batch) {
    if (!traj.extended) throw UsageError("collect_targets: trajectory not extended");
    const std::vector<double> ret = discounted_return(traj.shaped_rewards, gamma);
    for (std::size_t t = 0; t < traj.length(); ++t)
      out.push_back({traj.meta_states[t], traj.meta_base[t], ret[t]});
  }
  return out;
}

ShapingLoss shaping_loss(std::span<const ReturnTarget> targets, const PotentialNet& net,
                         const EmbeddingSpec& emb) {
  ShapingLoss out;
  out.potential_grad = Gradient::zeros_like(net.params);
  if (emb.learnable()) out.embedding_grad = Gradient::zeros_like(emb.params);
  if (targets.empty()) {
    out.skipped = true;
    return out;
  }
  const auto n = static_cast<Eigen::Index>(targets.size());
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(kMetaDim));
  for (Eigen::Index i = 0; i < n; ++i) {
    const MetaState m = apply_affine(emb, targets[static_cast<std::size_t>(i)].base);
    for (std::size_t j = 0; j < kMetaDim; ++j) x(i, static_cast<Eigen::Index>(j)) = m.values[j];
  }
  const Eigen::MatrixXd y = mlp_forward_batch(net.spec, net.params, x);
  Eigen::MatrixXd upstream(n, 1);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = y(i, 0) - targets[static_cast<std::size_t>(i)].target;
    loss += r * r;
    upstream(i, 0) = 2.0 * r * inv_n;
  }
  out.loss = loss * inv_n;
  Eigen::MatrixXd input_grad;
  mlp_backward_batch(net.spec, net.params, x, upstream, out.potential_grad,
                     emb.learnable() ? &input_grad : nullptr);
  if (emb.learnable()) {
    for (Eigen::Index i = 0; i < n; ++i) {
      MetaState up;
      for (std::size_t j = 0; j < kMetaDim; ++j) up.values[j] = input_grad(i, static_cast<Eigen::Index>(j));
      out.embedding_grad += affine_backward(emb, targets[static_cast<std::size_t>(i)].base, up);
    }
  }
  return out;
}

std::uint64_t shaping_snapshot_hash(const PotentialNet* net, const EmbeddingSpec& emb) {
  if (net == nullptr) return 0;
  return param_hash(net->params) ^ (splitmix64(param_hash(emb.params)) + static_cast<std::uint64_t>(emb.mode));
}

}  // namespace hmrl
