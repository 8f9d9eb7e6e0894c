#include "hmrl/metaloop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

// Stream tags for derive_seed; fixed so every method consumes identical streams.
enum StreamTag : std::uint64_t {
  kPolicyInit = 1,
  kPotentialInit = 2,
  kEnvSample = 3,
  kTaskSample = 4,
  kPreRollouts = 5,
  kPostRollouts = 6,
  kFinetuneRollouts = 7,
  kFreshPolicy = 8,
  kFinetuneEval = 14,
};

std::vector<Trajectory> collect(const PolicySpec& policy, const TaskSpec& task,
                                const EmbeddingSpec& emb, const PotentialNet* net, double gamma,
                                int episodes, Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i) out.push_back(rollout(policy, task, emb, net, gamma, rng));
  return out;
}

PolicySpec step_policy(const PolicySpec& policy, const Gradient& grad, double lr,
                       const ParamVector* per_param_lr) {
  PolicySpec out = policy;
  if (per_param_lr != nullptr && !per_param_lr->values.empty()) {
    require_finite(grad, "policy gradient");
    for (std::size_t i = 0; i < out.params.values.size(); ++i)
      out.params.values[i] -= per_param_lr->values[i] * grad.values[i];
    require_finite(out.params, "policy parameters");
    return out;
  }
  if (lr == 0.0) return out;
  out.params = sgd_step(policy.params, grad, lr);
  return out;
}

// One policy improvement on a fixed batch: a single REINFORCE step, or
// clip_epochs steps on the clipped surrogate.
PolicySpec improve_policy(const RunConfig& cfg, const PolicySpec& policy,
                          std::span<const Trajectory> batch, bool use_shaped) {
  if (cfg.inner_objective == InnerObjective::reinforce)
    return step_policy(policy, pg_loss(policy, batch, cfg.gamma, use_shaped).grad, cfg.alpha, nullptr);
  PolicySpec cur = policy;
  for (int e = 0; e < cfg.clip_epochs; ++e)
    cur = step_policy(cur, clipped_surrogate_loss(cur, batch, cfg.gamma, cfg.clip_eps, use_shaped).grad,
                      cfg.alpha, nullptr);
  return cur;
}

std::vector<const EnvSpec*> pick_environments(const std::vector<EnvSpec>& catalog, int count, Rng& rng) {
  std::vector<const EnvSpec*> out;
  std::vector<EnvSpec> remaining;
  for (int i = 0; i < count; ++i) {
    if (remaining.empty()) remaining = catalog;
    const EnvSpec& pick = sample_environment(rng, remaining);
    for (const auto& e : catalog)
      if (e.name == pick.name) out.push_back(&e);
    remaining.erase(remaining.begin() + (&pick - remaining.data()));
  }
  return out;
}

std::string with_task(const std::string& msg, const TaskSpec& task) {
  std::ostringstream os;
  os << msg << " [env " << task.env.name << ", layout_seed " << task.layout_seed << ", start ("
     << task.start.pos.x << "," << task.start.pos.y << "), goal (" << task.goal.x << ","
     << task.goal.y << ")]";
  return os.str();
}

bool shaping_trainable(const RunConfig& cfg, const MetaModel& model) {
  return model.potential.has_value() && !cfg.force_zero_potential;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::hmrl: return "hmrl";
    case Method::maml: return "maml";
    case Method::hmrl_wo_ms: return "hmrl-wo-ms";
    case Method::ppo_scratch: return "ppo-scratch";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "hmrl") return Method::hmrl;
  if (s == "maml") return Method::maml;
  if (s == "hmrl-wo-ms") return Method::hmrl_wo_ms;
  if (s == "ppo-scratch") return Method::ppo_scratch;
  throw ConfigError("unknown method '" + s + "' (expected hmrl|maml|hmrl-wo-ms|ppo-scratch)");
}

std::string to_string(InnerObjective o) { return o == InnerObjective::reinforce ? "reinforce" : "clipped"; }

InnerObjective inner_objective_from_string(const std::string& s) {
  if (s == "reinforce") return InnerObjective::reinforce;
  if (s == "clipped") return InnerObjective::clipped;
  throw ConfigError("unknown inner_objective '" + s + "' (expected reinforce|clipped)");
}

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (!(alpha > 0.0)) fail("alpha", "must be > 0");
  if (!(beta > 0.0)) fail("beta", "must be > 0");
  if (!(shaping_lr > 0.0)) fail("shaping_lr", "must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma", "must be in (0, 1]");
  if (m < 1) fail("m", "must be >= 1");
  if (ell < 1) fail("ell", "must be >= 1");
  if (env_batch < 1) fail("env_batch", "must be >= 1");
  if (task_batch < 1) fail("task_batch", "must be >= 1");
  if (meta_iters < 0) fail("meta_iters", "must be >= 0");
  if (workers < 1) fail("workers", "must be >= 1");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) fail("clip_eps", "must be in (0, 1)");
  if (clip_epochs < 1) fail("clip_epochs", "must be >= 1");
  if (finetune_steps < 0) fail("finetune_steps", "must be >= 0");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (eval_tasks < 0) fail("eval_tasks", "must be >= 0");
  if (eval_episodes < 1) fail("eval_episodes", "must be >= 1");
  if (policy_hidden.empty() || potential_hidden.empty()) fail("policy_hidden/potential_hidden", "need at least one layer");
  for (auto h : policy_hidden)
    if (h == 0) fail("policy_hidden", "layer widths must be >= 1");
  for (auto h : potential_hidden)
    if (h == 0) fail("potential_hidden", "layer widths must be >= 1");
  try {
    const auto cat = resolve_catalog(catalog);
    resolve_embedding(*this, cat);
  } catch (const ConfigError& e) {
    fail("catalog/embedding", e.what());
  }
}

std::vector<EnvSpec> resolve_catalog(const std::string& catalog) {
  if (catalog == "hallway") return hallway_catalog();
  if (catalog == "maze") return maze_catalog();
  if (catalog == "desk") return desk_catalog();
  std::vector<EnvSpec> out;
  std::stringstream ss(catalog);
  std::string name;
  while (std::getline(ss, name, ',')) {
    name.erase(0, name.find_first_not_of(" \t"));
    name.erase(name.find_last_not_of(" \t") + 1);
    if (name.empty()) continue;
    auto env = find_env(name);
    if (!env) throw ConfigError("unknown environment '" + name + "'");
    out.push_back(*env);
  }
  if (out.empty()) throw ConfigError("empty catalog");
  return out;
}

EmbeddingMode resolve_embedding(const RunConfig& cfg, const std::vector<EnvSpec>& catalog) {
  if (cfg.method == Method::hmrl_wo_ms) return EmbeddingMode::raw_state;
  if (cfg.embedding != "auto") {
    const EmbeddingMode m = embedding_mode_from_string(cfg.embedding);
    if (m == EmbeddingMode::raw_state)
      throw ConfigError("raw-state embedding is reserved for method hmrl-wo-ms");
    return m;
  }
  const bool all_hallway = std::all_of(catalog.begin(), catalog.end(),
                                       [](const EnvSpec& e) { return e.family == Family::hallway; });
  return all_hallway ? EmbeddingMode::concat_fixed : EmbeddingMode::learned_affine;
}

std::size_t catalog_input_dim(const std::vector<EnvSpec>& catalog) {
  std::size_t d = 0;
  for (const auto& e : catalog) d = std::max(d, e.observation_dim());
  return d;
}

MetaModel init_model(const RunConfig& cfg, const std::vector<EnvSpec>& catalog) {
  MetaModel model;
  Rng policy_rng = make_rng(cfg.seed, {kPolicyInit});
  model.policy = make_policy(catalog_input_dim(catalog), cfg.policy_hidden, policy_rng);
  model.embedding = make_embedding(resolve_embedding(cfg, catalog));
  if (cfg.method == Method::hmrl || cfg.method == Method::hmrl_wo_ms) {
    if (cfg.force_zero_potential) {
      model.potential = zero_potential(cfg.potential_hidden);
    } else {
      Rng phi_rng = make_rng(cfg.seed, {kPotentialInit});
      model.potential = make_potential(phi_rng, cfg.potential_hidden);
    }
    model.potential_adam = AdamState::fresh(model.potential->params, {cfg.shaping_lr});
  }
  if (model.embedding.learnable())
    model.embedding_adam = AdamState::fresh(model.embedding.params, {cfg.shaping_lr});
  if (cfg.meta_sgd) {
    model.inner_lr = ParamVector::zeros(model.policy.params.layout);
    std::fill(model.inner_lr.values.begin(), model.inner_lr.values.end(), cfg.alpha);
  }
  return model;
}

PolicyLoss inner_objective_gradient(const RunConfig& cfg, const PolicySpec& policy,
                                    std::span<const Trajectory> batch) {
  if (cfg.inner_objective == InnerObjective::clipped)
    return clipped_surrogate_loss(policy, batch, cfg.gamma, cfg.clip_eps, true);
  return pg_loss(policy, batch, cfg.gamma, true);
}

AdaptedTask inner_adapt(const MetaModel& model, const TaskSpec& task, const RunConfig& cfg, Rng& rng) {
  AdaptedTask out;
  out.task = task;
  try {
    out.pre = collect(model.policy, task, model.embedding, model.potential_ptr(), cfg.gamma, cfg.m, rng);
    out.pre_grad = inner_objective_gradient(cfg, model.policy, out.pre).grad;
    out.adapted = step_policy(model.policy, out.pre_grad, cfg.alpha,
                              cfg.meta_sgd ? &model.inner_lr : nullptr);
  } catch (const NumericError& e) {
    throw NumericError(with_task(e.what(), task));
  }
  return out;
}

void sample_post_adaptation(const MetaModel& model, AdaptedTask& adapted, const RunConfig& cfg,
                            Rng& rng) {
  adapted.post = collect(adapted.adapted, adapted.task, model.embedding, model.potential_ptr(),
                         cfg.gamma, cfg.ell, rng);
}

MetaModel meta_update(const MetaModel& model, std::span<const AdaptedTask> adapted,
                      const RunConfig& cfg) {
  if (adapted.empty()) throw UsageError("meta_update: no adapted tasks");
  Gradient total = Gradient::zeros_like(model.policy.params);
  std::vector<Gradient> post_grads;
  for (const auto& a : adapted) {
    try {
      Gradient g = inner_objective_gradient(cfg, a.adapted, a.post).grad;
      require_finite(g, "meta gradient");
      total += g;
      if (cfg.meta_sgd) post_grads.push_back(std::move(g));
    } catch (const NumericError& e) {
      throw NumericError(with_task(e.what(), a.task));
    }
  }
  MetaModel out = model;
  if (cfg.beta != 0.0) out.policy.params = sgd_step(model.policy.params, total, cfg.beta);
  if (cfg.meta_sgd && cfg.beta != 0.0) {
    // d L(theta - lr * g) / d lr = -g' * g (first order)
    for (std::size_t k = 0; k < adapted.size(); ++k)
      for (std::size_t i = 0; i < out.inner_lr.values.size(); ++i)
        out.inner_lr.values[i] += cfg.beta * post_grads[k].values[i] * adapted[k].pre_grad.values[i];
    require_finite(out.inner_lr, "meta-SGD inner learning rates");
  }
  return out;
}

ShapingUpdate update_shaping(const MetaModel& model, std::span<const Trajectory> trajectories,
                             const RunConfig& cfg) {
  ShapingUpdate out{model, 0.0, true};
  if (!model.potential || trajectories.empty()) return out;
  const std::vector<ReturnTarget> targets = collect_targets(trajectories, cfg.gamma);
  const ShapingLoss sl = shaping_loss(targets, *model.potential, model.embedding);
  out.loss = sl.loss;
  if (sl.skipped) return out;
  out.skipped = false;
  out.model.potential->params =
      adam_step(out.model.potential_adam, model.potential->params, sl.potential_grad);
  if (model.embedding.learnable())
    out.model.embedding.params =
        adam_step(out.model.embedding_adam, model.embedding.params, sl.embedding_grad);
  return out;
}

EnvStats summarize(const std::string& env, std::span<const Trajectory> trajectories) {
  EnvStats s;
  s.env = env;
  s.episodes = static_cast<int>(trajectories.size());
  if (trajectories.empty()) return s;
  for (const auto& t : trajectories) {
    s.mean_return += t.original_return();
    s.mean_steps += t.steps_used();
    s.success_rate += t.reached_goal ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(trajectories.size());
  s.mean_return /= n;
  s.mean_steps /= n;
  s.success_rate /= n;
  return s;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

TrainResult train(const RunConfig& cfg, const IterationObserver& observer) {
  cfg.validate();
  const std::vector<EnvSpec> catalog = resolve_catalog(cfg.catalog);
  return train_from(init_model(cfg, catalog), cfg, catalog, observer);
}

TrainResult train_from(MetaModel model, const RunConfig& cfg, const std::vector<EnvSpec>& catalog,
                       const IterationObserver& observer) {
  TrainResult result;
  const std::int64_t first = model.iteration;
  for (std::int64_t it = first; it < first + cfg.meta_iters; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng env_rng = make_rng(cfg.seed, {kEnvSample, static_cast<std::uint64_t>(it)});
    const std::vector<const EnvSpec*> envs = pick_environments(catalog, cfg.env_batch, env_rng);

    struct Job {
      std::size_t env_slot;
      int task_slot;
    };
    std::vector<Job> jobs;
    for (std::size_t e = 0; e < envs.size(); ++e)
      for (int k = 0; k < cfg.task_batch; ++k) jobs.push_back({e, k});

    const std::uint64_t snapshot = shaping_snapshot_hash(model.potential_ptr(), model.embedding);
    std::vector<AdaptedTask> adapted(jobs.size());
    auto task_for = [&](const Job& j) {
      Rng task_rng = make_rng(cfg.seed, {kTaskSample, static_cast<std::uint64_t>(it), j.env_slot,
                                         static_cast<std::uint64_t>(j.task_slot)});
      return sample_task(task_rng, *envs[j.env_slot]);
    };
    auto stream = [&](StreamTag tag, const Job& j) {
      return make_rng(cfg.seed, {tag, static_cast<std::uint64_t>(it), j.env_slot,
                                 static_cast<std::uint64_t>(j.task_slot)});
    };

    double shaping_loss_value = 0.0;
    if (cfg.method == Method::ppo_scratch) {
      // Plain single-task training: sequential policy-gradient steps, no meta update.
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        AdaptedTask& a = adapted[i];
        a.task = task_for(jobs[i]);
        Rng rng = stream(kPreRollouts, jobs[i]);
        a.pre = collect(model.policy, a.task, model.embedding, nullptr, cfg.gamma, cfg.m, rng);
        model.policy = improve_policy(cfg, model.policy, a.pre, false);
      }
    } else {
      parallel_for(jobs.size(), cfg.workers, [&](std::size_t i) {
        const TaskSpec task = task_for(jobs[i]);
        Rng pre_rng = stream(kPreRollouts, jobs[i]);
        adapted[i] = inner_adapt(model, task, cfg, pre_rng);
        Rng post_rng = stream(kPostRollouts, jobs[i]);
        sample_post_adaptation(model, adapted[i], cfg, post_rng);
      });
      model = meta_update(model, adapted, cfg);
      if (shaping_trainable(cfg, model)) {
        std::vector<Trajectory> all;
        for (const auto& a : adapted) {
          all.insert(all.end(), a.pre.begin(), a.pre.end());
          all.insert(all.end(), a.post.begin(), a.post.end());
        }
        ShapingUpdate su = update_shaping(model, all, cfg);
        model = std::move(su.model);
        shaping_loss_value = su.loss;
      }
    }
    model.iteration = it + 1;

    IterationMetrics metrics;
    metrics.iteration = it;
    metrics.shaping_loss = shaping_loss_value;
    std::vector<Trajectory> pooled;
    for (const auto& env : catalog) {
      std::vector<Trajectory> mine;
      for (std::size_t i = 0; i < jobs.size(); ++i)
        if (envs[jobs[i].env_slot]->name == env.name)
          mine.insert(mine.end(), adapted[i].pre.begin(), adapted[i].pre.end());
      metrics.per_env.push_back(summarize(env.name, mine));
      pooled.insert(pooled.end(), std::make_move_iterator(mine.begin()),
                    std::make_move_iterator(mine.end()));
    }
    metrics.overall = summarize("all", pooled);
    metrics.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(metrics);

    if (observer) {
      std::vector<std::uint64_t> snaps;
      for (const auto& a : adapted) {
        for (const auto& t : a.pre) snaps.push_back(t.shaping_snapshot);
        for (const auto& t : a.post) snaps.push_back(t.shaping_snapshot);
      }
      observer(IterationReport{model, result.metrics.back(), snapshot, std::move(snaps)});
    }
  }
  result.model = std::move(model);
  return result;
}

FinetuneResult finetune(const MetaModel& model, const TaskSpec& task, const RunConfig& cfg,
                        const FinetuneOptions& opts) {
  FinetuneResult out{model, {}};
  MetaModel& m = out.model;
  if (opts.fresh_policy) {
    Rng rng = make_rng(cfg.seed, {kFreshPolicy});
    m.policy = make_policy(task.env.observation_dim(), cfg.policy_hidden, rng);
    m.inner_lr = ParamVector{};
  } else if (task.env.observation_dim() > m.policy.input_dim()) {
    throw DimensionError("finetune: task observation width " +
                         std::to_string(task.env.observation_dim()) +
                         " does not fit the meta policy input " +
                         std::to_string(m.policy.input_dim()) + "; use fresh-policy mode");
  }
  const bool shaping = opts.use_shaping && m.potential.has_value();
  for (int s = 0; s < opts.steps; ++s) {
    Rng rng = make_rng(cfg.seed, {kFinetuneRollouts, static_cast<std::uint64_t>(s)});
    const std::vector<Trajectory> batch = collect(m.policy, task, m.embedding,
                                                  shaping ? m.potential_ptr() : nullptr, cfg.gamma, cfg.m, rng);
    EnvStats st = summarize(task.env.name, batch);
    if (opts.eval_episodes > 0) {
      // scored on a separate unshaped batch; same draws for every method
      Rng erng = make_rng(cfg.seed, {kFinetuneEval, static_cast<std::uint64_t>(s)});
      const EnvStats ev = summarize(task.env.name, collect(m.policy, task, m.embedding, nullptr, cfg.gamma,
                                                           opts.eval_episodes, erng));
      st.success_rate = ev.success_rate;
      st.mean_steps = ev.mean_steps;
    }
    FinetuneStep row{s, st.success_rate, st.mean_steps, st.mean_return, 0.0};
    m.policy = improve_policy(cfg, m.policy, batch, true);
    if (shaping && !opts.freeze_shaping) {
      ShapingUpdate su = update_shaping(m, batch, cfg);
      m = std::move(su.model);
      row.shaping_loss = su.loss;
    }
    out.steps.push_back(row);
  }
  return out;
}

}  // namespace hmrl
