#include <cmath>
#include <limits>
#include <string>

#include "doctest.h"
#include "hmrl/errors.hpp"
#include "hmrl/metaloop.hpp"

using namespace hmrl;

namespace {

RunConfig small_cfg(const std::string& catalog = "hallway") {
  RunConfig cfg;
  cfg.catalog = catalog;
  cfg.meta_iters = 3;
  cfg.m = 3;
  cfg.ell = 3;
  cfg.env_batch = 2;
  cfg.task_batch = 2;
  cfg.policy_hidden = {16};
  cfg.potential_hidden = {8};
  return cfg;
}

TaskSpec corridor(int start_x) {
  return make_task(hallway_catalog()[0], 0, {{start_x, 1}, east}, {11, 1});
}

// phi = w, constant over meta states.
PotentialNet bias_potential(double w) {
  PotentialNet net{MlpSpec{kMetaDim, {}, 1, Activation::relu, OutputHead::linear}, {}};
  net.params = ParamVector::zeros(net.spec.layout());
  net.params.slice("l0.bias")[0] = w;
  return net;
}

MetaModel with_bias_potential(MetaModel m, double w, double lr) {
  m.potential = bias_potential(w);
  m.potential_adam = AdamState::fresh(m.potential->params, {lr});
  return m;
}

// Hand-built one-step episodes: start next to the goal zone, step right.
std::vector<Trajectory> one_step_batch(const MetaModel& model, int n) {
  const TaskSpec t = corridor(9);
  std::vector<Trajectory> out;
  for (int i = 0; i < n; ++i) {
    Trajectory tr;
    tr.obs_dim = model.policy.input_dim();
    const auto x = policy_input(observe(t, t.start), tr.obs_dim);
    tr.observations = x;
    const StepOutcome o = step(t, reset(t), action::right);
    tr.actions = {action::right};
    tr.log_probs = {action_log_probs(model.policy, x)[action::right]};
    tr.rewards = {o.reward};
    tr.states = {t.start, o.next_state};
    tr.reached_goal = o.reached_goal;
    extend_trajectory(tr, t, model.embedding, model.potential_ptr(), 0.99);
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace

TEST_CASE("alpha = 0 leaves the task policy equal to theta") {
  RunConfig cfg = small_cfg();
  const auto cat = resolve_catalog(cfg.catalog);
  const MetaModel model = init_model(cfg, cat);
  cfg.alpha = 0.0;
  Rng rng(1);
  const AdaptedTask a = inner_adapt(model, corridor(2), cfg, rng);
  CHECK(a.adapted.params.values == model.policy.params.values);
  CHECK(a.pre.size() == static_cast<std::size_t>(cfg.m));
  CHECK(a.post.empty());
}

TEST_CASE("zero potential adaptation equals the plain step on original rewards") {
  RunConfig cfg = small_cfg();
  cfg.force_zero_potential = true;
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  Rng rng(2);
  const AdaptedTask a = inner_adapt(model, corridor(2), cfg, rng);
  const ParamVector expect = sgd_step(model.policy.params, pg_loss(model.policy, a.pre, cfg.gamma, false).grad, cfg.alpha);
  CHECK(a.adapted.params.values == expect.values);
}

TEST_CASE("beta = 0 leaves theta unchanged") {
  RunConfig cfg = small_cfg();
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  Rng rng(3);
  AdaptedTask a = inner_adapt(model, corridor(2), cfg, rng);
  sample_post_adaptation(model, a, cfg, rng);
  cfg.beta = 0.0;
  const MetaModel next = meta_update(model, std::vector<AdaptedTask>{a}, cfg);
  CHECK(next.policy.params.values == model.policy.params.values);
}

TEST_CASE("first-order meta update with beta = alpha and D' replayed from D's seed") {
  RunConfig cfg = small_cfg();
  cfg.beta = cfg.alpha;
  cfg.ell = cfg.m;
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  const TaskSpec t = corridor(3);
  Rng r1(44);
  AdaptedTask a = inner_adapt(model, t, cfg, r1);
  Rng r2(44);
  sample_post_adaptation(model, a, cfg, r2);

  // A second inner step from theta_T with the same seed draws the same D'.
  MetaModel from_t = model;
  from_t.policy = a.adapted;
  Rng r3(44);
  const AdaptedTask again = inner_adapt(from_t, t, cfg, r3);
  const ParamVector expect = sgd_step(model.policy.params, again.pre_grad, cfg.alpha);

  const MetaModel next = meta_update(model, std::vector<AdaptedTask>{a}, cfg);
  CHECK(next.policy.params.values == expect.values);
  // Potential and embedding are untouched by the policy update.
  CHECK(next.potential->params.values == model.potential->params.values);
  CHECK(next.embedding.params.values == model.embedding.params.values);
}

TEST_CASE("opposite task gradients cancel in the meta update") {
  RunConfig cfg = small_cfg();
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  Rng rng(5);
  AdaptedTask a = inner_adapt(model, corridor(2), cfg, rng);
  sample_post_adaptation(model, a, cfg, rng);
  AdaptedTask b = a;
  // Negated returns negate every advantage, hence the gradient.
  for (auto& tr : b.post)
    for (double& r : tr.shaped_rewards) r = -r;
  const Gradient ga = inner_objective_gradient(cfg, a.adapted, a.post).grad;
  const Gradient gb = inner_objective_gradient(cfg, b.adapted, b.post).grad;
  for (std::size_t i = 0; i < ga.size(); ++i) REQUIRE(ga.values[i] == -gb.values[i]);
  const MetaModel next = meta_update(model, std::vector<AdaptedTask>{a, b}, cfg);
  CHECK(next.policy.params.values == model.policy.params.values);
}

TEST_CASE("meta_update needs at least one task") {
  RunConfig cfg = small_cfg();
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  CHECK_THROWS_AS(meta_update(model, std::vector<AdaptedTask>{}, cfg), UsageError);
}

TEST_CASE("non-finite gradients name the task") {
  RunConfig cfg = small_cfg();
  MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  model.policy.params.values[0] = std::numeric_limits<double>::infinity();
  Rng rng(1);
  try {
    inner_adapt(model, corridor(2), cfg, rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("env hallway") != std::string::npos);
  }
}

TEST_CASE("update_shaping: a perfectly fit potential stays put") {
  // One-step episodes: target = -1 - w, so w = -0.5 is the fixed point.
  RunConfig cfg = small_cfg();
  const MetaModel model = with_bias_potential(init_model(cfg, resolve_catalog(cfg.catalog)), -0.5, 0.01);
  const auto batch = one_step_batch(model, 4);
  for (const auto& tr : batch) REQUIRE(tr.shaped_rewards[0] == -0.5);
  const ShapingUpdate su = update_shaping(model, batch, cfg);
  CHECK_FALSE(su.skipped);
  CHECK(su.loss == 0.0);
  CHECK(su.model.potential->params.values == model.potential->params.values);
}

TEST_CASE("update_shaping: bias-only potential moves toward its target") {
  RunConfig cfg = small_cfg();
  const MetaModel model = with_bias_potential(init_model(cfg, resolve_catalog(cfg.catalog)), 0.0, 0.01);
  const auto batch = one_step_batch(model, 2);  // target -1
  const ShapingUpdate su = update_shaping(model, batch, cfg);
  CHECK(su.loss == doctest::Approx(1.0));
  const double w = su.model.potential->params.slice("l0.bias")[0];
  CHECK(w < 0.0);
  CHECK(w > -1.0);
  // First Adam step has magnitude lr.
  CHECK(w == doctest::Approx(-0.01).epsilon(1e-6));
}

TEST_CASE("update_shaping: empty batch or no potential is a no-op") {
  RunConfig cfg = small_cfg();
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  const ShapingUpdate su = update_shaping(model, std::vector<Trajectory>{}, cfg);
  CHECK(su.skipped);
  CHECK(su.model.potential->params.values == model.potential->params.values);
  cfg.method = Method::maml;
  const MetaModel maml = init_model(cfg, resolve_catalog(cfg.catalog));
  CHECK_FALSE(maml.potential.has_value());
  CHECK(update_shaping(maml, one_step_batch(maml, 1), cfg).skipped);
}

TEST_CASE("repeated shaping updates on a frozen batch descend") {
  RunConfig cfg = small_cfg("maze");
  const auto cat = resolve_catalog(cfg.catalog);
  MetaModel model = init_model(cfg, cat);
  Rng rng(7);
  const TaskSpec t = sample_task(rng, cat[0]);
  Rng roll(8);
  AdaptedTask a = inner_adapt(model, t, cfg, roll);
  double prev = std::numeric_limits<double>::infinity();
  int decreases = 0;
  for (int i = 0; i < 500; ++i) {
    ShapingUpdate su = update_shaping(model, a.pre, cfg);
    if (su.loss < prev) ++decreases;
    prev = su.loss;
    model = std::move(su.model);
  }
  CHECK(decreases >= 475);
}

TEST_CASE("meta_iters = 0 returns the initialization") {
  RunConfig cfg = small_cfg();
  cfg.meta_iters = 0;
  const TrainResult r = train(cfg);
  const MetaModel init = init_model(cfg, resolve_catalog(cfg.catalog));
  CHECK(r.metrics.empty());
  CHECK(r.model.iteration == 0);
  CHECK(r.model.policy.params.values == init.policy.params.values);
  CHECK(r.model.potential->params.values == init.potential->params.values);
}

TEST_CASE("maml and hmrl with a zeroed potential trace the same theta") {
  RunConfig hm = small_cfg();
  hm.force_zero_potential = true;
  RunConfig maml = small_cfg();
  maml.method = Method::maml;
  std::vector<std::vector<double>> a, b;
  train(hm, [&](const IterationReport& r) { a.push_back(r.model.policy.params.values); });
  train(maml, [&](const IterationReport& r) { b.push_back(r.model.policy.params.values); });
  REQUIRE(a.size() == 3);
  CHECK(a == b);
}

TEST_CASE("trajectories of an iteration carry the iteration-start shaping snapshot") {
  RunConfig cfg = small_cfg("maze");
  std::uint64_t last_end = 0;
  int iters = 0;
  train(cfg, [&](const IterationReport& r) {
    CHECK(r.snapshot_hash != 0);
    for (auto h : r.trajectory_snapshots) CHECK(h == r.snapshot_hash);
    if (iters > 0) CHECK(r.snapshot_hash == last_end);
    last_end = shaping_snapshot_hash(r.model.potential_ptr(), r.model.embedding);
    CHECK(last_end != r.snapshot_hash);
    ++iters;
  });
  CHECK(iters == 3);
}

TEST_CASE("train is deterministic and independent of the worker count") {
  RunConfig cfg = small_cfg("desk");
  const TrainResult a = train(cfg);
  const TrainResult b = train(cfg);
  cfg.workers = 3;
  const TrainResult c = train(cfg);
  CHECK(a.model.policy.params.values == b.model.policy.params.values);
  CHECK(a.model.policy.params.values == c.model.policy.params.values);
  CHECK(a.model.potential->params.values == c.model.potential->params.values);
  CHECK(a.model.embedding.params.values == c.model.embedding.params.values);
  REQUIRE(a.metrics.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.metrics[i].overall.mean_return == c.metrics[i].overall.mean_return);
    CHECK(a.metrics[i].per_env.size() == 5);
  }
}

TEST_CASE("every method and objective variant trains to finite parameters") {
  for (Method m : {Method::hmrl, Method::maml, Method::hmrl_wo_ms, Method::ppo_scratch}) {
    RunConfig cfg = small_cfg("maze");
    cfg.method = m;
    cfg.meta_iters = 2;
    const TrainResult r = train(cfg);
    CHECK(r.model.policy.params.all_finite());
    CHECK(r.model.potential.has_value() == (m == Method::hmrl || m == Method::hmrl_wo_ms));
    if (m == Method::hmrl_wo_ms) CHECK(r.model.embedding.mode == EmbeddingMode::raw_state);
  }
  RunConfig clipped = small_cfg();
  clipped.inner_objective = InnerObjective::clipped;
  clipped.meta_iters = 2;
  CHECK(train(clipped).model.policy.params.all_finite());
  RunConfig msgd = small_cfg();
  msgd.meta_sgd = true;
  msgd.meta_iters = 2;
  const TrainResult r = train(msgd);
  CHECK(r.model.inner_lr.all_finite());
  CHECK(r.model.inner_lr.values != init_model(msgd, resolve_catalog("hallway")).inner_lr.values);
}

TEST_CASE("adaptation helps next to the goal") {
  // Horizon 2, one step from the goal zone: success means reaching it in time.
  const EnvSpec env{"near", Family::hallway, 6, 2, ObsMode::full, 2, ActionSet::cardinal, 1, 2, 1};
  const TaskSpec t = make_task(env, 0, {{9, 1}, east}, {11, 1});
  int passes = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RunConfig cfg = small_cfg();
    cfg.seed = seed;
    cfg.m = 20;
    cfg.alpha = 0.5;
    MetaModel model = init_model(cfg, {env});
    Rng rng = make_rng(seed, {100});
    const AdaptedTask a = inner_adapt(model, t, cfg, rng);
    auto success = [&](const PolicySpec& p) {
      // Common random numbers for the paired comparison.
      Rng eval = make_rng(seed, {200});
      int ok = 0;
      for (int i = 0; i < 200; ++i) ok += rollout(p, t, model.embedding, nullptr, cfg.gamma, eval).reached_goal;
      return ok;
    };
    const int pre = success(model.policy);
    const int post = success(a.adapted);
    MESSAGE("seed " << seed << " pre " << pre << " post " << post);
    passes += post >= pre;
  }
  CHECK(passes >= 4);
}

TEST_CASE("finetune: zero steps keeps the model, freeze keeps shaping bitwise") {
  RunConfig cfg = small_cfg("maze");
  cfg.meta_iters = 1;
  const MetaModel model = train(cfg).model;
  Rng rng(3);
  const TaskSpec t = sample_task(rng, maze_catalog()[0]);

  const FinetuneResult direct = finetune(model, t, cfg, {0});
  CHECK(direct.steps.empty());
  CHECK(direct.model.policy.params.values == model.policy.params.values);

  const FinetuneResult frozen = finetune(model, t, cfg, {5, false, true, true});
  CHECK(frozen.steps.size() == 5);
  CHECK(frozen.model.potential->params.values == model.potential->params.values);
  CHECK(frozen.model.embedding.params.values == model.embedding.params.values);
  CHECK(frozen.model.policy.params.values != model.policy.params.values);

  const FinetuneResult updated = finetune(model, t, cfg, {5, false, true, false});
  CHECK(updated.model.potential->params.values != model.potential->params.values);
  CHECK(updated.steps[0].shaping_loss > 0.0);
}

TEST_CASE("finetune: separate eval batch only changes the scores") {
  RunConfig cfg = small_cfg("hallway");
  cfg.meta_iters = 1;
  const MetaModel model = train(cfg).model;
  Rng rng(4);
  const TaskSpec t = sample_task(rng, hallway_catalog()[0]);
  const FinetuneResult plain = finetune(model, t, cfg, {4, false, true, false});
  const FinetuneResult scored = finetune(model, t, cfg, {4, false, true, false, 7});
  CHECK(plain.model.policy.params.values == scored.model.policy.params.values);
  CHECK(plain.model.potential->params.values == scored.model.potential->params.values);
  const FinetuneResult again = finetune(model, t, cfg, {4, false, true, false, 7});
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(scored.steps[i].mean_return == plain.steps[i].mean_return);
    CHECK(scored.steps[i].shaping_loss == plain.steps[i].shaping_loss);
    CHECK(scored.steps[i].success_rate == again.steps[i].success_rate);
    // seven episodes: success rate is a multiple of 1/7
    const double k = scored.steps[i].success_rate * 7.0;
    CHECK(k == doctest::Approx(std::round(k)));
  }
}

TEST_CASE("finetune: wider task needs a fresh policy") {
  RunConfig cfg = small_cfg();
  const MetaModel model = init_model(cfg, resolve_catalog(cfg.catalog));
  Rng rng(1);
  const TaskSpec big = sample_task(rng, maze_catalog()[2]);
  REQUIRE(big.env.observation_dim() > model.policy.input_dim());
  CHECK_THROWS_AS(finetune(model, big, cfg, {1}), DimensionError);
  const FinetuneResult fresh = finetune(model, big, cfg, {2, true, true, false});
  CHECK(fresh.model.policy.input_dim() == big.env.observation_dim());
  CHECK(fresh.steps.size() == 2);
}

TEST_CASE("config validation names the field") {
  auto message = [](RunConfig cfg) {
    try {
      cfg.validate();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  RunConfig c;
  CHECK(message(c).empty());
  c.alpha = 0;
  CHECK(message(c).find("alpha") != std::string::npos);
  c = RunConfig{};
  c.gamma = 1.5;
  CHECK(message(c).find("gamma") != std::string::npos);
  c = RunConfig{};
  c.m = 0;
  CHECK(message(c).find("'m'") != std::string::npos);
  c = RunConfig{};
  c.catalog = "nowhere";
  CHECK(message(c).find("catalog") != std::string::npos);
  c = RunConfig{};
  c.embedding = "raw-state";
  CHECK_FALSE(message(c).empty());
  CHECK_THROWS_AS(method_from_string("ppo"), ConfigError);
  CHECK(method_from_string("hmrl-wo-ms") == Method::hmrl_wo_ms);
}

TEST_CASE("catalog resolution and input width") {
  CHECK(resolve_catalog("desk").size() == 5);
  CHECK(resolve_catalog(" 2RS3 , hallway-1st").size() == 2);
  CHECK(resolve_catalog("hallway-transfer")[0] == transfer_hallway());
  CHECK(catalog_input_dim(maze_catalog()) == maze_catalog()[2].observation_dim());
  RunConfig cfg;
  CHECK(resolve_embedding(cfg, hallway_catalog()) == EmbeddingMode::concat_fixed);
  CHECK(resolve_embedding(cfg, maze_catalog()) == EmbeddingMode::learned_affine);
}
