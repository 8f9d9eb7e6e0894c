import json
import math

import pytest

import hmrl


def small_config(method="hmrl"):
    cfg = hmrl.RunConfig()
    cfg.method = method
    cfg.meta_iters = 2
    cfg.m = 2
    cfg.ell = 2
    cfg.env_batch = 1
    cfg.task_batch = 1
    cfg.policy_hidden = [8]
    cfg.potential_hidden = [8]
    cfg.eval_tasks = 2
    cfg.eval_episodes = 2
    return cfg


def test_catalogs_and_version():
    assert hmrl.version()
    assert hmrl.hallway_catalog() == ["hallway-3rd", "hallway-1st"]
    assert len(hmrl.maze_catalog()) == 3
    assert set(hmrl.desk_catalog()) == set(hmrl.hallway_catalog()) | set(hmrl.maze_catalog())


def test_task_and_step():
    t = hmrl.sample_task("hallway-3rd", 3)
    assert t.env == "hallway-3rd"
    assert t.observation_dim == 148
    assert "G" in t.render()
    out = hmrl.step(t, t.start.x, t.start.y, t.start.facing, 0, 0)
    assert out["reward"] == 0.0
    assert out["steps_used"] == 1
    assert not out["done"]
    # sparse reward: minus the step count once the episode ends
    last = hmrl.step(t, t.start.x, t.start.y, t.start.facing, 79, 0)
    assert last["done"]
    assert last["reward"] == -80.0
    assert len(out["observation"]) == 148
    with pytest.raises(hmrl.ConfigError):
        hmrl.sample_task("nope", 1)


def test_discounted_return():
    assert hmrl.discounted_return([1.0, 1.0, 1.0], 0.5) == pytest.approx([1.75, 1.5, 1.0])


def test_config_roundtrip_and_errors():
    cfg = small_config()
    again = hmrl.RunConfig.parse(cfg.text())
    assert again.text() == cfg.text()
    with pytest.raises(hmrl.ConfigError):
        hmrl.RunConfig.parse("[run]\nbogus = 1\n")
    cfg.alpha = 0.0
    with pytest.raises(hmrl.ConfigError):
        cfg.validate()


def test_train_verify_heatmap_eval_finetune(tmp_path):
    out = hmrl.train(small_config(), str(tmp_path / "run"))
    assert len(out["metrics"]) == 2
    assert all(math.isfinite(r["mean_steps"]) for r in out["metrics"])

    model = hmrl.load_checkpoint(out["checkpoint"])
    assert model.method == "hmrl"
    assert model.has_potential

    passed, report = hmrl.verify(model, ["hallway-3rd"], tasks=1)
    assert passed
    assert json.loads(report)["passed"] is True

    t = hmrl.sample_task("hallway-3rd", 9)
    grid = hmrl.heatmap(model, t)
    assert len(grid) == t.height
    gx, gy = t.goal
    assert grid[gy][gx] == pytest.approx(model.potential(t, gx, gy))
    assert -1.0 <= hmrl.goal_correlation(model, t) <= 1.0

    rows = hmrl.evaluate(model, tasks=2, episodes=2)
    assert len(rows) == 2

    res = hmrl.finetune(out["checkpoint"], t, str(tmp_path / "ft"), steps=2)
    assert [s["step"] for s in res["steps"]] == [0, 1]
    direct = hmrl.finetune(out["checkpoint"], t, str(tmp_path / "direct"), direct=True)
    assert direct["steps"] == []


def test_maml_has_no_potential(tmp_path):
    out = hmrl.train(small_config("maml"), str(tmp_path / "m"))
    model = hmrl.load_checkpoint(out["checkpoint"])
    assert not model.has_potential
    t = hmrl.sample_task("hallway-3rd", 1)
    assert model.potential(t, 0, 0) == 0.0
