#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hmrl/analysis.hpp"
#include "hmrl/checkpoint.hpp"
#include "hmrl/config.hpp"
#include "hmrl/errors.hpp"
#include "hmrl/run.hpp"

namespace py = pybind11;
using namespace hmrl;

namespace {

std::vector<std::string> env_names(const std::vector<EnvSpec>& envs) {
  std::vector<std::string> out;
  for (const auto& e : envs) out.push_back(e.name);
  return out;
}

EnvSpec env_by_name(const std::string& name) {
  auto e = find_env(name);
  if (!e) throw ConfigError("unknown environment '" + name + "'");
  return *e;
}

py::dict metrics_dict(const IterationMetrics& m) {
  py::dict d;
  d["iteration"] = m.iteration;
  d["episodes"] = m.overall.episodes;
  d["mean_return"] = m.overall.mean_return;
  d["mean_steps"] = m.overall.mean_steps;
  d["success_rate"] = m.overall.success_rate;
  d["shaping_loss"] = m.shaping_loss;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hmrl, m) {
  m.doc() = "Meta reward shaping and meta policy training on gridworlds";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("version", &version_string);
  m.def("desk_catalog", [] { return env_names(desk_catalog()); });
  m.def("hallway_catalog", [] { return env_names(hallway_catalog()); });
  m.def("maze_catalog", [] { return env_names(maze_catalog()); });

  py::class_<AgentState>(m, "AgentState")
      .def_property_readonly("x", [](const AgentState& s) { return s.pos.x; })
      .def_property_readonly("y", [](const AgentState& s) { return s.pos.y; })
      .def_readonly("facing", &AgentState::facing);

  py::class_<TaskSpec>(m, "Task")
      .def_property_readonly("env", [](const TaskSpec& t) { return t.env.name; })
      .def_readonly("layout_seed", &TaskSpec::layout_seed)
      .def_readonly("start", &TaskSpec::start)
      .def_property_readonly("goal", [](const TaskSpec& t) { return py::make_tuple(t.goal.x, t.goal.y); })
      .def_property_readonly("width", [](const TaskSpec& t) { return t.grid.width; })
      .def_property_readonly("height", [](const TaskSpec& t) { return t.grid.height; })
      .def_property_readonly("observation_dim", [](const TaskSpec& t) { return t.env.observation_dim(); })
      .def("render", [](const TaskSpec& t) { return render_ascii(t); })
      .def("__repr__", [](const TaskSpec& t) {
        return "<Task " + t.env.name + " layout " + std::to_string(t.layout_seed) + ">";
      });

  m.def(
      "sample_task",
      [](const std::string& env, std::uint64_t seed) {
        Rng rng(seed);
        return sample_task(rng, env_by_name(env));
      },
      py::arg("env"), py::arg("seed"));
  m.def(
      "make_task",
      [](const std::string& env, std::uint64_t layout_seed, int sx, int sy, int facing, int gx, int gy) {
        return make_task(env_by_name(env), layout_seed, {{sx, sy}, facing}, {gx, gy});
      },
      py::arg("env"), py::arg("layout_seed"), py::arg("start_x"), py::arg("start_y"), py::arg("facing"),
      py::arg("goal_x"), py::arg("goal_y"));
  m.def("task_from_config", [](const std::string& text) { return resolve_task(parse_task_config(text)); });

  m.def(
      "step",
      [](const TaskSpec& t, int x, int y, int facing, int steps_used, int action) {
        const StepOutcome o = step(t, EpisodeState{{{x, y}, facing}, steps_used, false}, action);
        py::dict d;
        d["x"] = o.next_state.pos.x;
        d["y"] = o.next_state.pos.y;
        d["facing"] = o.next_state.facing;
        d["reward"] = o.reward;
        d["done"] = o.done;
        d["reached_goal"] = o.reached_goal;
        d["steps_used"] = o.steps_used;
        d["observation"] = o.observation;
        return d;
      },
      py::arg("task"), py::arg("x"), py::arg("y"), py::arg("facing"), py::arg("steps_used"), py::arg("action"));

  m.def("discounted_return", [](const std::vector<double>& r, double gamma) { return discounted_return(r, gamma); });

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &parse_run_config)
      .def_static("load", &load_run_config)
      .def("text", [](const RunConfig& c) { return to_config_text(c); })
      .def("validate", &RunConfig::validate)
      .def_property(
          "method", [](const RunConfig& c) { return to_string(c.method); },
          [](RunConfig& c, const std::string& s) { c.method = method_from_string(s); })
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("meta_iters", &RunConfig::meta_iters)
      .def_readwrite("workers", &RunConfig::workers)
      .def_readwrite("catalog", &RunConfig::catalog)
      .def_readwrite("embedding", &RunConfig::embedding)
      .def_readwrite("alpha", &RunConfig::alpha)
      .def_readwrite("beta", &RunConfig::beta)
      .def_readwrite("gamma", &RunConfig::gamma)
      .def_readwrite("shaping_lr", &RunConfig::shaping_lr)
      .def_readwrite("m", &RunConfig::m)
      .def_readwrite("ell", &RunConfig::ell)
      .def_readwrite("env_batch", &RunConfig::env_batch)
      .def_readwrite("task_batch", &RunConfig::task_batch)
      .def_readwrite("policy_hidden", &RunConfig::policy_hidden)
      .def_readwrite("potential_hidden", &RunConfig::potential_hidden)
      .def_readwrite("force_zero_potential", &RunConfig::force_zero_potential)
      .def_readwrite("freeze_shaping_on_finetune", &RunConfig::freeze_shaping_on_finetune)
      .def_readwrite("finetune_steps", &RunConfig::finetune_steps)
      .def_readwrite("checkpoint_every", &RunConfig::checkpoint_every)
      .def_readwrite("eval_tasks", &RunConfig::eval_tasks)
      .def_readwrite("eval_episodes", &RunConfig::eval_episodes);

  py::class_<LoadedModel>(m, "Model")
      .def_property_readonly("method", [](const LoadedModel& l) { return to_string(l.config.method); })
      .def_property_readonly("iteration", [](const LoadedModel& l) { return l.model.iteration; })
      .def_property_readonly("has_potential", [](const LoadedModel& l) { return l.model.potential.has_value(); })
      .def_property_readonly("embedding", [](const LoadedModel& l) { return to_string(l.model.embedding.mode); })
      .def_property_readonly("config", [](const LoadedModel& l) { return l.config; })
      .def(
          "potential",
          [](const LoadedModel& l, const TaskSpec& t, int x, int y, int facing) {
            if (!l.model.potential) return 0.0;
            return hmrl::potential(*l.model.potential, embed(l.model.embedding, {{x, y}, facing}, t));
          },
          py::arg("task"), py::arg("x"), py::arg("y"), py::arg("facing") = 0);

  m.def(
      "train",
      [](const RunConfig& cfg, const std::string& out_dir) {
        TrainOutputs o;
        {
          py::gil_scoped_release release;
          o = run_train(cfg, out_dir);
        }
        py::dict d;
        d["out_dir"] = o.out_dir;
        d["metrics_path"] = o.metrics_path;
        d["checkpoint"] = o.final_checkpoint;
        py::list rows;
        for (const auto& it : o.result.metrics) rows.append(metrics_dict(it));
        d["metrics"] = rows;
        return d;
      },
      py::arg("config"), py::arg("out_dir"), "Train and write a run directory.");

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  m.def(
      "finetune",
      [](const std::string& checkpoint, const TaskSpec& task, const std::string& out_dir, bool direct, bool freeze,
         bool fresh_policy, bool no_shaping, std::optional<int> steps) {
        FinetuneFlags f;
        f.direct = direct;
        f.freeze = freeze;
        f.fresh_policy = fresh_policy;
        f.no_shaping = no_shaping;
        f.steps = steps;
        const FinetuneOutputs o = run_finetune(checkpoint, task, out_dir, f);
        py::list rows;
        for (const auto& s : o.result.steps) {
          py::dict d;
          d["step"] = s.step;
          d["success_rate"] = s.success_rate;
          d["mean_steps"] = s.mean_steps;
          d["mean_return"] = s.mean_return;
          d["shaping_loss"] = s.shaping_loss;
          rows.append(d);
        }
        py::dict d;
        d["steps"] = rows;
        d["metrics_path"] = o.metrics_path;
        d["checkpoint"] = o.checkpoint_path;
        return d;
      },
      py::arg("checkpoint"), py::arg("task"), py::arg("out_dir"), py::arg("direct") = false, py::arg("freeze") = false,
      py::arg("fresh_policy") = false, py::arg("no_shaping") = false, py::arg("steps") = py::none());

  m.def(
      "verify",
      [](const LoadedModel& model, const std::vector<std::string>& envs, int tasks, std::uint64_t seed,
         double value_tol) {
        VerifyOptions o;
        o.envs = envs;
        o.tasks_per_env = tasks;
        o.seed = seed;
        o.value_tol = value_tol;
        const VerifyOutputs v = run_verify(model, o, "");
        return py::make_tuple(v.passed, v.json_report);
      },
      py::arg("model"), py::arg("envs"), py::arg("tasks") = 4, py::arg("seed") = 1, py::arg("value_tol") = 1e-6,
      "Returns (passed, json_report).");

  m.def(
      "heatmap",
      [](const LoadedModel& model, const TaskSpec& task) {
        const Heatmap h = potential_heatmap(task, model.model.embedding, model.model.potential_ptr());
        py::list grid;
        for (int y = 0; y < task.grid.height; ++y) {
          py::list row;
          for (int x = 0; x < task.grid.width; ++x) {
            const int r = y - h.min_y, c = x - h.min_x;
            const bool inside = r >= 0 && r < h.rows && c >= 0 && c < h.cols;
            if (inside && h.walkable[static_cast<std::size_t>(r * h.cols + c)]) row.append(h.at(r, c));
            else row.append(py::none());
          }
          grid.append(row);
        }
        return grid;
      },
      py::arg("model"), py::arg("task"), "grid[y][x] = phi(h(cell)), None on walls.");

  m.def(
      "goal_correlation",
      [](const LoadedModel& model, const TaskSpec& task) {
        return heatmap_goal_correlation(task,
                                        potential_heatmap(task, model.model.embedding, model.model.potential_ptr()));
      },
      py::arg("model"), py::arg("task"));

  m.def(
      "evaluate",
      [](const LoadedModel& model, int tasks, int episodes, std::uint64_t seed, const std::string& catalog) {
        EvalOptions o;
        o.n_tasks = tasks;
        o.episodes = episodes;
        o.seed = seed;
        o.catalog = catalog;
        py::list out;
        for (const auto& r : run_eval(model, o, "")) {
          py::dict d;
          d["task"] = r.task_index;
          d["env"] = r.env;
          d["greedy_mean_steps"] = r.greedy_mean_steps;
          d["greedy_success"] = r.greedy_success;
          d["stochastic_mean_steps"] = r.stochastic_mean_steps;
          d["stochastic_max_steps"] = r.stochastic_max_steps;
          d["stochastic_success"] = r.stochastic_success;
          out.append(d);
        }
        return out;
      },
      py::arg("model"), py::arg("tasks") = 10, py::arg("episodes") = 20, py::arg("seed") = 1,
      py::arg("catalog") = "");
}
