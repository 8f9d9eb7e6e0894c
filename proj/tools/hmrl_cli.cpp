// hmrl: train, fine-tune, verify and inspect meta-learned shaping models.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
// 3 verification found violations.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hmrl/checkpoint.hpp"
#include "hmrl/config.hpp"
#include "hmrl/errors.hpp"
#include "hmrl/run.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitViolation = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta reward shaping and meta policy training on gridworlds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", hmrl::version_string());

  // train
  auto* train = app.add_subcommand("train", "Run the meta-training loop");
  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> train_iters, train_workers;
  train->add_option("--config", train_config, "Run config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Run directory (HMRL_OUT_DIR overrides)");
  train->add_option("--seed", train_seed, "Override run.seed");
  train->add_option("--meta-iters", train_iters, "Override run.meta_iters");
  train->add_option("--workers", train_workers, "Override run.workers");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fine-tune a checkpoint on one task");
  std::string ft_ckpt, ft_task, ft_out;
  hmrl::FinetuneFlags ft_flags;
  ft->add_option("--checkpoint", ft_ckpt)->required()->check(CLI::ExistingFile);
  ft->add_option("--task", ft_task, "Task config file")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "Run directory (HMRL_OUT_DIR overrides)");
  ft->add_flag("--direct", ft_flags.direct, "Zero gradient steps: evaluate the model as is");
  ft->add_flag("--freeze", ft_flags.freeze, "Keep the potential and embedding fixed");
  ft->add_flag("--fresh-policy", ft_flags.fresh_policy, "Start from a new policy sized for the task");
  ft->add_flag("--no-shaping", ft_flags.no_shaping, "Train on the original sparse reward only");
  ft->add_option("--steps", ft_flags.steps, "Override finetune.finetune_steps");
  ft->add_option("--seed", ft_flags.seed, "Override the checkpoint's seed");

  // verify
  auto* verify = app.add_subcommand("verify", "Exact policy-invariance check on tabularized tasks");
  std::string v_ckpt, v_out;
  std::vector<std::string> v_envs;
  hmrl::VerifyOptions v_opts;
  double v_inject = 0.0;
  verify->add_option("--checkpoint", v_ckpt)->required()->check(CLI::ExistingFile);
  verify->add_option("--env", v_envs, "Environment names or hallway/maze/desk")->delimiter(',');
  verify->add_option("--tasks", v_opts.tasks_per_env, "Tasks per environment");
  verify->add_option("--seed", v_opts.seed, "Task sampling seed");
  verify->add_option("--value-tol", v_opts.value_tol, "Tolerance on V_shaped - V + phi");
  verify->add_option("--out", v_out, "Directory for reports/ (HMRL_OUT_DIR overrides)");
  verify->add_option("--inject-nonpotential", v_inject,
                     "Test hook: add this bonus to every 'up' transition (breaks invariance)");

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "Write phi(h(cell)) over walkable cells as CSV");
  std::string h_ckpt, h_task, h_out;
  heat->add_option("--checkpoint", h_ckpt)->required()->check(CLI::ExistingFile);
  heat->add_option("--task", h_task)->required()->check(CLI::ExistingFile);
  heat->add_option("--out", h_out, "Output CSV path")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Per-task steps-to-goal and success summary");
  std::string e_ckpt, e_out;
  hmrl::EvalOptions e_opts;
  ev->add_option("--checkpoint", e_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--tasks", e_opts.n_tasks, "Number of held-out tasks");
  ev->add_option("--episodes", e_opts.episodes, "Stochastic episodes per task");
  ev->add_option("--seed", e_opts.seed, "Evaluation seed");
  ev->add_option("--catalog", e_opts.catalog, "Override the checkpoint's catalog");
  ev->add_option("--out", e_out, "Output CSV path")->required();

  // layout
  auto* lay = app.add_subcommand("layout", "Print a task's map");
  std::string l_task;
  lay->add_option("--task", l_task)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (train->parsed()) {
      hmrl::RunConfig cfg = hmrl::load_run_config(train_config);
      if (train_seed) cfg.seed = *train_seed;
      if (train_iters) cfg.meta_iters = *train_iters;
      if (train_workers) cfg.workers = *train_workers;
      cfg.validate();
      const std::string out = hmrl::resolve_out_dir(train_out);
      const auto res = hmrl::run_train(cfg, out);
      std::cout << "trained " << cfg.meta_iters << " iterations; metrics " << res.metrics_path << "; checkpoint "
                << res.final_checkpoint << '\n';
    } else if (ft->parsed()) {
      const hmrl::TaskSpec task = hmrl::resolve_task(hmrl::load_task_config(ft_task));
      const std::string out = hmrl::resolve_out_dir(ft_out);
      const auto res = hmrl::run_finetune(ft_ckpt, task, out, ft_flags);
      std::cout << "fine-tuned " << res.result.steps.size() << " steps; metrics " << res.metrics_path
                << "; eval " << res.eval_path << '\n';
    } else if (verify->parsed()) {
      v_opts.envs = v_envs;
      if (v_inject != 0.0)
        v_opts.inject = [v_inject](std::size_t, std::size_t a, std::size_t) { return a == 0 ? v_inject : 0.0; };
      const std::string out = v_out.empty() && std::getenv("HMRL_OUT_DIR") == nullptr ? "" : hmrl::resolve_out_dir(v_out);
      const auto res = hmrl::run_verify(hmrl::load_checkpoint(v_ckpt), v_opts, out);
      std::cout << res.text_report;
      return res.passed ? 0 : kExitViolation;
    } else if (heat->parsed()) {
      const hmrl::TaskSpec task = hmrl::resolve_task(hmrl::load_task_config(h_task));
      const auto map = hmrl::run_heatmap(hmrl::load_checkpoint(h_ckpt), task, h_out);
      std::cout << "heatmap " << map.rows << "x" << map.cols << " -> " << h_out << '\n';
    } else if (ev->parsed()) {
      const auto rows = hmrl::run_eval(hmrl::load_checkpoint(e_ckpt), e_opts, e_out);
      std::cout << "evaluated " << rows.size() << " tasks; mean stochastic steps "
                << hmrl::mean_stochastic_steps(rows) << " -> " << e_out << '\n';
    } else if (lay->parsed()) {
      std::cout << hmrl::render_ascii(hmrl::resolve_task(hmrl::load_task_config(l_task)));
    }
  } catch (const hmrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const hmrl::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
