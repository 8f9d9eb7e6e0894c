#include "hmrl/run.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "json.hpp"

#include "hmrl/checkpoint.hpp"
#include "hmrl/errors.hpp"

#ifndef HMRL_VERSION
#define HMRL_VERSION "unknown"
#endif

namespace hmrl {

namespace fs = std::filesystem;

namespace {

enum EvalTag : std::uint64_t { kEvalTasks = 9, kEvalRollouts = 10, kVerifyTasks = 11 };

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error("cannot create directory '" + p.string() + "': " + ec.message());
}

class Manifest {
 public:
  Manifest(fs::path dir, std::string command, std::string config_text, std::uint64_t seed) : dir_(std::move(dir)) {
    doc_["command"] = std::move(command);
    doc_["config"] = std::move(config_text);
    doc_["seed"] = seed;
    doc_["version"] = version_string();
    doc_["started_at"] = utc_now();
    doc_["finished_at"] = nullptr;
    doc_["status"] = "running";
    doc_["checkpoints"] = nlohmann::json::array();
    doc_["metrics"] = nullptr;
    doc_["reports"] = nlohmann::json::array();
    write();
  }

  void add_checkpoint(const std::string& rel) { doc_["checkpoints"].push_back(rel); }
  void add_report(const std::string& rel) { doc_["reports"].push_back(rel); }
  void set_metrics(const std::string& rel) { doc_["metrics"] = rel; }
  void set(const std::string& key, nlohmann::json v) { doc_[key] = std::move(v); }

  void finish(bool ok, const std::string& error = {}) {
    doc_["status"] = ok ? "completed" : "failed";
    if (!error.empty()) doc_["error"] = error;
    doc_["finished_at"] = utc_now();
    write();
  }

  void write() const { write_text_file_atomic((dir_ / "manifest.json").string(), doc_.dump(2) + "\n"); }

 private:
  fs::path dir_;
  nlohmann::json doc_;
};

std::string relative_to(const fs::path& file, const fs::path& dir) { return fs::relative(file, dir).string(); }

}  // namespace

std::string version_string() { return HMRL_VERSION; }

std::string resolve_out_dir(const std::string& requested) {
  const char* env = std::getenv("HMRL_OUT_DIR");
  if (env != nullptr && *env != '\0') return env;
  if (requested.empty()) throw UsageError("an output directory is required (--out or HMRL_OUT_DIR)");
  return requested;
}

std::string metrics_header(const std::vector<EnvSpec>& catalog) {
  std::string h = "iteration,method,episodes,mean_return,mean_steps,success_rate,shaping_loss";
  for (const auto& e : catalog)
    h += "," + e.name + ".episodes," + e.name + ".mean_return," + e.name + ".mean_steps," + e.name +
         ".success_rate";
  return h + "\n";
}

std::string metrics_row(const RunConfig& cfg, const IterationMetrics& m) {
  std::ostringstream os;
  os << m.iteration << ',' << to_string(cfg.method) << ',' << m.overall.episodes << ',' << fmt(m.overall.mean_return)
     << ',' << fmt(m.overall.mean_steps) << ',' << fmt(m.overall.success_rate) << ',' << fmt(m.shaping_loss);
  for (const auto& e : m.per_env)
    os << ',' << e.episodes << ',' << fmt(e.mean_return) << ',' << fmt(e.mean_steps) << ',' << fmt(e.success_rate);
  os << '\n';
  return os.str();
}

TrainOutputs run_train(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const std::vector<EnvSpec> catalog = resolve_catalog(cfg.catalog);
  const fs::path dir(out_dir);
  ensure_dir(dir / "checkpoints");
  ensure_dir(dir / "reports");
  const std::string config_text = to_config_text(cfg);
  write_text_file_atomic((dir / "config.ini").string(), config_text);
  Manifest manifest(dir, "train", config_text, cfg.seed);

  TrainOutputs out;
  out.out_dir = dir.string();
  out.metrics_path = (dir / "metrics.csv").string();
  const std::string timing_path = (dir / "timing.csv").string();
  std::string metrics = metrics_header(catalog);
  std::string timing = "iteration,wall_seconds\n";
  write_text_file_atomic(out.metrics_path, metrics);
  manifest.set_metrics("metrics.csv");
  manifest.set("timing", "timing.csv");
  manifest.write();

  try {
    auto observer = [&](const IterationReport& r) {
      metrics += metrics_row(cfg, r.metrics);
      timing += std::to_string(r.metrics.iteration) + "," + fmt(r.metrics.wall_seconds) + "\n";
      write_text_file_atomic(out.metrics_path, metrics);
      write_text_file_atomic(timing_path, timing);
      const std::int64_t done = r.metrics.iteration + 1;
      if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.meta_iters) {
        std::ostringstream name;
        name << "iter_" << std::setw(6) << std::setfill('0') << done << ".ckpt";
        const fs::path p = dir / "checkpoints" / name.str();
        save_checkpoint(p.string(), r.model, cfg);
        out.checkpoints.push_back(p.string());
        manifest.add_checkpoint(relative_to(p, dir));
        manifest.write();
      }
    };
    out.result = train(cfg, observer);
    const fs::path final_path = dir / "checkpoints" / "final.ckpt";
    save_checkpoint(final_path.string(), out.result.model, cfg);
    out.final_checkpoint = final_path.string();
    out.checkpoints.push_back(final_path.string());
    manifest.add_checkpoint(relative_to(final_path, dir));
    write_text_file_atomic(timing_path, timing);
    manifest.finish(true);
  } catch (const std::exception& e) {
    manifest.finish(false, e.what());
    throw;
  }
  return out;
}

std::string finetune_metrics_csv(std::span<const FinetuneStep> steps) {
  std::ostringstream os;
  os << "step,success_rate,mean_steps,mean_return,shaping_loss\n";
  for (const auto& s : steps)
    os << s.step << ',' << fmt(s.success_rate) << ',' << fmt(s.mean_steps) << ',' << fmt(s.mean_return) << ','
       << fmt(s.shaping_loss) << '\n';
  return os.str();
}

FinetuneOutputs run_finetune(const std::string& checkpoint, const TaskSpec& task, const std::string& out_dir,
                             const FinetuneFlags& flags) {
  LoadedModel loaded = load_checkpoint(checkpoint);
  RunConfig cfg = loaded.config;
  if (flags.seed) cfg.seed = *flags.seed;
  const int steps = flags.direct ? 0 : flags.steps.value_or(cfg.finetune_steps);
  if (steps < 0) throw UsageError("finetune: steps must be >= 0");

  const fs::path dir(out_dir);
  ensure_dir(dir / "checkpoints");
  ensure_dir(dir / "reports");
  const std::string config_text = to_config_text(cfg);
  write_text_file_atomic((dir / "config.ini").string(), config_text);
  Manifest manifest(dir, flags.direct ? "finetune --direct" : "finetune", config_text, cfg.seed);
  manifest.set("source_checkpoint", checkpoint);
  manifest.set("task", render_ascii(task));

  FinetuneOutputs out;
  out.out_dir = dir.string();
  try {
    FinetuneOptions opts;
    opts.steps = steps;
    opts.fresh_policy = flags.fresh_policy;
    opts.use_shaping = !flags.no_shaping;
    opts.freeze_shaping = flags.freeze || cfg.freeze_shaping_on_finetune;
    out.result = finetune(loaded.model, task, cfg, opts);

    out.metrics_path = (dir / "metrics.csv").string();
    write_text_file_atomic(out.metrics_path, finetune_metrics_csv(out.result.steps));
    manifest.set_metrics("metrics.csv");

    out.checkpoint_path = (dir / "checkpoints" / "finetuned.ckpt").string();
    save_checkpoint(out.checkpoint_path, out.result.model, cfg);
    manifest.add_checkpoint("checkpoints/finetuned.ckpt");

    Rng rng = make_rng(cfg.seed, {kEvalRollouts});
    const std::vector<TaskSpec> tasks{task};
    out.eval = evaluate(out.result.model.policy, tasks, cfg.eval_episodes, rng);
    out.eval_path = (dir / "reports" / "eval.csv").string();
    write_text_file_atomic(out.eval_path, eval_csv(out.eval));
    manifest.add_report("reports/eval.csv");
    manifest.finish(true);
  } catch (const std::exception& e) {
    manifest.finish(false, e.what());
    throw;
  }
  return out;
}

VerifyOutputs run_verify(const LoadedModel& loaded, const VerifyOptions& opts, const std::string& out_dir) {
  if (opts.envs.empty()) throw UsageError("verify: no environments selected");
  if (opts.tasks_per_env < 1) throw UsageError("verify: tasks per environment must be >= 1");
  std::vector<EnvSpec> envs;
  for (const auto& sel : opts.envs) {
    const std::vector<EnvSpec> resolved = resolve_catalog(sel);
    envs.insert(envs.end(), resolved.begin(), resolved.end());
  }
  VerifyOutputs out;
  std::ostringstream text;
  nlohmann::json summary;
  summary["passed"] = true;
  summary["value_tol"] = opts.value_tol;
  summary["tasks"] = nlohmann::json::array();
  const MetaModel& m = loaded.model;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    for (int k = 0; k < opts.tasks_per_env; ++k) {
      Rng rng = make_rng(opts.seed, {kVerifyTasks, e, static_cast<std::uint64_t>(k)});
      const TaskSpec task = sample_task(rng, envs[e]);
      const TabularMdp mdp = to_tabular(task, loaded.config.gamma);
      ConsistencyReport rep =
          verify_consistency(mdp, task, m.embedding, m.potential_ptr(), opts.value_tol, opts.inject);
      const std::string label = envs[e].name + "#" + std::to_string(k);
      text << label << ": " << rep.text(mdp);
      summary["tasks"].push_back(nlohmann::json::parse(rep.json(label)));
      out.passed = out.passed && rep.passed;
      out.reports.push_back(std::move(rep));
    }
  }
  summary["passed"] = out.passed;
  text << (out.passed ? "ALL PASS" : "VIOLATIONS FOUND") << '\n';
  out.text_report = text.str();
  out.json_report = summary.dump(2) + "\n";
  if (!out_dir.empty()) {
    const fs::path dir = fs::path(out_dir) / "reports";
    ensure_dir(dir);
    write_text_file_atomic((dir / "verify.txt").string(), out.text_report);
    write_text_file_atomic((dir / "verify.json").string(), out.json_report);
  }
  return out;
}

Heatmap run_heatmap(const LoadedModel& loaded, const TaskSpec& task, const std::string& out_path) {
  const Heatmap h = potential_heatmap(task, loaded.model.embedding, loaded.model.potential_ptr());
  const fs::path p(out_path);
  if (p.has_parent_path() && !fs::is_directory(p.parent_path()))
    throw Error("cannot write heatmap: directory '" + p.parent_path().string() + "' does not exist");
  write_text_file_atomic(out_path, h.csv());
  return h;
}

std::vector<TaskSpec> eval_tasks(const std::vector<EnvSpec>& catalog, int n_tasks, std::uint64_t seed) {
  if (n_tasks < 1) throw UsageError("eval: n_tasks must be >= 1");
  std::vector<TaskSpec> tasks;
  for (int i = 0; i < n_tasks; ++i) {
    Rng rng = make_rng(seed, {kEvalTasks, static_cast<std::uint64_t>(i)});
    // Round-robin over the catalog keeps every environment represented.
    tasks.push_back(sample_task(rng, catalog[static_cast<std::size_t>(i) % catalog.size()]));
  }
  return tasks;
}

std::vector<EvalRow> run_eval(const LoadedModel& loaded, const EvalOptions& opts, const std::string& out_path) {
  if (opts.episodes < 1) throw UsageError("eval: episodes must be >= 1");
  const std::vector<EnvSpec> catalog = resolve_catalog(opts.catalog.empty() ? loaded.config.catalog : opts.catalog);
  const std::vector<TaskSpec> tasks = eval_tasks(catalog, opts.n_tasks, opts.seed);
  Rng rng = make_rng(opts.seed, {kEvalRollouts});
  std::vector<EvalRow> rows = evaluate(loaded.model.policy, tasks, opts.episodes, rng);
  if (!out_path.empty()) write_text_file_atomic(out_path, eval_csv(rows));
  return rows;
}

}  // namespace hmrl
