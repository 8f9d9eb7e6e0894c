#pragma once

// Command implementations shared by the CLI and the Python bindings. Each
// writes into a run directory with a fixed layout:
//
//   <out>/config.ini      config echo
//   <out>/manifest.json   status, timestamps, artifact paths, version
//   <out>/metrics.csv     one row per iteration (train) or step (finetune)
//   <out>/timing.csv      wall-clock per row, kept apart so metrics replay byte-for-byte
//   <out>/checkpoints/    *.ckpt
//   <out>/reports/        evaluation and verification outputs

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hmrl/analysis.hpp"
#include "hmrl/checkpoint.hpp"
#include "hmrl/config.hpp"
#include "hmrl/metaloop.hpp"

namespace hmrl {

std::string version_string();

/// HMRL_OUT_DIR, when set and non-empty, wins over the given directory.
std::string resolve_out_dir(const std::string& requested);

std::string metrics_header(const std::vector<EnvSpec>& catalog);
std::string metrics_row(const RunConfig& cfg, const IterationMetrics& m);

struct TrainOutputs {
  std::string out_dir;
  std::string metrics_path;
  std::string final_checkpoint;
  std::vector<std::string> checkpoints;
  TrainResult result;
};

/// Train from a parsed config. On failure the manifest is marked failed and
/// the exception rethrown.
TrainOutputs run_train(const RunConfig& cfg, const std::string& out_dir);

struct FinetuneFlags {
  bool direct = false;        // zero gradient steps
  bool freeze = false;        // keep phi and h fixed
  bool fresh_policy = false;  // new policy sized for the task
  bool no_shaping = false;    // drop the potential entirely
  std::optional<int> steps;   // overrides finetune_steps
  std::optional<std::uint64_t> seed;
};

struct FinetuneOutputs {
  std::string out_dir;
  std::string metrics_path;
  std::string checkpoint_path;
  std::string eval_path;
  FinetuneResult result;
  std::vector<EvalRow> eval;
};

FinetuneOutputs run_finetune(const std::string& checkpoint, const TaskSpec& task, const std::string& out_dir,
                             const FinetuneFlags& flags);

std::string finetune_metrics_csv(std::span<const FinetuneStep> steps);

struct VerifyOptions {
  std::vector<std::string> envs;  // names or "hallway" / "maze" / "desk"
  int tasks_per_env = 4;
  std::uint64_t seed = 1;
  double value_tol = 1e-6;
  ExtraReward inject;  // negative-control hook; empty in normal use
};

struct VerifyOutputs {
  bool passed = true;
  std::string text_report;
  std::string json_report;
  std::vector<ConsistencyReport> reports;
};

/// Checks every sampled task; writes reports/verify.txt and reports/verify.json
/// under out_dir when it is non-empty.
VerifyOutputs run_verify(const LoadedModel& loaded, const VerifyOptions& opts, const std::string& out_dir);

/// Writes the heatmap CSV for `task` to out_path.
Heatmap run_heatmap(const LoadedModel& loaded, const TaskSpec& task, const std::string& out_path);

struct EvalOptions {
  int n_tasks = 10;
  int episodes = 20;
  std::uint64_t seed = 1;
  std::string catalog;  // empty: the checkpoint's catalog
};

/// Held-out tasks drawn from the catalog with the eval seed.
std::vector<TaskSpec> eval_tasks(const std::vector<EnvSpec>& catalog, int n_tasks, std::uint64_t seed);
std::vector<EvalRow> run_eval(const LoadedModel& loaded, const EvalOptions& opts, const std::string& out_path);

}  // namespace hmrl
