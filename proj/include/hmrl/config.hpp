#pragma once

// Flat key-value config files:
//
//   # comment
//   [section]
//   key = value
//
// Every key belongs to exactly one section and unknown sections or keys are
// rejected with the offending line number.

#include <cstdint>
#include <optional>
#include <string>

#include "hmrl/envs.hpp"
#include "hmrl/metaloop.hpp"

namespace hmrl {

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
/// Canonical text form; parse_run_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& cfg);

/// A single task for finetune / heatmap. Either sampled from `env` with
/// `seed`, or fully pinned by layout_seed + start + goal.
struct TaskConfig {
  std::string env;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> layout_seed;
  std::optional<AgentState> start;
  std::optional<Cell> goal;
};

TaskConfig parse_task_config(const std::string& text);
TaskConfig load_task_config(const std::string& path);
TaskSpec resolve_task(const TaskConfig& tc);

std::string read_text_file(const std::string& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_text_file_atomic(const std::string& path, const std::string& text);

}  // namespace hmrl
