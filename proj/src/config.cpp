#include "hmrl/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "hmrl/errors.hpp"

namespace hmrl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Entry {
  std::string value;
  int line = 0;
};

// section -> key -> entry
using Document = std::map<std::string, std::map<std::string, Entry>>;

Document parse_document(const std::string& text, const std::map<std::string, std::set<std::string>>& schema) {
  Document doc;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    auto where = [&] { return "line " + std::to_string(line_no) + ": "; };
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where() + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      if (!schema.count(section)) throw ConfigError(where() + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError(where() + "key '" + key + "' outside any section");
    if (!schema.at(section).count(key))
      throw ConfigError(where() + "unknown key '" + key + "' in section [" + section + "]");
    if (doc[section].count(key)) throw ConfigError(where() + "duplicate key '" + key + "'");
    doc[section][key] = {value, line_no};
  }
  return doc;
}

std::string field_error(const std::string& section, const std::string& key, const Entry& e,
                        const std::string& msg) {
  return "line " + std::to_string(e.line) + ": " + section + "." + key + ": " + msg + " (got '" +
         e.value + "')";
}

double to_double(const std::string& section, const std::string& key, const Entry& e) {
  try {
    std::size_t used = 0;
    const double v = std::stod(e.value, &used);
    if (used != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field_error(section, key, e, "expected a number"));
  }
}

std::int64_t to_int(const std::string& section, const std::string& key, const Entry& e) {
  std::int64_t v = 0;
  const char* b = e.value.data();
  const char* end = b + e.value.size();
  auto [p, ec] = std::from_chars(b, end, v);
  if (ec != std::errc() || p != end) throw ConfigError(field_error(section, key, e, "expected an integer"));
  return v;
}

std::uint64_t to_uint(const std::string& section, const std::string& key, const Entry& e) {
  std::uint64_t v = 0;
  const char* b = e.value.data();
  const char* end = b + e.value.size();
  auto [p, ec] = std::from_chars(b, end, v);
  if (ec != std::errc() || p != end)
    throw ConfigError(field_error(section, key, e, "expected a non-negative integer"));
  return v;
}

bool to_bool(const std::string& section, const std::string& key, const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError(field_error(section, key, e, "expected true or false"));
}

std::vector<std::size_t> to_sizes(const std::string& section, const std::string& key, const Entry& e) {
  std::vector<std::size_t> out;
  std::istringstream in(e.value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    const std::uint64_t v = to_uint(section, key, {item, e.line});
    if (v == 0) throw ConfigError(field_error(section, key, e, "layer widths must be >= 1"));
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

const std::map<std::string, std::set<std::string>>& run_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"run", {"method", "seed", "meta_iters", "workers", "catalog", "embedding", "checkpoint_every"}},
      {"learning",
       {"alpha", "beta", "gamma", "shaping_lr", "inner_objective", "clip_eps", "clip_epochs", "meta_sgd"}},
      {"batch", {"m", "ell", "env_batch", "task_batch"}},
      {"model", {"policy_hidden", "potential_hidden", "force_zero_potential"}},
      {"finetune", {"freeze_shaping_on_finetune", "finetune_steps"}},
      {"eval", {"eval_tasks", "eval_episodes"}},
  };
  return schema;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  const Document doc = parse_document(text, run_schema());
  RunConfig c;
  using Handler = std::function<void(const std::string&, const std::string&, const Entry&)>;
  auto as_int = [](int& dst) {
    return Handler([&dst](const std::string& s, const std::string& k, const Entry& e) {
      const std::int64_t v = to_int(s, k, e);
      if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
        throw ConfigError(field_error(s, k, e, "out of range"));
      dst = static_cast<int>(v);
    });
  };
  auto as_double = [](double& dst) {
    return Handler([&dst](const std::string& s, const std::string& k, const Entry& e) { dst = to_double(s, k, e); });
  };
  auto as_bool = [](bool& dst) {
    return Handler([&dst](const std::string& s, const std::string& k, const Entry& e) { dst = to_bool(s, k, e); });
  };
  const std::map<std::string, Handler> handlers{
      {"run.method",
       [&](const std::string& s, const std::string& k, const Entry& e) {
         try {
           c.method = method_from_string(e.value);
         } catch (const Error&) {
           throw ConfigError(field_error(s, k, e, "expected hmrl, maml, hmrl-wo-ms or ppo-scratch"));
         }
       }},
      {"run.seed", [&](const std::string& s, const std::string& k, const Entry& e) { c.seed = to_uint(s, k, e); }},
      {"run.meta_iters", as_int(c.meta_iters)},
      {"run.workers", as_int(c.workers)},
      {"run.catalog", [&](const std::string&, const std::string&, const Entry& e) { c.catalog = e.value; }},
      {"run.embedding", [&](const std::string&, const std::string&, const Entry& e) { c.embedding = e.value; }},
      {"run.checkpoint_every", as_int(c.checkpoint_every)},
      {"learning.alpha", as_double(c.alpha)},
      {"learning.beta", as_double(c.beta)},
      {"learning.gamma", as_double(c.gamma)},
      {"learning.shaping_lr", as_double(c.shaping_lr)},
      {"learning.inner_objective",
       [&](const std::string& s, const std::string& k, const Entry& e) {
         try {
           c.inner_objective = inner_objective_from_string(e.value);
         } catch (const Error&) {
           throw ConfigError(field_error(s, k, e, "expected reinforce or clipped"));
         }
       }},
      {"learning.clip_eps", as_double(c.clip_eps)},
      {"learning.clip_epochs", as_int(c.clip_epochs)},
      {"learning.meta_sgd", as_bool(c.meta_sgd)},
      {"batch.m", as_int(c.m)},
      {"batch.ell", as_int(c.ell)},
      {"batch.env_batch", as_int(c.env_batch)},
      {"batch.task_batch", as_int(c.task_batch)},
      {"model.policy_hidden",
       [&](const std::string& s, const std::string& k, const Entry& e) { c.policy_hidden = to_sizes(s, k, e); }},
      {"model.potential_hidden",
       [&](const std::string& s, const std::string& k, const Entry& e) { c.potential_hidden = to_sizes(s, k, e); }},
      {"model.force_zero_potential", as_bool(c.force_zero_potential)},
      {"finetune.freeze_shaping_on_finetune", as_bool(c.freeze_shaping_on_finetune)},
      {"finetune.finetune_steps", as_int(c.finetune_steps)},
      {"eval.eval_tasks", as_int(c.eval_tasks)},
      {"eval.eval_episodes", as_int(c.eval_episodes)},
  };
  for (const auto& [section, keys] : doc)
    for (const auto& [key, entry] : keys) handlers.at(section + "." + key)(section, key, entry);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text_file(path)); }

std::string to_config_text(const RunConfig& c) {
  std::ostringstream os;
  os << "[run]\n"
     << "method = " << to_string(c.method) << '\n'
     << "seed = " << c.seed << '\n'
     << "meta_iters = " << c.meta_iters << '\n'
     << "workers = " << c.workers << '\n'
     << "catalog = " << c.catalog << '\n'
     << "embedding = " << c.embedding << '\n'
     << "checkpoint_every = " << c.checkpoint_every << '\n'
     << "\n[learning]\n"
     << "alpha = " << fmt(c.alpha) << '\n'
     << "beta = " << fmt(c.beta) << '\n'
     << "gamma = " << fmt(c.gamma) << '\n'
     << "shaping_lr = " << fmt(c.shaping_lr) << '\n'
     << "inner_objective = " << to_string(c.inner_objective) << '\n'
     << "clip_eps = " << fmt(c.clip_eps) << '\n'
     << "clip_epochs = " << c.clip_epochs << '\n'
     << "meta_sgd = " << (c.meta_sgd ? "true" : "false") << '\n'
     << "\n[batch]\n"
     << "m = " << c.m << '\n'
     << "ell = " << c.ell << '\n'
     << "env_batch = " << c.env_batch << '\n'
     << "task_batch = " << c.task_batch << '\n'
     << "\n[model]\n"
     << "policy_hidden = " << join(c.policy_hidden) << '\n'
     << "potential_hidden = " << join(c.potential_hidden) << '\n'
     << "force_zero_potential = " << (c.force_zero_potential ? "true" : "false") << '\n'
     << "\n[finetune]\n"
     << "freeze_shaping_on_finetune = " << (c.freeze_shaping_on_finetune ? "true" : "false") << '\n'
     << "finetune_steps = " << c.finetune_steps << '\n'
     << "\n[eval]\n"
     << "eval_tasks = " << c.eval_tasks << '\n'
     << "eval_episodes = " << c.eval_episodes << '\n';
  return os.str();
}

TaskConfig parse_task_config(const std::string& text) {
  static const std::map<std::string, std::set<std::string>> schema{
      {"task", {"env", "seed", "layout_seed", "start_x", "start_y", "start_facing", "goal_x", "goal_y"}}};
  const Document doc = parse_document(text, schema);
  TaskConfig tc;
  if (!doc.count("task") || !doc.at("task").count("env")) throw ConfigError("task.env: required");
  const auto& t = doc.at("task");
  tc.env = t.at("env").value;
  if (!find_env(tc.env)) throw ConfigError(field_error("task", "env", t.at("env"), "unknown environment"));
  if (t.count("seed")) tc.seed = to_uint("task", "seed", t.at("seed"));
  const bool pinned = t.count("start_x") || t.count("start_y") || t.count("goal_x") || t.count("goal_y") ||
                      t.count("layout_seed") || t.count("start_facing");
  if (pinned) {
    for (const char* k : {"layout_seed", "start_x", "start_y", "goal_x", "goal_y"})
      if (!t.count(k))
        throw ConfigError(std::string("task.") + k + ": required when pinning a task (layout_seed, start_x, "
                          "start_y, goal_x, goal_y)");
    auto coord = [&](const char* k) {
      const std::int64_t v = to_int("task", k, t.at(k));
      if (v < 0 || v > 10000) throw ConfigError(field_error("task", k, t.at(k), "out of range"));
      return static_cast<int>(v);
    };
    tc.layout_seed = to_uint("task", "layout_seed", t.at("layout_seed"));
    AgentState s{{coord("start_x"), coord("start_y")}, east};
    if (t.count("start_facing")) {
      const std::int64_t f = to_int("task", "start_facing", t.at("start_facing"));
      if (f < 0 || f > 3) throw ConfigError(field_error("task", "start_facing", t.at("start_facing"), "expected 0..3"));
      s.facing = static_cast<int>(f);
    }
    tc.start = s;
    tc.goal = Cell{coord("goal_x"), coord("goal_y")};
  }
  return tc;
}

TaskConfig load_task_config(const std::string& path) { return parse_task_config(read_text_file(path)); }

TaskSpec resolve_task(const TaskConfig& tc) {
  const std::optional<EnvSpec> env = find_env(tc.env);
  if (!env) throw ConfigError("task.env: unknown environment '" + tc.env + "'");
  if (tc.start && tc.goal && tc.layout_seed) {
    try {
      return make_task(*env, *tc.layout_seed, *tc.start, *tc.goal);
    } catch (const Error& e) {
      throw ConfigError(std::string("task: ") + e.what());
    }
  }
  Rng rng = make_rng(tc.seed, {});
  return sample_task(rng, *env);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file_atomic(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  const std::filesystem::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw Error("cannot rename '" + tmp.string() + "' to '" + path + "': " + ec.message());
}

}  // namespace hmrl
