#pragma once

// Configuration loading, metrics export, the human-evaluation chat loop and
// the permutation test behind the `sddq` command-line tool.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sddq/agent.hpp"
#include "sddq/pipeline.hpp"

namespace sddq::cli {

using nlohmann::json;

inline constexpr const char* kOutputDirEnv = "SDDQ_OUTPUT_DIR";

struct RunConfig {
  pipeline::ExperimentConfig experiment{};
  std::string output_dir = "runs";
};

// Output directory default: $SDDQ_OUTPUT_DIR if set, else "runs".
std::string default_output_dir();

json to_json(const RunConfig& config);

// Layers `overrides` over `base`. Unknown keys, wrong types and
// constraint violations throw ConfigError naming the key path.
RunConfig apply_json(const RunConfig& base, const json& overrides);

// defaults <- file <- flags. `flags` uses the same key layout as the file.
RunConfig parse_config(const std::optional<std::string>& file, const json& flags = json::object());

// "hyper.gamma=0.5" -> {"hyper": {"gamma": 0.5}}. The value is read as JSON
// when it parses, else as a string.
json parse_assignment(const std::string& text);

void write_effective_config(const RunConfig& config, const std::string& dir);

// ---- results -------------------------------------------------------------

json to_json(const pipeline::RunResult& run);
pipeline::RunResult run_from_json(const json& j);

void save_runs(const std::vector<pipeline::RunResult>& runs, const std::string& path);
std::vector<pipeline::RunResult> load_runs(const std::string& path);

// "DDQ(5)" -> "DDQ-5"
std::string file_stem(const pipeline::VariantConfig& variant);

// Writes, under `dir`:
//   runs/<variant>_seed<s>.csv             one row per epoch
//   runs/<variant>_seed<s>_categories.csv  per-epoch (f_i, n_i)
//   summary.csv                            one row per (variant, epoch)
//   checkpoints.csv                        success/reward/turns at epochs 100, 200, 300
//   categories_<variant>.csv               128 rows, ascending success
// Returns the written paths. Throws ConfigError if `dir` is not writable.
std::vector<std::string> export_metrics(const std::vector<pipeline::RunResult>& runs, const std::string& dir);

// ---- human evaluation ------------------------------------------------------

struct ChatOptions {
  std::uint64_t seed = 0;
  std::string log_path;  // JSONL, appended; empty disables logging
  std::string policy_name;
  int max_turns = domain::kDefaultMaxTurns;
};

struct ChatResult {
  domain::UserGoal goal;
  domain::EpisodeOutcome outcome;
  bool abandoned = false;
};

// The human plays the user: the goal is printed, then each turn shows the
// agent act and reads one user act line (or "abandon"/"help"). End of input
// counts as abandoning.
ChatResult chat_repl(std::istream& in, std::ostream& out, const agent::Policy& policy,
                     const pipeline::World& world, const ChatOptions& options);

// Reads the success flags of every dialogue in a chat log.
std::vector<bool> read_chat_log(const std::string& path);

// ---- permutation test ----------------------------------------------------

struct PermutationResult {
  double statistic = 0.0;  // mean(a) - mean(b)
  double p_value = 1.0;    // one-sided, P(S >= observed)
  bool exact = false;
};

// Boolean outcomes: the statistic depends only on how many successes land in
// a, so the permutation distribution is hypergeometric and is summed exactly.
PermutationResult permutation_test(const std::vector<bool>& a, const std::vector<bool>& b);

// Real-valued outcomes: exact enumeration of all splits when the pooled size
// is at most 12, else Monte Carlo with p = (count + 1) / (iterations + 1).
PermutationResult permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                                   std::size_t iterations, std::uint64_t seed);

}  // namespace sddq::cli
