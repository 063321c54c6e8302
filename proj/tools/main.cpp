// sddq: train, evaluate, chat with, compare and export dialogue policies.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "sddq/cli.hpp"

using namespace sddq;
namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_file;
  std::vector<std::string> assignments;
};

void add_common(CLI::App* app, CommonFlags& flags) {
  app->add_option("-c,--config", flags.config_file, "JSON config file (same layout as the echoed config.json)")
      ->check(CLI::ExistingFile);
  app->add_option("--set", flags.assignments, "Override a config key, e.g. --set hyper.gamma=0.5 (repeatable)");
}

cli::RunConfig load_config(const CommonFlags& flags, cli::json extra) {
  cli::json overrides = cli::json::object();
  for (const auto& a : flags.assignments) overrides.merge_patch(cli::parse_assignment(a));
  overrides.merge_patch(extra);
  return cli::parse_config(flags.config_file.empty() ? std::nullopt : std::optional(flags.config_file), overrides);
}

agent::Policy policy_from(const std::string& checkpoint, std::shared_ptr<agent::QNetwork>& holder) {
  if (checkpoint == "rule") {
    return [](const domain::DialogueState& s, std::span<const double>) { return agent::rule_agent_action(s); };
  }
  holder = std::make_shared<agent::QNetwork>(agent::QNetwork::load(checkpoint));
  if (holder->state_dim() != domain::kStateWidth || holder->action_count() != domain::kAgentActionCount) {
    throw ConfigError(checkpoint + ": checkpoint does not match the dialogue schema");
  }
  auto q = holder;
  return [q](const domain::DialogueState&, std::span<const double> x) { return agent::greedy_action(q->q_values(x)); };
}

void print_runs_line(const pipeline::RunResult& r) {
  const auto& last = r.epochs.back();
  std::printf("%-10s seed %-3llu epoch %-4d success %.3f reward %7.2f turns %5.2f\n", r.variant.name().c_str(),
              static_cast<unsigned long long>(r.seed), last.epoch, last.test.success_rate,
              last.test.average_reward, last.test.average_turns);
  std::fflush(stdout);
}

int cmd_train(const CommonFlags& common, const std::string& output, const std::vector<std::string>& variants,
              const std::vector<std::uint64_t>& seeds, int epochs, double gamma, std::size_t threads) {
  cli::json extra = cli::json::object();
  if (!output.empty()) extra["output_dir"] = output;
  if (!variants.empty()) extra["variants"] = variants;
  if (!seeds.empty()) extra["seeds"] = seeds;
  if (epochs > 0) extra["epochs"] = epochs;
  if (gamma >= 0) extra["hyper"]["gamma"] = gamma;
  if (threads > 0) extra["threads"] = threads;
  const auto config = load_config(common, extra);
  cli::write_effective_config(config, config.output_dir);
  const fs::path ckpt_dir = fs::path(config.output_dir) / "checkpoints";
  fs::create_directories(ckpt_dir);

  const auto runs = pipeline::run_experiment(config.experiment, [&](const pipeline::RunResult& r, const pipeline::Run& run) {
    run.agent().q().save((ckpt_dir / (cli::file_stem(r.variant) + "_seed" + std::to_string(r.seed) + ".json")).string());
    print_runs_line(r);
  });
  cli::save_runs(runs, (fs::path(config.output_dir) / "runs.json").string());
  for (const auto& path : cli::export_metrics(runs, config.output_dir)) std::cout << "wrote " << path << '\n';
  return 0;
}

int cmd_evaluate(const CommonFlags& common, const std::string& checkpoint, std::size_t dialogues,
                 std::uint64_t seed) {
  const auto config = load_config(common, cli::json::object());
  const auto world = pipeline::build_world(config.experiment);
  std::shared_ptr<agent::QNetwork> holder;
  const auto policy = policy_from(checkpoint, holder);
  const int L = config.experiment.hyper.max_turns;
  domain::UserSimulator sim(world->kb, L);
  Rng rng(seed);
  const auto& goals = world->corpus.goals();
  std::uniform_int_distribution<std::size_t> pick(0, goals.size() - 1);
  double successes = 0, reward = 0, turns = 0;
  for (std::size_t i = 0; i < dialogues; ++i) {
    const auto rec = agent::run_dialogue(policy, sim, world->kb, goals[pick(rng)], i + 1, agent::ExperienceSource::kReal);
    successes += rec.outcome.status == domain::EpisodeStatus::kSuccess;
    reward += rec.outcome.reward;
    turns += rec.outcome.turns;
  }
  const double n = static_cast<double>(dialogues);
  std::printf("dialogues %zu success %.4f reward %.3f turns %.3f\n", dialogues, successes / n, reward / n, turns / n);
  return 0;
}

int cmd_chat(const CommonFlags& common, const std::string& checkpoint, std::uint64_t seed, const std::string& log) {
  const auto config = load_config(common, cli::json::object());
  const auto world = pipeline::build_world(config.experiment);
  std::shared_ptr<agent::QNetwork> holder;
  const auto policy = policy_from(checkpoint, holder);
  cli::ChatOptions options;
  options.seed = seed;
  options.log_path = log;
  options.policy_name = checkpoint;
  options.max_turns = config.experiment.hyper.max_turns;
  cli::chat_repl(std::cin, std::cout, policy, *world, options);
  return 0;
}

int cmd_compare(const std::string& log_a, const std::string& log_b) {
  const auto a = cli::read_chat_log(log_a);
  const auto b = cli::read_chat_log(log_b);
  const auto r = cli::permutation_test(a, b);
  std::printf("a: %zu dialogues, b: %zu dialogues\nmean(a) - mean(b) = %.4f\none-sided p = %.6g (%s)\n", a.size(),
              b.size(), r.statistic, r.p_value, r.exact ? "exact" : "monte carlo");
  return 0;
}

int cmd_export(const std::string& input, const std::string& output) {
  const auto runs = cli::load_runs(input);
  for (const auto& path : cli::export_metrics(runs, output)) std::cout << "wrote " << path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dialogue policy learning with a switch between real and simulated experience.\n"
               "The default output directory is $" + std::string(cli::kOutputDirEnv) + " or ./runs."};
  app.require_subcommand(1);

  CommonFlags train_common, eval_common, chat_common;

  auto* train = app.add_subcommand("train", "Run an experiment and export its metrics and final Q checkpoints");
  add_common(train, train_common);
  std::string output;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
  int epochs = 0;
  double gamma = -1;
  std::size_t threads = 0;
  train->add_option("-o,--output", output, "Output directory");
  train->add_option("--variants", variants, "Variants: DQN, DQN(K), DDQ(K), SwitchDDQ, SU-DDQ");
  train->add_option("--seeds", seeds, "Seeds, one run per variant and seed");
  train->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
  train->add_option("--gamma", gamma, "Discount factor");
  train->add_option("--threads", threads, "Parallel runs (0 = hardware threads)");

  auto* evaluate = app.add_subcommand("evaluate", "Greedy success of a checkpoint against the user simulator");
  add_common(evaluate, eval_common);
  std::string eval_checkpoint;
  std::size_t dialogues = 500;
  std::uint64_t eval_seed = 1;
  evaluate->add_option("--checkpoint", eval_checkpoint, "Q-network checkpoint, or 'rule' for the rule agent")->required();
  evaluate->add_option("-n,--dialogues", dialogues, "Number of dialogues")->check(CLI::PositiveNumber);
  evaluate->add_option("--seed", eval_seed, "Goal sampling seed");

  auto* chat = app.add_subcommand("chat", "Play the user against a policy; the outcome is appended to a log");
  add_common(chat, chat_common);
  std::string chat_checkpoint, log;
  std::uint64_t chat_seed = 0;
  chat->add_option("--checkpoint", chat_checkpoint, "Q-network checkpoint, or 'rule' for the rule agent")->required();
  chat->add_option("--seed", chat_seed, "Seed for the sampled user goal");
  chat->add_option("--log", log, "Human-evaluation log (JSON lines)")->default_val("human_eval.jsonl");

  auto* compare = app.add_subcommand("compare", "One-sided permutation test on success rates of two chat logs");
  std::string log_a, log_b;
  compare->add_option("log_a", log_a, "Chat log of agent A")->required()->check(CLI::ExistingFile);
  compare->add_option("log_b", log_b, "Chat log of agent B")->required()->check(CLI::ExistingFile);

  auto* exporter = app.add_subcommand("export", "Re-export CSV metrics from a runs.json file");
  std::string input, export_output;
  exporter->add_option("-i,--input", input, "runs.json written by train")->required()->check(CLI::ExistingFile);
  exporter->add_option("-o,--output", export_output, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_common, output, variants, seeds, epochs, gamma, threads);
    if (*evaluate) return cmd_evaluate(eval_common, eval_checkpoint, dialogues, eval_seed);
    if (*chat) return cmd_chat(chat_common, chat_checkpoint, chat_seed, log);
    if (*compare) return cmd_compare(log_a, log_b);
    if (*exporter) return cmd_export(input, export_output);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
