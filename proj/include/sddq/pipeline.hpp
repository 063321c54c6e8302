#pragma once

// Training loop: real collection, planning against the world model (gated by
// the switcher for the Switch variants), model and switcher training, agent
// updates, validation and periodic greedy tests. One Run owns everything it
// mutates; several runs can execute on separate threads.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sddq/agent.hpp"
#include "sddq/domain.hpp"
#include "sddq/goal_sampler.hpp"
#include "sddq/switcher.hpp"
#include "sddq/world_model.hpp"

namespace sddq::pipeline {

enum class VariantKind { kDqn, kDqnK, kDdqK, kSwitchDdq, kSuDdq };

struct VariantConfig {
  VariantKind kind = VariantKind::kSwitchDdq;
  int k = 0;  // DQN(K) and DDQ(K) only

  // "DQN", "DQN(5)", "DDQ(5)", "SwitchDDQ", "SU-DDQ"
  std::string name() const;
  static VariantConfig parse(const std::string& text);
  void validate() const;

  bool uses_world_model() const { return kind == VariantKind::kDdqK || uses_switcher(); }
  bool uses_switcher() const { return kind == VariantKind::kSwitchDdq || kind == VariantKind::kSuDdq; }
  int real_dialogues_per_epoch() const { return kind == VariantKind::kDqnK ? k : 1; }
  bool operator==(const VariantConfig&) const = default;
};

struct Hyper {
  double gamma = 0.9;
  double learning_rate = 0.001;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  double clip_norm = 1.0;
  std::size_t batch_size = 16;
  std::size_t q_hidden = 80;
  double epsilon = 0.1;
  int max_turns = domain::kDefaultMaxTurns;

  std::size_t real_buffer = 2000;
  // 0 derives the size from the variant: 10000 for the Switch variants,
  // 2000*K for DDQ(K).
  std::size_t simulated_buffer = 0;

  std::size_t rbs_dialogues = 50;
  std::size_t agent_batches = 40;
  std::size_t world_pretrain_batches = 1500;
  std::size_t world_batches = 200;
  std::size_t switcher_batches = 30;
  std::size_t switcher_batch_size = 8;
  std::size_t max_planning_dialogues = 30;
  std::size_t validation_dialogues = 16;
  std::size_t test_dialogues = 50;
  switcher::ThresholdSchedule threshold{};

  void validate() const;
  std::size_t simulated_capacity(const VariantConfig& v) const;
  nn::RmsPropConfig rmsprop() const { return {learning_rate, rmsprop_decay, rmsprop_epsilon}; }
};

struct ExperimentConfig {
  std::vector<VariantConfig> variants{{VariantKind::kDqn, 0},
                                      {VariantKind::kDdqK, 5},
                                      {VariantKind::kSwitchDdq, 0}};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int epochs = 150;
  int eval_interval = 1;
  Hyper hyper{};
  std::uint64_t kb_seed = 7;
  std::uint64_t corpus_seed = 11;
  std::size_t kb_rows = 100;
  domain::GoalCorpusOptions corpus{};
  std::size_t threads = 0;  // 0: one per hardware thread
  bool category_table = true;

  void validate() const;
};

struct World {
  domain::KnowledgeBase kb;
  domain::GoalCorpus corpus;
};

std::shared_ptr<const World> build_world(const ExperimentConfig& config);

struct TestResult {
  double success_rate = 0.0;
  double average_reward = 0.0;
  double average_turns = 0.0;
};

struct EpochMetrics {
  int epoch = 0;
  bool evaluated = false;
  TestResult test{};
  std::size_t real_dialogues = 0;            // this epoch, training only
  std::size_t real_dialogues_total = 0;      // cumulative, excludes warm start and validation
  std::size_t real_experiences = 0;          // cumulative transitions pushed into Bu
  std::size_t simulated_dialogues = 0;       // this epoch
  std::size_t simulated_dialogues_total = 0;
  std::size_t simulated_experiences = 0;     // cumulative transitions pushed into Bs
  std::size_t updates = 0;                   // cumulative agent minibatch updates
  std::size_t validation_dialogues_total = 0;
  double validation_success = 0.0;           // this epoch
  double tau = 0.0;
  double switcher_real_score = 0.0;
  double switcher_simulated_score = 0.0;
  bool planning_gate_exit = false;           // loop ended on the threshold, not the cap
  double agent_loss = 0.0;
  double world_action_ce = 0.0;
  std::vector<int> category_failures;
  std::vector<int> category_counts;
};

struct CategoryOutcome {
  int category = 0;
  std::size_t dialogues = 0;
  std::size_t successes = 0;
};

struct RunResult {
  VariantConfig variant;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  std::vector<CategoryOutcome> categories;  // final greedy pass over the corpus
};

// Independent random streams of one run, derived from (seed, stream).
enum class Stream : std::uint64_t { kInit = 1, kReal, kExplore, kAgentTrain, kPlanning, kWorldTrain,
                                    kSwitcherTrain, kTest, kWarmStart };
Rng make_stream(std::uint64_t seed, Stream stream);

class Run {
 public:
  using Scorer = std::function<std::vector<double>(std::span<const switcher::TurnRecord>)>;

  Run(ExperimentConfig config, VariantConfig variant, std::uint64_t seed,
      std::shared_ptr<const World> world = nullptr);

  EpochMetrics run_epoch();

  // Generates simulated dialogues for the current epoch and returns how many.
  std::size_t planning_phase();
  // V greedy dialogues, categories round-robin from (epoch * V) mod 128.
  // Updates the category statistics. Never touches the buffers.
  std::vector<std::pair<int, bool>> validate();
  TestResult evaluate(std::size_t dialogues);
  std::vector<CategoryOutcome> category_pass();

  // Test hooks.
  void set_scorer(Scorer scorer) { scorer_ = std::move(scorer); }
  goals::GoalSampler& sampler() { return sampler_; }

  const agent::DqnAgent& agent() const { return agent_; }
  agent::DqnAgent& agent() { return agent_; }
  const agent::ReplayBuffer& real_buffer() const { return real_; }
  const agent::ReplayBuffer& simulated_buffer() const { return simulated_; }
  const goals::CategoryStats& stats() const { return stats_; }
  const world::WorldModel& world_model() const { return world_model_; }
  const nn::LstmNet& switcher_net() const { return switcher_net_; }
  const World& world() const { return *world_; }
  const VariantConfig& variant() const { return variant_; }
  int epoch() const { return epoch_; }
  std::uint64_t seed() const { return seed_; }

 private:
  agent::DialogueRecord rollout(const domain::UserGoal& goal);
  std::vector<double> score(std::span<const agent::Experience> dialogue) const;
  agent::Policy greedy_policy() const;

  ExperimentConfig config_;
  VariantConfig variant_;
  std::uint64_t seed_;
  std::shared_ptr<const World> world_;
  domain::UserSimulator user_;

  Rng init_rng_, real_rng_, explore_rng_, train_rng_, planning_rng_, world_rng_, switcher_rng_, test_rng_;

  agent::DqnAgent agent_;
  agent::ReplayBuffer real_;
  agent::ReplayBuffer simulated_;
  world::WorldModel world_model_;
  world::WorldTrainer world_trainer_;
  nn::LstmNet switcher_net_;
  switcher::SwitcherTrainer switcher_trainer_;
  goals::CategoryStats stats_;
  goals::GoalSampler uniform_sampler_;
  goals::GoalSampler sampler_;
  Scorer scorer_;
  std::vector<const domain::UserGoal*> test_goals_;

  int epoch_ = 0;
  std::uint64_t next_dialogue_id_ = 1;
  std::uint64_t next_sim_dialogue_id_ = 1ull << 40;
  EpochMetrics totals_;
  // Scratch written by planning_phase for the epoch's metrics row.
  double last_sim_score_ = 0.0;
  bool last_gate_exit_ = false;
  std::size_t last_sim_pushed_ = 0;
};

RunResult run_single(const ExperimentConfig& config, const VariantConfig& variant, std::uint64_t seed,
                     std::shared_ptr<const World> world = nullptr,
                     const std::function<void(const EpochMetrics&)>& on_epoch = {},
                     const std::function<void(const RunResult&, const Run&)>& on_finish = {});

// Every (variant, seed) pair as an independent run; results ordered by
// variant then seed regardless of scheduling. `on_done` is serialized and
// sees the finished Run (for checkpoints) before it is destroyed.
using RunDone = std::function<void(const RunResult&, const Run&)>;
std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunDone& on_done = {});

// Mean over seeds per (variant, epoch).
struct SummaryRow {
  std::string variant;
  int epoch = 0;
  std::size_t updates = 0;
  std::size_t runs = 0;
  double success_mean = 0.0, success_std = 0.0;
  double reward_mean = 0.0, turns_mean = 0.0;
};
std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs);

// First evaluated epoch with test success >= level; nullopt if never.
std::optional<int> epochs_to_reach(const RunResult& run, double level);

}  // namespace sddq::pipeline
