#pragma once

// Learned user simulator M(s, a): shared tanh trunk over separately
// encoded state and action, with user-act, reward and terminal heads.
// Trained on real experience only.

#include <span>
#include <vector>

#include "sddq/agent.hpp"
#include "sddq/domain.hpp"
#include "sddq/nn.hpp"

namespace sddq::world {

struct WorldShape {
  std::size_t state_dim = domain::kStateWidth;
  std::size_t actions = domain::kAgentActionCount;
  std::size_t user_acts = domain::kUserActCount;
  std::size_t encoder = 80;
  std::size_t hidden = 160;
};

struct WorldPrediction {
  std::vector<double> user_act_probs;
  double reward = 0.0;    // normalized, in (-1, 1)
  double terminal = 0.5;  // in (0, 1)
};

struct WorldCache {
  nn::DenseCache state_enc, action_enc, trunk, act_head, reward_head, term_head;
};

class WorldModel {
 public:
  WorldModel() = default;
  static WorldModel random(const WorldShape& shape, Rng& rng);
  static WorldModel zeros(const WorldShape& shape);

  const WorldShape& shape() const { return shape_; }

  WorldPrediction forward(std::span<const double> state, std::size_t action,
                          WorldCache* cache = nullptr) const;
  // Adds the parameter gradients for the given head-output gradients.
  void backward_accumulate(const WorldCache& cache, std::span<const double> act_grad,
                           double reward_grad, double terminal_grad, nn::GradientSet& into) const;

  // state_enc.*, action_enc.*, trunk.*, act_head.*, reward_head.*, term_head.*
  std::vector<nn::ParamView> parameters();
  std::vector<nn::ParamView> parameters() const;

  // Direct access for tests that need to saturate a head.
  nn::DenseNet& terminal_head() { return term_head_; }
  nn::DenseNet& reward_head() { return reward_head_; }

  void save(const std::string& path) const;
  static WorldModel load(const std::string& path, const WorldShape& shape = {});

 private:
  std::vector<nn::DenseNet*> nets();
  std::vector<const nn::DenseNet*> nets() const;

  WorldShape shape_;
  nn::DenseNet state_enc_, action_enc_, trunk_, act_head_, reward_head_, term_head_;
};

// Rewards are regressed on the (-1, 1) scale of the tanh head: nonterminal
// turns map to 0 (the per-turn -1 is imposed by the rollout loop), terminal
// rewards to r / 2L.
double normalize_reward(double reward, bool terminal, int max_turns = domain::kDefaultMaxTurns);
double denormalize_reward(double normalized, int max_turns = domain::kDefaultMaxTurns);

struct SampledResponse {
  domain::DialogueAct user_act;
  std::size_t user_template = 0;
  double reward = 0.0;  // de-normalized terminal estimate
  bool done = false;
};

// Draws a user-act template from the act head, grounds it with the goal and
// flips the terminal coin. The reward is r_hat * 2L.
SampledResponse world_sample_response(const WorldModel& model, std::span<const double> state,
                                      std::size_t action, const domain::DialogueAct& agent_act,
                                      const domain::UserGoal& goal, Rng& rng,
                                      int max_turns = domain::kDefaultMaxTurns);

struct WorldLosses {
  agent::TrainStatus status = agent::TrainStatus::kEmpty;
  double action_ce = 0.0;
  double reward_mse = 0.0;
  double terminal_bce = 0.0;
};

struct WorldTrainConfig {
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  nn::RmsPropConfig optimizer{};
  int max_turns = domain::kDefaultMaxTurns;
};

class WorldTrainer {
 public:
  explicit WorldTrainer(WorldTrainConfig config = {});

  // One minibatch from the real buffer. Takes only Bu by type: a simulated
  // buffer is rejected.
  WorldLosses step(WorldModel& model, const agent::ReplayBuffer& real, Rng& rng);
  WorldLosses train_on(WorldModel& model, std::span<const agent::Experience* const> batch);

  const WorldTrainConfig& config() const { return config_; }

 private:
  WorldTrainConfig config_;
  nn::RmsProp optimizer_;
};

}  // namespace sddq::world
