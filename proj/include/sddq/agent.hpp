#pragma once

// DQN dialogue policy: Q-network with a frozen target copy, epsilon-greedy
// selection, FIFO replay buffers for real and simulated experience, and the
// rule agent used for replay-buffer spiking.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sddq/domain.hpp"
#include "sddq/nn.hpp"

namespace sddq::agent {

enum class ExperienceSource { kReal, kSimulated };

struct Experience {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
  std::size_t user_act = 0;
  std::vector<double> next_state;
  bool terminal = false;
  ExperienceSource source = ExperienceSource::kReal;
  // Position of the turn within its dialogue; the switcher rebuilds
  // histories from (dialogue_id, position).
  std::uint64_t dialogue_id = 0;
  int position = 0;
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, ExperienceSource source);

  // Evicts the oldest item when full. Throws ContractError if the item's
  // source tag differs from the buffer's.
  void push(Experience e);
  void clear();

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  ExperienceSource source() const { return source_; }
  // Oldest first.
  const Experience& operator[](std::size_t i) const;

 private:
  std::size_t capacity_;
  ExperienceSource source_;
  std::vector<Experience> ring_;
  std::size_t head_ = 0;  // index of the oldest element
  std::size_t size_ = 0;
};

class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(std::size_t state_dim, std::size_t hidden, std::size_t actions, Rng& rng);
  explicit QNetwork(nn::DenseNet net);

  std::vector<double> q_values(std::span<const double> state, nn::DenseCache* cache = nullptr) const {
    return net_.forward(state, cache);
  }
  std::size_t action_count() const { return net_.output_dim(); }
  std::size_t state_dim() const { return net_.input_dim(); }

  nn::DenseNet& net() { return net_; }
  const nn::DenseNet& net() const { return net_; }

  void save(const std::string& path) const;
  static QNetwork load(const std::string& path);

 private:
  nn::DenseNet net_;
};

// argmax with ties broken by the lowest index.
std::size_t greedy_action(std::span<const double> q_values);
std::size_t select_action(const QNetwork& q, std::span<const double> state, double epsilon, Rng& rng);

// y = r for terminal transitions, else r + gamma * max_a' Q'(s', a').
std::vector<double> td_targets(std::span<const Experience* const> batch, const QNetwork& target,
                               double gamma);

struct DqnHyper {
  double gamma = 0.9;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  nn::RmsPropConfig optimizer{};
};

enum class TrainStatus { kOk, kEmpty };

struct TrainResult {
  TrainStatus status = TrainStatus::kEmpty;
  double loss = 0.0;           // pre-update mean squared TD error
  double grad_norm = 0.0;      // before clipping
  double clipped_norm = 0.0;   // after clipping
  std::size_t real_samples = 0;
  std::size_t simulated_samples = 0;
};

class DqnAgent {
 public:
  DqnAgent() = default;
  DqnAgent(QNetwork q, DqnHyper hyper);

  std::size_t act(std::span<const double> state, double epsilon, Rng& rng) const {
    return select_action(q_, state, epsilon, rng);
  }

  // Deep value copy of Q into Q'.
  void sync_target() { target_ = q_; }

  // One minibatch drawn uniformly from the union of both buffers.
  TrainResult train_step(const ReplayBuffer& real, const ReplayBuffer& simulated, Rng& rng);
  TrainResult train_on(std::span<const Experience* const> batch);

  const QNetwork& q() const { return q_; }
  QNetwork& q() { return q_; }
  const QNetwork& target() const { return target_; }
  const DqnHyper& hyper() const { return hyper_; }

 private:
  QNetwork q_;
  QNetwork target_;
  DqnHyper hyper_;
  nn::RmsProp optimizer_;
};

// ---- episodes --------------------------------------------------------------

using Policy = std::function<std::size_t(const domain::DialogueState&, std::span<const double>)>;

struct DialogueRecord {
  std::uint64_t dialogue_id = 0;
  int goal_category = 0;
  std::vector<Experience> transitions;
  domain::EpisodeOutcome outcome;
};

// Plays one dialogue of `policy` against the rule-based user simulator.
DialogueRecord run_dialogue(const Policy& policy, domain::UserSimulator& simulator,
                            const domain::KnowledgeBase& kb, const domain::UserGoal& goal,
                            std::uint64_t dialogue_id, ExperienceSource source);

// Requests each goal slot not yet known in schema order, informs slots the
// user asked for, books, then completes the task.
std::size_t rule_agent_action(const domain::DialogueState& state);

struct WarmStartStats {
  std::size_t dialogues = 0;
  std::size_t transitions = 0;
  std::size_t successes = 0;
};

// Replay buffer spiking: `dialogues` rule-agent episodes with uniformly
// drawn goals, every transition pushed into `real`.
WarmStartStats rbs_warm_start(domain::UserSimulator& simulator, const domain::KnowledgeBase& kb,
                              const domain::GoalCorpus& corpus, std::size_t dialogues,
                              ReplayBuffer& real, Rng& rng, std::uint64_t& next_dialogue_id);

}  // namespace sddq::agent
