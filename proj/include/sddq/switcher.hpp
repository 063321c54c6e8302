#pragma once

// Turn-level real-vs-simulated discriminator. Scores each turn given its
// in-dialogue prefix, averages into a dialogue score, gates planning with an
// annealed threshold and filters which simulated turns reach Bs.

#include <span>
#include <utility>
#include <vector>

#include "sddq/agent.hpp"
#include "sddq/domain.hpp"
#include "sddq/nn.hpp"

namespace sddq::switcher {

struct TurnRecord {
  std::vector<double> state;
  std::size_t action = 0;
  double reward = 0.0;
};

TurnRecord turn_of(const agent::Experience& e);

// s ++ onehot(a) ++ r / 2L
std::vector<double> turn_features(const TurnRecord& turn, std::size_t actions = domain::kAgentActionCount,
                                  int max_turns = domain::kDefaultMaxTurns);
inline constexpr std::size_t kFeatureWidth = domain::kStateWidth + domain::kAgentActionCount + 1;

nn::LstmShape default_shape();

// Throws ContractError("empty dialogue") on an empty input.
std::vector<double> score_turns(const nn::LstmNet& net, std::span<const TurnRecord> dialogue);
std::vector<double> score_sequence(const nn::LstmNet& net, std::span<const std::vector<double>> features);
double score_dialogue(const nn::LstmNet& net, std::span<const TurnRecord> dialogue);
double mean_score(std::span<const double> scores);

struct ThresholdSchedule {
  double lo = 0.3;
  double hi = 0.6;
  int anneal_epochs = 200;

  void validate() const;
};

// tau(e) = lo + (hi - lo) * min(1, e / anneal_epochs)
double quality_threshold(const ThresholdSchedule& schedule, int epoch);

// If mean(scores) >= tau, pushes the turns whose own score >= tau into the
// simulated buffer. Returns the number stored.
std::size_t filter_and_store(std::span<const double> scores, std::span<const agent::Experience> dialogue,
                             double tau, agent::ReplayBuffer& simulated);

// Every position of the sequence carries the label; position t is scored
// from turns 0..t, so each turn is judged with its prefix as history.
struct LabeledSequence {
  std::vector<std::vector<double>> features;
  double label = 0.0;  // 1 real, 0 simulated
};

struct SwitcherTrainConfig {
  std::size_t batch_size = 8;  // dialogue segments, half real, half simulated
  double clip_norm = 1.0;
  nn::RmsPropConfig optimizer{};
  int max_turns = domain::kDefaultMaxTurns;
};

struct SwitcherLoss {
  agent::TrainStatus status = agent::TrainStatus::kEmpty;
  double bce = 0.0;
};

// A segment is a maximal run of consecutive buffer items with the same
// dialogue id and increasing positions. Returns [first, last).
std::pair<std::size_t, std::size_t> segment_bounds(const agent::ReplayBuffer& buffer, std::size_t index);
// Features of the segment prefix ending at `index`.
std::vector<std::vector<double>> history_prefix(const agent::ReplayBuffer& buffer, std::size_t index,
                                                int max_turns = domain::kDefaultMaxTurns);
// Features of the whole segment containing `index`.
std::vector<std::vector<double>> segment_features(const agent::ReplayBuffer& buffer, std::size_t index,
                                                  int max_turns = domain::kDefaultMaxTurns);

class SwitcherTrainer {
 public:
  explicit SwitcherTrainer(SwitcherTrainConfig config = {});

  // Needs both buffers non-empty; otherwise a no-op with kEmpty status.
  SwitcherLoss step(nn::LstmNet& net, const agent::ReplayBuffer& real,
                    const agent::ReplayBuffer& simulated, Rng& rng);
  // BCE averaged over every turn of every sequence.
  SwitcherLoss train_on(nn::LstmNet& net, std::span<const LabeledSequence> batch);

 private:
  SwitcherTrainConfig config_;
  nn::RmsProp optimizer_;
};

}  // namespace sddq::switcher
