#include "sddq/switcher.hpp"

#include <algorithm>
#include <numeric>

namespace sddq::switcher {

TurnRecord turn_of(const agent::Experience& e) { return {e.state, e.action, e.reward}; }

std::vector<double> turn_features(const TurnRecord& turn, std::size_t actions, int max_turns) {
  if (turn.action >= actions) throw ContractError("turn action out of range");
  std::vector<double> f(turn.state);
  f.resize(turn.state.size() + actions + 1, 0.0);
  f[turn.state.size() + turn.action] = 1.0;
  f.back() = turn.reward / (2.0 * max_turns);
  return f;
}

nn::LstmShape default_shape() { return {kFeatureWidth, 80, 126}; }

std::vector<double> score_sequence(const nn::LstmNet& net, std::span<const std::vector<double>> features) {
  if (features.empty()) throw ContractError("empty dialogue");
  return net.forward(features);
}

std::vector<double> score_turns(const nn::LstmNet& net, std::span<const TurnRecord> dialogue) {
  if (dialogue.empty()) throw ContractError("empty dialogue");
  std::vector<std::vector<double>> features;
  features.reserve(dialogue.size());
  for (const auto& t : dialogue) features.push_back(turn_features(t));
  return net.forward(features);
}

double mean_score(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("empty dialogue");
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

double score_dialogue(const nn::LstmNet& net, std::span<const TurnRecord> dialogue) {
  return mean_score(score_turns(net, dialogue));
}

void ThresholdSchedule::validate() const {
  if (!(lo > 0.0 && lo <= hi && hi < 1.0)) throw ConfigError("threshold schedule needs 0 < lo <= hi < 1");
  if (anneal_epochs <= 0) throw ConfigError("anneal_epochs must be positive");
}

double quality_threshold(const ThresholdSchedule& schedule, int epoch) {
  if (epoch < 0) throw ContractError("epoch must be >= 0");
  const double frac = std::min(1.0, static_cast<double>(epoch) / schedule.anneal_epochs);
  return schedule.lo + (schedule.hi - schedule.lo) * frac;
}

std::size_t filter_and_store(std::span<const double> scores, std::span<const agent::Experience> dialogue,
                             double tau, agent::ReplayBuffer& simulated) {
  if (simulated.source() != agent::ExperienceSource::kSimulated) {
    throw ContractError("filtered turns go to the simulated buffer only");
  }
  if (scores.size() != dialogue.size()) throw ContractError("one score per turn required");
  if (scores.empty() || mean_score(scores) < tau) return 0;
  std::size_t stored = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] >= tau) {
      simulated.push(dialogue[i]);
      ++stored;
    }
  }
  return stored;
}

std::pair<std::size_t, std::size_t> segment_bounds(const agent::ReplayBuffer& buffer, std::size_t index) {
  const auto id = buffer[index].dialogue_id;
  std::size_t first = index;
  while (first > 0 && buffer[first - 1].dialogue_id == id && buffer[first - 1].position < buffer[first].position) {
    --first;
  }
  std::size_t last = index + 1;
  while (last < buffer.size() && buffer[last].dialogue_id == id && buffer[last].position > buffer[last - 1].position) {
    ++last;
  }
  return {first, last};
}

std::vector<std::vector<double>> history_prefix(const agent::ReplayBuffer& buffer, std::size_t index,
                                                int max_turns) {
  const auto [first, last] = segment_bounds(buffer, index);
  (void)last;
  std::vector<std::vector<double>> out;
  out.reserve(index - first + 1);
  for (std::size_t i = first; i <= index; ++i) {
    out.push_back(turn_features(turn_of(buffer[i]), domain::kAgentActionCount, max_turns));
  }
  return out;
}

std::vector<std::vector<double>> segment_features(const agent::ReplayBuffer& buffer, std::size_t index,
                                                  int max_turns) {
  const auto [first, last] = segment_bounds(buffer, index);
  std::vector<std::vector<double>> out;
  out.reserve(last - first);
  for (std::size_t i = first; i < last; ++i) {
    out.push_back(turn_features(turn_of(buffer[i]), domain::kAgentActionCount, max_turns));
  }
  return out;
}

SwitcherTrainer::SwitcherTrainer(SwitcherTrainConfig config) : config_(config), optimizer_(config.optimizer) {
  if (config.batch_size < 2) throw ConfigError("switcher batch size must be >= 2");
}

SwitcherLoss SwitcherTrainer::step(nn::LstmNet& net, const agent::ReplayBuffer& real,
                                   const agent::ReplayBuffer& simulated, Rng& rng) {
  if (real.empty() || simulated.empty()) return {};
  std::vector<LabeledSequence> batch;
  batch.reserve(config_.batch_size);
  std::uniform_int_distribution<std::size_t> pick_real(0, real.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_sim(0, simulated.size() - 1);
  for (std::size_t i = 0; i < config_.batch_size; ++i) {
    if (i % 2 == 0) {
      batch.push_back({segment_features(real, pick_real(rng), config_.max_turns), 1.0});
    } else {
      batch.push_back({segment_features(simulated, pick_sim(rng), config_.max_turns), 0.0});
    }
  }
  return train_on(net, batch);
}

SwitcherLoss SwitcherTrainer::train_on(nn::LstmNet& net, std::span<const LabeledSequence> batch) {
  SwitcherLoss out;
  std::size_t turns = 0;
  for (const auto& item : batch) turns += item.features.size();
  if (turns == 0) return out;
  out.status = agent::TrainStatus::kOk;
  nn::GradientSet grads = nn::GradientSet::zeros_like(std::as_const(net).parameters());
  const double n = static_cast<double>(turns);
  nn::LstmCache cache;
  std::vector<double> score_grads;
  for (const auto& item : batch) {
    if (item.features.empty()) continue;
    const auto scores = net.forward(item.features, &cache);
    score_grads.assign(scores.size(), 0.0);
    for (std::size_t t = 0; t < scores.size(); ++t) {
      double g = 0.0;
      out.bce += nn::bce_loss(scores[t], item.label, g);
      score_grads[t] = g / n;
    }
    net.backward_accumulate(cache, score_grads, grads);
  }
  out.bce /= n;
  nn::clip_gradients(grads, config_.clip_norm);
  optimizer_.step(net.parameters(), grads);
  return out;
}

}  // namespace sddq::switcher
