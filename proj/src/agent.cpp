#include "sddq/agent.hpp"

#include <algorithm>

namespace sddq::agent {

using domain::DialogueState;
using domain::Slot;

ReplayBuffer::ReplayBuffer(std::size_t capacity, ExperienceSource source)
    : capacity_(capacity), source_(source) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
  ring_.reserve(std::min<std::size_t>(capacity, 4096));
}

void ReplayBuffer::push(Experience e) {
  if (e.source != source_) throw ContractError("replay buffer: experience source does not match buffer");
  if (ring_.size() < capacity_) {
    ring_.push_back(std::move(e));
    ++size_;
    return;
  }
  ring_[head_] = std::move(e);
  head_ = (head_ + 1) % capacity_;
}

void ReplayBuffer::clear() {
  ring_.clear();
  head_ = 0;
  size_ = 0;
}

const Experience& ReplayBuffer::operator[](std::size_t i) const {
  if (i >= size_) throw ContractError("replay buffer index out of range");
  return ring_[(head_ + i) % ring_.size()];
}

QNetwork::QNetwork(std::size_t state_dim, std::size_t hidden, std::size_t actions, Rng& rng) {
  const nn::LayerSpec specs[] = {{state_dim, hidden, nn::Activation::kRelu},
                                 {hidden, actions, nn::Activation::kIdentity}};
  net_ = nn::DenseNet::random(specs, rng);
}

QNetwork::QNetwork(nn::DenseNet net) : net_(std::move(net)) {}

void QNetwork::save(const std::string& path) const {
  const auto params = net_.parameters("q.");
  nn::save_checkpoint(path, params, "q_network");
}

QNetwork QNetwork::load(const std::string& path) {
  const auto arrays = nn::load_checkpoint(path, "q_network");
  std::vector<nn::LayerSpec> specs;
  for (const auto& a : arrays) {
    if (a.name.ends_with(".weight")) {
      specs.push_back({a.cols, a.rows, nn::Activation::kRelu});
    }
  }
  if (specs.empty()) throw ConfigError(path + ": checkpoint has no layers");
  specs.back().activation = nn::Activation::kIdentity;
  nn::DenseNet net = nn::DenseNet::zeros(specs);
  nn::assign_parameters(net.parameters("q."), arrays);
  return QNetwork(std::move(net));
}

std::size_t greedy_action(std::span<const double> q_values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < q_values.size(); ++i) {
    if (q_values[i] > q_values[best]) best = i;
  }
  return best;
}

std::size_t select_action(const QNetwork& q, std::span<const double> state, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("epsilon must be in [0,1]");
  if (epsilon > 0.0) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < epsilon) {
      std::uniform_int_distribution<std::size_t> pick(0, q.action_count() - 1);
      return pick(rng);
    }
  }
  return greedy_action(q.q_values(state));
}

std::vector<double> td_targets(std::span<const Experience* const> batch, const QNetwork& target,
                               double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ContractError("gamma must be in [0,1]");
  std::vector<double> y;
  y.reserve(batch.size());
  for (const Experience* e : batch) {
    if (e->terminal) {
      y.push_back(e->reward);
      continue;
    }
    const auto next = target.q_values(e->next_state);
    y.push_back(e->reward + gamma * *std::max_element(next.begin(), next.end()));
  }
  return y;
}

DqnAgent::DqnAgent(QNetwork q, DqnHyper hyper)
    : q_(std::move(q)), target_(q_), hyper_(hyper), optimizer_(hyper.optimizer) {
  if (hyper.batch_size == 0) throw ConfigError("batch size must be positive");
}

TrainResult DqnAgent::train_step(const ReplayBuffer& real, const ReplayBuffer& simulated, Rng& rng) {
  const std::size_t total = real.size() + simulated.size();
  if (total == 0) return {};
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<const Experience*> batch;
  batch.reserve(hyper_.batch_size);
  for (std::size_t i = 0; i < hyper_.batch_size; ++i) {
    const std::size_t k = pick(rng);
    batch.push_back(k < real.size() ? &real[k] : &simulated[k - real.size()]);
  }
  return train_on(batch);
}

TrainResult DqnAgent::train_on(std::span<const Experience* const> batch) {
  TrainResult result;
  if (batch.empty()) return result;
  result.status = TrainStatus::kOk;
  const auto targets = td_targets(batch, target_, hyper_.gamma);
  auto& net = q_.net();
  nn::GradientSet grads = nn::GradientSet::zeros_like(std::as_const(net).parameters());
  const double n = static_cast<double>(batch.size());
  nn::DenseCache cache;
  std::vector<double> out_grad(net.output_dim(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Experience& e = *batch[i];
    (e.source == ExperienceSource::kReal ? result.real_samples : result.simulated_samples) += 1;
    const auto q = net.forward(e.state, &cache);
    const double diff = q[e.action] - targets[i];
    loss += diff * diff;
    std::fill(out_grad.begin(), out_grad.end(), 0.0);
    out_grad[e.action] = 2.0 * diff / n;
    net.backward_accumulate(cache, out_grad, grads);
  }
  result.loss = loss / n;
  result.grad_norm = nn::clip_gradients(grads, hyper_.clip_norm);
  result.clipped_norm = grads.global_norm();
  optimizer_.step(net.parameters(), grads);
  return result;
}

// ---- episodes --------------------------------------------------------------

DialogueRecord run_dialogue(const Policy& policy, domain::UserSimulator& simulator,
                            const domain::KnowledgeBase& kb, const domain::UserGoal& goal,
                            std::uint64_t dialogue_id, ExperienceSource source) {
  DialogueRecord record;
  record.dialogue_id = dialogue_id;
  record.goal_category = goal.category;
  domain::StateTracker tracker(kb);
  tracker.observe_user(simulator.reset(goal));
  auto state = domain::encode_state(tracker.state(), simulator.max_turns());
  int position = 0;
  while (true) {
    const std::size_t action = policy(tracker.state(), state);
    const auto agent_act = domain::realize_agent_action(action, tracker.state(), kb);
    tracker.observe_agent(agent_act);
    const auto step = simulator.step(agent_act);
    tracker.observe_user(step.user_act);
    auto next = domain::encode_state(tracker.state(), simulator.max_turns());
    record.transitions.push_back(Experience{state, action, step.reward, step.user_template, next,
                                            step.done, source, dialogue_id, position++});
    state = std::move(next);
    if (step.done) {
      record.outcome = *step.outcome;
      break;
    }
  }
  return record;
}

std::size_t rule_agent_action(const DialogueState& state) {
  using domain::AgentActionKind;
  for (Slot s : domain::kGoalSlots) {
    const auto bit = static_cast<std::size_t>(s);
    if (!state.user_informed[bit] && !state.agent_requested[bit]) {
      return domain::agent_action_index(AgentActionKind::kRequest, s);
    }
  }
  for (Slot s : domain::kGoalSlots) {
    const auto bit = static_cast<std::size_t>(s);
    if (state.user_requested[bit] && !state.agent_informed[bit]) {
      return domain::agent_action_index(AgentActionKind::kInform, s);
    }
  }
  if (!state.ticket) return domain::agent_action_index(AgentActionKind::kBookTicket);
  return domain::agent_action_index(AgentActionKind::kTaskComplete);
}

WarmStartStats rbs_warm_start(domain::UserSimulator& simulator, const domain::KnowledgeBase& kb,
                              const domain::GoalCorpus& corpus, std::size_t dialogues,
                              ReplayBuffer& real, Rng& rng, std::uint64_t& next_dialogue_id) {
  WarmStartStats stats;
  std::uniform_int_distribution<std::size_t> pick(0, corpus.goals().size() - 1);
  const Policy rule = [](const DialogueState& s, std::span<const double>) { return rule_agent_action(s); };
  for (std::size_t i = 0; i < dialogues; ++i) {
    const auto& goal = corpus.goals()[pick(rng)];
    auto record = run_dialogue(rule, simulator, kb, goal, next_dialogue_id++, ExperienceSource::kReal);
    stats.dialogues += 1;
    stats.transitions += record.transitions.size();
    if (record.outcome.status == domain::EpisodeStatus::kSuccess) stats.successes += 1;
    for (auto& e : record.transitions) real.push(std::move(e));
  }
  return stats;
}

}  // namespace sddq::agent
