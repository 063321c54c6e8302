#include "sddq/world_model.hpp"

#include <cmath>

namespace sddq::world {

namespace {

using nn::Activation;

struct Specs {
  std::vector<nn::LayerSpec> state_enc, action_enc, trunk, act_head, reward_head, term_head;
};

Specs specs_for(const WorldShape& s) {
  return {{{s.state_dim, s.encoder, Activation::kIdentity}},
          {{s.actions, s.encoder, Activation::kIdentity}},
          {{2 * s.encoder, s.hidden, Activation::kTanh}},
          {{s.hidden, s.user_acts, Activation::kSoftmax}},
          {{s.hidden, 1, Activation::kTanh}},
          {{s.hidden, 1, Activation::kSigmoid}}};
}

constexpr const char* kPrefixes[] = {"state_enc.", "action_enc.", "trunk.",
                                     "act_head.", "reward_head.", "term_head."};

}  // namespace

WorldModel WorldModel::random(const WorldShape& shape, Rng& rng) {
  const Specs sp = specs_for(shape);
  WorldModel m;
  m.shape_ = shape;
  m.state_enc_ = nn::DenseNet::random(sp.state_enc, rng);
  m.action_enc_ = nn::DenseNet::random(sp.action_enc, rng);
  m.trunk_ = nn::DenseNet::random(sp.trunk, rng);
  m.act_head_ = nn::DenseNet::random(sp.act_head, rng);
  m.reward_head_ = nn::DenseNet::random(sp.reward_head, rng);
  m.term_head_ = nn::DenseNet::random(sp.term_head, rng);
  return m;
}

WorldModel WorldModel::zeros(const WorldShape& shape) {
  const Specs sp = specs_for(shape);
  WorldModel m;
  m.shape_ = shape;
  m.state_enc_ = nn::DenseNet::zeros(sp.state_enc);
  m.action_enc_ = nn::DenseNet::zeros(sp.action_enc);
  m.trunk_ = nn::DenseNet::zeros(sp.trunk);
  m.act_head_ = nn::DenseNet::zeros(sp.act_head);
  m.reward_head_ = nn::DenseNet::zeros(sp.reward_head);
  m.term_head_ = nn::DenseNet::zeros(sp.term_head);
  return m;
}

std::vector<nn::DenseNet*> WorldModel::nets() {
  return {&state_enc_, &action_enc_, &trunk_, &act_head_, &reward_head_, &term_head_};
}

std::vector<const nn::DenseNet*> WorldModel::nets() const {
  return {&state_enc_, &action_enc_, &trunk_, &act_head_, &reward_head_, &term_head_};
}

WorldPrediction WorldModel::forward(std::span<const double> state, std::size_t action,
                                    WorldCache* cache) const {
  if (state.size() != shape_.state_dim) throw ContractError("world model: state width mismatch");
  if (action >= shape_.actions) throw ContractError("world model: action index out of range");
  std::vector<double> onehot(shape_.actions, 0.0);
  onehot[action] = 1.0;
  auto es = state_enc_.forward(state, cache ? &cache->state_enc : nullptr);
  auto ea = action_enc_.forward(onehot, cache ? &cache->action_enc : nullptr);
  es.insert(es.end(), ea.begin(), ea.end());
  const auto h = trunk_.forward(es, cache ? &cache->trunk : nullptr);
  WorldPrediction out;
  out.user_act_probs = act_head_.forward(h, cache ? &cache->act_head : nullptr);
  out.reward = reward_head_.forward(h, cache ? &cache->reward_head : nullptr)[0];
  out.terminal = term_head_.forward(h, cache ? &cache->term_head : nullptr)[0];
  return out;
}

void WorldModel::backward_accumulate(const WorldCache& cache, std::span<const double> act_grad,
                                     double reward_grad, double terminal_grad,
                                     nn::GradientSet& into) const {
  // `into` is laid out as the concatenation of the six sub-networks.
  auto slice = [&](std::size_t first, std::size_t count) {
    nn::GradientSet g;
    g.arrays.assign(std::make_move_iterator(into.arrays.begin() + first),
                    std::make_move_iterator(into.arrays.begin() + first + count));
    return g;
  };
  auto put_back = [&](nn::GradientSet& g, std::size_t first) {
    for (std::size_t i = 0; i < g.arrays.size(); ++i) into.arrays[first + i] = std::move(g.arrays[i]);
  };
  // Every sub-network here has exactly one layer: two arrays each.
  constexpr std::size_t kStateEnc = 0, kActionEnc = 2, kTrunk = 4, kAct = 6, kRew = 8, kTerm = 10;

  auto g_act = slice(kAct, 2);
  auto dh = act_head_.backward_accumulate(cache.act_head, act_grad, g_act);
  put_back(g_act, kAct);

  auto g_rew = slice(kRew, 2);
  const double rg[] = {reward_grad};
  const auto dh_r = reward_head_.backward_accumulate(cache.reward_head, rg, g_rew);
  put_back(g_rew, kRew);

  auto g_term = slice(kTerm, 2);
  const double tg[] = {terminal_grad};
  const auto dh_t = term_head_.backward_accumulate(cache.term_head, tg, g_term);
  put_back(g_term, kTerm);

  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dh_r[i] + dh_t[i];

  auto g_trunk = slice(kTrunk, 2);
  const auto dz = trunk_.backward_accumulate(cache.trunk, dh, g_trunk);
  put_back(g_trunk, kTrunk);

  const std::span<const double> dz_span(dz);
  auto g_s = slice(kStateEnc, 2);
  state_enc_.backward_accumulate(cache.state_enc, dz_span.subspan(0, shape_.encoder), g_s);
  put_back(g_s, kStateEnc);
  auto g_a = slice(kActionEnc, 2);
  action_enc_.backward_accumulate(cache.action_enc, dz_span.subspan(shape_.encoder), g_a);
  put_back(g_a, kActionEnc);
}

std::vector<nn::ParamView> WorldModel::parameters() {
  std::vector<nn::ParamView> out;
  auto ns = nets();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    auto p = ns[i]->parameters(kPrefixes[i]);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<nn::ParamView> WorldModel::parameters() const {
  std::vector<nn::ParamView> out;
  auto ns = nets();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    auto p = ns[i]->parameters(kPrefixes[i]);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void WorldModel::save(const std::string& path) const {
  nn::save_checkpoint(path, parameters(), "world_model");
}

WorldModel WorldModel::load(const std::string& path, const WorldShape& shape) {
  WorldModel m = zeros(shape);
  nn::assign_parameters(m.parameters(), nn::load_checkpoint(path, "world_model"));
  return m;
}

double normalize_reward(double reward, bool terminal, int max_turns) {
  return terminal ? reward / (2.0 * max_turns) : 0.0;
}

double denormalize_reward(double normalized, int max_turns) { return normalized * 2.0 * max_turns; }

SampledResponse world_sample_response(const WorldModel& model, std::span<const double> state,
                                      std::size_t action, const domain::DialogueAct& agent_act,
                                      const domain::UserGoal& goal, Rng& rng, int max_turns) {
  const auto pred = model.forward(state, action);
  std::discrete_distribution<std::size_t> pick(pred.user_act_probs.begin(), pred.user_act_probs.end());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  SampledResponse out;
  out.user_template = pick(rng);
  out.done = coin(rng) < pred.terminal;
  out.reward = denormalize_reward(pred.reward, max_turns);
  out.user_act = domain::ground_user_act(out.user_template, goal, agent_act);
  return out;
}

WorldTrainer::WorldTrainer(WorldTrainConfig config) : config_(config), optimizer_(config.optimizer) {
  if (config.batch_size == 0) throw ConfigError("world model batch size must be positive");
}

WorldLosses WorldTrainer::step(WorldModel& model, const agent::ReplayBuffer& real, Rng& rng) {
  if (real.source() != agent::ExperienceSource::kReal) {
    throw ContractError("world model trains on real experience only");
  }
  if (real.empty()) return {};
  std::uniform_int_distribution<std::size_t> pick(0, real.size() - 1);
  std::vector<const agent::Experience*> batch;
  batch.reserve(config_.batch_size);
  for (std::size_t i = 0; i < config_.batch_size; ++i) batch.push_back(&real[pick(rng)]);
  return train_on(model, batch);
}

WorldLosses WorldTrainer::train_on(WorldModel& model, std::span<const agent::Experience* const> batch) {
  WorldLosses out;
  if (batch.empty()) return out;
  out.status = agent::TrainStatus::kOk;
  nn::GradientSet grads = nn::GradientSet::zeros_like(std::as_const(model).parameters());
  const double n = static_cast<double>(batch.size());
  WorldCache cache;
  std::vector<double> act_grad(model.shape().user_acts);
  for (const agent::Experience* e : batch) {
    if (e->source != agent::ExperienceSource::kReal) {
      throw ContractError("world model trains on real experience only");
    }
    const auto pred = model.forward(e->state, e->action, &cache);
    out.action_ce += nn::categorical_ce_loss(pred.user_act_probs, e->user_act, act_grad);
    const double r_target[] = {normalize_reward(e->reward, e->terminal, config_.max_turns)};
    const double r_pred[] = {pred.reward};
    double r_grad[1];
    out.reward_mse += nn::mse_loss(r_pred, r_target, r_grad);
    double t_grad = 0.0;
    out.terminal_bce += nn::bce_loss(pred.terminal, e->terminal ? 1.0 : 0.0, t_grad);
    for (double& g : act_grad) g /= n;
    model.backward_accumulate(cache, act_grad, r_grad[0] / n, t_grad / n, grads);
  }
  out.action_ce /= n;
  out.reward_mse /= n;
  out.terminal_bce /= n;
  nn::clip_gradients(grads, config_.clip_norm);
  optimizer_.step(model.parameters(), grads);
  return out;
}

}  // namespace sddq::world
