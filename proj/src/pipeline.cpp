#include "sddq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <regex>
#include <thread>

namespace sddq::pipeline {

using agent::ExperienceSource;

std::string VariantConfig::name() const {
  switch (kind) {
    case VariantKind::kDqn: return "DQN";
    case VariantKind::kDqnK: return "DQN(" + std::to_string(k) + ")";
    case VariantKind::kDdqK: return "DDQ(" + std::to_string(k) + ")";
    case VariantKind::kSwitchDdq: return "SwitchDDQ";
    case VariantKind::kSuDdq: return "SU-DDQ";
  }
  return "?";
}

VariantConfig VariantConfig::parse(const std::string& text) {
  static const std::regex with_k(R"(^\s*(DQN|DDQ)\s*\(\s*(\d+)\s*\)\s*$)", std::regex::icase);
  std::smatch m;
  VariantConfig v;
  if (std::regex_match(text, m, with_k)) {
    std::string head = m[1].str();
    std::transform(head.begin(), head.end(), head.begin(), ::toupper);
    v.kind = head == "DQN" ? VariantKind::kDqnK : VariantKind::kDdqK;
    v.k = std::stoi(m[2].str());
    v.validate();
    return v;
  }
  std::string key;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) key += static_cast<char>(std::toupper(c));
  }
  if (key == "DQN") v.kind = VariantKind::kDqn;
  else if (key == "SWITCHDDQ") v.kind = VariantKind::kSwitchDdq;
  else if (key == "SUDDQ") v.kind = VariantKind::kSuDdq;
  else throw ConfigError("unknown variant '" + text + "' (expected DQN, DQN(K), DDQ(K), SwitchDDQ or SU-DDQ)");
  return v;
}

void VariantConfig::validate() const {
  const bool needs_k = kind == VariantKind::kDqnK || kind == VariantKind::kDdqK;
  if (needs_k && k < 2) throw ConfigError(name() + ": K must be >= 2");
  if (!needs_k && k != 0) throw ConfigError(name() + " takes no K");
}

void Hyper::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0,1]");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) throw ConfigError("rmsprop_decay must be in [0,1)");
  if (!(rmsprop_epsilon > 0.0)) throw ConfigError("rmsprop_epsilon must be > 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must be in [0,1]");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (q_hidden == 0) throw ConfigError("q_hidden must be >= 1");
  if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
  if (real_buffer == 0) throw ConfigError("real_buffer must be >= 1");
  if (switcher_batch_size < 2) throw ConfigError("switcher_batch_size must be >= 2");
  if (max_planning_dialogues == 0) throw ConfigError("max_planning_dialogues must be >= 1");
  if (validation_dialogues == 0) throw ConfigError("validation_dialogues must be >= 1");
  if (test_dialogues == 0) throw ConfigError("test_dialogues must be >= 1");
  threshold.validate();
}

std::size_t Hyper::simulated_capacity(const VariantConfig& v) const {
  if (simulated_buffer != 0) return simulated_buffer;
  switch (v.kind) {
    case VariantKind::kDdqK: return 2000 * static_cast<std::size_t>(v.k);
    case VariantKind::kSwitchDdq:
    case VariantKind::kSuDdq: return 10000;
    default: return 1;  // never written
  }
}

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("variants must not be empty");
  for (const auto& v : variants) v.validate();
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (kb_rows == 0) throw ConfigError("kb_rows must be >= 1");
  if (corpus.size < domain::kCategoryCount) throw ConfigError("corpus.size must be >= 128");
  if (!(corpus.extra_request_probability >= 0.0 && corpus.extra_request_probability <= 1.0)) {
    throw ConfigError("corpus.extra_request_probability must be in [0,1]");
  }
  hyper.validate();
}

std::shared_ptr<const World> build_world(const ExperimentConfig& config) {
  auto w = std::make_shared<World>();
  w->kb = domain::KnowledgeBase::generate(config.kb_seed, config.kb_rows);
  w->corpus = domain::generate_goal_corpus(w->kb, config.corpus_seed, config.corpus);
  return w;
}

Rng make_stream(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5dd0u};
  return Rng(seq);
}

// ---- Run -------------------------------------------------------------------

namespace {

agent::DqnHyper dqn_hyper(const Hyper& h) { return {h.gamma, h.batch_size, h.clip_norm, h.rmsprop()}; }

}  // namespace

Run::Run(ExperimentConfig config, VariantConfig variant, std::uint64_t seed, std::shared_ptr<const World> world)
    : config_(std::move(config)),
      variant_(variant),
      seed_(seed),
      world_(world ? std::move(world) : build_world(config_)),
      user_(world_->kb, config_.hyper.max_turns),
      init_rng_(make_stream(seed, Stream::kInit)),
      real_rng_(make_stream(seed, Stream::kReal)),
      explore_rng_(make_stream(seed, Stream::kExplore)),
      train_rng_(make_stream(seed, Stream::kAgentTrain)),
      planning_rng_(make_stream(seed, Stream::kPlanning)),
      world_rng_(make_stream(seed, Stream::kWorldTrain)),
      switcher_rng_(make_stream(seed, Stream::kSwitcherTrain)),
      test_rng_(make_stream(seed, Stream::kTest)),
      real_(config_.hyper.real_buffer, ExperienceSource::kReal),
      simulated_(config_.hyper.simulated_capacity(variant), ExperienceSource::kSimulated),
      world_trainer_({config_.hyper.batch_size, config_.hyper.clip_norm, config_.hyper.rmsprop(),
                      config_.hyper.max_turns}),
      switcher_trainer_({config_.hyper.switcher_batch_size, config_.hyper.clip_norm,
                         config_.hyper.rmsprop(), config_.hyper.max_turns}),
      uniform_sampler_(world_->corpus, goals::SamplingMode::kUniform),
      sampler_(world_->corpus, variant.kind == VariantKind::kSwitchDdq ? goals::SamplingMode::kActive
                                                                       : goals::SamplingMode::kUniform) {
  variant_.validate();
  config_.hyper.validate();
  const auto& h = config_.hyper;
  agent_ = agent::DqnAgent(agent::QNetwork(domain::kStateWidth, h.q_hidden, domain::kAgentActionCount, init_rng_),
                           dqn_hyper(h));
  world_model_ = world::WorldModel::random({}, init_rng_);
  switcher_net_ = nn::LstmNet::random(switcher::default_shape(), init_rng_);

  Rng warm = make_stream(seed, Stream::kWarmStart);
  const auto warm_stats = agent::rbs_warm_start(user_, world_->kb, world_->corpus, h.rbs_dialogues, real_,
                                                warm, next_dialogue_id_);
  (void)warm_stats;

  if (variant_.uses_world_model()) {
    for (std::size_t i = 0; i < h.world_pretrain_batches; ++i) world_trainer_.step(world_model_, real_, world_rng_);
  }

  const auto& goals = world_->corpus.goals();
  std::uniform_int_distribution<std::size_t> pick(0, goals.size() - 1);
  for (std::size_t i = 0; i < h.test_dialogues; ++i) test_goals_.push_back(&goals[pick(test_rng_)]);
  totals_.category_failures.assign(domain::kCategoryCount, 0);
  totals_.category_counts.assign(domain::kCategoryCount, 0);
}

agent::Policy Run::greedy_policy() const {
  return [this](const domain::DialogueState&, std::span<const double> s) {
    return agent::greedy_action(agent_.q().q_values(s));
  };
}

std::vector<double> Run::score(std::span<const agent::Experience> dialogue) const {
  std::vector<switcher::TurnRecord> turns;
  turns.reserve(dialogue.size());
  for (const auto& e : dialogue) turns.push_back(switcher::turn_of(e));
  if (scorer_) return scorer_(turns);
  std::vector<std::vector<double>> features;
  features.reserve(turns.size());
  for (const auto& t : turns) {
    features.push_back(switcher::turn_features(t, domain::kAgentActionCount, config_.hyper.max_turns));
  }
  return switcher::score_sequence(switcher_net_, features);
}

agent::DialogueRecord Run::rollout(const domain::UserGoal& goal) {
  const auto& kb = world_->kb;
  const int max_turns = config_.hyper.max_turns;
  agent::DialogueRecord rec;
  rec.dialogue_id = next_sim_dialogue_id_++;
  rec.goal_category = goal.category;
  domain::StateTracker tracker(kb);
  tracker.observe_user(domain::opening_act(goal));
  auto s = domain::encode_state(tracker.state(), max_turns);
  int position = 0;
  double total = 0.0;
  while (true) {
    const std::size_t a = agent_.act(s, config_.hyper.epsilon, planning_rng_);
    const auto agent_act = domain::realize_agent_action(a, tracker.state(), kb);
    tracker.observe_agent(agent_act);
    const auto resp = world::world_sample_response(world_model_, s, a, agent_act, goal, planning_rng_, max_turns);
    const int turn = tracker.state().turn;
    bool done = true;
    double r = resp.reward;
    if (!resp.done) {
      if (turn >= max_turns) {
        r = domain::compute_reward(domain::RewardEvent::kFailure, max_turns);
      } else {
        r = domain::compute_reward(domain::RewardEvent::kNonterminalTurn, max_turns);
        done = false;
      }
    }
    tracker.observe_user(resp.user_act);
    auto next = domain::encode_state(tracker.state(), max_turns);
    total += r;
    rec.transitions.push_back({s, a, r, resp.user_template, next, done, ExperienceSource::kSimulated,
                               rec.dialogue_id, position++});
    s = std::move(next);
    if (done) break;
  }
  rec.outcome = {domain::EpisodeStatus::kFailure, position, total};
  return rec;
}

std::size_t Run::planning_phase() {
  last_sim_score_ = 0.0;
  last_gate_exit_ = false;
  last_sim_pushed_ = 0;
  const auto& h = config_.hyper;
  switch (variant_.kind) {
    case VariantKind::kDqn:
    case VariantKind::kDqnK:
      return 0;
    case VariantKind::kDdqK: {
      const std::size_t n = static_cast<std::size_t>(variant_.k - 1);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& goal = uniform_sampler_.sample(stats_, planning_rng_);
        auto rec = rollout(goal);
        last_sim_pushed_ += rec.transitions.size();
        for (auto& e : rec.transitions) simulated_.push(std::move(e));
      }
      return n;
    }
    case VariantKind::kSwitchDdq:
    case VariantKind::kSuDdq:
      break;
  }
  const double tau = switcher::quality_threshold(h.threshold, epoch_);
  std::size_t generated = 0;
  double score_sum = 0.0;
  while (generated < h.max_planning_dialogues) {
    const auto& goal = sampler_.sample(stats_, planning_rng_);
    auto rec = rollout(goal);
    const auto scores = score(rec.transitions);
    const double quality = switcher::mean_score(scores);
    last_sim_pushed_ += switcher::filter_and_store(scores, rec.transitions, tau, simulated_);
    ++generated;
    score_sum += quality;
    if (quality < tau) {
      last_gate_exit_ = true;
      break;
    }
  }
  last_sim_score_ = score_sum / static_cast<double>(generated);
  return generated;
}

std::vector<std::pair<int, bool>> Run::validate() {
  const std::size_t v = config_.hyper.validation_dialogues;
  const auto& corpus = world_->corpus;
  const auto policy = greedy_policy();
  std::vector<std::pair<int, bool>> out;
  out.reserve(v);
  for (std::size_t j = 0; j < v; ++j) {
    const std::size_t slot = static_cast<std::size_t>(epoch_) * v + j;
    const int category = static_cast<int>(slot % domain::kCategoryCount);
    const auto& bucket = corpus.bucket(category);
    if (bucket.empty()) continue;
    const auto& goal = corpus.goals()[bucket[(slot / domain::kCategoryCount) % bucket.size()]];
    const auto rec = agent::run_dialogue(policy, user_, world_->kb, goal, 0, ExperienceSource::kReal);
    const bool success = rec.outcome.status == domain::EpisodeStatus::kSuccess;
    stats_.update(static_cast<std::size_t>(category), success);
    out.emplace_back(category, success);
  }
  return out;
}

TestResult Run::evaluate(std::size_t dialogues) {
  const auto policy = greedy_policy();
  TestResult t;
  for (std::size_t i = 0; i < dialogues; ++i) {
    const auto& goal = *test_goals_[i % test_goals_.size()];
    const auto rec = agent::run_dialogue(policy, user_, world_->kb, goal, 0, ExperienceSource::kReal);
    if (rec.outcome.status == domain::EpisodeStatus::kSuccess) t.success_rate += 1.0;
    t.average_reward += rec.outcome.reward;
    t.average_turns += rec.outcome.turns;
  }
  const double n = static_cast<double>(dialogues);
  t.success_rate /= n;
  t.average_reward /= n;
  t.average_turns /= n;
  return t;
}

std::vector<CategoryOutcome> Run::category_pass() {
  const auto policy = greedy_policy();
  std::vector<CategoryOutcome> out(domain::kCategoryCount);
  for (std::size_t c = 0; c < out.size(); ++c) out[c].category = static_cast<int>(c);
  for (const auto& goal : world_->corpus.goals()) {
    const auto rec = agent::run_dialogue(policy, user_, world_->kb, goal, 0, ExperienceSource::kReal);
    auto& slot = out[static_cast<std::size_t>(goal.category)];
    slot.dialogues += 1;
    if (rec.outcome.status == domain::EpisodeStatus::kSuccess) slot.successes += 1;
  }
  return out;
}

EpochMetrics Run::run_epoch() {
  const auto& h = config_.hyper;
  EpochMetrics m;
  m.epoch = epoch_ + 1;
  agent_.sync_target();

  // Real experience with uniformly drawn goals.
  const auto& goals = world_->corpus.goals();
  std::uniform_int_distribution<std::size_t> pick(0, goals.size() - 1);
  const agent::Policy explore = [this](const domain::DialogueState&, std::span<const double> s) {
    return agent_.act(s, config_.hyper.epsilon, explore_rng_);
  };
  double real_score = 0.0;
  for (int i = 0; i < variant_.real_dialogues_per_epoch(); ++i) {
    const auto& goal = goals[pick(real_rng_)];
    auto rec = agent::run_dialogue(explore, user_, world_->kb, goal, next_dialogue_id_++, ExperienceSource::kReal);
    if (variant_.uses_switcher()) real_score += switcher::mean_score(score(rec.transitions));
    totals_.real_experiences += rec.transitions.size();
    for (auto& e : rec.transitions) real_.push(std::move(e));
    m.real_dialogues += 1;
  }
  totals_.real_dialogues_total += m.real_dialogues;
  if (variant_.uses_switcher()) m.switcher_real_score = real_score / m.real_dialogues;

  m.simulated_dialogues = planning_phase();
  totals_.simulated_dialogues_total += m.simulated_dialogues;
  totals_.simulated_experiences += last_sim_pushed_;
  m.switcher_simulated_score = last_sim_score_;
  m.planning_gate_exit = last_gate_exit_;
  m.tau = variant_.uses_switcher() ? switcher::quality_threshold(h.threshold, epoch_) : 0.0;

  if (variant_.uses_world_model()) {
    double ce = 0.0;
    for (std::size_t i = 0; i < h.world_batches; ++i) ce += world_trainer_.step(world_model_, real_, world_rng_).action_ce;
    m.world_action_ce = h.world_batches ? ce / h.world_batches : 0.0;
  }
  if (variant_.uses_switcher()) {
    for (std::size_t i = 0; i < h.switcher_batches; ++i) {
      switcher_trainer_.step(switcher_net_, real_, simulated_, switcher_rng_);
    }
  }

  double loss = 0.0;
  std::size_t steps = 0;
  for (std::size_t i = 0; i < h.agent_batches; ++i) {
    const auto r = agent_.train_step(real_, simulated_, train_rng_);
    if (r.status == agent::TrainStatus::kOk) {
      loss += r.loss;
      ++steps;
    }
  }
  totals_.updates += steps;
  m.agent_loss = steps ? loss / steps : 0.0;

  const auto outcomes = validate();
  std::size_t ok = 0;
  for (const auto& [c, s] : outcomes) ok += s ? 1 : 0;
  m.validation_success = outcomes.empty() ? 0.0 : static_cast<double>(ok) / outcomes.size();
  totals_.validation_dialogues_total += outcomes.size();

  if ((epoch_ + 1) % config_.eval_interval == 0) {
    m.evaluated = true;
    m.test = evaluate(h.test_dialogues);
  }

  m.real_dialogues_total = totals_.real_dialogues_total;
  m.real_experiences = totals_.real_experiences;
  m.simulated_dialogues_total = totals_.simulated_dialogues_total;
  m.simulated_experiences = totals_.simulated_experiences;
  m.updates = totals_.updates;
  m.validation_dialogues_total = totals_.validation_dialogues_total;
  m.category_failures.resize(stats_.k());
  m.category_counts.resize(stats_.k());
  for (std::size_t c = 0; c < stats_.k(); ++c) {
    m.category_failures[c] = stats_.failures(c);
    m.category_counts[c] = stats_.n(c);
  }
  ++epoch_;
  return m;
}

// ---- experiments -------------------------------------------------------------

RunResult run_single(const ExperimentConfig& config, const VariantConfig& variant, std::uint64_t seed,
                     std::shared_ptr<const World> world, const std::function<void(const EpochMetrics&)>& on_epoch,
                     const std::function<void(const RunResult&, const Run&)>& on_finish) {
  Run run(config, variant, seed, std::move(world));
  RunResult out;
  out.variant = variant;
  out.seed = seed;
  out.epochs.reserve(static_cast<std::size_t>(config.epochs));
  for (int e = 0; e < config.epochs; ++e) {
    try {
      out.epochs.push_back(run.run_epoch());
    } catch (const std::exception& ex) {
      throw std::runtime_error(variant.name() + " seed " + std::to_string(seed) + " epoch " +
                               std::to_string(e + 1) + ": " + ex.what());
    }
    if (on_epoch) on_epoch(out.epochs.back());
  }
  if (config.category_table) out.categories = run.category_pass();
  if (on_finish) on_finish(out, run);
  return out;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunDone& on_done) {
  config.validate();
  const auto world = build_world(config);
  struct Job {
    VariantConfig variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : config.variants) {
    for (auto s : config.seeds) jobs.push_back({v, s});
  }
  std::vector<RunResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex done_mutex;
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        const auto finish = [&](const RunResult& result, const Run& run) {
          if (!on_done) return;
          std::lock_guard lock(done_mutex);
          on_done(result, run);
        };
        results[i] = run_single(config, jobs[i].variant, jobs[i].seed, world, {}, finish);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::size_t threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<SummaryRow> summarize(const std::vector<RunResult>& runs) {
  // Keep variant order of first appearance.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunResult*>> by_variant;
  for (const auto& r : runs) {
    const auto name = r.variant.name();
    if (!by_variant.count(name)) order.push_back(name);
    by_variant[name].push_back(&r);
  }
  std::vector<SummaryRow> out;
  for (const auto& name : order) {
    const auto& group = by_variant[name];
    std::size_t epochs = 0;
    for (const auto* r : group) epochs = std::max(epochs, r->epochs.size());
    for (std::size_t e = 0; e < epochs; ++e) {
      SummaryRow row;
      row.variant = name;
      std::vector<double> success;
      for (const auto* r : group) {
        if (e >= r->epochs.size() || !r->epochs[e].evaluated) continue;
        const auto& m = r->epochs[e];
        row.epoch = m.epoch;
        row.updates += m.updates;
        success.push_back(m.test.success_rate);
        row.reward_mean += m.test.average_reward;
        row.turns_mean += m.test.average_turns;
      }
      if (success.empty()) continue;
      const double n = static_cast<double>(success.size());
      row.runs = success.size();
      row.updates = static_cast<std::size_t>(std::llround(static_cast<double>(row.updates) / n));
      for (double s : success) row.success_mean += s;
      row.success_mean /= n;
      row.reward_mean /= n;
      row.turns_mean /= n;
      if (success.size() > 1) {
        double ss = 0.0;
        for (double s : success) ss += (s - row.success_mean) * (s - row.success_mean);
        row.success_std = std::sqrt(ss / (n - 1.0));
      }
      out.push_back(row);
    }
  }
  return out;
}

std::optional<int> epochs_to_reach(const RunResult& run, double level) {
  for (const auto& m : run.epochs) {
    if (m.evaluated && m.test.success_rate >= level) return m.epoch;
  }
  return std::nullopt;
}

}  // namespace sddq::pipeline
