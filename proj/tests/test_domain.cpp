#include <doctest.h>

#include <filesystem>

#include "sddq/agent.hpp"
#include "sddq/domain.hpp"

using namespace sddq;
using namespace sddq::domain;

namespace {

const KnowledgeBase& test_kb() {
  static const KnowledgeBase kb = KnowledgeBase::generate(7);
  return kb;
}

const GoalCorpus& test_corpus() {
  static const GoalCorpus corpus = generate_goal_corpus(test_kb(), 11);
  return corpus;
}

// Goal-aware oracle: ask only for constraints not yet heard, answer the
// user's requests, book, finish.
std::size_t oracle_action(const DialogueState& s, const UserGoal& goal) {
  for (const auto& [slot, value] : goal.constraints) {
    (void)value;
    if (!s.user_informed[static_cast<std::size_t>(slot)]) return agent_action_index(AgentActionKind::kRequest, slot);
  }
  for (Slot slot : goal.requests) {
    if (slot == Slot::kTicket) continue;
    if (!s.agent_informed[static_cast<std::size_t>(slot)]) return agent_action_index(AgentActionKind::kInform, slot);
  }
  if (!s.ticket) return agent_action_index(AgentActionKind::kBookTicket);
  return agent_action_index(AgentActionKind::kTaskComplete);
}

SimulatorStep act(UserSimulator& sim, std::size_t index) {
  return sim.step(realize_agent_action(index, sim.state(), test_kb()));
}

UserGoal movie_only_goal() {
  const auto& bucket = test_corpus().bucket(0);
  REQUIRE(!bucket.empty());
  return test_corpus().goals()[bucket.front()];
}

std::size_t bit(Slot s) { return static_cast<std::size_t>(s); }

}  // namespace

TEST_CASE("schema sizes") {
  CHECK(kIntentCount == 11);
  CHECK(kSlotCount == 16);
  CHECK(kStateWidth == 2 * 11 + 4 * 16 + 1);
  CHECK(agent_actions().size() == kAgentActionCount);
  CHECK(user_act_templates().size() == kUserActCount);
}

TEST_CASE("category of city and date is 3") {
  SlotValues c{{Slot::kMovieName, "m"}, {Slot::kCity, "x"}, {Slot::kDate, "y"}};
  CHECK(category_of(c) == 3);
}

TEST_CASE("category mask round-trips") {
  for (int cat = 0; cat < 128; ++cat) {
    const auto present = optional_slots_of(cat);
    SlotValues c{{Slot::kMovieName, "m"}};
    for (std::size_t i = 0; i < present.size(); ++i) {
      if (present[i]) c[kOptionalConstraintSlots[i]] = "v";
    }
    CHECK(category_of(c) == cat);
  }
}

TEST_CASE("act grammar parse and print") {
  const auto a = parse_act("request(theater, numberofpeople=2)");
  REQUIRE(a);
  CHECK(a->intent == Intent::kRequest);
  CHECK(a->slots.at(Slot::kTheater) == kUnknown);
  CHECK(a->slots.at(Slot::kNumberOfPeople) == "2");
  CHECK(parse_act(a->to_string()) == a);
  std::string err;
  CHECK(!parse_act("frobnicate(city=x)", &err));
  CHECK(!err.empty());
  CHECK(!parse_act("inform(nowhere=x)"));
  CHECK(!parse_act("inform(city=x"));
}

TEST_CASE("malformed acts are protocol errors") {
  CHECK_THROWS_AS(validate_act({Intent::kRequest, {{Slot::kCity, "x"}}}), ProtocolError);
  CHECK_THROWS_AS(validate_act({Intent::kInform, {{Slot::kCity, std::string(kUnknown)}}}), ProtocolError);
  UserSimulator sim(test_kb());
  sim.reset(movie_only_goal());
  CHECK_THROWS_AS(sim.step({Intent::kThanks, {}}), ProtocolError);
}

TEST_CASE("corpus generation is deterministic and covers every category") {
  const auto a = generate_goal_corpus(test_kb(), 5);
  const auto b = generate_goal_corpus(test_kb(), 5);
  CHECK(a.goals() == b.goals());
  CHECK(a.goals().size() == 1024);
  for (int c = 0; c < 128; ++c) CHECK(!a.bucket(c).empty());
  CHECK_THROWS_AS(generate_goal_corpus(test_kb(), 5, {127, true, 0.25}), ConfigError);
}

TEST_CASE("stratified corpus of 128 has one goal per category") {
  const auto corpus = generate_goal_corpus(test_kb(), 3, {128, true, 0.25});
  for (int c = 0; c < 128; ++c) CHECK(corpus.bucket(c).size() == 1);
}

TEST_CASE("goal invariants") {
  const auto& kb = test_kb();
  for (const auto& g : test_corpus().goals()) {
    CHECK(g.category == category_of(g.constraints));
    CHECK(g.constraints.count(Slot::kMovieName) == 1);
    CHECK(g.requests.count(Slot::kTicket) == 1);
    for (const auto& [slot, value] : g.constraints) {
      const auto& vocab = kb.vocabulary(slot);
      CHECK(std::find(vocab.begin(), vocab.end(), value) != vocab.end());
    }
    CHECK(kb.first_consistent(g.constraints).has_value());
  }
  for (const auto& row : kb.rows()) {
    for (Slot s : kGoalSlots) CHECK(row.values.count(s) == 1);
  }
}

TEST_CASE("kb and corpus files round-trip") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto kb_path = (dir / "sddq_kb_test.json").string();
  const auto goals_path = (dir / "sddq_goals_test.json").string();
  test_kb().save(kb_path);
  test_corpus().save(goals_path);
  const auto kb = KnowledgeBase::load(kb_path);
  CHECK(kb.rows().size() == test_kb().rows().size());
  const auto corpus = GoalCorpus::load(goals_path, kb);
  CHECK(corpus.goals() == test_corpus().goals());
  std::filesystem::remove(kb_path);
  std::filesystem::remove(goals_path);
}

TEST_CASE("reward scheme") {
  CHECK(compute_reward(RewardEvent::kSuccess) == 80.0);
  CHECK(compute_reward(RewardEvent::kFailure) == -40.0);
  CHECK(compute_reward(RewardEvent::kNonterminalTurn) == -1.0);
}

TEST_CASE("initial state encoding") {
  StateTracker tracker(test_kb());
  const auto v = encode_state(tracker.state());
  REQUIRE(v.size() == kStateWidth);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(v[i] == (i == static_cast<std::size_t>(Intent::kGreeting) ? 1.0 : 0.0));
  }
  CHECK(encode_state(tracker.state()) == v);
}

TEST_CASE("user informing moviename flips exactly one indicator") {
  StateTracker tracker(test_kb());
  tracker.observe_agent({Intent::kRequest, {{Slot::kMovieName, std::string(kUnknown)}}});
  const auto before = encode_state(tracker.state());
  tracker.observe_user({Intent::kInform, {{Slot::kMovieName, "m"}}});
  const auto after = encode_state(tracker.state());
  const std::size_t informed = 2 * kIntentCount;
  for (std::size_t s = 0; s < kSlotCount; ++s) {
    const std::size_t idx = informed + s;
    if (s == bit(Slot::kMovieName)) {
      CHECK(before[idx] == 0.0);
      CHECK(after[idx] == 1.0);
    } else {
      CHECK(after[idx] == before[idx]);
    }
  }
  for (std::size_t i = 2 * kIntentCount + kSlotCount; i < kStateWidth; ++i) CHECK(after[i] == before[i]);
}

TEST_CASE("requested goal slot is informed, others get not_sure") {
  UserSimulator sim(test_kb());
  const auto goal = movie_only_goal();
  sim.reset(goal);
  auto step = act(sim, agent_action_index(AgentActionKind::kRequest, Slot::kMovieName));
  CHECK(step.user_act == DialogueAct{Intent::kInform, {{Slot::kMovieName, goal.constraints.at(Slot::kMovieName)}}});
  CHECK(!step.done);
  CHECK(step.reward == -1.0);
  step = act(sim, agent_action_index(AgentActionKind::kRequest, Slot::kCity));
  CHECK(step.user_act.intent == Intent::kNotSure);
}

TEST_CASE("conflicting inform is denied") {
  UserSimulator sim(test_kb());
  const auto goal = movie_only_goal();
  sim.reset(goal);
  const auto& movie = goal.constraints.at(Slot::kMovieName);
  std::string wrong;
  for (const auto& v : test_kb().vocabulary(Slot::kMovieName)) {
    if (v != movie) wrong = v;
  }
  const auto step = sim.step({Intent::kInform, {{Slot::kMovieName, wrong}}});
  CHECK(step.user_act == DialogueAct{Intent::kDeny, {{Slot::kMovieName, movie}}});
}

TEST_CASE("wrong date then taskcomplete fails") {
  const auto& corpus = test_corpus();
  const UserGoal* goal = nullptr;
  for (const auto& g : corpus.goals()) {
    if (g.constraints.count(Slot::kDate)) goal = &g;
  }
  REQUIRE(goal);
  std::string wrong;
  for (const auto& v : test_kb().vocabulary(Slot::kDate)) {
    if (v != goal->constraints.at(Slot::kDate)) wrong = v;
  }
  UserSimulator sim(test_kb());
  sim.reset(*goal);
  auto step = sim.step({Intent::kInform, {{Slot::kDate, wrong}}});
  CHECK(step.user_act.intent == Intent::kDeny);
  step = act(sim, agent_action_index(AgentActionKind::kTaskComplete));
  CHECK(step.done);
  REQUIRE(step.outcome);
  CHECK(step.outcome->status == EpisodeStatus::kFailure);
  CHECK(step.reward == -40.0);
}

TEST_CASE("turn 40 without booking fails") {
  UserSimulator sim(test_kb());
  sim.reset(movie_only_goal());
  SimulatorStep step;
  for (int t = 1; t <= 40; ++t) {
    REQUIRE(!sim.finished());
    step = act(sim, agent_action_index(AgentActionKind::kRequest, Slot::kCity));
    CHECK(sim.state().turn == t);
    CHECK(step.done == (t == 40));
  }
  REQUIRE(step.outcome);
  CHECK(step.outcome->status == EpisodeStatus::kFailure);
  CHECK(step.outcome->turns == 40);
  CHECK(step.outcome->reward == -40.0 - 39.0);
  CHECK_THROWS_AS(act(sim, 0), ContractError);
}

TEST_CASE("success on turn 40 beats the turn cap") {
  UserSimulator sim(test_kb());
  sim.reset(movie_only_goal());
  for (int t = 1; t <= 38; ++t) act(sim, agent_action_index(AgentActionKind::kRequest, Slot::kCity));
  act(sim, agent_action_index(AgentActionKind::kBookTicket));
  const auto step = act(sim, agent_action_index(AgentActionKind::kTaskComplete));
  REQUIRE(step.outcome);
  CHECK(step.outcome->turns == 40);
  CHECK(step.outcome->status == EpisodeStatus::kSuccess);
}

TEST_CASE("success after 11 turns totals 70") {
  UserSimulator sim(test_kb());
  sim.reset(movie_only_goal());
  for (int t = 1; t <= 9; ++t) act(sim, agent_action_index(AgentActionKind::kRequest, Slot::kCity));
  auto step = act(sim, agent_action_index(AgentActionKind::kBookTicket));
  CHECK(!step.done);
  step = act(sim, agent_action_index(AgentActionKind::kTaskComplete));
  REQUIRE(step.outcome);
  CHECK(step.outcome->status == EpisodeStatus::kSuccess);
  CHECK(step.outcome->turns == 11);
  CHECK(step.outcome->reward == 70.0);
}

TEST_CASE("check_success cases") {
  const auto goal = movie_only_goal();
  const auto& kb = test_kb();
  DialogueState s;
  CHECK(!check_success(s, goal));  // no ticket
  const auto row = kb.first_consistent(goal.constraints);
  REQUIRE(row);
  s.ticket = kb.rows()[*row].values;
  s.agent_informed.set(bit(Slot::kTicket));
  UserGoal g = goal;
  g.requests = {Slot::kTicket};
  CHECK(check_success(s, g));
  s.agreed[Slot::kMovieName] = "something else";
  CHECK(!check_success(s, g));
  s.agreed.clear();
  g.requests.insert(Slot::kTheater);
  CHECK(!check_success(s, g));  // requested slot never informed
  s.agent_informed.set(bit(Slot::kTheater));
  CHECK(check_success(s, g));
}

TEST_CASE("episodes terminate with consistent rewards and are deterministic") {
  Rng rng(99);
  const auto& corpus = test_corpus();
  std::uniform_int_distribution<std::size_t> pick_goal(0, corpus.goals().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_action(0, kAgentActionCount - 1);
  for (int episode = 0; episode < 200; ++episode) {
    const auto& goal = corpus.goals()[pick_goal(rng)];
    std::vector<std::size_t> actions;
    UserSimulator sim(test_kb()), replay(test_kb());
    sim.reset(goal);
    replay.reset(goal);
    SimulatorStep step;
    double total = 0;
    while (!sim.finished()) {
      const auto a = pick_action(rng);
      step = act(sim, a);
      const auto again = replay.step(realize_agent_action(a, replay.state(), test_kb()));
      CHECK(again.user_act == step.user_act);
      total += step.reward;
    }
    REQUIRE(step.outcome);
    const int T = step.outcome->turns;
    CHECK((T >= 1 && T <= 40));
    const double base = step.outcome->status == EpisodeStatus::kSuccess ? 80.0 : -40.0;
    CHECK(step.outcome->reward == base - (T - 1));
    CHECK(total == step.outcome->reward);
  }
}

TEST_CASE("goal-aware oracle always succeeds quickly") {
  for (const auto& goal : test_corpus().goals()) {
    UserSimulator sim(test_kb());
    sim.reset(goal);
    SimulatorStep step;
    while (!sim.finished()) step = act(sim, oracle_action(sim.state(), goal));
    REQUIRE(step.outcome);
    CHECK(step.outcome->status == EpisodeStatus::kSuccess);
    const int slots = static_cast<int>(goal.constraints.size() + goal.requests.size());
    CHECK(step.outcome->turns <= 2 * slots + 2);
  }
}

TEST_CASE("rule agent succeeds on every corpus goal") {
  int successes = 0;
  for (const auto& goal : test_corpus().goals()) {
    UserSimulator sim(test_kb());
    const auto rec = agent::run_dialogue(
        [](const DialogueState& s, std::span<const double>) { return agent::rule_agent_action(s); }, sim,
        test_kb(), goal, 1, agent::ExperienceSource::kReal);
    successes += rec.outcome.status == EpisodeStatus::kSuccess;
  }
  CHECK(successes == static_cast<int>(test_corpus().goals().size()));
}

TEST_CASE("turn increases by one per exchange") {
  UserSimulator sim(test_kb());
  sim.reset(test_corpus().goals()[5]);
  int last = sim.state().turn;
  CHECK(last == 0);
  while (!sim.finished()) {
    act(sim, agent::rule_agent_action(sim.state()));
    CHECK(sim.state().turn == last + 1);
    last = sim.state().turn;
  }
}
