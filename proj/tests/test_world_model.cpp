#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sddq/world_model.hpp"

using namespace sddq;
using namespace sddq::world;

namespace {

const domain::KnowledgeBase& kb() {
  static const auto k = domain::KnowledgeBase::generate(7);
  return k;
}
const domain::GoalCorpus& corpus() {
  static const auto c = domain::generate_goal_corpus(kb(), 11);
  return c;
}

std::vector<double> random_state(Rng& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> s(domain::kStateWidth);
  for (double& v : s) v = d(rng) < 0.3 ? 1.0 : 0.0;
  s.back() = d(rng);
  return s;
}

agent::Experience transition(Rng& rng, std::size_t action, std::size_t user_act, double reward, bool terminal) {
  agent::Experience e;
  e.state = random_state(rng);
  e.next_state = random_state(rng);
  e.action = action;
  e.user_act = user_act;
  e.reward = reward;
  e.terminal = terminal;
  return e;
}

// Equal-weight multi-task loss over a batch, optionally accumulating grads.
double multitask_loss(const WorldModel& m, std::span<const agent::Experience> batch, nn::GradientSet* grads) {
  double total = 0;
  const double n = static_cast<double>(batch.size());
  WorldCache cache;
  for (const auto& e : batch) {
    const auto p = m.forward(e.state, e.action, &cache);
    std::vector<double> ag(p.user_act_probs.size());
    total += nn::categorical_ce_loss(p.user_act_probs, e.user_act, ag) / n;
    const double rt[] = {normalize_reward(e.reward, e.terminal)};
    const double rp[] = {p.reward};
    double rg[1];
    total += nn::mse_loss(rp, rt, rg) / n;
    double tg = 0;
    total += nn::bce_loss(p.terminal, e.terminal ? 1.0 : 0.0, tg) / n;
    for (double& g : ag) g /= n;
    if (grads) m.backward_accumulate(cache, ag, rg[0] / n, tg / n, *grads);
  }
  return total;
}

domain::DialogueAct request_city() { return {domain::Intent::kRequest, {{domain::Slot::kCity, "UNKNOWN"}}}; }

}  // namespace

TEST_CASE("zero world model is uniform, neutral and undecided") {
  const auto m = WorldModel::zeros({});
  Rng rng(1);
  const auto p = m.forward(random_state(rng), 3);
  REQUIRE(p.user_act_probs.size() == domain::kUserActCount);
  for (double v : p.user_act_probs) CHECK(v == doctest::Approx(1.0 / domain::kUserActCount));
  CHECK(p.reward == 0.0);
  CHECK(p.terminal == 0.5);
}

TEST_CASE("world model heads stay in range and the act head normalizes") {
  Rng rng(2);
  const auto m = WorldModel::random({}, rng);
  for (int i = 0; i < 50; ++i) {
    const auto p = m.forward(random_state(rng), static_cast<std::size_t>(i % domain::kAgentActionCount));
    double sum = 0;
    for (double v : p.user_act_probs) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK((p.reward > -1.0 && p.reward < 1.0));
    CHECK((p.terminal > 0.0 && p.terminal < 1.0));
  }
  CHECK_THROWS_AS(m.forward(random_state(rng), domain::kAgentActionCount), ContractError);
}

TEST_CASE("world model gradients agree with finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    auto m = WorldModel::random({}, rng);
    std::vector<agent::Experience> batch = {transition(rng, 1, 4, -1, false), transition(rng, 18, 20, 80, true),
                                            transition(rng, 7, 10, -40, true)};
    auto grads = nn::GradientSet::zeros_like(std::as_const(m).parameters());
    multitask_loss(m, batch, &grads);
    CHECK(nn::finite_diff_check(m.parameters(), grads, [&] { return multitask_loss(m, batch, nullptr); }) < 1e-4);
  }
}

TEST_CASE("reward normalization") {
  CHECK(normalize_reward(-1.0, false) == 0.0);
  CHECK(normalize_reward(80.0, true) == 1.0);
  CHECK(normalize_reward(-40.0, true) == -0.5);
  CHECK(denormalize_reward(0.9875) == doctest::Approx(79.0).epsilon(1e-12));
  for (double r : {-0.99, -0.3, 0.0, 0.123456789, 0.9875}) {
    CHECK(std::abs(normalize_reward(denormalize_reward(r), true) - r) <= 1e-12);
  }
}

TEST_CASE("saturated terminal head always ends the dialogue") {
  Rng rng(3);
  auto m = WorldModel::random({}, rng);
  m.terminal_head().parameters()[1].values[0] = 60.0;
  const auto& goal = corpus().goals()[0];
  int done = 0;
  for (int i = 0; i < 1000; ++i) {
    done += world_sample_response(m, random_state(rng), 1, request_city(), goal, rng).done;
  }
  CHECK(done == 1000);
}

TEST_CASE("reward head output is de-normalized") {
  Rng rng(4);
  auto m = WorldModel::random({}, rng);
  auto params = m.reward_head().parameters();
  for (double& w : params[0].values) w = 0.0;
  params[1].values[0] = std::atanh(0.9875);
  const auto r = world_sample_response(m, random_state(rng), 1, request_city(), corpus().goals()[0], rng);
  CHECK(r.reward == doctest::Approx(79.0).epsilon(1e-9));
}

TEST_CASE("sampled templates are grounded with the goal") {
  Rng rng(5);
  auto m = WorldModel::random({}, rng);
  const auto& goal = corpus().goals()[0];
  for (int i = 0; i < 200; ++i) {
    const auto r = world_sample_response(m, random_state(rng), 1, request_city(), goal, rng);
    CHECK(r.user_act == domain::ground_user_act(r.user_template, goal, request_city()));
    for (const auto& [slot, value] : r.user_act.slots) {
      if (value != domain::kUnknown && slot != domain::Slot::kTicket && r.user_act.intent != domain::Intent::kConfirmAnswer) {
        CHECK(goal.constraints.at(slot) == value);
      }
    }
  }
}

TEST_CASE("overfitting a single transition") {
  Rng rng(6);
  auto m = WorldModel::random({}, rng);
  WorldTrainer trainer;
  const auto e = transition(rng, 2, 5, -1, false);
  const agent::Experience* batch[] = {&e};
  WorldLosses l;
  for (int i = 0; i < 2000; ++i) l = trainer.train_on(m, batch);
  l = trainer.train_on(m, batch);
  CHECK(l.action_ce < 0.01);
  CHECK(l.reward_mse < 0.01);
  CHECK(l.terminal_bce < 0.01);
  for (int i = 0; i < 3000; ++i) trainer.train_on(m, batch);
  int hits = 0;
  for (int i = 0; i < 1000; ++i) {
    hits += world_sample_response(m, e.state, e.action, request_city(), corpus().goals()[0], rng).user_template == 5;
  }
  CHECK(hits == 1000);
}

TEST_CASE("reported losses match straight-line recomputation") {
  Rng rng(7);
  auto m = WorldModel::random({}, rng);
  std::vector<agent::Experience> items;
  for (int i = 0; i < 8; ++i) items.push_back(transition(rng, i % 20, (i * 3) % 21, i % 2 ? 80 : -1, i % 2));
  std::vector<const agent::Experience*> batch;
  for (const auto& e : items) batch.push_back(&e);
  double ce = 0, mse = 0, bce = 0;
  for (const auto& e : items) {
    const auto p = m.forward(e.state, e.action);
    ce -= std::log(p.user_act_probs[e.user_act]);
    const double d = p.reward - normalize_reward(e.reward, e.terminal);
    mse += d * d;
    bce -= e.terminal ? std::log(p.terminal) : std::log(1 - p.terminal);
  }
  WorldTrainer trainer;
  const auto l = trainer.train_on(m, batch);
  CHECK(l.action_ce == doctest::Approx(ce / 8).epsilon(1e-10));
  CHECK(l.reward_mse == doctest::Approx(mse / 8).epsilon(1e-10));
  CHECK(l.terminal_bce == doctest::Approx(bce / 8).epsilon(1e-10));
}

TEST_CASE("matched reward target contributes no gradient") {
  const auto m = WorldModel::zeros({});
  Rng rng(8);
  const auto e = transition(rng, 0, 0, -1, false);
  WorldCache cache;
  m.forward(e.state, e.action, &cache);
  auto grads = nn::GradientSet::zeros_like(m.parameters());
  const std::vector<double> zero(domain::kUserActCount, 0.0);
  m.backward_accumulate(cache, zero, 0.0, 0.0, grads);
  CHECK(grads.global_norm() == 0.0);
  WorldTrainer trainer;
  const agent::Experience* batch[] = {&e};
  auto copy = m;
  CHECK(trainer.train_on(copy, batch).reward_mse == 0.0);
}

TEST_CASE("world model training only accepts real experience") {
  auto m = WorldModel::zeros({});
  WorldTrainer trainer;
  Rng rng(9);
  agent::ReplayBuffer sim(10, agent::ExperienceSource::kSimulated);
  CHECK_THROWS_AS(trainer.step(m, sim, rng), ContractError);
  agent::ReplayBuffer real(10, agent::ExperienceSource::kReal);
  CHECK(trainer.step(m, real, rng).status == agent::TrainStatus::kEmpty);
  auto e = transition(rng, 0, 0, -1, false);
  e.source = agent::ExperienceSource::kSimulated;
  const agent::Experience* batch[] = {&e};
  CHECK_THROWS_AS(trainer.train_on(m, batch), ContractError);
}

TEST_CASE("trained model reproduces a deterministic single-goal trace set") {
  const auto& goal = corpus().goals()[200];
  domain::UserSimulator sim(kb());
  agent::ReplayBuffer real(2000, agent::ExperienceSource::kReal);
  Rng policy_rng(10);
  std::uniform_int_distribution<int> coin(0, 3);
  // Rule-agent traces with occasional scripted detours so the set is not a single path.
  for (int d = 0; d < 20; ++d) {
    const auto rec = agent::run_dialogue(
        [&](const domain::DialogueState& s, std::span<const double>) {
          if (s.turn < 3 && coin(policy_rng) == 0) {
            return domain::agent_action_index(domain::AgentActionKind::kRequest, domain::kGoalSlots[s.turn]);
          }
          return agent::rule_agent_action(s);
        },
        sim, kb(), goal, static_cast<std::uint64_t>(d + 1), agent::ExperienceSource::kReal);
    for (const auto& e : rec.transitions) real.push(e);
  }
  Rng rng(11);
  auto m = WorldModel::random({}, rng);
  WorldTrainer trainer;
  for (int i = 0; i < 3000; ++i) trainer.step(m, real, rng);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < real.size(); ++i) {
    const auto& e = real[i];
    const auto act = domain::realize_agent_action(e.action, domain::DialogueState{}, kb());
    agree += world_sample_response(m, e.state, e.action, act, goal, rng).user_template == e.user_act;
  }
  CHECK(static_cast<double>(agree) / real.size() >= 0.95);
}

TEST_CASE("world model checkpoint round-trip") {
  Rng rng(12);
  const auto m = WorldModel::random({}, rng);
  const auto path = (std::filesystem::temp_directory_path() / "sddq_wm_test.json").string();
  m.save(path);
  const auto back = WorldModel::load(path);
  const auto s = random_state(rng);
  const auto a = m.forward(s, 4), b = back.forward(s, 4);
  CHECK(a.user_act_probs == b.user_act_probs);
  CHECK(a.reward == b.reward);
  CHECK(a.terminal == b.terminal);
  std::filesystem::remove(path);
}
