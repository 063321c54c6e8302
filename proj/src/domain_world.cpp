#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "sddq/domain.hpp"

namespace sddq::domain {

using nlohmann::json;

namespace {

const std::map<Slot, std::vector<std::string>>& default_vocabulary() {
  static const std::map<Slot, std::vector<std::string>> vocab = {
      {Slot::kMovieName,
       {"zootopia", "deadpool", "the_witch", "risen", "london_has_fallen", "kung_fu_panda_3",
        "room", "race"}},
      {Slot::kCity, {"seattle", "portland", "boston", "chicago", "miami"}},
      {Slot::kDate, {"tomorrow", "friday", "saturday", "sunday"}},
      {Slot::kTheater,
       {"regal_meridian_16", "amc_pacific_place_11", "cinemark_lincoln_square", "carmike_12",
        "big_picture", "ark_lodge"}},
      {Slot::kNumberOfPeople, {"1", "2", "3", "4"}},
      {Slot::kStartTime, {"10:00am", "1:30pm", "4:30pm", "7:00pm", "9:10pm"}},
      {Slot::kVideoFormat, {"2d", "3d", "imax"}},
      {Slot::kTheaterChain, {"amc", "regal", "cinemark", "century"}},
  };
  return vocab;
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return in;
}

void write_json(const std::string& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << doc.dump(1) << '\n';
}

Slot slot_from_json(const std::string& name, const std::string& where) {
  auto slot = parse_slot(name);
  if (!slot) throw ConfigError(where + ": unknown slot '" + name + "'");
  return *slot;
}

}  // namespace

// ---- knowledge base --------------------------------------------------------

KnowledgeBase::KnowledgeBase(std::map<Slot, std::vector<std::string>> vocabulary,
                             std::vector<KbRow> rows)
    : vocabulary_(std::move(vocabulary)), rows_(std::move(rows)) {
  for (const auto& row : rows_) {
    for (const auto& [slot, values] : vocabulary_) {
      auto it = row.values.find(slot);
      if (it == row.values.end()) {
        throw ConfigError("kb row " + std::to_string(row.id) + " lacks slot " +
                          std::string(slot_name(slot)));
      }
      if (std::find(values.begin(), values.end(), it->second) == values.end()) {
        throw ConfigError("kb row " + std::to_string(row.id) + ": value '" + it->second +
                          "' not in vocabulary of " + std::string(slot_name(slot)));
      }
    }
  }
}

KnowledgeBase KnowledgeBase::generate(std::uint64_t seed, std::size_t rows) {
  Rng rng(seed);
  const auto& vocab = default_vocabulary();
  std::vector<KbRow> out;
  out.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    KbRow row{static_cast<int>(i), {}};
    for (const auto& [slot, values] : vocab) {
      std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
      row.values[slot] = values[pick(rng)];
    }
    out.push_back(std::move(row));
  }
  return KnowledgeBase(vocab, std::move(out));
}

const std::vector<std::string>& KnowledgeBase::vocabulary(Slot slot) const {
  auto it = vocabulary_.find(slot);
  if (it == vocabulary_.end()) throw ConfigError("kb has no column " + std::string(slot_name(slot)));
  return it->second;
}

std::optional<std::size_t> KnowledgeBase::first_consistent(const SlotValues& constraints) const {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    bool ok = true;
    for (const auto& [slot, value] : constraints) {
      auto it = rows_[i].values.find(slot);
      if (it != rows_[i].values.end() && it->second != value) {
        ok = false;
        break;
      }
    }
    if (ok) return i;
  }
  return std::nullopt;
}

std::string KnowledgeBase::ticket_value(const KbRow& row) { return "row" + std::to_string(row.id); }

const KbRow* KnowledgeBase::find_row(std::string_view ticket_value) const {
  if (ticket_value.substr(0, 3) != "row") return nullptr;
  for (const auto& row : rows_) {
    if (KnowledgeBase::ticket_value(row) == ticket_value) return &row;
  }
  return nullptr;
}

void KnowledgeBase::save(const std::string& path) const {
  json doc;
  doc["format"] = "sddq-kb";
  doc["version"] = 1;
  json vocab = json::object();
  for (const auto& [slot, values] : vocabulary_) vocab[std::string(slot_name(slot))] = values;
  doc["vocabulary"] = vocab;
  json rows = json::array();
  for (const auto& row : rows_) {
    json values = json::object();
    for (const auto& [slot, value] : row.values) values[std::string(slot_name(slot))] = value;
    rows.push_back({{"id", row.id}, {"values", values}});
  }
  doc["rows"] = rows;
  write_json(path, doc);
}

KnowledgeBase KnowledgeBase::load(const std::string& path) {
  auto in = open_input(path);
  json doc;
  try {
    in >> doc;
    if (doc.value("format", "") != "sddq-kb" || doc.value("version", 0) != 1) {
      throw ConfigError(path + ": not an sddq-kb v1 file");
    }
    std::map<Slot, std::vector<std::string>> vocab;
    for (const auto& [name, values] : doc.at("vocabulary").items()) {
      vocab[slot_from_json(name, path)] = values.get<std::vector<std::string>>();
    }
    std::vector<KbRow> rows;
    for (const auto& r : doc.at("rows")) {
      KbRow row{r.at("id").get<int>(), {}};
      for (const auto& [name, value] : r.at("values").items()) {
        row.values[slot_from_json(name, path)] = value.get<std::string>();
      }
      rows.push_back(std::move(row));
    }
    return KnowledgeBase(std::move(vocab), std::move(rows));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---- goal corpus -----------------------------------------------------------

GoalCorpus::GoalCorpus(std::vector<UserGoal> goals) : goals_(std::move(goals)) {
  for (std::size_t i = 0; i < goals_.size(); ++i) {
    const auto& g = goals_[i];
    if (g.category < 0 || g.category >= static_cast<int>(kCategoryCount) ||
        g.category != category_of(g.constraints)) {
      throw ConfigError("goal " + std::to_string(g.id) + ": category_id does not match its constraints");
    }
    if (!g.constraints.count(Slot::kMovieName) || !g.requests.count(Slot::kTicket)) {
      throw ConfigError("goal " + std::to_string(g.id) + ": moviename constraint and ticket request are mandatory");
    }
    buckets_[static_cast<std::size_t>(g.category)].push_back(i);
  }
}

void GoalCorpus::save(const std::string& path) const {
  json doc;
  doc["format"] = "sddq-goals";
  doc["version"] = 1;
  json goals = json::array();
  for (const auto& g : goals_) {
    json constraints = json::object();
    for (const auto& [slot, value] : g.constraints) constraints[std::string(slot_name(slot))] = value;
    json requests = json::array();
    for (Slot s : g.requests) requests.push_back(std::string(slot_name(s)));
    goals.push_back({{"id", g.id}, {"category_id", g.category}, {"constraints", constraints},
                     {"requests", requests}});
  }
  doc["goals"] = goals;
  write_json(path, doc);
}

GoalCorpus GoalCorpus::load(const std::string& path, const KnowledgeBase& kb) {
  auto in = open_input(path);
  json doc;
  try {
    in >> doc;
    if (doc.value("format", "") != "sddq-goals" || doc.value("version", 0) != 1) {
      throw ConfigError(path + ": not an sddq-goals v1 file");
    }
    std::vector<UserGoal> goals;
    for (const auto& g : doc.at("goals")) {
      UserGoal goal;
      goal.id = g.at("id").get<int>();
      goal.category = g.at("category_id").get<int>();
      for (const auto& [name, value] : g.at("constraints").items()) {
        goal.constraints[slot_from_json(name, path)] = value.get<std::string>();
      }
      for (const auto& name : g.at("requests")) goal.requests.insert(slot_from_json(name.get<std::string>(), path));
      if (!kb.first_consistent(goal.constraints)) {
        throw ConfigError(path + ": goal " + std::to_string(goal.id) + " matches no kb row");
      }
      goals.push_back(std::move(goal));
    }
    return GoalCorpus(std::move(goals));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

GoalCorpus generate_goal_corpus(const KnowledgeBase& kb, std::uint64_t seed,
                                const GoalCorpusOptions& options) {
  if (options.size < kCategoryCount) throw ConfigError("goal corpus size must be >= 128");
  if (kb.rows().empty()) throw ConfigError("goal corpus needs a non-empty knowledge base");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_row(0, kb.rows().size() - 1);
  std::uniform_int_distribution<int> pick_category(0, static_cast<int>(kCategoryCount) - 1);
  std::bernoulli_distribution extra(options.extra_request_probability);
  constexpr int kMaxAttempts = 100;

  std::vector<UserGoal> goals;
  goals.reserve(options.size);
  for (std::size_t i = 0; i < options.size; ++i) {
    const int category = (options.stratified || i < kCategoryCount)
                             ? static_cast<int>(i % kCategoryCount)
                             : pick_category(rng);
    const auto present = optional_slots_of(category);
    UserGoal goal;
    bool satisfiable = false;
    for (int attempt = 0; attempt < kMaxAttempts && !satisfiable; ++attempt) {
      const auto& row = kb.rows()[pick_row(rng)];
      goal = UserGoal{static_cast<int>(i), category, {}, {Slot::kTicket}};
      goal.constraints[Slot::kMovieName] = row.values.at(Slot::kMovieName);
      for (std::size_t bit = 0; bit < present.size(); ++bit) {
        if (present[bit]) {
          const Slot s = kOptionalConstraintSlots[bit];
          goal.constraints[s] = row.values.at(s);
        }
      }
      satisfiable = kb.first_consistent(goal.constraints).has_value();
    }
    if (!satisfiable) throw ConfigError("goal corpus: no kb row satisfies a generated goal");
    for (Slot s : kExtraRequestSlots) {
      if (!goal.constraints.count(s) && extra(rng)) goal.requests.insert(s);
    }
    goals.push_back(std::move(goal));
  }
  return GoalCorpus(std::move(goals));
}

// ---- state tracking --------------------------------------------------------

std::vector<double> encode_state(const DialogueState& state, int max_turns) {
  std::vector<double> v(kStateWidth, 0.0);
  std::size_t offset = 0;
  v[offset + static_cast<std::size_t>(state.last_user.intent)] = 1.0;
  offset += kIntentCount;
  if (state.last_agent) v[offset + static_cast<std::size_t>(state.last_agent->intent)] = 1.0;
  offset += kIntentCount;
  for (const auto* bits : {&state.user_informed, &state.user_requested, &state.agent_informed,
                           &state.agent_requested}) {
    for (std::size_t s = 0; s < kSlotCount; ++s) v[offset + s] = (*bits)[s] ? 1.0 : 0.0;
    offset += kSlotCount;
  }
  v[offset] = static_cast<double>(state.turn) / static_cast<double>(max_turns);
  return v;
}

void StateTracker::observe_agent(const DialogueAct& act) {
  state_.turn += 1;
  state_.last_agent = act;
  for (const auto& [slot, value] : act.slots) {
    const auto bit = static_cast<std::size_t>(slot);
    if (act.intent == Intent::kRequest) {
      if (value == kUnknown) state_.agent_requested.set(bit);
    } else if (act.intent == Intent::kInform) {
      if (slot == Slot::kTicket) {
        if (const KbRow* row = kb_->find_row(value)) {
          state_.ticket = row->values;
          state_.agent_informed.set(bit);
        }
      } else {
        state_.agent_informed.set(bit);
        if (slot != Slot::kTaskComplete) state_.agreed[slot] = value;
      }
    }
  }
}

void StateTracker::observe_user(const DialogueAct& act) {
  state_.last_user = act;
  for (const auto& [slot, value] : act.slots) {
    const auto bit = static_cast<std::size_t>(slot);
    if (value == kUnknown) {
      if (act.intent == Intent::kRequest) state_.user_requested.set(bit);
      continue;
    }
    switch (act.intent) {
      case Intent::kRequest:
      case Intent::kInform:
      case Intent::kDeny:
        state_.user_informed.set(bit);
        state_.agreed[slot] = value;
        break;
      case Intent::kConfirmAnswer:
        state_.agreed[slot] = value;
        break;
      default:
        break;
    }
  }
}

bool check_success(const DialogueState& state, const UserGoal& goal) {
  if (!state.ticket) return false;
  for (const auto& [slot, value] : goal.constraints) {
    auto booked = state.ticket->find(slot);
    if (booked == state.ticket->end() || booked->second != value) return false;
    auto agreed = state.agreed.find(slot);
    if (agreed != state.agreed.end() && agreed->second != value) return false;
  }
  for (Slot s : goal.requests) {
    if (!state.agent_informed[static_cast<std::size_t>(s)]) return false;
  }
  return true;
}

// ---- user simulator --------------------------------------------------------

UserSimulator::UserSimulator(const KnowledgeBase& kb, int max_turns)
    : kb_(&kb), max_turns_(max_turns), tracker_(kb) {
  if (max_turns < 1) throw ConfigError("max_turns must be >= 1");
}

DialogueAct UserSimulator::reset(const UserGoal& goal) {
  goal_ = goal;
  tracker_.reset();
  finished_ = false;
  total_reward_ = 0.0;
  DialogueAct opening = opening_act(goal_);
  tracker_.observe_user(opening);
  return opening;
}

DialogueAct UserSimulator::respond(const DialogueAct& agent_act) const {
  switch (agent_act.intent) {
    case Intent::kGreeting:
      return opening_act(goal_);
    case Intent::kRequest: {
      for (const auto& [slot, value] : agent_act.slots) {
        if (value != kUnknown) continue;
        if (auto it = goal_.constraints.find(slot); it != goal_.constraints.end()) {
          return {Intent::kInform, {{slot, it->second}}};
        }
        return {Intent::kNotSure, {{slot, std::string(kUnknown)}}};
      }
      break;
    }
    case Intent::kInform: {
      const auto& [slot, value] = *agent_act.slots.begin();
      if (agent_act.slots.count(Slot::kTicket)) {
        if (!kb_->find_row(agent_act.slots.at(Slot::kTicket))) return {Intent::kNotSure, {}};
        return {Intent::kThanks, {}};
      }
      if (auto it = goal_.constraints.find(slot); it != goal_.constraints.end()) {
        if (it->second != value) return {Intent::kDeny, {{slot, it->second}}};
        return {Intent::kConfirmAnswer, {{slot, value}}};
      }
      if (goal_.requests.count(slot)) return {Intent::kThanks, {}};
      return {Intent::kConfirmAnswer, {{slot, value}}};
    }
    default:
      break;
  }
  throw ProtocolError("agent act outside the simulator protocol: " + agent_act.to_string());
}

SimulatorStep UserSimulator::step(const DialogueAct& agent_act) {
  if (finished_) throw ContractError("simulator step after the episode finished");
  validate_act(agent_act);
  switch (agent_act.intent) {
    case Intent::kGreeting:
    case Intent::kRequest:
    case Intent::kInform:
    case Intent::kClosing:
      break;
    default:
      throw ProtocolError("agent cannot use intent '" + std::string(intent_name(agent_act.intent)) + "'");
  }
  tracker_.observe_agent(agent_act);
  const int turn = tracker_.state().turn;
  const bool agent_ends = agent_act.intent == Intent::kClosing ||
                          agent_act.slots.count(Slot::kTaskComplete) != 0;

  SimulatorStep out;
  if (agent_ends) {
    const bool success = check_success(tracker_.state(), goal_);
    out.user_act = {Intent::kClosing, {}};
    out.done = true;
    out.reward = compute_reward(success ? RewardEvent::kSuccess : RewardEvent::kFailure, max_turns_);
    out.outcome = EpisodeOutcome{success ? EpisodeStatus::kSuccess : EpisodeStatus::kFailure, turn,
                                 total_reward_ + out.reward};
  } else if (turn >= max_turns_) {
    out.user_act = {Intent::kClosing, {}};
    out.done = true;
    out.reward = compute_reward(RewardEvent::kFailure, max_turns_);
    out.outcome = EpisodeOutcome{EpisodeStatus::kFailure, turn, total_reward_ + out.reward};
  } else {
    out.user_act = respond(agent_act);
    out.reward = compute_reward(RewardEvent::kNonterminalTurn, max_turns_);
  }
  tracker_.observe_user(out.user_act);
  out.user_template = classify_user_act(out.user_act);
  total_reward_ += out.reward;
  finished_ = out.done;
  return out;
}

}  // namespace sddq::domain
