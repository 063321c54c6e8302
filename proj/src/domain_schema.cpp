#include <algorithm>
#include <cctype>

#include "sddq/domain.hpp"

namespace sddq::domain {

namespace {

constexpr std::array<std::string_view, kIntentCount> kIntentNames = {
    "request", "inform",  "deny",     "confirm_question", "confirm_answer", "greeting",
    "closing", "not_sure", "multiple_choice", "thanks",   "welcome",
};

constexpr std::array<std::string_view, kSlotCount> kSlotNames = {
    "city",     "closing",     "date",       "distanceconstraints", "greeting", "moviename",
    "numberofpeople", "price", "starttime",  "state",               "taskcomplete", "theater",
    "theater_chain",  "ticket", "video_format", "zip",
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_token(std::string_view s) {
  if (s.empty()) return false;
  return std::none_of(s.begin(), s.end(), [](char c) {
    return c == '(' || c == ')' || c == ',' || c == '=' || std::isspace(static_cast<unsigned char>(c));
  });
}

}  // namespace

std::string_view intent_name(Intent intent) { return kIntentNames[static_cast<std::size_t>(intent)]; }

std::optional<Intent> parse_intent(std::string_view name) {
  for (std::size_t i = 0; i < kIntentCount; ++i) {
    if (kIntentNames[i] == name) return static_cast<Intent>(i);
  }
  return std::nullopt;
}

std::string_view slot_name(Slot slot) { return kSlotNames[static_cast<std::size_t>(slot)]; }

std::optional<Slot> parse_slot(std::string_view name) {
  for (std::size_t i = 0; i < kSlotCount; ++i) {
    if (kSlotNames[i] == name) return static_cast<Slot>(i);
  }
  return std::nullopt;
}

std::string DialogueAct::to_string() const {
  std::string out(intent_name(intent));
  out += '(';
  bool first = true;
  for (const auto& [slot, value] : slots) {
    if (!first) out += ", ";
    first = false;
    out += slot_name(slot);
    if (value != kUnknown) {
      out += '=';
      out += value;
    }
  }
  out += ')';
  return out;
}

std::optional<DialogueAct> parse_act(std::string_view text, std::string* error) {
  auto fail = [&](std::string message) -> std::optional<DialogueAct> {
    if (error) *error = std::move(message);
    return std::nullopt;
  };
  text = trim(text);
  const auto open = text.find('(');
  const std::string_view head = trim(text.substr(0, open));
  const auto intent = parse_intent(head);
  if (!intent) return fail("unknown intent '" + std::string(head) + "'");
  DialogueAct act{*intent, {}};
  if (open == std::string_view::npos) return act;
  if (text.back() != ')') return fail("missing closing parenthesis");
  std::string_view body = text.substr(open + 1, text.size() - open - 2);
  if (trim(body).empty()) return act;
  while (true) {
    const auto comma = body.find(',');
    const std::string_view item = trim(body.substr(0, comma));
    const auto eq = item.find('=');
    const std::string_view key = trim(item.substr(0, eq));
    const auto slot = parse_slot(key);
    if (!slot) return fail("unknown slot '" + std::string(key) + "'");
    std::string value(kUnknown);
    if (eq != std::string_view::npos) {
      const std::string_view v = trim(item.substr(eq + 1));
      if (!valid_token(v)) return fail("bad value for slot '" + std::string(key) + "'");
      value = std::string(v);
    }
    if (act.slots.count(*slot)) return fail("slot '" + std::string(key) + "' given twice");
    act.slots.emplace(*slot, std::move(value));
    if (comma == std::string_view::npos) break;
    body.remove_prefix(comma + 1);
  }
  return act;
}

void validate_act(const DialogueAct& act) {
  const bool any_unknown = std::any_of(act.slots.begin(), act.slots.end(),
                                       [](const auto& kv) { return kv.second == kUnknown; });
  if (act.intent == Intent::kRequest && !any_unknown) {
    throw ProtocolError("request act must carry at least one UNKNOWN slot: " + act.to_string());
  }
  if (act.intent == Intent::kInform) {
    if (act.slots.empty()) throw ProtocolError("inform act without slots");
    if (any_unknown) throw ProtocolError("inform act with UNKNOWN value: " + act.to_string());
  }
}

int category_of(const SlotValues& constraints) {
  int mask = 0;
  for (std::size_t bit = 0; bit < kOptionalConstraintSlots.size(); ++bit) {
    if (constraints.count(kOptionalConstraintSlots[bit])) mask |= 1 << bit;
  }
  return mask;
}

std::array<bool, 7> optional_slots_of(int category) {
  std::array<bool, 7> present{};
  for (std::size_t bit = 0; bit < present.size(); ++bit) present[bit] = (category >> bit) & 1;
  return present;
}

double compute_reward(RewardEvent event, int max_turns) {
  switch (event) {
    case RewardEvent::kNonterminalTurn: return -1.0;
    case RewardEvent::kSuccess: return 2.0 * max_turns;
    case RewardEvent::kFailure: return -static_cast<double>(max_turns);
  }
  return 0.0;
}

// ---- agent actions ---------------------------------------------------------

namespace {

std::vector<AgentActionTemplate> build_agent_actions() {
  std::vector<AgentActionTemplate> out;
  out.push_back({AgentActionKind::kGreeting, Slot::kGreeting});
  for (Slot s : kGoalSlots) out.push_back({AgentActionKind::kRequest, s});
  for (Slot s : kGoalSlots) out.push_back({AgentActionKind::kInform, s});
  out.push_back({AgentActionKind::kBookTicket, Slot::kTicket});
  out.push_back({AgentActionKind::kTaskComplete, Slot::kTaskComplete});
  out.push_back({AgentActionKind::kClosing, Slot::kClosing});
  return out;
}

const std::vector<AgentActionTemplate>& agent_action_table() {
  static const std::vector<AgentActionTemplate> table = build_agent_actions();
  return table;
}

std::vector<UserActTemplate> build_user_acts() {
  std::vector<UserActTemplate> out;
  out.push_back({UserActKind::kOpening, Slot::kTicket});
  for (Slot s : kGoalSlots) out.push_back({UserActKind::kInform, s});
  for (Slot s : kGoalSlots) out.push_back({UserActKind::kDeny, s});
  out.push_back({UserActKind::kNotSure, Slot::kTicket});
  out.push_back({UserActKind::kConfirmAnswer, Slot::kTicket});
  out.push_back({UserActKind::kThanks, Slot::kTicket});
  out.push_back({UserActKind::kClosing, Slot::kClosing});
  return out;
}

const std::vector<UserActTemplate>& user_act_table() {
  static const std::vector<UserActTemplate> table = build_user_acts();
  return table;
}

std::size_t goal_slot_position(Slot slot) {
  const auto it = std::find(kGoalSlots.begin(), kGoalSlots.end(), slot);
  if (it == kGoalSlots.end()) throw ProtocolError("slot '" + std::string(slot_name(slot)) + "' is not a goal slot");
  return static_cast<std::size_t>(it - kGoalSlots.begin());
}

}  // namespace

std::string AgentActionTemplate::name() const {
  switch (kind) {
    case AgentActionKind::kGreeting: return "greeting";
    case AgentActionKind::kRequest: return "request(" + std::string(slot_name(slot)) + ")";
    case AgentActionKind::kInform: return "inform(" + std::string(slot_name(slot)) + ")";
    case AgentActionKind::kBookTicket: return "inform(ticket)";
    case AgentActionKind::kTaskComplete: return "inform(taskcomplete)";
    case AgentActionKind::kClosing: return "closing";
  }
  return "?";
}

std::span<const AgentActionTemplate> agent_actions() { return agent_action_table(); }

std::size_t agent_action_index(AgentActionKind kind, Slot slot) {
  switch (kind) {
    case AgentActionKind::kGreeting: return 0;
    case AgentActionKind::kRequest: return 1 + goal_slot_position(slot);
    case AgentActionKind::kInform: return 1 + kGoalSlots.size() + goal_slot_position(slot);
    case AgentActionKind::kBookTicket: return 1 + 2 * kGoalSlots.size();
    case AgentActionKind::kTaskComplete: return 2 + 2 * kGoalSlots.size();
    case AgentActionKind::kClosing: return 3 + 2 * kGoalSlots.size();
  }
  return 0;
}

bool is_terminal_agent_action(std::size_t index) {
  const auto kind = agent_action_table().at(index).kind;
  return kind == AgentActionKind::kTaskComplete || kind == AgentActionKind::kClosing;
}

DialogueAct realize_agent_action(std::size_t index, const DialogueState& state,
                                 const KnowledgeBase& kb) {
  const auto& tpl = agent_action_table().at(index);
  switch (tpl.kind) {
    case AgentActionKind::kGreeting:
      return {Intent::kGreeting, {}};
    case AgentActionKind::kRequest:
      return {Intent::kRequest, {{tpl.slot, std::string(kUnknown)}}};
    case AgentActionKind::kInform: {
      if (auto it = state.agreed.find(tpl.slot); it != state.agreed.end()) {
        return {Intent::kInform, {{tpl.slot, it->second}}};
      }
      if (auto row = kb.first_consistent(state.agreed)) {
        return {Intent::kInform, {{tpl.slot, kb.rows()[*row].values.at(tpl.slot)}}};
      }
      return {Intent::kInform, {{tpl.slot, kb.vocabulary(tpl.slot).front()}}};
    }
    case AgentActionKind::kBookTicket: {
      if (auto row = kb.first_consistent(state.agreed)) {
        return {Intent::kInform, {{Slot::kTicket, KnowledgeBase::ticket_value(kb.rows()[*row])}}};
      }
      return {Intent::kInform, {{Slot::kTicket, "none"}}};
    }
    case AgentActionKind::kTaskComplete:
      return {Intent::kInform, {{Slot::kTaskComplete, "done"}}};
    case AgentActionKind::kClosing:
      return {Intent::kClosing, {}};
  }
  return {};
}

std::span<const UserActTemplate> user_act_templates() { return user_act_table(); }

std::size_t classify_user_act(const DialogueAct& act) {
  const std::size_t n = kGoalSlots.size();
  switch (act.intent) {
    case Intent::kRequest:
      if (act.slots.count(Slot::kTicket) && act.slots.at(Slot::kTicket) == kUnknown) return 0;
      break;
    case Intent::kInform:
      for (const auto& [slot, value] : act.slots) {
        if (value != kUnknown) return 1 + goal_slot_position(slot);
      }
      break;
    case Intent::kDeny:
      for (const auto& [slot, value] : act.slots) {
        if (value != kUnknown) return 1 + n + goal_slot_position(slot);
      }
      break;
    case Intent::kNotSure: return 1 + 2 * n;
    case Intent::kConfirmAnswer: return 2 + 2 * n;
    case Intent::kThanks: return 3 + 2 * n;
    case Intent::kClosing: return 4 + 2 * n;
    default:
      break;
  }
  throw ProtocolError("user act outside the simulator vocabulary: " + act.to_string());
}

DialogueAct opening_act(const UserGoal& goal) {
  DialogueAct act{Intent::kRequest, {}};
  for (Slot s : goal.requests) act.slots[s] = std::string(kUnknown);
  act.slots[Slot::kMovieName] = goal.constraints.at(Slot::kMovieName);
  return act;
}

DialogueAct ground_user_act(std::size_t template_index, const UserGoal& goal,
                            const DialogueAct& agent_act) {
  const auto& tpl = user_act_table().at(template_index);
  auto not_sure = [&]() {
    DialogueAct act{Intent::kNotSure, {}};
    if (agent_act.intent == Intent::kRequest) {
      for (const auto& [slot, value] : agent_act.slots) {
        if (value == kUnknown) {
          act.slots[slot] = std::string(kUnknown);
          break;
        }
      }
    }
    return act;
  };
  switch (tpl.kind) {
    case UserActKind::kOpening:
      return opening_act(goal);
    case UserActKind::kInform:
    case UserActKind::kDeny: {
      auto it = goal.constraints.find(tpl.slot);
      if (it == goal.constraints.end()) return not_sure();
      return {tpl.kind == UserActKind::kInform ? Intent::kInform : Intent::kDeny,
              {{tpl.slot, it->second}}};
    }
    case UserActKind::kNotSure:
      return not_sure();
    case UserActKind::kConfirmAnswer: {
      DialogueAct act{Intent::kConfirmAnswer, {}};
      if (agent_act.intent == Intent::kInform) act.slots = agent_act.slots;
      return act;
    }
    case UserActKind::kThanks:
      return {Intent::kThanks, {}};
    case UserActKind::kClosing:
      return {Intent::kClosing, {}};
  }
  return {};
}

}  // namespace sddq::domain
