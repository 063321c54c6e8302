#pragma once

// Movie-ticket booking world at the dialogue-act level: schema, acts,
// goals, a synthetic knowledge base, the state tracker, reward scheme and
// the rule-based user simulator standing in for real users.

#include <array>
#include <bitset>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sddq/nn.hpp"

namespace sddq::domain {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Intent : std::uint8_t {
  kRequest,
  kInform,
  kDeny,
  kConfirmQuestion,
  kConfirmAnswer,
  kGreeting,
  kClosing,
  kNotSure,
  kMultipleChoice,
  kThanks,
  kWelcome,
};
inline constexpr std::size_t kIntentCount = 11;

enum class Slot : std::uint8_t {
  kCity,
  kClosing,
  kDate,
  kDistanceConstraints,
  kGreeting,
  kMovieName,
  kNumberOfPeople,
  kPrice,
  kStartTime,
  kState,
  kTaskComplete,
  kTheater,
  kTheaterChain,
  kTicket,
  kVideoFormat,
  kZip,
};
inline constexpr std::size_t kSlotCount = 16;

std::string_view intent_name(Intent intent);
std::optional<Intent> parse_intent(std::string_view name);
std::string_view slot_name(Slot slot);
std::optional<Slot> parse_slot(std::string_view name);

// Bit i of a goal category marks the presence of kOptionalConstraintSlots[i].
inline constexpr std::array<Slot, 7> kOptionalConstraintSlots = {
    Slot::kCity,      Slot::kDate,        Slot::kTheater,      Slot::kNumberOfPeople,
    Slot::kStartTime, Slot::kVideoFormat, Slot::kTheaterChain,
};
// moviename plus the optional constraint slots; also the KB columns.
inline constexpr std::array<Slot, 8> kGoalSlots = {
    Slot::kMovieName, Slot::kCity,      Slot::kDate,        Slot::kTheater,
    Slot::kNumberOfPeople, Slot::kStartTime, Slot::kVideoFormat, Slot::kTheaterChain,
};
// Non-constraint slots a goal may additionally ask the agent to fill.
inline constexpr std::array<Slot, 2> kExtraRequestSlots = {Slot::kTheater, Slot::kStartTime};
inline constexpr std::size_t kCategoryCount = 128;
inline constexpr int kDefaultMaxTurns = 40;
inline constexpr std::string_view kUnknown = "UNKNOWN";

using SlotValues = std::map<Slot, std::string>;

struct DialogueAct {
  Intent intent = Intent::kGreeting;
  SlotValues slots;

  bool operator==(const DialogueAct&) const = default;
  // intent(slot=value, slot) with UNKNOWN values printed as a bare slot.
  std::string to_string() const;
};

// Parses the `intent(slot=value, slot, ...)` grammar. A bare slot means
// UNKNOWN. Returns std::nullopt and fills `error` on malformed input.
std::optional<DialogueAct> parse_act(std::string_view text, std::string* error = nullptr);

// Throws ProtocolError when a request act carries no UNKNOWN slot or an
// inform act carries an UNKNOWN value.
void validate_act(const DialogueAct& act);

int category_of(const SlotValues& constraints);
std::array<bool, 7> optional_slots_of(int category);

struct UserGoal {
  int id = 0;
  int category = 0;
  SlotValues constraints;
  std::set<Slot> requests;

  bool operator==(const UserGoal&) const = default;
};

struct KbRow {
  int id = 0;
  SlotValues values;
};

class KnowledgeBase {
 public:
  KnowledgeBase() = default;
  KnowledgeBase(std::map<Slot, std::vector<std::string>> vocabulary, std::vector<KbRow> rows);

  static KnowledgeBase generate(std::uint64_t seed, std::size_t rows = 100);

  const std::vector<KbRow>& rows() const { return rows_; }
  const std::vector<std::string>& vocabulary(Slot slot) const;
  bool has_column(Slot slot) const { return vocabulary_.count(slot) != 0; }

  // First row (in row order) agreeing with every constraint on a KB column.
  // Constraints on non-column slots are ignored.
  std::optional<std::size_t> first_consistent(const SlotValues& constraints) const;
  const KbRow* find_row(std::string_view ticket_value) const;
  static std::string ticket_value(const KbRow& row);

  void save(const std::string& path) const;
  static KnowledgeBase load(const std::string& path);

 private:
  std::map<Slot, std::vector<std::string>> vocabulary_;
  std::vector<KbRow> rows_;
};

struct GoalCorpusOptions {
  std::size_t size = 1024;
  bool stratified = true;
  double extra_request_probability = 0.25;
};

class GoalCorpus {
 public:
  GoalCorpus() = default;
  explicit GoalCorpus(std::vector<UserGoal> goals);

  const std::vector<UserGoal>& goals() const { return goals_; }
  const std::vector<std::size_t>& bucket(int category) const { return buckets_.at(static_cast<std::size_t>(category)); }

  void save(const std::string& path) const;
  static GoalCorpus load(const std::string& path, const KnowledgeBase& kb);

 private:
  std::vector<UserGoal> goals_;
  std::array<std::vector<std::size_t>, kCategoryCount> buckets_;
};

// Deterministic in `seed`. Requires size >= 128; every category appears.
GoalCorpus generate_goal_corpus(const KnowledgeBase& kb, std::uint64_t seed,
                                const GoalCorpusOptions& options = {});

struct DialogueState {
  int turn = 0;
  DialogueAct last_user{Intent::kGreeting, {}};
  std::optional<DialogueAct> last_agent;
  std::bitset<kSlotCount> user_informed;
  std::bitset<kSlotCount> user_requested;
  std::bitset<kSlotCount> agent_informed;
  std::bitset<kSlotCount> agent_requested;
  SlotValues agreed;
  std::optional<SlotValues> ticket;  // values of the booked row
};

inline constexpr std::size_t kStateWidth = 2 * kIntentCount + 4 * kSlotCount + 1;

// [user intent | agent intent | user-informed | user-requested |
//  agent-informed | agent-requested | turn / max_turns]
std::vector<double> encode_state(const DialogueState& state, int max_turns = kDefaultMaxTurns);

class StateTracker {
 public:
  explicit StateTracker(const KnowledgeBase& kb) : kb_(&kb) {}

  void reset() { state_ = DialogueState{}; }
  // Agent act opens a new exchange: turn += 1.
  void observe_agent(const DialogueAct& act);
  void observe_user(const DialogueAct& act);

  const DialogueState& state() const { return state_; }

 private:
  const KnowledgeBase* kb_;
  DialogueState state_;
};

// Ticket issued, every constraint matched by the booked row and by any
// value agreed in the dialogue, and every requested slot informed.
bool check_success(const DialogueState& state, const UserGoal& goal);

enum class RewardEvent { kNonterminalTurn, kSuccess, kFailure };

// -1 per non-terminal turn, +2L on success, -L on failure.
double compute_reward(RewardEvent event, int max_turns = kDefaultMaxTurns);

enum class EpisodeStatus { kSuccess, kFailure };

struct EpisodeOutcome {
  EpisodeStatus status = EpisodeStatus::kFailure;
  int turns = 0;
  double reward = 0.0;
};

// ---- agent action templates ------------------------------------------------

enum class AgentActionKind { kGreeting, kRequest, kInform, kBookTicket, kTaskComplete, kClosing };

struct AgentActionTemplate {
  AgentActionKind kind;
  Slot slot;  // meaningful for request/inform
  std::string name() const;
};

// greeting, request(goal slot) x8, inform(goal slot) x8, inform(ticket),
// taskcomplete, closing.
std::span<const AgentActionTemplate> agent_actions();
inline constexpr std::size_t kAgentActionCount = 20;
std::size_t agent_action_index(AgentActionKind kind, Slot slot = Slot::kTicket);

// Inform values come from agreed values, else from the first KB row
// consistent with the agreed values.
DialogueAct realize_agent_action(std::size_t index, const DialogueState& state,
                                 const KnowledgeBase& kb);
bool is_terminal_agent_action(std::size_t index);

// ---- user act templates ----------------------------------------------------

enum class UserActKind { kOpening, kInform, kDeny, kNotSure, kConfirmAnswer, kThanks, kClosing };

struct UserActTemplate {
  UserActKind kind;
  Slot slot;  // meaningful for inform/deny
};

// opening, inform(goal slot) x8, deny(goal slot) x8, not_sure,
// confirm_answer, thanks, closing.
std::span<const UserActTemplate> user_act_templates();
inline constexpr std::size_t kUserActCount = 21;
std::size_t classify_user_act(const DialogueAct& act);

DialogueAct opening_act(const UserGoal& goal);
// Grounds a template with the goal: inform/deny of a slot the goal does not
// constrain becomes not_sure.
DialogueAct ground_user_act(std::size_t template_index, const UserGoal& goal,
                            const DialogueAct& agent_act);

struct SimulatorStep {
  DialogueAct user_act;
  std::size_t user_template = 0;
  double reward = 0.0;
  bool done = false;
  std::optional<EpisodeOutcome> outcome;
};

class UserSimulator {
 public:
  explicit UserSimulator(const KnowledgeBase& kb, int max_turns = kDefaultMaxTurns);

  DialogueAct reset(const UserGoal& goal);
  SimulatorStep step(const DialogueAct& agent_act);

  const UserGoal& goal() const { return goal_; }
  const DialogueState& state() const { return tracker_.state(); }
  int max_turns() const { return max_turns_; }
  bool finished() const { return finished_; }

 private:
  DialogueAct respond(const DialogueAct& agent_act) const;

  const KnowledgeBase* kb_;
  int max_turns_;
  UserGoal goal_;
  StateTracker tracker_;
  bool finished_ = true;
  double total_reward_ = 0.0;
};

}  // namespace sddq::domain
