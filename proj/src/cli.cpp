#include "sddq/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace sddq::cli {

namespace fs = std::filesystem;
using pipeline::EpochMetrics;
using pipeline::RunResult;

std::string default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? env : "runs";
}

// ---- config ----------------------------------------------------------------

json to_json(const RunConfig& config) {
  const auto& e = config.experiment;
  const auto& h = e.hyper;
  json variants = json::array();
  for (const auto& v : e.variants) variants.push_back(v.name());
  return {
      {"variants", variants},
      {"seeds", e.seeds},
      {"epochs", e.epochs},
      {"eval_interval", e.eval_interval},
      {"kb_seed", e.kb_seed},
      {"corpus_seed", e.corpus_seed},
      {"kb_rows", e.kb_rows},
      {"corpus",
       {{"size", e.corpus.size},
        {"stratified", e.corpus.stratified},
        {"extra_request_probability", e.corpus.extra_request_probability}}},
      {"threads", e.threads},
      {"category_table", e.category_table},
      {"output_dir", config.output_dir},
      {"hyper",
       {{"gamma", h.gamma},
        {"learning_rate", h.learning_rate},
        {"rmsprop_decay", h.rmsprop_decay},
        {"rmsprop_epsilon", h.rmsprop_epsilon},
        {"clip_norm", h.clip_norm},
        {"batch_size", h.batch_size},
        {"q_hidden", h.q_hidden},
        {"epsilon", h.epsilon},
        {"max_turns", h.max_turns},
        {"real_buffer", h.real_buffer},
        {"simulated_buffer", h.simulated_buffer},
        {"rbs_dialogues", h.rbs_dialogues},
        {"agent_batches", h.agent_batches},
        {"world_pretrain_batches", h.world_pretrain_batches},
        {"world_batches", h.world_batches},
        {"switcher_batches", h.switcher_batches},
        {"switcher_batch_size", h.switcher_batch_size},
        {"max_planning_dialogues", h.max_planning_dialogues},
        {"validation_dialogues", h.validation_dialogues},
        {"test_dialogues", h.test_dialogues},
        {"threshold",
         {{"lo", h.threshold.lo}, {"hi", h.threshold.hi}, {"anneal_epochs", h.threshold.anneal_epochs}}}}},
  };
}

namespace {

bool non_negative_integer(const json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

// Name of the kind a reference value stands for.
std::string expected_name(const json& j) {
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

std::string type_name(const json& j) {
  if (j.is_number_integer()) return non_negative_integer(j) ? "integer" : "negative integer";
  if (j.is_number()) return "number";
  return j.type_name();
}

bool same_kind(const json& reference, const json& value) {
  if (reference.is_number_unsigned()) return non_negative_integer(value);
  if (reference.is_number_integer()) return value.is_number_integer();
  if (reference.is_number_float()) return value.is_number();
  if (reference.is_boolean()) return value.is_boolean();
  if (reference.is_string()) return value.is_string();
  return false;
}

// Overlays `value` onto `target`, which fixes the accepted keys and types.
void overlay(json& target, const json& value, const std::string& path) {
  if (target.is_object()) {
    if (!value.is_object()) throw ConfigError(path + ": expected an object, got " + type_name(value));
    for (const auto& [key, v] : value.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      if (!target.contains(key)) throw ConfigError("unknown key '" + sub + "'");
      overlay(target[key], v, sub);
    }
    return;
  }
  if (target.is_array()) {
    if (!value.is_array()) throw ConfigError(path + ": expected an array, got " + type_name(value));
    const bool strings = path == "variants";
    for (std::size_t i = 0; i < value.size(); ++i) {
      const auto& item = value[i];
      const bool ok = strings ? item.is_string() : non_negative_integer(item);
      if (!ok) {
        throw ConfigError(path + "[" + std::to_string(i) + "]: expected " +
                          (strings ? "string" : "non-negative integer") + ", got " + type_name(item));
      }
    }
    target = value;
    return;
  }
  if (!same_kind(target, value)) {
    throw ConfigError(path + ": expected " + expected_name(target) + ", got " + type_name(value));
  }
  target = value;
}

template <typename T>
T get_num(const json& j, const char* key) {
  return j.at(key).get<T>();
}

}  // namespace

RunConfig apply_json(const RunConfig& base, const json& overrides) {
  json merged = to_json(base);
  overlay(merged, overrides, "");

  RunConfig out;
  auto& e = out.experiment;
  e.variants.clear();
  const auto& variants = merged.at("variants");
  for (std::size_t i = 0; i < variants.size(); ++i) {
    try {
      e.variants.push_back(pipeline::VariantConfig::parse(variants[i].get<std::string>()));
    } catch (const ConfigError& ex) {
      throw ConfigError("variants[" + std::to_string(i) + "]: " + ex.what());
    }
  }
  e.seeds = merged.at("seeds").get<std::vector<std::uint64_t>>();
  e.epochs = get_num<int>(merged, "epochs");
  e.eval_interval = get_num<int>(merged, "eval_interval");
  e.kb_seed = get_num<std::uint64_t>(merged, "kb_seed");
  e.corpus_seed = get_num<std::uint64_t>(merged, "corpus_seed");
  e.kb_rows = get_num<std::size_t>(merged, "kb_rows");
  const auto& c = merged.at("corpus");
  e.corpus.size = get_num<std::size_t>(c, "size");
  e.corpus.stratified = c.at("stratified").get<bool>();
  e.corpus.extra_request_probability = get_num<double>(c, "extra_request_probability");
  e.threads = get_num<std::size_t>(merged, "threads");
  e.category_table = merged.at("category_table").get<bool>();
  out.output_dir = merged.at("output_dir").get<std::string>();

  const auto& h = merged.at("hyper");
  auto& p = e.hyper;
  p.gamma = get_num<double>(h, "gamma");
  p.learning_rate = get_num<double>(h, "learning_rate");
  p.rmsprop_decay = get_num<double>(h, "rmsprop_decay");
  p.rmsprop_epsilon = get_num<double>(h, "rmsprop_epsilon");
  p.clip_norm = get_num<double>(h, "clip_norm");
  p.batch_size = get_num<std::size_t>(h, "batch_size");
  p.q_hidden = get_num<std::size_t>(h, "q_hidden");
  p.epsilon = get_num<double>(h, "epsilon");
  p.max_turns = get_num<int>(h, "max_turns");
  p.real_buffer = get_num<std::size_t>(h, "real_buffer");
  p.simulated_buffer = get_num<std::size_t>(h, "simulated_buffer");
  p.rbs_dialogues = get_num<std::size_t>(h, "rbs_dialogues");
  p.agent_batches = get_num<std::size_t>(h, "agent_batches");
  p.world_pretrain_batches = get_num<std::size_t>(h, "world_pretrain_batches");
  p.world_batches = get_num<std::size_t>(h, "world_batches");
  p.switcher_batches = get_num<std::size_t>(h, "switcher_batches");
  p.switcher_batch_size = get_num<std::size_t>(h, "switcher_batch_size");
  p.max_planning_dialogues = get_num<std::size_t>(h, "max_planning_dialogues");
  p.validation_dialogues = get_num<std::size_t>(h, "validation_dialogues");
  p.test_dialogues = get_num<std::size_t>(h, "test_dialogues");
  const auto& t = h.at("threshold");
  p.threshold.lo = get_num<double>(t, "lo");
  p.threshold.hi = get_num<double>(t, "hi");
  p.threshold.anneal_epochs = get_num<int>(t, "anneal_epochs");

  if (out.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  e.validate();
  return out;
}

RunConfig parse_config(const std::optional<std::string>& file, const json& flags) {
  RunConfig config;
  config.output_dir = default_output_dir();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot read config file '" + *file + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& ex) {
      throw ConfigError(*file + ": " + ex.what());
    }
    try {
      config = apply_json(config, j);
    } catch (const ConfigError& ex) {
      throw ConfigError(*file + ": " + ex.what());
    }
  }
  return apply_json(config, flags);
}

json parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + text + "'");
  const std::string key = text.substr(0, eq);
  const std::string raw = text.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json out = json::object();
  json* cursor = &out;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*cursor)[part] = value;
      break;
    }
    cursor = &(*cursor)[part];
    start = dot + 1;
  }
  return out;
}

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir + "'");
}

std::ofstream open_out(const std::string& path) {
  std::error_code ec;
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent, ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  return out;
}

}  // namespace

void write_effective_config(const RunConfig& config, const std::string& dir) {
  ensure_dir(dir);
  auto out = open_out((fs::path(dir) / "config.json").string());
  out << to_json(config).dump(2) << "\n";
}

// ---- results -----------------------------------------------------------------

json to_json(const RunResult& run) {
  json epochs = json::array();
  for (const auto& m : run.epochs) {
    epochs.push_back({
        {"epoch", m.epoch},
        {"evaluated", m.evaluated},
        {"success", m.test.success_rate},
        {"reward", m.test.average_reward},
        {"turns", m.test.average_turns},
        {"real_dialogues", m.real_dialogues},
        {"real_dialogues_total", m.real_dialogues_total},
        {"real_experiences", m.real_experiences},
        {"simulated_dialogues", m.simulated_dialogues},
        {"simulated_dialogues_total", m.simulated_dialogues_total},
        {"simulated_experiences", m.simulated_experiences},
        {"updates", m.updates},
        {"validation_dialogues_total", m.validation_dialogues_total},
        {"validation_success", m.validation_success},
        {"tau", m.tau},
        {"switcher_real_score", m.switcher_real_score},
        {"switcher_simulated_score", m.switcher_simulated_score},
        {"planning_gate_exit", m.planning_gate_exit},
        {"agent_loss", m.agent_loss},
        {"world_action_ce", m.world_action_ce},
        {"category_failures", m.category_failures},
        {"category_counts", m.category_counts},
    });
  }
  json categories = json::array();
  for (const auto& c : run.categories) {
    categories.push_back({{"category", c.category}, {"dialogues", c.dialogues}, {"successes", c.successes}});
  }
  return {{"variant", run.variant.name()}, {"seed", run.seed}, {"epochs", epochs}, {"categories", categories}};
}

RunResult run_from_json(const json& j) {
  RunResult r;
  try {
    r.variant = pipeline::VariantConfig::parse(j.at("variant").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("epochs")) {
      EpochMetrics m;
      m.epoch = e.at("epoch").get<int>();
      m.evaluated = e.at("evaluated").get<bool>();
      m.test.success_rate = e.at("success").get<double>();
      m.test.average_reward = e.at("reward").get<double>();
      m.test.average_turns = e.at("turns").get<double>();
      m.real_dialogues = e.at("real_dialogues").get<std::size_t>();
      m.real_dialogues_total = e.at("real_dialogues_total").get<std::size_t>();
      m.real_experiences = e.at("real_experiences").get<std::size_t>();
      m.simulated_dialogues = e.at("simulated_dialogues").get<std::size_t>();
      m.simulated_dialogues_total = e.at("simulated_dialogues_total").get<std::size_t>();
      m.simulated_experiences = e.at("simulated_experiences").get<std::size_t>();
      m.updates = e.at("updates").get<std::size_t>();
      m.validation_dialogues_total = e.at("validation_dialogues_total").get<std::size_t>();
      m.validation_success = e.at("validation_success").get<double>();
      m.tau = e.at("tau").get<double>();
      m.switcher_real_score = e.at("switcher_real_score").get<double>();
      m.switcher_simulated_score = e.at("switcher_simulated_score").get<double>();
      m.planning_gate_exit = e.at("planning_gate_exit").get<bool>();
      m.agent_loss = e.at("agent_loss").get<double>();
      m.world_action_ce = e.at("world_action_ce").get<double>();
      m.category_failures = e.at("category_failures").get<std::vector<int>>();
      m.category_counts = e.at("category_counts").get<std::vector<int>>();
      r.epochs.push_back(std::move(m));
    }
    for (const auto& c : j.at("categories")) {
      r.categories.push_back({c.at("category").get<int>(), c.at("dialogues").get<std::size_t>(),
                              c.at("successes").get<std::size_t>()});
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed run record: ") + ex.what());
  }
  return r;
}

void save_runs(const std::vector<RunResult>& runs, const std::string& path) {
  json all = json::array();
  for (const auto& r : runs) all.push_back(to_json(r));
  auto out = open_out(path);
  out << json{{"format", "sddq-runs"}, {"version", 1}, {"runs", all}}.dump() << "\n";
}

std::vector<RunResult> load_runs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.value("format", "") != "sddq-runs") {
    throw ConfigError(path + ": not an sddq-runs file");
  }
  std::vector<RunResult> runs;
  for (const auto& r : j.at("runs")) runs.push_back(run_from_json(r));
  return runs;
}

std::string file_stem(const pipeline::VariantConfig& variant) {
  std::string out;
  for (char c : variant.name()) {
    if (c == '(') out += '-';
    else if (c != ')') out += c;
  }
  return out;
}

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string run_stem(const RunResult& r) { return file_stem(r.variant) + "_seed" + std::to_string(r.seed); }

}  // namespace

std::vector<std::string> export_metrics(const std::vector<RunResult>& runs, const std::string& dir) {
  ensure_dir(dir);
  const fs::path root(dir);
  ensure_dir((root / "runs").string());
  std::vector<std::string> written;

  for (const auto& r : runs) {
    const auto path = (root / "runs" / (run_stem(r) + ".csv")).string();
    auto out = open_out(path);
    out << "variant,seed,epoch,updates,evaluated,success,reward,turns,real_dialogues,real_dialogues_total,"
           "real_experiences,simulated_dialogues,simulated_dialogues_total,simulated_experiences,"
           "validation_dialogues_total,validation_success,tau,switcher_real_score,switcher_simulated_score,"
           "planning_gate_exit,agent_loss,world_action_ce\n";
    for (const auto& m : r.epochs) {
      out << r.variant.name() << ',' << r.seed << ',' << m.epoch << ',' << m.updates << ','
          << (m.evaluated ? 1 : 0) << ',' << num(m.test.success_rate) << ',' << num(m.test.average_reward) << ','
          << num(m.test.average_turns) << ',' << m.real_dialogues << ',' << m.real_dialogues_total << ','
          << m.real_experiences << ',' << m.simulated_dialogues << ',' << m.simulated_dialogues_total << ','
          << m.simulated_experiences << ',' << m.validation_dialogues_total << ','
          << num(m.validation_success) << ',' << num(m.tau) << ',' << num(m.switcher_real_score) << ','
          << num(m.switcher_simulated_score) << ',' << (m.planning_gate_exit ? 1 : 0) << ','
          << num(m.agent_loss) << ',' << num(m.world_action_ce) << '\n';
    }
    written.push_back(path);

    const auto cat_path = (root / "runs" / (run_stem(r) + "_categories.csv")).string();
    auto cats = open_out(cat_path);
    cats << "epoch,category,failures,n,failure_rate\n";
    for (const auto& m : r.epochs) {
      for (std::size_t c = 0; c < m.category_counts.size(); ++c) {
        const int n = m.category_counts[c];
        cats << m.epoch << ',' << c << ',' << m.category_failures[c] << ',' << n << ','
             << num(n ? static_cast<double>(m.category_failures[c]) / n : 0.0) << '\n';
      }
    }
    written.push_back(cat_path);
  }

  const auto summary = pipeline::summarize(runs);
  {
    const auto path = (root / "summary.csv").string();
    auto out = open_out(path);
    out << "variant,epoch,updates,runs,success_mean,success_std,reward_mean,turns_mean\n";
    for (const auto& row : summary) {
      out << row.variant << ',' << row.epoch << ',' << row.updates << ',' << row.runs << ','
          << num(row.success_mean) << ',' << num(row.success_std) << ',' << num(row.reward_mean) << ','
          << num(row.turns_mean) << '\n';
    }
    written.push_back(path);
  }
  {
    const auto path = (root / "checkpoints.csv").string();
    auto out = open_out(path);
    out << "variant,epoch,success,reward,turns\n";
    for (const auto& row : summary) {
      if (row.epoch == 100 || row.epoch == 200 || row.epoch == 300) {
        out << row.variant << ',' << row.epoch << ',' << num(row.success_mean) << ',' << num(row.reward_mean)
            << ',' << num(row.turns_mean) << '\n';
      }
    }
    written.push_back(path);
  }

  // Per-variant category table, pooled over seeds.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunResult*>> by_variant;
  for (const auto& r : runs) {
    if (r.categories.empty()) continue;
    if (!by_variant.count(r.variant.name())) order.push_back(r.variant.name());
    by_variant[r.variant.name()].push_back(&r);
  }
  for (const auto& name : order) {
    const auto& group = by_variant[name];
    std::vector<std::size_t> dialogues(domain::kCategoryCount, 0), successes(domain::kCategoryCount, 0);
    for (const auto* r : group) {
      for (const auto& c : r->categories) {
        dialogues.at(static_cast<std::size_t>(c.category)) += c.dialogues;
        successes.at(static_cast<std::size_t>(c.category)) += c.successes;
      }
    }
    auto rate = [&](std::size_t c) {
      return dialogues[c] ? static_cast<double>(successes[c]) / static_cast<double>(dialogues[c]) : 0.0;
    };
    std::vector<std::size_t> rank(domain::kCategoryCount);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return rate(a) < rate(b); });
    const auto path = (root / ("categories_" + file_stem(group.front()->variant) + ".csv")).string();
    auto out = open_out(path);
    out << "rank,category,dialogues,successes,success_rate\n";
    for (std::size_t i = 0; i < rank.size(); ++i) {
      const auto c = rank[i];
      out << i + 1 << ',' << c << ',' << dialogues[c] << ',' << successes[c] << ',' << num(rate(c)) << '\n';
    }
    written.push_back(path);
  }
  return written;
}

// ---- chat ------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void print_goal(std::ostream& out, const domain::UserGoal& goal) {
  out << "Your goal (#" << goal.id << ", category " << goal.category << "):\n  constraints:";
  for (const auto& [slot, value] : goal.constraints) out << ' ' << domain::slot_name(slot) << '=' << value;
  out << "\n  requests:";
  for (auto slot : goal.requests) out << ' ' << domain::slot_name(slot);
  out << '\n';
}

void print_help(std::ostream& out) {
  out << "Type a user act as intent(slot=value, slot, ...). A bare slot means you ask for it.\n"
         "  intents:";
  for (std::size_t i = 0; i < domain::kIntentCount; ++i) out << ' ' << domain::intent_name(static_cast<domain::Intent>(i));
  out << "\n  slots:";
  for (std::size_t i = 0; i < domain::kSlotCount; ++i) out << ' ' << domain::slot_name(static_cast<domain::Slot>(i));
  out << "\n  e.g. inform(city=seattle)  not_sure(theater)  thanks\n"
         "  'abandon' gives up on the dialogue (counted as failed), 'help' shows this.\n";
}

}  // namespace

ChatResult chat_repl(std::istream& in, std::ostream& out, const agent::Policy& policy,
                     const pipeline::World& world, const ChatOptions& options) {
  const auto& goals = world.corpus.goals();
  if (goals.empty()) throw ConfigError("chat needs a non-empty goal corpus");
  Rng rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, goals.size() - 1);
  ChatResult result;
  result.goal = goals[pick(rng)];
  const auto& goal = result.goal;
  const int L = options.max_turns;

  print_goal(out, goal);
  print_help(out);
  domain::StateTracker tracker(world.kb);
  const auto opening = domain::opening_act(goal);
  tracker.observe_user(opening);
  out << "you open with: " << opening.to_string() << '\n';

  double total = 0.0;
  auto finish = [&](domain::EpisodeStatus status, double terminal_reward) {
    result.outcome = {status, tracker.state().turn, total + terminal_reward};
  };
  while (true) {
    const auto& state = tracker.state();
    const auto encoded = domain::encode_state(state, L);
    const auto action = policy(state, encoded);
    const auto act = domain::realize_agent_action(action, state, world.kb);
    tracker.observe_agent(act);
    const int turn = tracker.state().turn;
    out << "[turn " << turn << "] agent: " << act.to_string() << '\n';
    if (domain::is_terminal_agent_action(action)) {
      const bool ok = domain::check_success(tracker.state(), goal);
      finish(ok ? domain::EpisodeStatus::kSuccess : domain::EpisodeStatus::kFailure,
             domain::compute_reward(ok ? domain::RewardEvent::kSuccess : domain::RewardEvent::kFailure, L));
      break;
    }
    if (turn >= L) {
      out << "turn limit reached\n";
      finish(domain::EpisodeStatus::kFailure, domain::compute_reward(domain::RewardEvent::kFailure, L));
      break;
    }
    // Completion hint for the slot the agent just asked about or offered.
    for (const auto& [slot, value] : act.slots) {
      const auto name = std::string(domain::slot_name(slot));
      const auto it = goal.constraints.find(slot);
      if (value == domain::kUnknown) {
        out << "  hint: inform(" << name << '=' << (it != goal.constraints.end() ? it->second : "...") << ")  or  not_sure(" << name << ")\n";
      } else if (it != goal.constraints.end() && it->second != value) {
        out << "  hint: deny(" << name << '=' << value << ")  or  inform(" << name << '=' << it->second << ")\n";
      } else {
        out << "  hint: thanks  or  request(...) for a slot you still need\n";
      }
      break;
    }
    std::optional<domain::DialogueAct> reply;
    while (!reply) {
      out << "user> " << std::flush;
      std::string line;
      if (!std::getline(in, line)) {
        out << '\n';
        result.abandoned = true;
        break;
      }
      line = trim(line);
      if (line.empty()) continue;
      if (line == "abandon") {
        result.abandoned = true;
        break;
      }
      if (line == "help") {
        print_help(out);
        continue;
      }
      std::string error;
      auto parsed = domain::parse_act(line, &error);
      if (!parsed) {
        out << "could not read that: " << error << " (type help)\n";
        continue;
      }
      try {
        domain::validate_act(*parsed);
      } catch (const domain::ProtocolError& ex) {
        out << "invalid act: " << ex.what() << " (type help)\n";
        continue;
      }
      reply = std::move(parsed);
    }
    if (result.abandoned) {
      finish(domain::EpisodeStatus::kFailure, domain::compute_reward(domain::RewardEvent::kFailure, L));
      break;
    }
    tracker.observe_user(*reply);
    total += domain::compute_reward(domain::RewardEvent::kNonterminalTurn, L);
  }

  const bool success = result.outcome.status == domain::EpisodeStatus::kSuccess;
  out << (success ? "dialogue succeeded" : "dialogue failed") << " after " << result.outcome.turns
      << " turns, reward " << result.outcome.reward << '\n';
  if (!options.log_path.empty()) {
    std::ofstream log(options.log_path, std::ios::app);
    if (!log) throw ConfigError("cannot append to '" + options.log_path + "'");
    log << json{{"goal_id", goal.id},     {"category", goal.category},          {"success", success},
                {"turns", result.outcome.turns}, {"reward", result.outcome.reward}, {"abandoned", result.abandoned},
                {"seed", options.seed},   {"policy", options.policy_name}}
               .dump()
        << '\n';
  }
  return result;
}

std::vector<bool> read_chat_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::vector<bool> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    const json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("success") || !j["success"].is_boolean()) {
      throw ConfigError(path + ":" + std::to_string(number) + ": expected a chat log record");
    }
    out.push_back(j["success"].get<bool>());
  }
  return out;
}

// ---- permutation test ----------------------------------------------------------

namespace {

long double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0L;
  k = std::min(k, n - k);
  long double c = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<long double>(n - k + i) / static_cast<long double>(i);
  return c;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

constexpr double kTieTolerance = 1e-12;

}  // namespace

PermutationResult permutation_test(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.empty() || b.empty()) throw ConfigError("permutation test needs two non-empty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  const std::size_t sa = static_cast<std::size_t>(std::count(a.begin(), a.end(), true));
  const std::size_t total = sa + static_cast<std::size_t>(std::count(b.begin(), b.end(), true));
  auto stat = [&](std::size_t k) {
    return static_cast<double>(k) / na - static_cast<double>(total - k) / nb;
  };
  PermutationResult r;
  r.exact = true;
  r.statistic = stat(sa);
  long double hits = 0.0L;
  const std::size_t lo = total > nb ? total - nb : 0;
  const std::size_t hi = std::min(total, na);
  for (std::size_t k = lo; k <= hi; ++k) {
    if (stat(k) >= r.statistic - kTieTolerance) hits += binomial(total, k) * binomial(n - total, na - k);
  }
  r.p_value = static_cast<double>(hits / binomial(n, na));
  return r;
}

PermutationResult permutation_test(const std::vector<double>& a, const std::vector<double>& b,
                                   std::size_t iterations, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw ConfigError("permutation test needs two non-empty samples");
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const std::size_t na = a.size(), n = pooled.size();
  const double sum = std::accumulate(pooled.begin(), pooled.end(), 0.0);
  auto stat_of_sum = [&](double sum_a) {
    return sum_a / static_cast<double>(na) - (sum - sum_a) / static_cast<double>(n - na);
  };
  PermutationResult r;
  r.statistic = mean_of(a) - mean_of(b);
  if (n <= 12) {
    r.exact = true;
    std::size_t hits = 0, splits = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != na) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1u << i)) s += pooled[i];
      }
      ++splits;
      if (stat_of_sum(s) >= r.statistic - kTieTolerance) ++hits;
    }
    r.p_value = static_cast<double>(hits) / static_cast<double>(splits);
    return r;
  }
  if (iterations == 0) throw ConfigError("permutation test needs iterations >= 1");
  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::shuffle(pooled.begin(), pooled.end(), rng);
    const double s = std::accumulate(pooled.begin(), pooled.begin() + static_cast<std::ptrdiff_t>(na), 0.0);
    if (stat_of_sum(s) >= r.statistic - kTieTolerance) ++hits;
  }
  r.p_value = static_cast<double>(hits + 1) / static_cast<double>(iterations + 1);
  return r;
}

}  // namespace sddq::cli
