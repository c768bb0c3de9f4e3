#pragma once

// Saliency scoring over surrounding vehicles and explicit-intent parsing
// with confidence gating.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixsim/common.hpp"
#include "mixsim/scene_model.hpp"

namespace mixsim {

// ---------------------------------------------------------------------------
// attention

/// Default query layout: position delta over dt, speed delta, |a|,
/// distance to ego, closing speed towards ego.
inline constexpr std::size_t kQueryDim = 5;

struct QueryVector {
  std::string id;
  std::vector<double> q;
};

struct AttentionWeights {
  std::size_t d_k{kQueryDim};
  std::vector<double> K;  // d_k x d_k, row-major
  std::vector<double> V;  // d_k

  void validate() const {
    if (d_k == 0) throw ConfigError("attention d_k must be positive");
    if (K.size() != d_k * d_k) throw ConfigError("attention K must be d_k x d_k");
    if (V.size() != d_k) throw ConfigError("attention V must have d_k entries");
    for (double x : K)
      if (!std::isfinite(x)) throw ConfigError("attention K has a non-finite entry");
    for (double x : V)
      if (!std::isfinite(x)) throw ConfigError("attention V has a non-finite entry");
  }

  static AttentionWeights defaults() {
    AttentionWeights w;
    w.K.assign(kQueryDim * kQueryDim, 0.0);
    const double diag[kQueryDim] = {0.2, 0.2, 1.0, -0.05, 0.5};
    for (std::size_t i = 0; i < kQueryDim; ++i) w.K[i * kQueryDim + i] = diag[i];
    w.V.assign(kQueryDim, 1.0);
    return w;
  }

  static AttentionWeights from_json(const nlohmann::json& j) {
    AttentionWeights w;
    try {
      w.d_k = j.at("d_k").get<std::size_t>();
      w.K = j.at("K").get<std::vector<double>>();
      w.V = j.at("V").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("attention weights: ") + e.what());
    }
    w.validate();
    return w;
  }

  static AttentionWeights load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open attention weights " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("attention weights " + path + ": " + e.what());
    }
  }
};

inline QueryVector make_query(const VehicleState& v, const VehicleState& prev, const VehicleState& ego,
                              double dt) {
  if (!(dt > 0.0)) throw InputError("query dt must be positive");
  const Vec2 rel = v.position() - ego.position();
  const double dist = rel.norm();
  const Vec2 rel_v = v.velocity() - ego.velocity();
  const double closing = dist > 0.0 ? -rel.dot(rel_v) / dist : 0.0;
  return {v.id,
          {distance(v.position(), prev.position()) / dt, v.speed() - prev.speed(), v.acceleration().norm(),
           dist, closing}};
}

/// softmax_i( (q_i K^T) . V / sqrt(d_k) ) over vehicles.
inline std::vector<double> attention_saliency(std::span<const QueryVector> queries, const AttentionWeights& w) {
  w.validate();
  if (queries.empty()) throw InputError("attention needs at least one query");
  const double scale = 1.0 / std::sqrt(static_cast<double>(w.d_k));
  std::vector<double> logits;
  logits.reserve(queries.size());
  for (const auto& qv : queries) {
    if (qv.q.size() != w.d_k) throw ConfigError("query dimension does not match d_k");
    double s = 0.0;
    for (std::size_t r = 0; r < w.d_k; ++r) {
      double row = 0.0;  // (q K^T)_r = K_r . q
      for (std::size_t c = 0; c < w.d_k; ++c) row += w.K[r * w.d_k + c] * qv.q[c];
      s += row * w.V[r];
    }
    if (!std::isfinite(s)) throw InputError("non-finite attention logit for " + qv.id);
    logits.push_back(s * scale);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += (l = std::exp(l - mx));
  for (auto& l : logits) l /= z;
  return logits;
}

// ---------------------------------------------------------------------------
// intent vector

enum class Style { Aggressive, Balanced, Conservative, Unknown };
enum class Action { SteeringLeft, SteeringRight, Accelerating, Decelerating, Cruising, Unknown };
enum class Task { Emergency, Commuting, Official, Leisure, Unknown };

inline std::string_view to_string(Style s) {
  switch (s) {
    case Style::Aggressive: return "aggressive";
    case Style::Balanced: return "balanced";
    case Style::Conservative: return "conservative";
    case Style::Unknown: break;
  }
  return "unknown";
}

inline std::string_view to_string(Action a) {
  switch (a) {
    case Action::SteeringLeft: return "steering-left";
    case Action::SteeringRight: return "steering-right";
    case Action::Accelerating: return "accelerating";
    case Action::Decelerating: return "decelerating";
    case Action::Cruising: return "cruising";
    case Action::Unknown: break;
  }
  return "unknown";
}

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::Emergency: return "emergency";
    case Task::Commuting: return "commuting";
    case Task::Official: return "official";
    case Task::Leisure: return "leisure";
    case Task::Unknown: break;
  }
  return "unknown";
}

inline std::optional<Style> style_from_string(std::string_view s) {
  for (auto v : {Style::Aggressive, Style::Balanced, Style::Conservative, Style::Unknown})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

inline std::optional<Action> action_from_string(std::string_view s) {
  for (auto v : {Action::SteeringLeft, Action::SteeringRight, Action::Accelerating, Action::Decelerating,
                 Action::Cruising, Action::Unknown})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

inline std::optional<Task> task_from_string(std::string_view s) {
  for (auto v : {Task::Emergency, Task::Commuting, Task::Official, Task::Leisure, Task::Unknown})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

struct IntentVector {
  Style style{Style::Unknown};
  Action action{Action::Unknown};
  Task task{Task::Unknown};
  double confidence{0.0};
  bool weak{false};  // set by gating; fields were cleared

  bool all_unknown() const {
    return style == Style::Unknown && action == Action::Unknown && task == Task::Unknown;
  }
  bool operator==(const IntentVector&) const = default;
};

inline nlohmann::json to_json(const IntentVector& iv) {
  return {{"style", to_string(iv.style)},
          {"action", to_string(iv.action)},
          {"task", to_string(iv.task)},
          {"confidence", iv.confidence},
          {"weak", iv.weak}};
}

/// Lenient: unknown labels become Unknown, confidence clamped to [0, 1].
inline IntentVector intent_from_json(const nlohmann::json& j) {
  IntentVector iv;
  if (!j.is_object()) return iv;
  if (j.contains("style") && j["style"].is_string())
    iv.style = style_from_string(j["style"].get<std::string>()).value_or(Style::Unknown);
  if (j.contains("action") && j["action"].is_string())
    iv.action = action_from_string(j["action"].get<std::string>()).value_or(Action::Unknown);
  if (j.contains("task") && j["task"].is_string())
    iv.task = task_from_string(j["task"].get<std::string>()).value_or(Task::Unknown);
  if (j.contains("confidence") && j["confidence"].is_number())
    iv.confidence = std::clamp(j["confidence"].get<double>(), 0.0, 1.0);
  if (j.contains("weak") && j["weak"].is_boolean()) iv.weak = j["weak"].get<bool>();
  return iv;
}

// ---------------------------------------------------------------------------
// keyword table

struct KeywordRule {
  std::string channel;  // "text" matches ehmi-text and voice-text
  std::string match;    // lowercase substring or exact signal label
  std::string field;    // style | action | task
  std::string value;
  double confidence{0.0};
};

struct KeywordTable {
  int version{1};
  std::vector<KeywordRule> rules;

  static KeywordTable from_json(const nlohmann::json& j) {
    KeywordTable t;
    try {
      t.version = j.at("version").get<int>();
      for (const auto& r : j.at("rules")) {
        KeywordRule k{r.at("channel").get<std::string>(), r.at("match").get<std::string>(),
                      r.at("field").get<std::string>(), r.at("value").get<std::string>(),
                      r.at("confidence").get<double>()};
        const bool ok = (k.field == "style" && style_from_string(k.value)) ||
                        (k.field == "action" && action_from_string(k.value)) ||
                        (k.field == "task" && task_from_string(k.value));
        if (!ok) throw ConfigError("keyword rule '" + k.match + "': bad field/value");
        if (!(k.confidence >= 0.0 && k.confidence <= 1.0))
          throw ConfigError("keyword rule '" + k.match + "': confidence outside [0,1]");
        t.rules.push_back(std::move(k));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("keyword table: ") + e.what());
    }
    return t;
  }

  static KeywordTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open keyword table " + path);
    return from_json(nlohmann::json::parse(in));
  }

  static const KeywordTable& builtin();
};

/// Same content as data/intent_keywords.json (a test keeps them equal).
inline constexpr std::string_view kBuiltinKeywords = R"({
  "version": 1,
  "rules": [
    {"channel": "turn-signal", "match": "left", "field": "action", "value": "steering-left", "confidence": 0.9},
    {"channel": "turn-signal", "match": "right", "field": "action", "value": "steering-right", "confidence": 0.9},
    {"channel": "turn-signal", "match": "hazard", "field": "action", "value": "decelerating", "confidence": 0.8},
    {"channel": "turn-signal", "match": "brake", "field": "action", "value": "decelerating", "confidence": 0.9},
    {"channel": "text", "match": "no hurry", "field": "task", "value": "leisure", "confidence": 0.9},
    {"channel": "text", "match": "hurry", "field": "task", "value": "emergency", "confidence": 0.85},
    {"channel": "text", "match": "as soon as possible", "field": "task", "value": "emergency", "confidence": 0.85},
    {"channel": "text", "match": "emergency", "field": "task", "value": "emergency", "confidence": 0.9},
    {"channel": "text", "match": "urgent", "field": "task", "value": "emergency", "confidence": 0.85},
    {"channel": "text", "match": "running late", "field": "task", "value": "emergency", "confidence": 0.75},
    {"channel": "text", "match": "to work", "field": "task", "value": "commuting", "confidence": 0.75},
    {"channel": "text", "match": "commute", "field": "task", "value": "commuting", "confidence": 0.75},
    {"channel": "text", "match": "official", "field": "task", "value": "official", "confidence": 0.8},
    {"channel": "text", "match": "on duty", "field": "task", "value": "official", "confidence": 0.8},
    {"channel": "text", "match": "sightseeing", "field": "task", "value": "leisure", "confidence": 0.75},
    {"channel": "text", "match": "take your time", "field": "task", "value": "leisure", "confidence": 0.75},
    {"channel": "text", "match": "slow down", "field": "action", "value": "decelerating", "confidence": 0.8},
    {"channel": "text", "match": "slowing down", "field": "action", "value": "decelerating", "confidence": 0.8},
    {"channel": "text", "match": "after you", "field": "action", "value": "decelerating", "confidence": 0.8},
    {"channel": "text", "match": "go ahead", "field": "action", "value": "decelerating", "confidence": 0.8},
    {"channel": "text", "match": "wait", "field": "action", "value": "decelerating", "confidence": 0.75},
    {"channel": "text", "match": "yield", "field": "action", "value": "decelerating", "confidence": 0.8},
    {"channel": "text", "match": "go first", "field": "action", "value": "accelerating", "confidence": 0.8},
    {"channel": "text", "match": "pass first", "field": "action", "value": "accelerating", "confidence": 0.8},
    {"channel": "text", "match": "speed up", "field": "action", "value": "accelerating", "confidence": 0.8},
    {"channel": "text", "match": "speeding up", "field": "action", "value": "accelerating", "confidence": 0.8},
    {"channel": "text", "match": "keeping my speed", "field": "action", "value": "cruising", "confidence": 0.75},
    {"channel": "text", "match": "turning left", "field": "action", "value": "steering-left", "confidence": 0.8},
    {"channel": "text", "match": "turning right", "field": "action", "value": "steering-right", "confidence": 0.8},
    {"channel": "text", "match": "i will pass", "field": "style", "value": "aggressive", "confidence": 0.75},
    {"channel": "text", "match": "out of my way", "field": "style", "value": "aggressive", "confidence": 0.85},
    {"channel": "text", "match": "after you", "field": "style", "value": "conservative", "confidence": 0.75},
    {"channel": "text", "match": "carefully", "field": "style", "value": "conservative", "confidence": 0.7},
    {"channel": "text", "match": "safely", "field": "style", "value": "conservative", "confidence": 0.7},
    {"channel": "text", "match": "normal pace", "field": "style", "value": "balanced", "confidence": 0.7}
  ]
})";

inline const KeywordTable& KeywordTable::builtin() {
  static const KeywordTable t = from_json(nlohmann::json::parse(kBuiltinKeywords));
  return t;
}

namespace detail {
inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

/// Table lookup. Per field the highest-confidence match wins (first listed
/// on ties); overall confidence is the maximum over matched rules.
inline IntentVector parse_explicit_intent(IntentChannel channel, std::string_view payload,
                                          const KeywordTable& table = KeywordTable::builtin()) {
  IntentVector iv;
  const std::string text = detail::lower(payload);
  if (text.empty()) return iv;
  const bool is_signal = channel == IntentChannel::TurnSignal;
  double best_style = -1.0, best_action = -1.0, best_task = -1.0;
  for (const auto& r : table.rules) {
    const bool hit = is_signal ? (r.channel == "turn-signal" && text == r.match)
                               : (r.channel == "text" && text.find(r.match) != std::string::npos);
    if (!hit) continue;
    if (r.field == "style" && r.confidence > best_style) {
      best_style = r.confidence;
      iv.style = *style_from_string(r.value);
    } else if (r.field == "action" && r.confidence > best_action) {
      best_action = r.confidence;
      iv.action = *action_from_string(r.value);
    } else if (r.field == "task" && r.confidence > best_task) {
      best_task = r.confidence;
      iv.task = *task_from_string(r.value);
    }
    iv.confidence = std::max(iv.confidence, r.confidence);
  }
  return iv;
}

/// Strictly-below-threshold intents become all-unknown, flagged weak, with
/// the original confidence kept for logging.
inline IntentVector gate_weak_intent(const IntentVector& iv, double threshold = 0.7) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InputError("gate threshold outside [0,1]");
  if (iv.confidence >= threshold) return iv;
  IntentVector out;
  out.confidence = iv.confidence;
  out.weak = true;
  return out;
}

/// Parses `passenger_input` and merges onto `prior`. Unknown prior fields
/// are always filled. Known fields are replaced by task when the parsed
/// confidence is at least the prior's, by action and style only when it
/// is strictly higher.
inline IntentVector query_ego_intent(std::string_view passenger_input, const IntentVector& prior,
                                     const KeywordTable& table = KeywordTable::builtin()) {
  const IntentVector parsed = parse_explicit_intent(IntentChannel::VoiceText, passenger_input, table);
  if (parsed.all_unknown()) return prior;
  IntentVector out = prior;
  bool touched = false;
  if (parsed.task != Task::Unknown &&
      (prior.task == Task::Unknown || parsed.confidence >= prior.confidence)) {
    out.task = parsed.task;
    touched = true;
  }
  if (parsed.action != Action::Unknown &&
      (prior.action == Action::Unknown || parsed.confidence > prior.confidence)) {
    out.action = parsed.action;
    touched = true;
  }
  if (parsed.style != Style::Unknown &&
      (prior.style == Style::Unknown || parsed.confidence > prior.confidence)) {
    out.style = parsed.style;
    touched = true;
  }
  if (touched) {
    out.confidence = std::max(prior.confidence, parsed.confidence);
    out.weak = false;
  }
  return out;
}

inline constexpr std::string_view kConfirmQuestion = "Do you want me to accelerate to pass through?";

inline std::optional<std::string> confirmatory_question(const IntentVector& iv, const OpmGraph& scene) {
  if (!iv.weak || scene.objects.empty()) return std::nullopt;
  const std::string& ego = scene.ego_id();
  for (const auto& c : scene.conflicts)
    if (c.involves(ego)) return std::string(kConfirmQuestion);
  return std::nullopt;
}

}  // namespace mixsim
