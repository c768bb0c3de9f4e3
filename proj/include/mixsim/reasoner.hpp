#pragma once

// Reasoner backends: a deterministic rule-based mock and an HTTP client
// for an external endpoint that falls back to the mock.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that breaks it.
#include <Eigen/Dense>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mixsim/harness/ehmi.hpp"
#include "mixsim/intent_reasoning.hpp"
#include "mixsim/maneuver.hpp"
#include "mixsim/scene_model.hpp"

namespace mixsim {

/// Maneuvers that keep the vehicle on its route under a navigation
/// instruction.
inline bool route_consistent(Maneuver m, TurnLabel nav) {
  switch (nav) {
    case TurnLabel::Left: return m == Maneuver::LeftTurn;
    case TurnLabel::Right: return m == Maneuver::RightTurn;
    case TurnLabel::Through:
    case TurnLabel::Merge: return !is_turn(m);
  }
  return true;
}

struct ReasonerRequest {
  std::string scene_text;
  PerManeuver<double> candidate_probs{};
  IntentVector ego_intent;
  std::vector<std::pair<std::string, IntentVector>> other_intents;
  std::string template_id{"opm-v1"};

  void validate() const {
    double sum = 0.0;
    for (double p : candidate_probs) {
      if (!std::isfinite(p) || p < 0.0) throw InputError("candidate probabilities must be finite and >= 0");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw InputError("candidate probabilities must sum to 1");
  }
};

struct ReasonerResponse {
  Maneuver chosen{Maneuver::StraightConst};
  std::vector<Maneuver> pruned;
  double confidence{0.0};
  std::string rationale;
  std::string ehmi_text;
  std::optional<int> reasoning_steps;  // only when an endpoint reports it
  bool fallback{false};                // produced by the mock after an endpoint failure
  std::string diagnostic;

  bool is_pruned(Maneuver m) const { return std::find(pruned.begin(), pruned.end(), m) != pruned.end(); }
};

inline nlohmann::json to_json(const ReasonerRequest& r) {
  nlohmann::json others = nlohmann::json::array();
  for (const auto& [id, iv] : r.other_intents) others.push_back({{"id", id}, {"intent", to_json(iv)}});
  return {{"scene_text", r.scene_text},
          {"candidate_probs", std::vector<double>(r.candidate_probs.begin(), r.candidate_probs.end())},
          {"ego_intent", to_json(r.ego_intent)},
          {"other_intents", others},
          {"template_id", r.template_id}};
}

inline ReasonerRequest request_from_json(const nlohmann::json& j) {
  ReasonerRequest r;
  try {
    r.scene_text = j.at("scene_text").get<std::string>();
    const auto probs = j.at("candidate_probs").get<std::vector<double>>();
    if (probs.size() != kManeuverCount) throw InputError("candidate_probs must have 5 entries");
    std::copy(probs.begin(), probs.end(), r.candidate_probs.begin());
    r.ego_intent = intent_from_json(j.value("ego_intent", nlohmann::json::object()));
    if (j.contains("other_intents"))
      for (const auto& o : j.at("other_intents"))
        r.other_intents.emplace_back(o.at("id").get<std::string>(), intent_from_json(o.at("intent")));
    r.template_id = j.value("template_id", std::string("opm-v1"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("reasoner request: ") + e.what());
  }
  return r;
}

inline nlohmann::json to_json(const ReasonerResponse& r) {
  nlohmann::json pruned = nlohmann::json::array();
  for (auto m : r.pruned) pruned.push_back(to_string(m));
  nlohmann::json j = {{"chosen_maneuver", to_string(r.chosen)},
                      {"pruned", pruned},
                      {"confidence", r.confidence},
                      {"rationale_text", r.rationale},
                      {"ehmi_text", r.ehmi_text}};
  if (r.reasoning_steps) j["reasoning_steps"] = *r.reasoning_steps;
  return j;
}

/// Strict schema check for endpoint replies; nullopt + reason on violation.
inline std::optional<ReasonerResponse> response_from_json(const nlohmann::json& j, std::string* why = nullptr) {
  auto fail = [&](std::string msg) -> std::optional<ReasonerResponse> {
    if (why) *why = std::move(msg);
    return std::nullopt;
  };
  if (!j.is_object()) return fail("reply is not an object");
  ReasonerResponse r;
  if (!j.contains("chosen_maneuver") || !j["chosen_maneuver"].is_string()) return fail("missing chosen_maneuver");
  const auto chosen = maneuver_from_string(j["chosen_maneuver"].get<std::string>());
  if (!chosen) return fail("unknown chosen_maneuver");
  r.chosen = *chosen;
  if (j.contains("pruned")) {
    if (!j["pruned"].is_array()) return fail("pruned is not a list");
    for (const auto& p : j["pruned"]) {
      if (!p.is_string()) return fail("pruned entry is not a string");
      const auto m = maneuver_from_string(p.get<std::string>());
      if (!m) return fail("unknown pruned maneuver");
      if (*m == r.chosen) return fail("pruned list contains chosen maneuver");
      r.pruned.push_back(*m);
    }
  }
  if (!j.contains("confidence") || !j["confidence"].is_number()) return fail("missing confidence");
  r.confidence = j["confidence"].get<double>();
  if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) return fail("confidence outside [0,1]");
  if (j.contains("rationale_text")) {
    if (!j["rationale_text"].is_string()) return fail("rationale_text is not a string");
    r.rationale = j["rationale_text"].get<std::string>();
  }
  if (j.contains("ehmi_text")) {
    if (!j["ehmi_text"].is_string()) return fail("ehmi_text is not a string");
    r.ehmi_text = j["ehmi_text"].get<std::string>();
  }
  if (j.contains("reasoning_steps") && j["reasoning_steps"].is_number_integer())
    r.reasoning_steps = j["reasoning_steps"].get<int>();
  return r;
}

class Reasoner {
 public:
  virtual ~Reasoner() = default;
  virtual ReasonerResponse recommend(const ReasonerRequest& req) const = 0;
  virtual std::string name() const = 0;
};

/// What the mock can read back out of a scene prompt.
struct SceneFacts {
  std::optional<TurnLabel> nav;
  bool conflict{false};
  bool risky{false};
  bool indeterminate{false};
};

/// opm prompts carry conflict relations; simple prompts only allow a
/// stop-line arrival-time comparison; raw dumps yield nothing.
inline SceneFacts extract_facts(std::string_view text, double dttc_threshold = 3.0, double speed_floor = 0.1) {
  SceneFacts f;
  if (text.find("Objects:") != std::string_view::npos) {
    const ParsedOpm p = parse_opm(text);
    f.nav = p.ego_navigation;
    if (p.objects.empty()) return f;
    const std::string& ego = p.objects.front().id;
    for (const auto& c : p.conflicts) {
      if (!c.involves(ego)) continue;
      f.conflict = true;
      if (!c.delta_ttc) f.indeterminate = true;
      else if (*c.delta_ttc < dttc_threshold) f.risky = true;
    }
    return f;
  }
  if (text.rfind("vehicle: ", 0) != 0) return f;

  struct Row {
    double p{0.0}, v{0.0};
    std::string lane;
  };
  std::vector<Row> rows;
  std::istringstream is{std::string(text)};
  std::string line;
  while (std::getline(is, line)) {
    const auto colon = line.find(": ");
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon), val = line.substr(colon + 2);
    if (key == "vehicle") rows.emplace_back();
    if (rows.empty()) continue;
    try {
      if (key == "speed") rows.back().v = std::stod(val);
      if (key == "p") rows.back().p = std::stod(val);
    } catch (...) {
    }
    if (key == "lane") rows.back().lane = val;
    if (key == "nav" && rows.size() == 1) f.nav = turn_from_string(val);
  }
  if (rows.empty()) return f;
  const Row& ego = rows.front();
  constexpr double kPastIntersection = 15.0;
  if (ego.p > kPastIntersection) return f;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const Row& o = rows[k];
    if (o.lane == ego.lane || o.p > kPastIntersection) continue;
    f.conflict = true;
    if (ego.v < speed_floor || o.v < speed_floor) {
      f.indeterminate = true;
      continue;
    }
    const double dt = std::fabs(std::max(0.0, -ego.p) / ego.v - std::max(0.0, -o.p) / o.v);
    if (dt < dttc_threshold) f.risky = true;
  }
  return f;
}

class MockReasoner : public Reasoner {
 public:
  explicit MockReasoner(double gate = 0.7, SceneThresholds th = {}) : gate_(gate), th_(th) {}

  std::string name() const override { return "mock"; }

  ReasonerResponse recommend(const ReasonerRequest& req) const override {
    req.validate();
    const SceneFacts facts = extract_facts(req.scene_text, th_.dttc_threshold, th_.speed_floor);
    const Maneuver am = argmax(req.candidate_probs);

    ReasonerResponse r;
    if (facts.nav) {
      for (auto m : kManeuvers)
        if (!route_consistent(m, *facts.nav)) r.pruned.push_back(m);
    }

    auto confident = [&](const IntentVector& iv) {
      return !iv.weak && !iv.all_unknown() && iv.confidence >= gate_;
    };
    const bool ego_conf = confident(req.ego_intent);
    const IntentVector* opp = nullptr;
    for (const auto& [id, iv] : req.other_intents) {
      if (confident(iv)) {
        opp = &iv;
        break;
      }
    }

    auto finish = [&](Maneuver m, double conf, std::string why) {
      r.chosen = m;
      r.confidence = conf;
      r.rationale = std::move(why);
      std::erase(r.pruned, m);
      r.ehmi_text = std::string(ehmi_template(m));
      return r;
    };

    if (!ego_conf && !opp) return finish(am, 0.5, "no confident intent; statistical choice retained");

    const bool risky = facts.risky || facts.indeterminate;
    const bool ego_urgent = ego_conf && (req.ego_intent.task == Task::Emergency ||
                                         req.ego_intent.action == Action::Accelerating);
    const bool opp_yield = opp && opp->action == Action::Decelerating;
    const bool opp_assert = opp && (opp->action == Action::Accelerating || opp->style == Style::Aggressive);

    std::optional<Maneuver> pick;
    double conf = 0.6;
    std::string why;
    if (opp_assert && risky) {
      pick = Maneuver::StraightDecel;
      conf = 0.85;
      why = "opposing vehicle asserts priority on a close conflict; yield";
    } else if (opp_yield && facts.conflict) {
      if (facts.nav && is_turn_label(*facts.nav))
        pick = *facts.nav == TurnLabel::Left ? Maneuver::LeftTurn : Maneuver::RightTurn;
      else
        pick = am == Maneuver::StraightConst ? Maneuver::StraightConst : Maneuver::StraightAccel;
      conf = 0.85;
      why = "opposing vehicle yields; proceed";
    } else if (risky && !opp && ego_conf) {
      pick = Maneuver::StraightDecel;
      conf = 0.8;
      why = "close conflict with unknown opposing intent; decelerate";
    } else if (ego_urgent && !risky) {
      pick = more_efficient(am);
      conf = 0.75;
      why = "urgent passenger and no close conflict; favour efficiency";
    }
    if (!pick) return finish(am, 0.6, "no rule applies; statistical choice retained");
    if (r.is_pruned(*pick)) {
      // fall back to the best route-consistent candidate
      PerManeuver<double> masked = req.candidate_probs;
      for (auto m : r.pruned) masked[index_of(m)] = -1.0;
      return finish(argmax(masked), 0.6, why + "; preferred maneuver leaves the route");
    }
    return finish(*pick, conf, why);
  }

  static bool is_turn_label(TurnLabel t) { return t == TurnLabel::Left || t == TurnLabel::Right; }

  /// Straight maneuvers upgrade to acceleration; turns are kept.
  static Maneuver more_efficient(Maneuver m) { return is_turn(m) ? m : Maneuver::StraightAccel; }

 private:
  double gate_;
  SceneThresholds th_;
};

/// Splits "http://host:port/path" into ("http://host:port", "/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

class HttpReasoner : public Reasoner {
 public:
  explicit HttpReasoner(std::string url, std::chrono::milliseconds deadline = std::chrono::milliseconds(2000))
      : url_(std::move(url)), deadline_(deadline) {}

  std::string name() const override { return "http:" + url_; }

  ReasonerResponse recommend(const ReasonerRequest& req) const override {
    req.validate();
    std::string why;
    try {
      const auto [base, path] = split_url(url_);
      httplib::Client cli(base);
      const auto secs = deadline_.count() / 1000;
      const auto usecs = (deadline_.count() % 1000) * 1000;
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      cli.set_write_timeout(secs, usecs);
      const auto res = cli.Post(path, to_json(req).dump(), "application/json");
      if (!res) {
        why = "endpoint unreachable: " + httplib::to_string(res.error());
      } else if (res->status != 200) {
        why = "endpoint status " + std::to_string(res->status);
      } else {
        const auto j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded()) {
          why = "malformed reply";
        } else if (auto r = response_from_json(j, &why)) {
          return *r;
        }
      }
    } catch (const std::exception& e) {
      why = std::string("endpoint failure: ") + e.what();
    }
    ReasonerResponse r = mock_.recommend(req);
    r.fallback = true;
    r.diagnostic = why;
    return r;
  }

 private:
  std::string url_;
  std::chrono::milliseconds deadline_;
  MockReasoner mock_;
};

/// Explicit url, else MIXSIM_REASONER_URL, else the mock.
inline std::unique_ptr<Reasoner> make_reasoner(const std::optional<std::string>& url = std::nullopt) {
  std::string u = url.value_or("");
  if (u.empty()) {
    if (const char* env = std::getenv("MIXSIM_REASONER_URL")) u = env;
  }
  if (u.empty()) return std::make_unique<MockReasoner>();
  return std::make_unique<HttpReasoner>(u);
}

}  // namespace mixsim
