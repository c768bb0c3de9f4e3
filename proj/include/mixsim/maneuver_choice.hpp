#pragma once

// Logit maneuver choice: features, utilities, history/switch corrections,
// and the reasoner correction hook.

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixsim/common.hpp"
#include "mixsim/intent_reasoning.hpp"
#include "mixsim/maneuver.hpp"
#include "mixsim/reasoner.hpp"
#include "mixsim/scene_model.hpp"

namespace mixsim {

struct IdmParams {
  double v0{10.0};      // desired speed, m/s
  double T{1.5};        // headway, s
  double a_max{2.0};    // m/s^2
  double b_comf{2.0};   // m/s^2
  double s0{2.0};       // jam gap, m
  double b_hard{8.0};   // m/s^2, lower clamp
  double delta{4.0};

  void validate() const {
    if (!(v0 > 0 && T > 0 && a_max > 0 && b_comf > 0 && s0 > 0 && b_hard > 0 && delta > 0))
      throw ConfigError("IDM parameters must be positive");
  }
};

/// Standard IDM, clamped to [-b_hard, a_max]; gap <= 0 is maximal braking.
inline double idm_acceleration(double gap, double v, double v_lead, const IdmParams& p) {
  if (!(gap > 0.0)) return -p.b_hard;
  const double dv = v - v_lead;
  const double s_star = p.s0 + std::max(0.0, v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b_comf)));
  const double a = p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - (s_star / gap) * (s_star / gap));
  return std::clamp(a, -p.b_hard, p.a_max);
}

/// Feature layout of x_i.
enum FeatureIndex : std::size_t { kMatching = 0, kSafety, kEfficiency, kRiskyFlag, kIndeterminateFlag, kFeatureDim };

using FeatureVec = std::array<double, kFeatureDim>;

struct UtilityParams {
  FeatureVec beta{2.0, 1.5, 1.0, -1.0, 0.0};
  double gamma{0.5};
  double lambda{0.3};
  IdmParams idm;
  double route_penalty{0.05};
  double gate_threshold{0.7};
  double safety_band{6.0};         // s; conflicts below this lower the safety degree
  std::size_t history_window{30};  // entries kept per maneuver

  void validate() const {
    if (gamma < 0.0 || lambda < 0.0) throw ConfigError("gamma and lambda must be >= 0");
    if (!(route_penalty >= 0.0 && route_penalty <= 1.0)) throw ConfigError("route_penalty must be in [0,1]");
    if (!(safety_band > 0.0)) throw ConfigError("safety_band must be positive");
    for (double b : beta)
      if (!std::isfinite(b)) throw ConfigError("beta must be finite");
    idm.validate();
  }
};

/// How strongly a maneuver commits to entering the conflict area.
inline constexpr double aggressiveness(Maneuver m) {
  switch (m) {
    case Maneuver::StraightAccel: return 1.0;
    case Maneuver::StraightDecel: return 0.0;
    default: return 0.5;
  }
}

inline double urgency_of(const IntentVector& iv) {
  if (iv.weak) return 0.0;
  double u = 0.0;
  switch (iv.task) {
    case Task::Emergency: u = 1.0; break;
    case Task::Official: u = 0.6; break;
    case Task::Commuting: u = 0.5; break;
    case Task::Leisure: u = 0.1; break;
    case Task::Unknown: break;
  }
  if (iv.action == Action::Accelerating) u = std::max(u, 0.6);
  if (iv.style == Style::Aggressive) u = std::max(u, 0.5);
  return u;
}

struct Leader {
  double gap{0.0};
  double v{0.0};
};

struct FeatureInputs {
  const OpmGraph* scene{nullptr};
  TurnLabel nav{TurnLabel::Through};
  IntentVector ego_intent;                                    // already gated
  std::vector<std::pair<std::string, IntentVector>> others;   // already gated
  std::map<std::string, double> saliency;
  std::optional<Leader> leader;  // real same-lane leader only
  double dttc_threshold{3.0};
};

struct ManeuverFeatures {
  PerManeuver<FeatureVec> x{};
  double risk{0.0};  // 0 = no close conflict, 1 = maximal caution
  bool risky{false};
  bool indeterminate{false};
};

inline ManeuverFeatures build_features(const FeatureInputs& in, const UtilityParams& up) {
  if (!in.scene || in.scene->objects.empty()) throw InputError("scene must contain the ego vehicle");
  const OpmGraph& g = *in.scene;
  const VehicleState& ego = g.objects.front();
  const double v = ego.speed();
  const auto& idm = up.idm;

  ManeuverFeatures f;
  for (const auto& c : g.conflicts) {
    if (!c.involves(ego.id)) continue;
    if (!c.delta_ttc) {
      f.indeterminate = true;
      f.risk = 1.0;
    } else {
      if (*c.delta_ttc < in.dttc_threshold) f.risky = true;
      f.risk = std::max(f.risk, std::max(0.0, 1.0 - *c.delta_ttc / up.safety_band));
    }
  }

  double caution = 1.0;
  if (in.ego_intent.style == Style::Conservative) caution = 1.25;
  if (in.ego_intent.style == Style::Aggressive) caution = 0.75;

  const double urgency = urgency_of(in.ego_intent);
  double opp_urgency = 0.0;
  for (const auto& [id, iv] : in.others) {
    if (iv.weak) continue;
    double u = urgency_of(iv);
    if (iv.action == Action::Decelerating) u = 0.0;
    opp_urgency = std::max(opp_urgency, u);
  }
  const bool conflict_active = f.risky || f.indeterminate;

  // free-road IDM when there is no leader
  const double a_idm = in.leader ? idm_acceleration(in.leader->gap, v, in.leader->v, idm)
                                 : idm_acceleration(1e9, v, v, idm);
  const double span = idm.a_max + idm.b_comf;

  for (auto m : kManeuvers) {
    FeatureVec& x = f.x[index_of(m)];
    // closeness of the maneuver's nominal acceleration to the IDM one
    double matching = 1.0;
    if (!is_turn(m)) {
      double a_m = 0.0;
      if (m == Maneuver::StraightAccel) a_m = idm.a_max;
      if (m == Maneuver::StraightDecel) a_m = -idm.b_comf;
      // braking harder than comfortable is still best matched by decelerating
      const double a_ref = m == Maneuver::StraightDecel ? std::max(a_idm, -idm.b_comf) : a_idm;
      matching = 1.0 - std::fabs(a_m - a_ref) / span;
    }
    if (!route_consistent(m, in.nav)) matching *= up.route_penalty;
    x[kMatching] = std::clamp(matching, 0.0, 1.0);

    x[kSafety] = std::clamp(1.0 - f.risk * aggressiveness(m) * caution, 0.0, 1.0);

    // terminal-speed fraction after a nominal horizon
    double vt = v;
    if (m == Maneuver::StraightAccel) vt = std::min(idm.v0, v + 1.5 * 4.0);
    if (m == Maneuver::StraightDecel) vt = std::max(0.0, v - 2.0 * 4.0);
    if (is_turn(m)) vt = std::min(v, 5.0);
    double eff = std::clamp(vt / idm.v0, 0.0, 1.0) * (0.5 + 0.5 * urgency);
    if (m == Maneuver::StraightDecel && conflict_active) eff += 0.5 * opp_urgency;
    x[kEfficiency] = std::clamp(eff, 0.0, 1.0);

    x[kRiskyFlag] = f.risky ? aggressiveness(m) : 0.0;
    x[kIndeterminateFlag] = f.indeterminate ? aggressiveness(m) : 0.0;
  }
  return f;
}

inline PerManeuver<double> utilities(const ManeuverFeatures& f, const FeatureVec& beta) {
  PerManeuver<double> V{};
  for (std::size_t i = 0; i < kManeuverCount; ++i)
    for (std::size_t k = 0; k < kFeatureDim; ++k) V[i] += beta[k] * f.x[i][k];
  return V;
}

/// Max-subtracted softmax.
inline PerManeuver<double> logit_probs(const PerManeuver<double>& V) {
  for (double v : V)
    if (!std::isfinite(v)) throw InputError("utilities must be finite");
  const double mx = *std::max_element(V.begin(), V.end());
  PerManeuver<double> P{};
  double z = 0.0;
  for (std::size_t i = 0; i < kManeuverCount; ++i) z += (P[i] = std::exp(V[i] - mx));
  for (auto& p : P) p /= z;
  return P;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("cosine similarity of vectors with different sizes");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

using FeatureHistory = PerManeuver<std::deque<std::vector<double>>>;

/// D_i = max over H_i of cos(current_i, past); empty H_i gives 0.
inline PerManeuver<double> history_consistency(const PerManeuver<std::vector<double>>& current,
                                               const FeatureHistory& history) {
  PerManeuver<double> D{};
  for (std::size_t i = 0; i < kManeuverCount; ++i) {
    bool any = false;
    double best = 0.0;
    for (const auto& past : history[i]) {
      const double c = cosine_similarity(current[i], past);
      if (!any || c > best) best = c;
      any = true;
    }
    D[i] = any ? best : 0.0;
  }
  return D;
}

inline PerManeuver<double> apply_corrections(const PerManeuver<double>& V, const PerManeuver<double>& D,
                                             std::optional<Maneuver> i_prev, double gamma, double lambda) {
  PerManeuver<double> Vt{};
  for (std::size_t i = 0; i < kManeuverCount; ++i) {
    Vt[i] = V[i] + gamma * D[i];
    if (i_prev && kManeuvers[i] != *i_prev) Vt[i] -= lambda;
  }
  return Vt;
}

struct ChoiceDistribution {
  PerManeuver<double> V{};
  PerManeuver<double> D{};
  PerManeuver<double> V_tilde{};
  PerManeuver<double> P{};
  std::optional<Maneuver> i_prev;
};

inline ChoiceDistribution corrected_probs(const PerManeuver<double>& V, const PerManeuver<double>& D,
                                          const PerManeuver<double>& V_tilde, std::optional<Maneuver> i_prev) {
  return {V, D, V_tilde, logit_probs(V_tilde), i_prev};
}

/// Per-agent mutable decision state.
struct DecisionContext {
  FeatureHistory history;
  std::optional<Maneuver> i_prev;

  void record(Maneuver m, const FeatureVec& x, std::size_t window) {
    auto& h = history[index_of(m)];
    h.emplace_back(x.begin(), x.end());
    while (h.size() > window) h.pop_front();
    i_prev = m;
  }
};

struct DecisionInputs {
  double t{0.0};
  OpmGraph scene;  // ego first
  TurnLabel nav{TurnLabel::Through};
  IntentVector ego_intent;  // raw; gated inside decide
  std::vector<std::pair<std::string, IntentVector>> other_intents;
  std::map<std::string, double> saliency;
  std::optional<Leader> leader;
  SceneFormat format{SceneFormat::Opm};
  double dttc_threshold{3.0};
};

struct Decision {
  double t{0.0};
  Maneuver final_maneuver{Maneuver::StraightConst};
  ChoiceDistribution dist;
  ManeuverFeatures features;
  std::optional<ReasonerResponse> response;
  bool from_reasoner{false};
  IntentVector ego_intent_gated;
  std::string diagnostic;
};

inline Decision decide(const DecisionInputs& in, DecisionContext& ctx, const UtilityParams& up,
                       const Reasoner* reasoner) {
  Decision d;
  d.t = in.t;
  FeatureInputs fi;
  fi.scene = &in.scene;
  fi.nav = in.nav;
  fi.ego_intent = gate_weak_intent(in.ego_intent, up.gate_threshold);
  for (const auto& [id, iv] : in.other_intents) fi.others.emplace_back(id, gate_weak_intent(iv, up.gate_threshold));
  fi.saliency = in.saliency;
  fi.leader = in.leader;
  fi.dttc_threshold = in.dttc_threshold;
  d.ego_intent_gated = fi.ego_intent;

  d.features = build_features(fi, up);
  const auto V = utilities(d.features, up.beta);
  PerManeuver<std::vector<double>> cur;
  for (std::size_t i = 0; i < kManeuverCount; ++i) cur[i].assign(d.features.x[i].begin(), d.features.x[i].end());
  const auto D = history_consistency(cur, ctx.history);
  const auto Vt = apply_corrections(V, D, ctx.i_prev, up.gamma, up.lambda);
  d.dist = corrected_probs(V, D, Vt, ctx.i_prev);
  const Maneuver stat = argmax(d.dist.P);
  d.final_maneuver = stat;

  if (reasoner) {
    OpmGraph g = in.scene;
    g.ego_navigation = in.nav;
    g.saliency = in.saliency;
    ReasonerRequest req;
    req.scene_text = serialize_opm(g, in.format);
    req.candidate_probs = d.dist.P;
    req.ego_intent = fi.ego_intent;
    req.other_intents = fi.others;
    req.template_id = std::string(to_string(in.format)) + "-v1";
    try {
      d.response = reasoner->recommend(req);
      if (d.response->fallback) d.diagnostic = d.response->diagnostic;
      if (d.response->confidence >= up.gate_threshold && !d.response->is_pruned(d.response->chosen)) {
        d.final_maneuver = d.response->chosen;
        d.from_reasoner = true;
      }
    } catch (const std::exception& e) {
      d.response.reset();
      d.diagnostic = std::string("reasoner failure: ") + e.what();
    }
  }
  ctx.record(d.final_maneuver, d.features.x[index_of(d.final_maneuver)], up.history_window);
  return d;
}

inline nlohmann::json audit_json(const Decision& d) {
  auto arr = [](const PerManeuver<double>& a) { return std::vector<double>(a.begin(), a.end()); };
  nlohmann::json j = {{"t", d.t},
                      {"V", arr(d.dist.V)},
                      {"D_prev", arr(d.dist.D)},
                      {"V_tilde", arr(d.dist.V_tilde)},
                      {"P", arr(d.dist.P)},
                      {"confidence", d.response ? nlohmann::json(d.response->confidence) : nlohmann::json(nullptr)},
                      {"A_final", to_string(d.final_maneuver)}};
  if (d.dist.i_prev) j["i_prev"] = to_string(*d.dist.i_prev);
  if (!d.diagnostic.empty()) j["diagnostic"] = d.diagnostic;
  return j;
}

}  // namespace mixsim
