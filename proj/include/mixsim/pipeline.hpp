#pragma once

// The proposed CAV controller: scene abstraction, maneuver decision,
// trajectory optimization and eHMI broadcast, plus route helpers shared
// with the simulator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mixsim/harness/ehmi.hpp"
#include "mixsim/intent_reasoning.hpp"
#include "mixsim/maneuver_choice.hpp"
#include "mixsim/reasoner.hpp"
#include "mixsim/scene_model.hpp"
#include "mixsim/trajectory_opt.hpp"

namespace mixsim {

inline constexpr double kVehicleLength = 4.5;  // m

/// Curvature-derived speed limits at route vertices.
struct RouteProfile {
  std::vector<double> s;
  std::vector<double> v_lim;

  static RouteProfile build(const Polyline& path, double a_lat_max) {
    RouteProfile p;
    for (std::size_t i = 1; i + 1 < path.points().size(); ++i) {
      const double k = path.curvature_at_vertex(i);
      if (k < 1e-4) continue;
      p.s.push_back(path.arc_lengths()[i]);
      p.v_lim.push_back(std::sqrt(a_lat_max / k));
    }
    return p;
  }

  /// Highest speed at `s` from which every limit ahead is reachable with
  /// deceleration `b`.
  double speed_cap(double s_now, double b) const {
    double cap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double d = s[i] - s_now;
      if (d < -1.0) continue;
      cap = std::min(cap, std::sqrt(v_lim[i] * v_lim[i] + 2.0 * b * std::max(0.0, d)));
    }
    return cap;
  }

  /// Upper bound on the commanded acceleration; +inf when unconstrained.
  double accel_limit(double s_now, double v, double b, double b_hard) const {
    const double cap = speed_cap(s_now, b);
    if (v <= cap) return std::numeric_limits<double>::infinity();
    return std::max(-b_hard, cap - v);
  }
};

/// Turn label of the current route lane once the vehicle is within
/// `commit_distance` of that lane's stop line (or past it); otherwise
/// through.
inline TurnLabel navigation_instruction(const Route& route, const IntersectionGeometry& g, double s,
                                        double commit_distance) {
  const std::size_t k = route.lane_index_at(s);
  const Lane* lane = g.find_lane(route.lane_ids[k]);
  if (!lane || lane->turn == TurnLabel::Through) return TurnLabel::Through;
  if (lane->turn == TurnLabel::Merge) return TurnLabel::Merge;
  const double local = s - route.lane_offsets[k];
  const double stop = lane->stop_s.value_or(0.0);
  return local >= stop - commit_distance ? lane->turn : TurnLabel::Through;
}

/// Nearest vehicle ahead on the ego route, travelling along it.
inline std::optional<Leader> find_leader(const Route& route, double ego_s, const VehicleState& ego,
                                         const std::vector<VehicleState>& vehicles, double lateral_tol = 1.5) {
  std::optional<Leader> best;
  for (const auto& o : vehicles) {
    if (o.id == ego.id) continue;
    const auto pr = route.path.project(o.position());
    if (pr.distance > lateral_tol || pr.s <= ego_s) continue;
    const Vec2 heading{std::cos(o.phi), std::sin(o.phi)};
    if (heading.dot(pr.tangent) < 0.7) continue;
    const double gap = pr.s - ego_s - kVehicleLength;
    if (!best || gap < best->gap) best = Leader{gap, o.speed()};
  }
  return best;
}

/// Time to cover `x` >= 0 from speed `v` under constant acceleration `a`;
/// nullopt when the vehicle stops first.
inline std::optional<double> time_to_travel(double x, double v, double a) {
  if (x <= 0.0) return 0.0;
  if (std::fabs(a) < 1e-9) {
    if (v <= 0.0) return std::nullopt;
    return x / v;
  }
  const double disc = v * v + 2.0 * a * x;
  if (disc < 0.0) return std::nullopt;
  const double t = (-v + std::sqrt(disc)) / a;
  if (!(t >= 0.0)) return std::nullopt;
  return t;
}

/// Passage windows of every other vehicle over the first crossing of its
/// route with the ego route. Vehicles in `braking` (those that announced
/// they give way) are extrapolated with their current deceleration, all
/// others at constant velocity.
inline std::vector<ConflictWindow> conflict_windows(const Route& ego_route, double ego_s,
                                                    const std::vector<VehicleState>& vehicles,
                                                    const std::vector<Route>& routes, const std::string& ego_id,
                                                    double t, double clearance, double speed_floor,
                                                    const std::set<std::string>& braking = {}) {
  std::vector<ConflictWindow> out;
  for (const auto& o : vehicles) {
    if (o.id == ego_id) continue;
    const Route* r = find_route(routes, o.id);
    if (!r) continue;
    const double so = r->path.project(o.position()).s;
    for (const auto& [se, sj, pt] : ego_route.path.intersections(r->path)) {
      if (se < ego_s - clearance) continue;
      const double dj = sj - so;
      const double v = o.speed();
      ConflictWindow w{se - clearance, se + clearance, 0.0, 0.0};
      if (v >= speed_floor) {
        double a = 0.0;
        if (braking.count(o.id) && v > 0.0) a = std::min(0.0, (o.vx * o.ax + o.vy * o.ay) / v);
        const auto t_in = time_to_travel(dj - clearance, v, a);
        if (!t_in) break;  // stops short of the zone
        const auto t_out = time_to_travel(dj + clearance, v, a);
        w.t_enter = t + *t_in;
        w.t_exit = t_out ? t + *t_out : t + 1e9;
        if (dj + clearance < 0.0) break;
      } else {
        if (std::fabs(dj) > clearance) break;
        w.t_enter = t;
        w.t_exit = t + 1e9;
      }
      out.push_back(w);
      break;
    }
  }
  return out;
}

struct EgoKinematics {
  double s{0.0}, v{0.0}, a{0.0};
  double l{0.0}, vl{0.0}, al{0.0};
};

/// Everything the controller observes at one tick.
struct AgentView {
  double t{0.0};
  std::uint64_t tick{0};
  const IntersectionGeometry* geometry{nullptr};
  std::vector<VehicleState> vehicles;  // all, any order
  std::vector<Route> routes;
  std::vector<IntentPair> intents;     // messages heard so far, latest per speaker
  const HistoryBuffer* history{nullptr};
};

struct ControlOutput {
  double accel{0.0};
  double l{0.0};
  std::vector<EhmiMessage> messages;
};

struct ProposedParams {
  UtilityParams utility;
  TrajectoryParams trajectory;
  SceneThresholds thresholds;
  double replan_period{0.5};    // s
  double commit_distance{0.0};  // m before the stop line where turn navigation starts
  double clearance{4.0};        // m half-length of a conflict zone
  double a_lat_max{2.0};        // m/s^2
  SceneFormat format{SceneFormat::Opm};
};

class ProposedController {
 public:
  ProposedController(std::string ego_id, ProposedParams params, const Reasoner* reasoner, std::uint64_t seed,
                     IntentVector ego_intent = {})
      : id_(std::move(ego_id)), p_(std::move(params)), reasoner_(reasoner), seed_(seed), ego_intent_(ego_intent) {
    p_.utility.validate();
    p_.trajectory.validate();
  }

  void set_passenger_input(std::string_view text) { ego_intent_ = query_ego_intent(text, ego_intent_); }
  const IntentVector& ego_intent() const { return ego_intent_; }

  /// Keeps the inputs of every decision so the episode can be replayed.
  void record_inputs(bool on) { record_ = on; }
  const std::vector<DecisionInputs>& recorded_inputs() const { return recorded_; }
  const std::vector<Decision>& decisions() const { return decisions_; }
  const std::optional<Trajectory>& trajectory() const { return traj_; }
  std::size_t fallback_count() const { return fallbacks_; }

  ControlOutput step(const AgentView& view, const EgoKinematics& k, const RouteProfile& profile) {
    ControlOutput out;
    const Route* route = find_route(view.routes, id_);
    const VehicleState* ego = nullptr;
    for (const auto& v : view.vehicles)
      if (v.id == id_) ego = &v;
    if (!route || !ego) throw InputError("proposed controller: ego " + id_ + " missing from view");

    const bool horizon_done = traj_ && view.t >= traj_->lon.T - 1e-9;
    // a new message addressed to the ego also triggers a replan
    std::string heard;
    for (const auto& ip : view.intents)
      if (ip.id_j == id_) heard += ip.id_i + '\x1f' + ip.payload + '\x1e';
    const bool new_message = heard != heard_;
    heard_ = std::move(heard);
    if (!traj_ || view.t >= next_replan_ - 1e-9 || horizon_done || new_message) {
      replan(view, *route, *ego, k, profile, out);
      next_replan_ = view.t + p_.replan_period;
    }
    out.accel = traj_->lon.acc(view.t);
    out.l = traj_->lat.l(view.t);
    return out;
  }

 private:
  void replan(const AgentView& view, const Route& route, const VehicleState& ego, const EgoKinematics& k,
              const RouteProfile& profile, ControlOutput& out) {
    const auto& g = *view.geometry;
    OpmBuildInput bi;
    bi.ego = ego;
    for (const auto& v : view.vehicles)
      if (v.id != id_) bi.others.push_back(v);
    bi.geometry = &g;
    bi.routes = view.routes;
    bi.intents = view.intents;
    bi.thresholds = p_.thresholds;
    bi.timestamp = view.t;
    OpmGraph graph = build_opm_graph(bi);

    DecisionInputs di;
    di.t = view.t;
    di.nav = navigation_instruction(route, g, k.s, p_.commit_distance);
    di.ego_intent = ego_intent_;
    for (const auto& ip : graph.intents) {
      if (ip.id_j != id_) continue;
      const IntentVector iv = parse_explicit_intent(ip.channel, ip.payload);
      auto it = std::find_if(di.other_intents.begin(), di.other_intents.end(),
                             [&](const auto& e) { return e.first == ip.id_i; });
      if (it == di.other_intents.end()) di.other_intents.emplace_back(ip.id_i, iv);
      else it->second = iv;
    }
    di.saliency = saliency_for(graph, view);
    di.leader = find_leader(route, k.s, ego, view.vehicles);
    di.format = p_.format;
    di.dttc_threshold = p_.thresholds.dttc_threshold;
    di.scene = std::move(graph);
    if (record_) recorded_.push_back(di);

    Decision d = decide(di, ctx_, p_.utility, reasoner_);

    StartState st;
    st.t0 = view.t;
    st.s = k.s;
    st.v = k.v;
    st.a = k.a;
    st.l = k.l;
    st.vl = k.vl;
    st.al = k.al;
    st.v_cap = std::min(p_.utility.idm.v0, profile.speed_cap(k.s, p_.trajectory.b_comf));
    std::set<std::string> braking;
    for (const auto& [id, iv] : di.other_intents)
      if (!gate_weak_intent(iv, p_.utility.gate_threshold).weak && iv.action == Action::Decelerating) braking.insert(id);
    const auto windows = conflict_windows(route, k.s, view.vehicles, view.routes, id_, view.t, p_.clearance,
                                          p_.thresholds.speed_floor, braking);
    const std::uint64_t seed = splitmix64(seed_ ^ (view.tick * 0x9E3779B97F4A7C15ull));
    auto res = optimize(st, d.final_maneuver, windows, p_.trajectory, seed);
    if (res.fallback) ++fallbacks_;
    traj_ = std::move(res.best);

    // eHMI: broadcast on change of the executed maneuver
    const Maneuver executed = res.fallback ? Maneuver::StraightDecel : d.final_maneuver;
    const bool conflict = std::any_of(di.scene.conflicts.begin(), di.scene.conflicts.end(),
                                      [&](const auto& c) { return c.involves(id_); });
    if (!conflict) clarified_ = false;
    std::optional<std::string> question;
    if (!clarified_) question = confirmatory_question(d.ego_intent_gated, di.scene);
    if (question) {
      clarified_ = true;
      out.messages.push_back(ehmi_render(executed, std::nullopt, {view.t, id_, question}));
    }
    if (!last_broadcast_ || *last_broadcast_ != executed) {
      std::optional<std::string> text;
      if (d.from_reasoner && d.response && !res.fallback) text = d.response->ehmi_text;
      out.messages.push_back(ehmi_render(executed, text, {view.t, id_, std::nullopt}));
      last_broadcast_ = executed;
    }
    decisions_.push_back(std::move(d));
  }

  std::map<std::string, double> saliency_for(const OpmGraph& graph, const AgentView& view) const {
    std::map<std::string, double> out;
    std::vector<QueryVector> qs;
    const VehicleState& ego = graph.objects.front();
    const double dt = view.history ? view.history->dt() : 0.1;
    for (std::size_t i = 1; i < graph.objects.size(); ++i) {
      const auto& o = graph.objects[i];
      VehicleState prev = o;
      if (view.history) {
        if (const auto* ring = view.history->find(o.id); ring && ring->size() >= 2)
          prev = (*ring)[ring->size() - 2].state;
      }
      qs.push_back(make_query(o, prev, ego, dt));
    }
    if (qs.empty()) return out;
    const auto w = attention_saliency(qs, attention_);
    for (std::size_t i = 0; i < qs.size(); ++i) out[qs[i].id] = w[i];
    return out;
  }

  std::string id_;
  ProposedParams p_;
  const Reasoner* reasoner_;
  std::uint64_t seed_;
  IntentVector ego_intent_;
  AttentionWeights attention_ = AttentionWeights::defaults();
  DecisionContext ctx_;
  std::optional<Trajectory> traj_;
  double next_replan_{0.0};
  std::optional<Maneuver> last_broadcast_;
  bool clarified_{false};
  std::string heard_;
  bool record_{false};
  std::vector<DecisionInputs> recorded_;
  std::vector<Decision> decisions_;
  std::size_t fallbacks_{0};

 public:
  void set_attention(AttentionWeights w) {
    w.validate();
    attention_ = std::move(w);
  }
};

}  // namespace mixsim
