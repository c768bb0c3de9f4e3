#pragma once

// Closed-loop episode simulation: route-following kinematics, controllers,
// scripted human drivers, conflict tracking and metrics.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixsim/baselines.hpp"
#include "mixsim/harness/ehmi.hpp"
#include "mixsim/pipeline.hpp"
#include "mixsim/reasoner.hpp"
#include "mixsim/scenario.hpp"
#include "mixsim/scene_model.hpp"

namespace mixsim {

inline constexpr double kAccelCmdMin = -8.0;
inline constexpr double kAccelCmdMax = 3.0;

inline constexpr const char* kReplyAggressive = "I'm in a hurry, I will pass first.";
inline constexpr const char* kReplyConservative = "After you, I will wait.";

/// Inputs a scripted driver reacts to.
struct HdvObservation {
  ProcessState self;
  const ConflictPair* conflict{nullptr};  // nearest conflict involving self
  double opponent_speed{0.0};
  std::optional<Leader> leader;
  double speed_floor{0.1};
  bool passing_announced{false};  // the conflicting vehicle said it goes first
};

/// Scripted human driver. Aggressive drivers hold their speed and only brake
/// hard when a collision is imminent; conservative drivers give way while a
/// conflicting vehicle is moving; "idm" is the plain virtual-leader IDM.
inline double scripted_hdv_accel(HdvStyle style, const HdvObservation& o, const IdmControllerState& idm,
                                 const HdvParams& hp) {
  const double free = idm_acceleration(o.leader ? o.leader->gap : 1e9, o.self.v, o.leader ? o.leader->v : o.self.v,
                                       idm.params);
  switch (style) {
    case HdvStyle::Idm:
    case HdvStyle::Mixed: {
      OpmGraph g;
      if (o.conflict) g.conflicts.push_back(*o.conflict);
      return idm_control(o.self, g, idm, o.leader);
    }
    case HdvStyle::Aggressive:
      if (o.conflict && o.conflict->delta_ttc && *o.conflict->delta_ttc < hp.aggressive_brake_dttc)
        return -idm.params.b_hard;
      return free;
    case HdvStyle::Conservative: {
      if (!o.conflict || o.opponent_speed < o.speed_floor) return free;
      const double d = o.conflict->distance_for(o.self.id);
      if (d <= hp.clearance) return std::min(0.0, free);  // already in the zone: clear it
      double stop = idm_acceleration(d - hp.clearance, o.self.v, 0.0, idm.params);
      if (o.passing_announced && o.self.v > 0.0) stop = std::min(stop, -idm.params.b_comf);
      return std::min({0.0, free, stop});
    }
  }
  return free;
}

struct Agent {
  VehicleConfig cfg;
  Route route;
  RouteProfile profile;
  HdvStyle style{HdvStyle::Idm};  // resolved (never Mixed)
  double desired_speed{10.0};
  double s{0.0}, v{0.0}, a{0.0};
  double l{0.0}, vl{0.0}, al{0.0};
  double s_center{0.0};
  bool exited{false};
  double exit_time{0.0};
  IdmControllerState idm;
  GtControllerState gt;
  std::unique_ptr<ProposedController> proposed;
  std::size_t replies_sent{0};
  std::size_t messages_seen{0};
  std::string last_heard;  // latest message from the vehicle in conflict

  bool is_cav() const { return cfg.role == "cav"; }
};

struct EpisodeOverrides {
  std::optional<ControllerKind> cav_controller;
  std::optional<double> speed_class;  // sets both initial speeds and the CAV desired speed
  std::optional<HdvStyle> hdv_style;
  std::optional<bool> stop_at_exit;
  std::optional<double> max_duration;
  bool jitter{false};  // start-position and desired-speed jitter on scripted vehicles
};

/// Risky-episode bookkeeping per unordered vehicle pair. An episode starts
/// the first tick the pair is risky and resolves at the first tick it is no
/// longer risky; re-entering the risky set before the episode is closed
/// extends it, so a flickering pair counts once.
struct ConflictInterval {
  std::string id_i, id_j;
  double start{0.0};
  double end{0.0};
  bool risky_now{false};
};

class ConflictTracker {
 public:
  void update(double t, const std::vector<std::pair<std::string, std::string>>& risky) {
    for (auto& ci : intervals_) {
      const bool now = std::any_of(risky.begin(), risky.end(), [&](const auto& p) { return same(ci, p); });
      if (ci.risky_now && !now) ci.end = t;
      if (now) ci.end = t;
      ci.risky_now = now;
    }
    for (const auto& p : risky) {
      const bool known = std::any_of(intervals_.begin(), intervals_.end(), [&](const auto& ci) { return same(ci, p); });
      if (!known) intervals_.push_back({p.first, p.second, t, t, true});
    }
  }

  /// Episodes still risky at the end resolve at `t`.
  void close(double t) {
    for (auto& ci : intervals_)
      if (ci.risky_now) {
        ci.end = t;
        ci.risky_now = false;
      }
  }

  const std::vector<ConflictInterval>& intervals() const { return intervals_; }

  /// 0 when no pair was ever risky.
  double mean_duration() const {
    if (intervals_.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& c : intervals_) sum += c.end - c.start;
    return sum / intervals_.size();
  }

 private:
  static bool same(const ConflictInterval& ci, const std::pair<std::string, std::string>& p) {
    return (ci.id_i == p.first && ci.id_j == p.second) || (ci.id_i == p.second && ci.id_j == p.first);
  }
  std::vector<ConflictInterval> intervals_;
};

struct EpisodeMetrics {
  double avg_speed{0.0};
  double avg_jerk{0.0};
  double avg_conflict_duration{0.0};
  bool collision{false};
  double completion_time{0.0};
  bool completed{false};
  bool fault{false};
  std::string fault_reason;
  std::size_t fallbacks{0};
  std::map<std::string, std::string> hdv_styles;
};

/// One closed-loop episode. Stepped externally (session server) or run to
/// completion.
class Simulation {
 public:
  using HumanInput = std::function<double(const Simulation&, const std::string& id)>;

  Simulation(const ScenarioConfig& cfg, std::uint64_t seed, const EpisodeOverrides& ov = {},
             const Reasoner* reasoner = nullptr)
      : cfg_(cfg), seed_(seed), reasoner_(reasoner), history_(3.0, cfg.sim.dt) {
    if (ov.stop_at_exit) cfg_.sim.stop_at_exit = *ov.stop_at_exit;
    if (ov.max_duration) cfg_.sim.max_duration = *ov.max_duration;
    std::mt19937_64 rng(splitmix64(seed));
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const auto& vc0 : cfg_.vehicles) {
      Agent ag;
      ag.cfg = vc0;
      auto& vc = ag.cfg;
      if (vc.role == "cav" && ov.cav_controller) vc.controller = *ov.cav_controller;
      if (ov.speed_class) vc.speed = *ov.speed_class;
      if (vc.role == "hdv" && ov.hdv_style && vc.controller == ControllerKind::Scripted) vc.style = *ov.hdv_style;
      ag.style = vc.style;
      if (ag.style == HdvStyle::Mixed)
        ag.style = std::bernoulli_distribution(0.5)(rng) ? HdvStyle::Aggressive : HdvStyle::Conservative;
      ag.desired_speed = ov.speed_class ? *ov.speed_class : vc.desired_speed.value_or(vc.speed);
      ag.desired_speed = std::max(ag.desired_speed, 1.0);
      const bool scripted = vc.controller == ControllerKind::Scripted;
      if (ov.jitter && scripted) ag.desired_speed *= 1.0 + cfg_.sim.desired_jitter * u(rng);

      ag.route = build_route(cfg_.geometry, vc.id, vc.route);
      ag.profile = RouteProfile::build(ag.route.path, cfg_.proposed.a_lat_max);
      const auto pr = ag.route.path.project(vc.position);
      ag.s = pr.s;
      if (ov.jitter && scripted) ag.s += cfg_.sim.start_jitter * u(rng);
      ag.v = vc.speed;
      ag.s_center = ag.route.path.project(cfg_.geometry.center).s;
      ag.idm = cfg_.idm;
      ag.idm.params.v0 = ag.desired_speed;
      ag.gt = cfg_.gt;
      if (vc.controller == ControllerKind::Proposed) {
        ProposedParams pp = cfg_.proposed;
        pp.utility.idm.v0 = ag.desired_speed;
        const std::uint64_t s2 = splitmix64(seed ^ std::hash<std::string>{}(vc.id));
        ag.proposed = std::make_unique<ProposedController>(vc.id, pp, reasoner_, s2);
        if (!vc.passenger_input.empty()) ag.proposed->set_passenger_input(vc.passenger_input);
      }
      agents_.push_back(std::move(ag));
    }
    for (const auto& ag : agents_) routes_.push_back(ag.route);
    for (std::size_t i = 0; i < agents_.size(); ++i) metric_idx_ = metric_idx_ ? metric_idx_ : pick_metric(i);
    if (!metric_idx_) metric_idx_ = 0;
  }

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  void set_human_input(HumanInput f) { human_ = std::move(f); }
  void set_trace(std::ostream* os) { trace_ = os; }
  void set_audit(std::ostream* os) { audit_ = os; }
  void record_decision_inputs(bool on) {
    for (auto& a : agents_)
      if (a.proposed) a.proposed->record_inputs(on);
  }

  double time() const { return t_; }
  std::uint64_t tick() const { return tick_; }
  bool done() const { return done_; }
  const std::vector<Agent>& agents() const { return agents_; }
  const Agent* agent(std::string_view id) const {
    for (const auto& a : agents_)
      if (a.cfg.id == id) return &a;
    return nullptr;
  }
  const std::vector<EhmiMessage>& ehmi_log() const { return ehmi_; }
  const std::vector<ConflictInterval>& conflict_intervals() const { return conflicts_.intervals(); }
  const ScenarioConfig& config() const { return cfg_; }
  const HistoryBuffer& history() const { return history_; }
  const std::vector<Route>& routes() const { return routes_; }

  VehicleState state_of(const Agent& a) const {
    const Vec2 tan = a.route.path.tangent_at(a.s);
    const Vec2 p = a.route.path.point_at(a.s) + tan.left_normal() * a.l;
    VehicleState vs;
    vs.id = a.cfg.id;
    vs.x = p.x;
    vs.y = p.y;
    vs.vx = a.v * tan.x;
    vs.vy = a.v * tan.y;
    vs.ax = a.a * tan.x;
    vs.ay = a.a * tan.y;
    vs.phi = std::atan2(tan.y, tan.x);
    return vs;
  }

  std::vector<VehicleState> snapshot() const {
    std::vector<VehicleState> out;
    for (const auto& a : agents_) out.push_back(state_of(a));
    return out;
  }

  /// Advances one tick. Returns false once the episode has ended.
  bool step() {
    if (done_) return false;
    const double dt = cfg_.sim.dt;
    const auto vehicles = snapshot();
    for (const auto& v : vehicles) history_.push(v, t_);
    for (const auto& v : vehicles) {
      if (!v.finite()) {
        finish("non-finite state for " + v.id);
        return false;
      }
    }

    // collision and conflict bookkeeping on the current state
    for (std::size_t i = 0; i < vehicles.size(); ++i)
      for (std::size_t j = i + 1; j < vehicles.size(); ++j)
        if (distance(vehicles[i].position(), vehicles[j].position()) < cfg_.sim.collision_distance) collision_ = true;
    track_conflicts(vehicles);
    if (collision_) {
      finish("");
      return false;
    }

    AgentView view;
    view.t = t_;
    view.tick = tick_;
    view.geometry = &cfg_.geometry;
    view.vehicles = vehicles;
    view.routes = routes_;
    view.intents = heard_intents();
    view.history = &history_;

    std::vector<EhmiMessage> emitted;
    std::vector<double> cmd(agents_.size(), 0.0);
    std::vector<double> lat(agents_.size(), 0.0);
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      auto& ag = agents_[i];
      lat[i] = ag.l;
      cmd[i] = command(ag, view, lat[i], emitted);
      const double lim = ag.profile.accel_limit(ag.s, ag.v, cfg_.proposed.utility.idm.b_comf,
                                                cfg_.proposed.utility.idm.b_hard);
      cmd[i] = std::clamp(std::min(cmd[i], lim), kAccelCmdMin, kAccelCmdMax);
      if (!std::isfinite(cmd[i])) {
        finish("non-finite command from " + ag.cfg.id);
        return false;
      }
    }
    for (auto& m : emitted) ehmi_.push_back(m);

    std::vector<nlohmann::json> trace_vehicles;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      auto& ag = agents_[i];
      const double v1 = std::max(0.0, ag.v + cmd[i] * dt);
      const double a_eff = (v1 - ag.v) / dt;
      if (i == *metric_idx_ && !ag.exited) {
        speeds_.push_back(ag.v);
        accels_.push_back(a_eff);
      }
      ag.s += 0.5 * (ag.v + v1) * dt;
      ag.v = v1;
      ag.a = a_eff;
      const double l1 = lat[i];
      const double vl1 = (l1 - ag.l) / dt;
      ag.al = (vl1 - ag.vl) / dt;
      ag.vl = vl1;
      ag.l = l1;
    }
    if (trace_) write_trace(vehicles, emitted);

    t_ += dt;
    ++tick_;
    for (auto& ag : agents_) {
      if (!ag.exited && ag.s - ag.s_center >= cfg_.geometry.exit_distance) {
        ag.exited = true;
        ag.exit_time = t_;
      }
    }
    const bool all_exited = std::all_of(agents_.begin(), agents_.end(), [](const Agent& a) { return a.exited; });
    if ((cfg_.sim.stop_at_exit && all_exited) || t_ >= cfg_.sim.max_duration - 1e-9) finish("");
    return !done_;
  }

  EpisodeMetrics run() {
    while (step()) {
    }
    return metrics();
  }

  EpisodeMetrics metrics() const {
    EpisodeMetrics m;
    const Agent& ag = agents_[*metric_idx_];
    if (!speeds_.empty()) {
      double sum = 0.0;
      for (double v : speeds_) sum += v;
      m.avg_speed = sum / speeds_.size();
    }
    if (accels_.size() >= 2) {
      double sum = 0.0;
      for (std::size_t k = 1; k < accels_.size(); ++k) sum += std::fabs(accels_[k] - accels_[k - 1]) / cfg_.sim.dt;
      m.avg_jerk = sum / (accels_.size() - 1);
    }
    m.avg_conflict_duration = conflicts_.mean_duration();
    m.collision = collision_;
    m.completed = ag.exited;
    m.completion_time = ag.exited ? ag.exit_time : t_;
    m.fault = !fault_.empty();
    m.fault_reason = fault_;
    for (const auto& a : agents_) {
      if (a.proposed) m.fallbacks += a.proposed->fallback_count();
      if (a.cfg.controller == ControllerKind::Scripted) m.hdv_styles[a.cfg.id] = std::string(to_string(a.style));
    }
    return m;
  }

  const Agent& metric_agent() const { return agents_[*metric_idx_]; }

 private:
  std::optional<std::size_t> pick_metric(std::size_t i) const {
    if (agents_[i].is_cav()) return i;
    return std::nullopt;
  }

  std::vector<IntentPair> heard_intents() const {
    // latest message per (speaker, addressee)
    std::map<std::pair<std::string, std::string>, IntentPair> latest;
    for (const auto& m : ehmi_) {
      for (const auto& a : agents_) {
        if (a.cfg.id == m.source) continue;
        IntentPair ip{m.source, a.cfg.id, IntentChannel::EhmiText, m.text};
        if (auto it = addressee_.find(&m - ehmi_.data()); it != addressee_.end() && it->second != a.cfg.id) continue;
        latest[{m.source, a.cfg.id}] = ip;
      }
    }
    std::vector<IntentPair> out;
    for (auto& [k, v] : latest) out.push_back(std::move(v));
    return out;
  }

  double command(Agent& ag, const AgentView& view, double& lat_out, std::vector<EhmiMessage>& emitted) {
    const VehicleState self = state_of(ag);
    const auto leader = find_leader(ag.route, ag.s, self, view.vehicles);
    switch (ag.cfg.controller) {
      case ControllerKind::Proposed: {
        EgoKinematics k{ag.s, ag.v, ag.a, ag.l, ag.vl, ag.al};
        auto out = ag.proposed->step(view, k, ag.profile);
        lat_out = out.l;
        for (auto& m : out.messages) {
          if (audit_) *audit_ << to_json(m).dump() << '\n';
          emitted.push_back(std::move(m));
        }
        if (audit_ && !ag.proposed->decisions().empty() &&
            ag.proposed->decisions().back().t == view.t) {
          *audit_ << audit_json(ag.proposed->decisions().back()).dump() << '\n';
        }
        return out.accel;
      }
      case ControllerKind::Human:
        if (human_) return human_(*this, ag.cfg.id);
        return 0.0;
      default:
        break;
    }

    const auto conflicts = detect_conflicts(view.vehicles, view.routes, cfg_.proposed.thresholds.speed_floor,
                                            ag.cfg.id);
    OpmGraph g;
    for (const auto& c : conflicts)
      if (c.involves(ag.cfg.id)) g.conflicts.push_back(c);
    const ConflictPair* nearest = nearest_conflict(g, ag.cfg.id);
    double opp_speed = 0.0;
    if (nearest) {
      for (const auto& v : view.vehicles)
        if (v.id == nearest->other(ag.cfg.id)) opp_speed = v.speed();
    }
    ProcessState ps;
    ps.id = ag.cfg.id;
    ps.v = ag.v;
    ps.a = ag.a;
    // baselines and scripted drivers slow for curves through their desired speed
    const double v_cap = std::min(ag.desired_speed, ag.profile.speed_cap(ag.s, cfg_.proposed.utility.idm.b_comf));
    IdmControllerState idm = ag.idm;
    idm.params.v0 = std::max(v_cap, 0.5);

    switch (ag.cfg.controller) {
      case ControllerKind::Idm:
        return idm_control(ps, g, idm, leader);
      case ControllerKind::Gt: {
        // jerk-limited, so it plans curve braking at half the comfortable rate
        const double gt_cap =
            std::min(ag.desired_speed, ag.profile.speed_cap(ag.s, 0.5 * cfg_.proposed.utility.idm.b_comf));
        auto c = gt_control(ps, nearest, opp_speed, ag.gt, cfg_.sim.dt, gt_cap, idm.clearance, idm.params.b_hard);
        double a = c.accel;
        if (leader) a = std::min(a, idm_acceleration(leader->gap, ag.v, leader->v, idm.params));
        return a;
      }
      case ControllerKind::Scripted: {
        const EhmiMessage* heard = hdv_reply(ag, nearest, emitted);
        if (heard) ag.last_heard = heard->text;
        if (!nearest) ag.last_heard.clear();
        bool passing = false;
        if (!ag.last_heard.empty()) {
          const IntentVector iv = parse_explicit_intent(IntentChannel::EhmiText, ag.last_heard);
          passing = !iv.all_unknown() && iv.action != Action::Decelerating;
        }
        HdvObservation o{ps, nearest, opp_speed, leader, cfg_.proposed.thresholds.speed_floor, passing};
        return scripted_hdv_accel(ag.style, o, idm, cfg_.hdv);
      }
      default:
        return 0.0;
    }
  }

  /// Scripted drivers answer every new message from a proposed CAV while
  /// they are in conflict with it.
  /// Returns the latest new message from the conflicting vehicle, if any.
  const EhmiMessage* hdv_reply(Agent& ag, const ConflictPair* nearest, std::vector<EhmiMessage>& emitted) {
    const EhmiMessage* latest = nullptr;
    for (; ag.messages_seen < ehmi_.size(); ++ag.messages_seen) {
      const auto& m = ehmi_[ag.messages_seen];
      if (m.source == ag.cfg.id || m.trigger == EhmiTrigger::Reply) continue;
      const Agent* src = agent(m.source);
      if (src && src->proposed && nearest && nearest->involves(m.source)) latest = &m;
    }
    if (!latest || (ag.style != HdvStyle::Aggressive && ag.style != HdvStyle::Conservative)) return latest;
    EhmiMessage r;
    r.t = t_;
    r.source = ag.cfg.id;
    r.text = ag.style == HdvStyle::Aggressive ? kReplyAggressive : kReplyConservative;
    r.trigger = EhmiTrigger::Reply;
    addressee_[ehmi_.size() + emitted.size()] = latest->source;
    emitted.push_back(r);
    ++ag.replies_sent;
    return latest;
  }

  void track_conflicts(const std::vector<VehicleState>& vehicles) {
    std::vector<std::pair<std::string, std::string>> risky;
    for (const auto& c : detect_conflicts(vehicles, routes_, cfg_.proposed.thresholds.speed_floor))
      if (c.risky(cfg_.proposed.thresholds.dttc_threshold)) risky.emplace_back(c.id_i, c.id_j);
    conflicts_.update(t_, risky);
  }

  void finish(const std::string& fault) {
    done_ = true;
    fault_ = fault;
    conflicts_.close(t_);
  }

  void write_trace(const std::vector<VehicleState>& vehicles, const std::vector<EhmiMessage>& emitted) {
    nlohmann::json j;
    j["tick"] = tick_;
    j["t"] = t_;
    auto& vs = j["vehicles"] = nlohmann::json::array();
    for (std::size_t i = 0; i < vehicles.size(); ++i) {
      const auto& v = vehicles[i];
      vs.push_back({{"id", v.id}, {"x", v.x}, {"y", v.y}, {"phi", v.phi}, {"v", v.speed()},
                    {"a", agents_[i].a}, {"s", agents_[i].s}});
    }
    auto& ms = j["ehmi"] = nlohmann::json::array();
    for (const auto& m : emitted) ms.push_back(to_json(m));
    *trace_ << j.dump() << '\n';
  }

  ScenarioConfig cfg_;
  std::uint64_t seed_;
  const Reasoner* reasoner_;
  HistoryBuffer history_;
  std::vector<Agent> agents_;
  std::vector<Route> routes_;
  std::optional<std::size_t> metric_idx_;
  HumanInput human_;
  std::ostream* trace_{nullptr};
  std::ostream* audit_{nullptr};
  double t_{0.0};
  std::uint64_t tick_{0};
  bool done_{false};
  bool collision_{false};
  std::string fault_;
  ConflictTracker conflicts_;
  std::vector<EhmiMessage> ehmi_;
  std::map<std::size_t, std::string> addressee_;  // message index -> sole addressee (replies)
  std::vector<double> speeds_;
  std::vector<double> accels_;
};

/// Episode seed shared by every controller for one (speed class, repetition).
inline std::uint64_t episode_seed(std::uint64_t seed, double speed_class, std::size_t rep) {
  const auto sc = static_cast<std::uint64_t>(std::llround(speed_class * 1000.0));
  return splitmix64(seed ^ splitmix64(sc * 0x100000001B3ull + rep + 1));
}

/// Built-in merge: a ramp joining a main lane at the origin.
inline ScenarioConfig build_merging_scenario(double cav_start = 40.0, double hdv_start = 50.0) {
  ScenarioConfig c;
  c.name = "merging";
  Lane main;
  main.id = "main";
  main.turn = TurnLabel::Through;
  main.centerline = Polyline({{-80.0, 0.0}, {80.0, 0.0}});
  Lane ramp;
  ramp.id = "ramp";
  ramp.turn = TurnLabel::Merge;
  ramp.centerline = Polyline({{-36.0, -27.0}, {0.0, 0.0}});  // ~37 deg, so a held vehicle is clear of main
  c.geometry.lanes = {main, ramp};
  c.geometry.center = {0.0, 0.0};
  c.geometry.finalize();
  const Vec2 ramp_dir = Vec2{0.8, 0.6};
  VehicleConfig cav;
  cav.id = "CAV";
  cav.role = "cav";
  cav.position = ramp_dir * -cav_start;
  cav.speed = 8.0;
  cav.route = {"ramp", "main"};
  cav.controller = ControllerKind::Proposed;
  VehicleConfig hdv;
  hdv.id = "HDV";
  hdv.role = "hdv";
  hdv.position = {-hdv_start, 0.0};
  hdv.speed = 8.0;
  hdv.route = {"main"};
  hdv.controller = ControllerKind::Scripted;
  hdv.style = HdvStyle::Mixed;
  c.vehicles = {hdv, cav};
  return c;
}

}  // namespace mixsim
