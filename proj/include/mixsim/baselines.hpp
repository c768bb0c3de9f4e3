#pragma once

// Reference controllers: IDM with a conflict-point virtual leader, and a
// two-player proceed/yield Stackelberg controller.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "mixsim/maneuver_choice.hpp"
#include "mixsim/scene_model.hpp"

namespace mixsim {

struct IdmControllerState {
  IdmParams params;
  bool virtual_leader{true};
  double clearance{4.0};  // m kept short of the conflict point
};

/// Conflict with the smallest ego distance among those involving `ego_id`.
inline const ConflictPair* nearest_conflict(const OpmGraph& scene, const std::string& ego_id) {
  const ConflictPair* best = nullptr;
  for (const auto& c : scene.conflicts) {
    if (!c.involves(ego_id)) continue;
    if (!best || c.distance_for(ego_id) < best->distance_for(ego_id)) best = &c;
  }
  return best;
}

/// A conflict pair only exists while its point lies ahead of both
/// vehicles, so an absent pair means the opponent has cleared. Once the
/// ego is within the clearance of the point it is committed and the
/// virtual leader is dropped.
inline double idm_control(const ProcessState& ego, const OpmGraph& scene, const IdmControllerState& st,
                          const std::optional<Leader>& real_leader = std::nullopt) {
  double gap = std::numeric_limits<double>::infinity();
  double v_lead = ego.v;
  if (real_leader) {
    gap = real_leader->gap;
    v_lead = real_leader->v;
  }
  if (st.virtual_leader) {
    if (const ConflictPair* c = nearest_conflict(scene, ego.id)) {
      const double d = c->distance_for(ego.id);
      if (d > st.clearance && d - st.clearance < gap) {
        gap = d - st.clearance;
        v_lead = 0.0;
      }
    }
  }
  if (!std::isfinite(gap)) gap = 1e9;
  return idm_acceleration(gap, ego.v, v_lead, st.params);
}

enum class GtAction { Proceed, Yield };

inline std::string_view to_string(GtAction a) { return a == GtAction::Proceed ? "proceed" : "yield"; }

struct GtControllerState {
  double gain{1.0};            // efficiency gain of passing first
  double collision_cost{20.0};
  double delay_cost{0.5};
  double noncompliance{0.1};   // probability the follower ignores its best response
  double margin{1.0};          // s; both-proceed is a collision below this delta-TTC
  double a_nom{1.5};
  double b_nom{2.0};
  double jerk_limit{1.0};      // m/s^3 on the issued command
  // per-agent memory
  bool yielding{false};
  double last_accel{0.0};
  bool has_last{false};

  void validate() const {
    if (!(collision_cost > gain && gain > 0.0)) throw ConfigError("GT payoffs need collision_cost > gain > 0");
    if (delay_cost < 0.0 || noncompliance < 0.0 || noncompliance > 1.0) throw ConfigError("GT parameters out of range");
  }
};

/// payoff(row = own action, col = other action)
inline double gt_payoff(GtAction own, GtAction other, bool collision_risk, const GtControllerState& s) {
  if (own == GtAction::Proceed && other == GtAction::Yield) return s.gain;
  if (own == GtAction::Yield && other == GtAction::Proceed) return -s.delay_cost;
  if (own == GtAction::Yield) return -2.0 * s.delay_cost;
  return s.gain - (collision_risk ? s.collision_cost : 0.0);
}

/// Leader value of committing to `own`: the follower best-responds (ties
/// to yield) except with the non-compliance probability, where it proceeds.
inline double gt_leader_value(GtAction own, bool risk, const GtControllerState& s) {
  const double fp = gt_payoff(GtAction::Proceed, own, risk, s);
  const double fy = gt_payoff(GtAction::Yield, own, risk, s);
  const GtAction br = fp > fy ? GtAction::Proceed : GtAction::Yield;
  return (1.0 - s.noncompliance) * gt_payoff(own, br, risk, s) + s.noncompliance * gt_payoff(own, GtAction::Proceed, risk, s);
}

inline GtAction gt_solve(bool collision_risk, const GtControllerState& s) {
  const double vp = gt_leader_value(GtAction::Proceed, collision_risk, s);
  const double vy = gt_leader_value(GtAction::Yield, collision_risk, s);
  return vp > vy ? GtAction::Proceed : GtAction::Yield;
}

struct GtCommand {
  GtAction action{GtAction::Proceed};
  double accel{0.0};
};

/// `conflict` is the ego's nearest conflict, if any. Yielding is held for
/// the rest of the conflict episode. An indeterminate delta-TTC counts as a
/// collision risk while the opponent is still moving. A yield that cannot
/// stop within `clearance` of the conflict point at the nominal rate brakes
/// harder, up to `b_max`, without the jerk limit.
inline GtCommand gt_control(const ProcessState& ego, const ConflictPair* conflict, double opp_speed,
                            GtControllerState& st, double dt, double v_cap, double clearance = 4.0,
                            double b_max = 6.0) {
  st.validate();
  GtCommand cmd;
  if (!conflict) {
    st.yielding = false;
    cmd.action = GtAction::Proceed;
  } else {
    const bool opp_moving = opp_speed >= 0.1;
    const bool risk = conflict->delta_ttc ? *conflict->delta_ttc < st.margin : opp_moving;
    if (!st.yielding) st.yielding = gt_solve(risk, st) == GtAction::Yield;
    if (st.yielding && !opp_moving && ego.v < 0.1) st.yielding = false;  // opponent waits for us
    cmd.action = st.yielding ? GtAction::Yield : GtAction::Proceed;
  }
  double target = cmd.action == GtAction::Proceed ? st.a_nom : -st.b_nom;
  if (cmd.action == GtAction::Proceed && ego.v >= v_cap) target = std::max(-st.b_nom, v_cap - ego.v);
  if (cmd.action == GtAction::Yield && ego.v <= 0.0) target = 0.0;
  bool urgent = false;
  if (cmd.action == GtAction::Yield && conflict && ego.v > 0.0) {
    const double gap = conflict->distance_for(ego.id) - clearance;
    const double need = gap > 0.5 ? ego.v * ego.v / (2.0 * gap) : b_max;
    if (need > st.b_nom) {
      target = -std::min(need, b_max);
      urgent = true;
    }
  }
  if (st.has_last && !urgent) {
    const double step = st.jerk_limit * dt;
    target = std::clamp(target, st.last_accel - step, st.last_accel + step);
  }
  st.last_accel = target;
  st.has_last = true;
  cmd.accel = target;
  return cmd;
}

}  // namespace mixsim
