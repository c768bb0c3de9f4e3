#pragma once

#include <string>

#include "mixsim/mixsim.hpp"

namespace mixsim::testing {

inline std::string data_path(const std::string& rel) { return std::string(MIXSIM_SOURCE_DIR) + "/data/" + rel; }

inline ScenarioConfig standard_scenario() { return load_scenario_file(data_path("scenarios/intersection.json")); }

inline Lane straight_lane(const std::string& id, Vec2 a, Vec2 b, TurnLabel turn = TurnLabel::Through) {
  Lane l;
  l.id = id;
  l.turn = turn;
  l.centerline = Polyline({a, b});
  return l;
}

/// Two perpendicular through lanes crossing at the origin, 60 m each way.
inline IntersectionGeometry cross_geometry() {
  IntersectionGeometry g;
  g.lanes = {straight_lane("EW", {-60, 0}, {60, 0}), straight_lane("SN", {0, -60}, {0, 60})};
  g.finalize();
  return g;
}

inline VehicleState vehicle(const std::string& id, double x, double y, double vx, double vy, double ax = 0.0,
                            double ay = 0.0) {
  VehicleState v;
  v.id = id;
  v.x = x;
  v.y = y;
  v.vx = vx;
  v.vy = vy;
  v.ax = ax;
  v.ay = ay;
  v.phi = (vx == 0.0 && vy == 0.0) ? 0.0 : std::atan2(vy, vx);
  return v;
}

/// Vehicle state on the route at arc length s, moving along it.
inline VehicleState on_route(const Route& r, const std::string& id, double s, double v, double a = 0.0) {
  const Vec2 p = r.path.point_at(s);
  const Vec2 t = r.path.tangent_at(s);
  VehicleState vs;
  vs.id = id;
  vs.x = p.x;
  vs.y = p.y;
  vs.vx = v * t.x;
  vs.vy = v * t.y;
  vs.ax = a * t.x;
  vs.ay = a * t.y;
  vs.phi = std::atan2(t.y, t.x);
  return vs;
}

}  // namespace mixsim::testing
