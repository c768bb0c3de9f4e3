#pragma once

// Object/process/relation scene abstraction: lane projection, process
// states, conflict detection with time-to-arrival differences, modeling
// object selection and prompt serialization.

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixsim/common.hpp"
#include "mixsim/geometry.hpp"

namespace mixsim {

struct VehicleState {
  std::string id;
  double x{0.0}, y{0.0};
  double vx{0.0}, vy{0.0};
  double ax{0.0}, ay{0.0};
  double phi{0.0};  // heading, (-pi, pi]

  Vec2 position() const { return {x, y}; }
  Vec2 velocity() const { return {vx, vy}; }
  Vec2 acceleration() const { return {ax, ay}; }
  double speed() const { return std::hypot(vx, vy); }

  bool finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(vx) && std::isfinite(vy) &&
           std::isfinite(ax) && std::isfinite(ay) && std::isfinite(phi);
  }

  void validate() const {
    if (!finite()) throw InputError("vehicle " + id + ": non-finite state");
    if (!(phi > -std::numbers::pi && phi <= std::numbers::pi))
      throw InputError("vehicle " + id + ": heading outside (-pi, pi]");
  }

  bool operator==(const VehicleState&) const = default;
};

/// Per-vehicle ring of timestamped states covering a sliding window.
class HistoryBuffer {
 public:
  struct Entry {
    VehicleState state;
    double t{0.0};
  };

  explicit HistoryBuffer(double window = 3.0, double dt = 0.1) : window_(window), dt_(dt) {
    if (!(window > 0.0) || !(dt > 0.0)) throw ConfigError("history window and dt must be positive");
  }

  void push(const VehicleState& s, double t) {
    auto& ring = rings_[s.id];
    if (!ring.empty() && !(t > ring.back().t))
      throw InputError("history timestamps must be strictly increasing for " + s.id);
    ring.push_back({s, t});
    while (!ring.empty() && ring.back().t - ring.front().t > window_ + 1e-9) ring.pop_front();
  }

  const std::deque<Entry>* find(const std::string& id) const {
    const auto it = rings_.find(id);
    return it == rings_.end() ? nullptr : &it->second;
  }

  double window() const { return window_; }
  double dt() const { return dt_; }

 private:
  double window_;
  double dt_;
  std::map<std::string, std::deque<Entry>> rings_;
};

enum class TurnLabel { Through, Left, Right, Merge };

inline std::string_view to_string(TurnLabel t) {
  switch (t) {
    case TurnLabel::Through: return "through";
    case TurnLabel::Left: return "left";
    case TurnLabel::Right: return "right";
    case TurnLabel::Merge: return "merge";
  }
  return "through";
}

inline std::optional<TurnLabel> turn_from_string(std::string_view s) {
  if (s == "through") return TurnLabel::Through;
  if (s == "left") return TurnLabel::Left;
  if (s == "right") return TurnLabel::Right;
  if (s == "merge") return TurnLabel::Merge;
  return std::nullopt;
}

struct StopLine {
  Vec2 a;
  Vec2 b;
};

struct Lane {
  std::string id;
  std::string type{"lane"};
  TurnLabel turn{TurnLabel::Through};
  double width{3.5};
  Polyline centerline;
  Polyline left_boundary;
  Polyline right_boundary;
  std::optional<double> stop_s;  // arc length of the stop line crossing
};

struct IntersectionGeometry {
  std::vector<StopLine> stop_lines;
  std::vector<Lane> lanes;
  Vec2 center{};
  double exit_distance{20.0};

  const Lane* find_lane(std::string_view id) const {
    for (const auto& l : lanes)
      if (l.id == id) return &l;
    return nullptr;
  }

  /// Checks identifiers and precomputes per-lane stop-line arc lengths
  /// and boundary polylines.
  void finalize() {
    std::set<std::string> ids;
    for (auto& lane : lanes) {
      if (!ids.insert(lane.id).second) throw LoadError("duplicate lane id '" + lane.id + "'");
      if (lane.centerline.points().size() < 2)
        throw LoadError("lane '" + lane.id + "' centerline needs at least two points");
      lane.stop_s.reset();
      const Polyline& c = lane.centerline;
      for (const auto& sl : stop_lines) {
        for (std::size_t i = 0; i + 1 < c.points().size(); ++i) {
          const auto hit = intersect_segments(c.points()[i], c.points()[i + 1], sl.a, sl.b);
          if (!hit) continue;
          const double s = c.arc_lengths()[i] + hit->ua * (c.arc_lengths()[i + 1] - c.arc_lengths()[i]);
          if (!lane.stop_s || s < *lane.stop_s) lane.stop_s = s;
        }
      }
      lane.left_boundary = offset_polyline(c, 0.5 * lane.width);
      lane.right_boundary = offset_polyline(c, -0.5 * lane.width);
    }
  }

  static Polyline offset_polyline(const Polyline& c, double offset) {
    std::vector<Vec2> pts;
    const auto& p = c.points();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::size_t seg = std::min(i, p.size() - 2);
      Vec2 t = c.segment_direction(seg);
      if (i > 0 && i + 1 < p.size()) t = (c.segment_direction(i - 1) + c.segment_direction(i)).normalized();
      Vec2 q = p[i] + t.left_normal() * offset;
      if (!pts.empty() && distance(pts.back(), q) < 1e-9) continue;
      pts.push_back(q);
    }
    if (pts.size() < 2) return c;
    return Polyline(std::move(pts));
  }
};

struct SceneThresholds {
  double dttc_threshold{3.0};       // s
  double proximity_threshold{50.0};  // m
  double speed_floor{0.1};           // m/s
  double accel_floor{0.05};          // m/s^2
};

struct LaneProjection {
  std::string lane_id;
  double s{0.0};
  Vec2 tangent;
  double distance{0.0};
  double lateral{0.0};
};

/// Nearest lane centerline; ties go to the lexicographically lowest lane id.
inline LaneProjection project_to_lane(const Vec2& p, const IntersectionGeometry& g) {
  if (g.lanes.empty()) throw InputError("geometry has no lanes");
  std::optional<LaneProjection> best;
  for (const auto& lane : g.lanes) {
    const auto pr = lane.centerline.project(p);
    const bool better = !best || pr.distance < best->distance - 1e-12 ||
                        (std::fabs(pr.distance - best->distance) <= 1e-12 && lane.id < best->lane_id);
    if (better) best = LaneProjection{lane.id, pr.s, pr.tangent, pr.distance, pr.lateral};
  }
  return *best;
}

struct ProcessState {
  std::string id;
  double p{0.0};        // signed distance to stop line, negative upstream
  double v{0.0};
  double a{0.0};        // signed along velocity direction
  double theta_v{0.0};  // [0, pi]
  double theta_a{0.0};  // [0, pi]
  std::string lane_id;
  TurnLabel lane_turn{TurnLabel::Through};
};

/// Projects onto `lane_hint` when given (vehicles on overlapping lanes),
/// otherwise onto the nearest lane.
inline ProcessState compute_process_state(const VehicleState& v, const IntersectionGeometry& g,
                                          const SceneThresholds& th = {},
                                          const Lane* lane_hint = nullptr) {
  if (!v.finite()) throw InputError("vehicle " + v.id + ": non-finite state");
  LaneProjection proj;
  if (lane_hint) {
    const auto pr = lane_hint->centerline.project(v.position());
    proj = {lane_hint->id, pr.s, pr.tangent, pr.distance, pr.lateral};
  } else {
    proj = project_to_lane(v.position(), g);
  }
  const Lane* lane = g.find_lane(proj.lane_id);
  ProcessState ps;
  ps.id = v.id;
  ps.lane_id = lane->id;
  ps.lane_turn = lane->turn;
  ps.p = proj.s - lane->stop_s.value_or(0.0);
  ps.v = v.speed();
  const Vec2 acc = v.acceleration();
  const double amag = acc.norm();
  if (ps.v >= th.speed_floor) {
    ps.a = acc.dot(v.velocity()) / ps.v;
  } else {
    ps.a = acc.dot(proj.tangent);
  }
  ps.theta_v = ps.v < th.speed_floor ? 0.0 : angle_between(v.velocity(), proj.tangent);
  ps.theta_a = amag < th.accel_floor ? 0.0 : angle_between(acc, proj.tangent);
  return ps;
}

/// |d_i/v_i - d_j/v_j|, or nullopt when either speed is below the floor.
inline std::optional<double> compute_delta_ttc(double d_i, double v_i, double d_j, double v_j,
                                               double speed_floor) {
  if (d_i < 0.0 || d_j < 0.0) throw InputError("distance to conflict point must be non-negative");
  if (v_i < speed_floor || v_j < speed_floor) return std::nullopt;
  return std::fabs(d_i / v_i - d_j / v_j);
}

/// Planned path of one vehicle: a lane sequence joined into one polyline.
struct Route {
  std::string vehicle_id;
  std::vector<std::string> lane_ids;
  Polyline path;
  std::vector<double> lane_offsets;  // route arc length where each lane starts

  /// Lane occupied at route arc length s.
  std::size_t lane_index_at(double s) const {
    std::size_t k = 0;
    for (std::size_t i = 0; i < lane_offsets.size(); ++i)
      if (s >= lane_offsets[i] - 1e-9) k = i;
    return k;
  }
};

/// Joins the centerlines of `lane_ids`. Consecutive lanes are connected at
/// the point of the next lane nearest to the end of the previous one.
inline Route build_route(const IntersectionGeometry& g, const std::string& vehicle_id,
                         const std::vector<std::string>& lane_ids) {
  if (lane_ids.empty()) throw InputError("route for " + vehicle_id + " is empty");
  Route r;
  r.vehicle_id = vehicle_id;
  r.lane_ids = lane_ids;
  std::vector<Vec2> pts;
  for (const auto& id : lane_ids) {
    const Lane* lane = g.find_lane(id);
    if (!lane) throw InputError("route for " + vehicle_id + " references unknown lane '" + id + "'");
    const auto& c = lane->centerline;
    double from = 0.0;
    if (!pts.empty()) from = c.project(pts.back()).s;
    std::vector<Vec2> part;
    part.push_back(c.point_at(from));
    for (std::size_t i = 0; i < c.points().size(); ++i)
      if (c.arc_lengths()[i] > from + 1e-9) part.push_back(c.points()[i]);
    double offset = 0.0;
    if (!pts.empty()) offset = Polyline(pts).length() + distance(pts.back(), part.front());
    r.lane_offsets.push_back(offset);
    for (const auto& p : part) {
      if (!pts.empty() && distance(pts.back(), p) < 1e-9) continue;
      pts.push_back(p);
    }
  }
  r.path = Polyline(std::move(pts));
  return r;
}

struct ConflictPair {
  std::string id_i;
  std::string id_j;
  Vec2 conflict_point;
  double d_i{0.0};
  double d_j{0.0};
  std::optional<double> delta_ttc;  // nullopt = indeterminate

  bool involves(std::string_view id) const { return id_i == id || id_j == id; }
  bool risky(double threshold) const { return delta_ttc && *delta_ttc < threshold; }
  double distance_for(std::string_view id) const { return id == id_i ? d_i : d_j; }
  const std::string& other(std::string_view id) const { return id == id_i ? id_j : id_i; }
};

enum class IntentChannel { TurnSignal, EhmiText, VoiceText };

inline std::string_view to_string(IntentChannel c) {
  switch (c) {
    case IntentChannel::TurnSignal: return "turn-signal";
    case IntentChannel::EhmiText: return "ehmi-text";
    case IntentChannel::VoiceText: return "voice-text";
  }
  return "ehmi-text";
}

inline std::optional<IntentChannel> channel_from_string(std::string_view s) {
  if (s == "turn-signal") return IntentChannel::TurnSignal;
  if (s == "ehmi-text") return IntentChannel::EhmiText;
  if (s == "voice-text") return IntentChannel::VoiceText;
  return std::nullopt;
}

struct IntentPair {
  std::string id_i;  // speaker
  std::string id_j;  // addressee
  IntentChannel channel{IntentChannel::EhmiText};
  std::string payload;
};

inline const Route* find_route(std::span<const Route> routes, std::string_view id) {
  for (const auto& r : routes)
    if (r.vehicle_id == id) return &r;
  return nullptr;
}

/// One pair per unordered id pair whose routes cross ahead of both
/// vehicles. The conflict point is the first crossing along the route of
/// `ego_id` when it is part of the pair, otherwise along the route of the
/// earlier-listed vehicle.
inline std::vector<ConflictPair> detect_conflicts(std::span<const VehicleState> vehicles,
                                                  std::span<const Route> routes,
                                                  double speed_floor,
                                                  std::string_view ego_id = {}) {
  std::vector<ConflictPair> out;
  for (std::size_t a = 0; a < vehicles.size(); ++a) {
    for (std::size_t b = a + 1; b < vehicles.size(); ++b) {
      const VehicleState* vi = &vehicles[a];
      const VehicleState* vj = &vehicles[b];
      if (vj->id == ego_id) std::swap(vi, vj);
      const Route* ri = find_route(routes, vi->id);
      const Route* rj = find_route(routes, vj->id);
      if (!ri || !rj) continue;
      const double si = ri->path.project(vi->position()).s;
      const double sj = rj->path.project(vj->position()).s;
      for (const auto& [ci, cj, pt] : ri->path.intersections(rj->path)) {
        if (ci < si - 1e-9 || cj < sj - 1e-9) continue;
        ConflictPair cp;
        cp.id_i = vi->id;
        cp.id_j = vj->id;
        cp.conflict_point = pt;
        cp.d_i = std::max(0.0, ci - si);
        cp.d_j = std::max(0.0, cj - sj);
        cp.delta_ttc = compute_delta_ttc(cp.d_i, vi->speed(), cp.d_j, vj->speed(), speed_floor);
        out.push_back(cp);
        break;
      }
    }
  }
  return out;
}

struct SelectionResult {
  std::vector<std::string> ids;  // ego first, then others in input order
  std::vector<std::string> diagnostics;
};

/// Keeps vehicles with a risky crossing (determinate delta-TTC below the
/// threshold) or a longitudinal centerline distance to the ego below the
/// proximity threshold. Longitudinal distance is measured along the ego
/// route for vehicles inside its corridor (two lane widths).
inline SelectionResult select_modeling_objects(const VehicleState& ego,
                                               std::span<const VehicleState> others,
                                               const IntersectionGeometry& g,
                                               std::span<const Route> routes,
                                               const SceneThresholds& th) {
  if (!(th.dttc_threshold > 0.0) || !(th.proximity_threshold > 0.0))
    throw InputError("selection thresholds must be positive");
  SelectionResult res;
  res.ids.push_back(ego.id);
  const Route* ego_route = find_route(routes, ego.id);
  auto route_known = [&](const Route* r) {
    if (!r) return false;
    for (const auto& l : r->lane_ids)
      if (!g.find_lane(l)) return false;
    return true;
  };
  if (!route_known(ego_route)) {
    res.diagnostics.push_back("ego " + ego.id + ": unknown lane or missing route");
    return res;
  }
  const double ego_s = ego_route->path.project(ego.position()).s;
  double corridor = 7.0;
  if (const Lane* l = g.find_lane(ego_route->lane_ids.front())) corridor = 2.0 * l->width;

  for (const auto& o : others) {
    if (o.id == ego.id) throw InputError("ego listed among others");
    const Route* r = find_route(routes, o.id);
    if (!route_known(r)) {
      res.diagnostics.push_back("vehicle " + o.id + ": unknown lane or missing route, skipped");
      continue;
    }
    bool selected = false;
    const VehicleState pair[2] = {ego, o};
    const Route pair_routes[2] = {*ego_route, *r};
    for (const auto& c : detect_conflicts(pair, pair_routes, th.speed_floor, ego.id)) {
      if (c.risky(th.dttc_threshold)) selected = true;
    }
    if (!selected) {
      const auto pr = ego_route->path.project(o.position());
      if (pr.distance <= corridor && std::fabs(pr.s - ego_s) < th.proximity_threshold) selected = true;
    }
    if (selected) res.ids.push_back(o.id);
  }
  return res;
}

struct OpmGraph {
  double timestamp{0.0};
  std::vector<VehicleState> objects;
  std::vector<ProcessState> processes;
  std::vector<ConflictPair> conflicts;
  std::vector<IntentPair> intents;
  std::map<std::string, double> saliency;     // optional, rendered per object
  std::optional<TurnLabel> ego_navigation;    // instruction at the ego position

  const std::string& ego_id() const { return objects.front().id; }

  bool has_object(std::string_view id) const {
    return std::any_of(objects.begin(), objects.end(), [&](const auto& o) { return o.id == id; });
  }

  /// Throws when a process or relation names an id absent from objects.
  void check_integrity() const {
    for (const auto& p : processes)
      if (!has_object(p.id)) throw InputError("process references unknown object " + p.id);
    for (const auto& c : conflicts)
      if (!has_object(c.id_i) || !has_object(c.id_j) || c.id_i == c.id_j)
        throw InputError("conflict relation references unknown object");
    for (const auto& i : intents)
      if (!has_object(i.id_i) || !has_object(i.id_j) || i.id_i == i.id_j)
        throw InputError("intent relation references unknown object");
  }
};

struct OpmBuildInput {
  VehicleState ego;
  std::vector<VehicleState> others;
  const IntersectionGeometry* geometry{nullptr};
  std::vector<Route> routes;
  std::vector<IntentPair> intents;
  SceneThresholds thresholds;
  double timestamp{0.0};
};

inline const Lane* lane_for(const IntersectionGeometry& g, const Route* r, const VehicleState& v) {
  if (!r) return nullptr;
  const double s = r->path.project(v.position()).s;
  return g.find_lane(r->lane_ids[r->lane_index_at(s)]);
}

/// Selected vehicles become objects; their process states and the
/// conflicts/intents among them become the relations.
inline OpmGraph build_opm_graph(const OpmBuildInput& in, std::vector<std::string>* diagnostics = nullptr) {
  const auto& g = *in.geometry;
  OpmGraph graph;
  graph.timestamp = in.timestamp;
  const auto sel = select_modeling_objects(in.ego, in.others, g, in.routes, in.thresholds);
  if (diagnostics) diagnostics->insert(diagnostics->end(), sel.diagnostics.begin(), sel.diagnostics.end());
  graph.objects.push_back(in.ego);
  for (const auto& o : in.others)
    if (std::find(sel.ids.begin(), sel.ids.end(), o.id) != sel.ids.end()) graph.objects.push_back(o);
  for (const auto& o : graph.objects) {
    const Route* r = find_route(in.routes, o.id);
    graph.processes.push_back(compute_process_state(o, g, in.thresholds, lane_for(g, r, o)));
  }
  graph.conflicts = detect_conflicts(graph.objects, in.routes, in.thresholds.speed_floor, in.ego.id);
  for (const auto& ip : in.intents)
    if (graph.has_object(ip.id_i) && graph.has_object(ip.id_j) && ip.id_i != ip.id_j)
      graph.intents.push_back(ip);
  graph.check_integrity();
  return graph;
}

enum class SceneFormat { Opm, Raw, Simple };

inline std::string_view to_string(SceneFormat f) {
  switch (f) {
    case SceneFormat::Opm: return "opm";
    case SceneFormat::Raw: return "raw";
    case SceneFormat::Simple: return "simple";
  }
  return "opm";
}

inline std::optional<SceneFormat> format_from_string(std::string_view s) {
  if (s == "opm") return SceneFormat::Opm;
  if (s == "raw") return SceneFormat::Raw;
  if (s == "simple") return SceneFormat::Simple;
  return std::nullopt;
}

/// Extra material the raw dump includes: every detected vehicle and their
/// recorded histories.
struct RawContext {
  std::vector<VehicleState> all_vehicles;
  const HistoryBuffer* histories{nullptr};
};

namespace detail {

inline void append_state_numbers(std::ostringstream& os, const VehicleState& v) {
  os << fixed2(v.x) << ',' << fixed2(v.y) << ',' << fixed2(v.vx) << ',' << fixed2(v.vy) << ','
     << fixed2(v.ax) << ',' << fixed2(v.ay) << ',' << fixed2(v.phi);
}

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += ' ';
      continue;
    }
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

inline std::string serialize_opm(const OpmGraph& graph, SceneFormat format, const RawContext* raw = nullptr) {
  std::ostringstream os;
  switch (format) {
    case SceneFormat::Opm: {
      os << "Scene t=" << fixed2(graph.timestamp) << '\n';
      os << "Objects:\n";
      for (const auto& o : graph.objects) {
        os << "O " << o.id << " x=" << fixed2(o.x) << " y=" << fixed2(o.y) << " vx=" << fixed2(o.vx)
           << " vy=" << fixed2(o.vy) << " ax=" << fixed2(o.ax) << " ay=" << fixed2(o.ay)
           << " phi=" << fixed2(o.phi);
        if (auto it = graph.saliency.find(o.id); it != graph.saliency.end())
          os << " salience=" << fixed2(it->second);
        os << '\n';
      }
      os << "Processes:\n";
      for (const auto& p : graph.processes) {
        os << "P " << p.id << " p=" << fixed2(p.p) << " v=" << fixed2(p.v) << " a=" << fixed2(p.a)
           << " theta_v=" << fixed2(p.theta_v) << " theta_a=" << fixed2(p.theta_a) << " lane=" << p.lane_id
           << " turn=" << to_string(p.lane_turn);
        if (graph.ego_navigation && p.id == graph.ego_id()) os << " nav=" << to_string(*graph.ego_navigation);
        os << '\n';
      }
      os << "Relations:\n";
      for (const auto& c : graph.conflicts) {
        os << "C " << c.id_i << ' ' << c.id_j << " point=" << fixed2(c.conflict_point.x) << ','
           << fixed2(c.conflict_point.y) << " d_i=" << fixed2(c.d_i) << " d_j=" << fixed2(c.d_j) << " dttc="
           << (c.delta_ttc ? fixed2(*c.delta_ttc) : std::string("indeterminate")) << '\n';
      }
      for (const auto& i : graph.intents) {
        os << "I " << i.id_i << ' ' << i.id_j << " channel=" << to_string(i.channel)
           << " payload=" << detail::quote(i.payload) << '\n';
      }
      break;
    }
    case SceneFormat::Raw: {
      std::vector<VehicleState> all = graph.objects;
      if (raw) {
        for (const auto& v : raw->all_vehicles)
          if (!graph.has_object(v.id)) all.push_back(v);
      }
      int k = 0;
      for (const auto& v : all) {
        os << k++ << ',';
        detail::append_state_numbers(os, v);
        if (raw && raw->histories) {
          if (const auto* ring = raw->histories->find(v.id)) {
            for (const auto& e : *ring) {
              os << ',' << fixed2(e.t) << ',';
              detail::append_state_numbers(os, e.state);
            }
          }
        }
        os << '\n';
      }
      break;
    }
    case SceneFormat::Simple: {
      for (std::size_t k = 0; k < graph.objects.size(); ++k) {
        const auto& o = graph.objects[k];
        os << "vehicle: " << o.id << '\n';
        os << "x: " << fixed2(o.x) << '\n' << "y: " << fixed2(o.y) << '\n';
        os << "speed: " << fixed2(o.speed()) << '\n' << "heading: " << fixed2(o.phi) << '\n';
        if (k < graph.processes.size()) {
          const auto& p = graph.processes[k];
          os << "accel: " << fixed2(p.a) << '\n' << "p: " << fixed2(p.p) << '\n';
          os << "lane: " << p.lane_id << '\n' << "turn: " << to_string(p.lane_turn) << '\n';
        }
        if (k == 0 && graph.ego_navigation) os << "nav: " << to_string(*graph.ego_navigation) << '\n';
        os << '\n';
      }
      break;
    }
  }
  return os.str();
}

/// Numeric content recovered from an opm-format prompt.
struct ParsedOpm {
  double timestamp{0.0};
  std::vector<VehicleState> objects;
  std::map<std::string, double> saliency;
  std::vector<ProcessState> processes;
  std::vector<ConflictPair> conflicts;
  std::vector<IntentPair> intents;
  std::optional<TurnLabel> ego_navigation;
  bool has_objects{false}, has_processes{false}, has_relations{false};
};

namespace detail {

inline std::map<std::string, std::string> parse_kv(std::istringstream& is) {
  std::map<std::string, std::string> kv;
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    std::string key = tok.substr(0, eq);
    std::string val = tok.substr(eq + 1);
    if (!val.empty() && val.front() == '"') {
      // quoted value may contain spaces
      std::string rest = val.substr(1);
      while (rest.empty() || rest.back() != '"' || (rest.size() >= 2 && rest[rest.size() - 2] == '\\')) {
        std::string more;
        if (!(is >> more)) break;
        rest += ' ' + more;
      }
      if (!rest.empty() && rest.back() == '"') rest.pop_back();
      std::string unesc;
      for (std::size_t i = 0; i < rest.size(); ++i) {
        if (rest[i] == '\\' && i + 1 < rest.size()) ++i;
        unesc += rest[i];
      }
      val = unesc;
    }
    kv[key] = val;
  }
  return kv;
}

inline double num(const std::map<std::string, std::string>& kv, const std::string& k) {
  const auto it = kv.find(k);
  if (it == kv.end()) return 0.0;
  try {
    return std::stod(it->second);
  } catch (...) {
    return 0.0;
  }
}

}  // namespace detail

inline ParsedOpm parse_opm(std::string_view text) {
  ParsedOpm out;
  std::istringstream lines{std::string(text)};
  std::string line;
  enum { None, Obj, Proc, Rel } section = None;
  while (std::getline(lines, line)) {
    if (line.rfind("Scene ", 0) == 0) {
      std::istringstream is(line.substr(6));
      out.timestamp = detail::num(detail::parse_kv(is), "t");
      continue;
    }
    if (line == "Objects:") { section = Obj; out.has_objects = true; continue; }
    if (line == "Processes:") { section = Proc; out.has_processes = true; continue; }
    if (line == "Relations:") { section = Rel; out.has_relations = true; continue; }
    std::istringstream is(line);
    std::string tag;
    if (!(is >> tag)) continue;
    if (section == Obj && tag == "O") {
      VehicleState v;
      is >> v.id;
      const auto kv = detail::parse_kv(is);
      v.x = detail::num(kv, "x"); v.y = detail::num(kv, "y");
      v.vx = detail::num(kv, "vx"); v.vy = detail::num(kv, "vy");
      v.ax = detail::num(kv, "ax"); v.ay = detail::num(kv, "ay");
      v.phi = detail::num(kv, "phi");
      if (kv.count("salience")) out.saliency[v.id] = detail::num(kv, "salience");
      out.objects.push_back(v);
    } else if (section == Proc && tag == "P") {
      ProcessState p;
      is >> p.id;
      const auto kv = detail::parse_kv(is);
      p.p = detail::num(kv, "p"); p.v = detail::num(kv, "v"); p.a = detail::num(kv, "a");
      p.theta_v = detail::num(kv, "theta_v"); p.theta_a = detail::num(kv, "theta_a");
      if (auto it = kv.find("lane"); it != kv.end()) p.lane_id = it->second;
      if (auto it = kv.find("turn"); it != kv.end()) p.lane_turn = turn_from_string(it->second).value_or(TurnLabel::Through);
      if (auto it = kv.find("nav"); it != kv.end()) out.ego_navigation = turn_from_string(it->second);
      out.processes.push_back(p);
    } else if (section == Rel && tag == "C") {
      ConflictPair c;
      is >> c.id_i >> c.id_j;
      const auto kv = detail::parse_kv(is);
      if (auto it = kv.find("point"); it != kv.end()) {
        const auto comma = it->second.find(',');
        if (comma != std::string::npos) {
          c.conflict_point = {std::stod(it->second.substr(0, comma)), std::stod(it->second.substr(comma + 1))};
        }
      }
      c.d_i = detail::num(kv, "d_i");
      c.d_j = detail::num(kv, "d_j");
      if (auto it = kv.find("dttc"); it != kv.end() && it->second != "indeterminate") c.delta_ttc = std::stod(it->second);
      out.conflicts.push_back(c);
    } else if (section == Rel && tag == "I") {
      IntentPair ip;
      is >> ip.id_i >> ip.id_j;
      const auto kv = detail::parse_kv(is);
      if (auto it = kv.find("channel"); it != kv.end())
        ip.channel = channel_from_string(it->second).value_or(IntentChannel::EhmiText);
      if (auto it = kv.find("payload"); it != kv.end()) ip.payload = it->second;
      out.intents.push_back(ip);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON geometry documents

namespace detail {

inline Vec2 to_vec2(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw LoadError(where + ": expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

/// Either explicit "centerline" points or a "path" made of a start pose
/// and line/arc primitives.
inline Polyline lane_centerline(const nlohmann::json& lane, const std::string& where) {
  if (lane.contains("centerline")) {
    std::vector<Vec2> pts;
    for (const auto& p : lane.at("centerline")) pts.push_back(to_vec2(p, where + ".centerline"));
    try {
      return Polyline(std::move(pts));
    } catch (const InputError& e) {
      throw LoadError(where + ".centerline: " + e.what());
    }
  }
  if (!lane.contains("path")) throw LoadError(where + ": needs 'centerline' or 'path'");
  const auto& path = lane.at("path");
  Vec2 cur = to_vec2(path.at("start"), where + ".path.start");
  double heading = path.at("heading_deg").get<double>() * std::numbers::pi / 180.0;
  std::vector<Vec2> pts{cur};
  for (const auto& prim : path.at("segments")) {
    if (prim.contains("line_to")) {
      const Vec2 nxt = to_vec2(prim.at("line_to"), where + ".path.line_to");
      heading = std::atan2(nxt.y - cur.y, nxt.x - cur.x);
      pts.push_back(nxt);
      cur = nxt;
    } else if (prim.contains("arc")) {
      const double radius = prim.at("arc").at("radius").get<double>();
      const double sweep = prim.at("arc").at("sweep_deg").get<double>() * std::numbers::pi / 180.0;
      auto arc = sample_arc(cur, heading, sweep, radius);
      for (std::size_t i = 1; i < arc.size(); ++i) pts.push_back(arc[i]);
      cur = arc.back();
      heading += sweep;
    } else {
      throw LoadError(where + ".path: unknown segment primitive");
    }
  }
  return Polyline(std::move(pts));
}

}  // namespace detail

inline IntersectionGeometry geometry_from_json(const nlohmann::json& j) {
  IntersectionGeometry g;
  if (j.contains("center")) g.center = detail::to_vec2(j.at("center"), "geometry.center");
  if (j.contains("exit_distance")) g.exit_distance = j.at("exit_distance").get<double>();
  if (j.contains("stop_lines")) {
    for (const auto& s : j.at("stop_lines"))
      g.stop_lines.push_back({detail::to_vec2(s.at("a"), "stop_line.a"), detail::to_vec2(s.at("b"), "stop_line.b")});
  }
  if (!j.contains("lanes") || !j.at("lanes").is_array()) throw LoadError("geometry.lanes: required array");
  for (const auto& l : j.at("lanes")) {
    Lane lane;
    lane.id = l.at("id").get<std::string>();
    const std::string where = "geometry.lanes[" + lane.id + "]";
    if (l.contains("type")) lane.type = l.at("type").get<std::string>();
    if (l.contains("width")) lane.width = l.at("width").get<double>();
    const auto turn = turn_from_string(l.value("turn", std::string("through")));
    if (!turn) throw LoadError(where + ".turn: must be through|left|right|merge");
    lane.turn = *turn;
    lane.centerline = detail::lane_centerline(l, where);
    g.lanes.push_back(std::move(lane));
  }
  g.finalize();
  return g;
}

}  // namespace mixsim
