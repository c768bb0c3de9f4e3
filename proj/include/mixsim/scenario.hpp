#pragma once

// Scenario documents: schema-checked JSON with line-numbered diagnostics.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixsim/baselines.hpp"
#include "mixsim/pipeline.hpp"
#include "mixsim/scene_model.hpp"

namespace mixsim {

enum class ControllerKind { Idm, Gt, Proposed, Scripted, Human };
enum class HdvStyle { Aggressive, Conservative, Idm, Mixed };

inline std::string_view to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::Idm: return "idm";
    case ControllerKind::Gt: return "gt";
    case ControllerKind::Proposed: return "proposed";
    case ControllerKind::Scripted: return "scripted";
    case ControllerKind::Human: return "human";
  }
  return "idm";
}

inline std::optional<ControllerKind> controller_from_string(std::string_view s) {
  for (auto k : {ControllerKind::Idm, ControllerKind::Gt, ControllerKind::Proposed, ControllerKind::Scripted,
                 ControllerKind::Human})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline std::string_view to_string(HdvStyle s) {
  switch (s) {
    case HdvStyle::Aggressive: return "aggressive";
    case HdvStyle::Conservative: return "conservative";
    case HdvStyle::Idm: return "idm";
    case HdvStyle::Mixed: return "mixed";
  }
  return "idm";
}

inline std::optional<HdvStyle> style_from_name(std::string_view s) {
  for (auto k : {HdvStyle::Aggressive, HdvStyle::Conservative, HdvStyle::Idm, HdvStyle::Mixed})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct VehicleConfig {
  std::string id;
  std::string role{"hdv"};  // cav | hdv
  Vec2 position;
  double speed{0.0};
  std::vector<std::string> route;
  ControllerKind controller{ControllerKind::Scripted};
  HdvStyle style{HdvStyle::Idm};
  std::optional<double> desired_speed;
  std::string passenger_input;
};

struct SimParams {
  double dt{0.1};
  double max_duration{60.0};
  std::uint64_t seed{1};
  bool stop_at_exit{true};
  double collision_distance{2.5};
  double start_jitter{2.0};       // m, uniform +- on the HDV start when jitter is enabled
  double desired_jitter{0.1};     // relative, on the HDV desired speed
};

struct HdvParams {
  double aggressive_brake_dttc{0.8};  // s
  double clearance{8.0};              // m short of the conflict point a yielding driver stops
};

struct ScenarioConfig {
  int schema{1};
  std::string name{"scenario"};
  IntersectionGeometry geometry;
  std::vector<VehicleConfig> vehicles;
  SimParams sim;
  ProposedParams proposed;
  IdmControllerState idm;
  GtControllerState gt;
  HdvParams hdv;

  const VehicleConfig* find(std::string_view id) const {
    for (const auto& v : vehicles)
      if (v.id == id) return &v;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// line map

/// JSON pointer -> 1-based line of the key (or array element) that
/// introduces it. Assumes syntactically valid JSON.
inline std::map<std::string, int> json_pointer_lines(std::string_view text) {
  struct Frame {
    bool obj;
    std::string path;
    std::string key;
    int index{0};
    bool expect_key{true};
  };
  std::map<std::string, int> lines;
  std::vector<Frame> stack;
  int line = 1;
  auto escape = [](const std::string& k) {
    std::string o;
    for (char c : k) {
      if (c == '~') o += "~0";
      else if (c == '/') o += "~1";
      else o += c;
    }
    return o;
  };
  auto value_path = [&]() -> std::string {
    if (stack.empty()) return "";
    const Frame& f = stack.back();
    return f.obj ? f.path + "/" + escape(f.key) : f.path + "/" + std::to_string(f.index);
  };
  auto note_array_value = [&]() {
    if (!stack.empty() && !stack.back().obj) lines.emplace(value_path(), line);
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      ++line;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (c == '{' || c == '[') {
      note_array_value();
      const std::string p = value_path();
      stack.push_back({c == '{', p, "", 0, true});
    } else if (c == '}' || c == ']') {
      if (!stack.empty()) stack.pop_back();
    } else if (c == ',') {
      if (!stack.empty()) {
        if (stack.back().obj) stack.back().expect_key = true;
        else ++stack.back().index;
      }
    } else if (c == ':') {
      if (!stack.empty()) stack.back().expect_key = false;
    } else if (c == '"') {
      std::string s;
      const int start_line = line;
      for (++i; i < text.size() && text[i] != '"'; ++i) {
        if (text[i] == '\\' && i + 1 < text.size()) {
          ++i;
        }
        if (text[i] == '\n') ++line;
        s += text[i];
      }
      if (!stack.empty() && stack.back().obj && stack.back().expect_key) {
        stack.back().key = s;
        lines[value_path()] = start_line;
      } else {
        note_array_value();
      }
    } else {
      note_array_value();
      while (i + 1 < text.size() && std::string_view(",]}\n \t\r").find(text[i + 1]) == std::string_view::npos) ++i;
    }
  }
  return lines;
}

namespace detail {

class DocReader {
 public:
  DocReader(std::string source, std::map<std::string, int> lines) : source_(std::move(source)), lines_(std::move(lines)) {}

  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    std::string where = source_;
    // nearest enclosing pointer with a known line
    std::string p = ptr;
    while (true) {
      if (auto it = lines_.find(p); it != lines_.end()) {
        where += ":" + std::to_string(it->second);
        break;
      }
      const auto slash = p.find_last_of('/');
      if (slash == std::string::npos || p.empty()) break;
      p = p.substr(0, slash);
    }
    throw LoadError(where + ": " + (ptr.empty() ? std::string("/") : ptr) + ": " + msg);
  }

  void check_keys(const nlohmann::json& obj, const std::string& ptr, std::initializer_list<const char*> allowed) const {
    if (!obj.is_object()) fail(ptr, "expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
      if (!ok.count(k)) fail(ptr + "/" + k, "unknown field '" + k + "'");
  }

  template <typename Pred>
  double number(const nlohmann::json& obj, const std::string& ptr, const char* key, double def, Pred ok,
                const char* constraint) const {
    if (!obj.contains(key)) return def;
    const auto& v = obj.at(key);
    const std::string p = ptr + "/" + key;
    if (!v.is_number()) fail(p, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || !ok(x)) fail(p, std::string("must be ") + constraint);
    return x;
  }

  double positive(const nlohmann::json& obj, const std::string& ptr, const char* key, double def) const {
    return number(obj, ptr, key, def, [](double x) { return x > 0.0; }, "> 0");
  }
  double nonneg(const nlohmann::json& obj, const std::string& ptr, const char* key, double def) const {
    return number(obj, ptr, key, def, [](double x) { return x >= 0.0; }, ">= 0");
  }
  double any(const nlohmann::json& obj, const std::string& ptr, const char* key, double def) const {
    return number(obj, ptr, key, def, [](double) { return true; }, "finite");
  }

  std::string string(const nlohmann::json& obj, const std::string& ptr, const char* key,
                     std::optional<std::string> def = std::nullopt) const {
    if (!obj.contains(key)) {
      if (def) return *def;
      fail(ptr, std::string("missing required field '") + key + "'");
    }
    if (!obj.at(key).is_string()) fail(ptr + "/" + key, "expected a string");
    return obj.at(key).get<std::string>();
  }

  bool boolean(const nlohmann::json& obj, const std::string& ptr, const char* key, bool def) const {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_boolean()) fail(ptr + "/" + key, "expected true or false");
    return obj.at(key).get<bool>();
  }

  Vec2 point(const nlohmann::json& v, const std::string& ptr) const {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) fail(ptr, "expected [x, y]");
    return {v[0].get<double>(), v[1].get<double>()};
  }

  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::map<std::string, int> lines_;
};

inline void read_geometry(const DocReader& r, const nlohmann::json& g, const std::string& ptr, IntersectionGeometry& out) {
  r.check_keys(g, ptr, {"center", "exit_distance", "stop_lines", "lanes"});
  if (g.contains("center")) out.center = r.point(g.at("center"), ptr + "/center");
  out.exit_distance = r.positive(g, ptr, "exit_distance", out.exit_distance);
  if (g.contains("stop_lines")) {
    if (!g.at("stop_lines").is_array()) r.fail(ptr + "/stop_lines", "expected a list");
    int i = 0;
    for (const auto& s : g.at("stop_lines")) {
      const std::string p = ptr + "/stop_lines/" + std::to_string(i++);
      r.check_keys(s, p, {"a", "b"});
      if (!s.contains("a") || !s.contains("b")) r.fail(p, "stop line needs 'a' and 'b'");
      out.stop_lines.push_back({r.point(s.at("a"), p + "/a"), r.point(s.at("b"), p + "/b")});
    }
  }
  if (!g.contains("lanes") || !g.at("lanes").is_array() || g.at("lanes").empty())
    r.fail(ptr + "/lanes", "at least one lane is required");
  int i = 0;
  for (const auto& l : g.at("lanes")) {
    const std::string p = ptr + "/lanes/" + std::to_string(i++);
    r.check_keys(l, p, {"id", "type", "turn", "width", "centerline", "path"});
    Lane lane;
    lane.id = r.string(l, p, "id");
    lane.type = r.string(l, p, "type", std::string("lane"));
    const auto turn = turn_from_string(r.string(l, p, "turn", std::string("through")));
    if (!turn) r.fail(p + "/turn", "must be one of through|left|right|merge");
    lane.turn = *turn;
    lane.width = r.positive(l, p, "width", lane.width);
    if (l.contains("path")) {
      const auto& path = l.at("path");
      r.check_keys(path, p + "/path", {"start", "heading_deg", "segments"});
      int k = 0;
      if (path.contains("segments")) {
        for (const auto& sgm : path.at("segments")) {
          const std::string sp = p + "/path/segments/" + std::to_string(k++);
          r.check_keys(sgm, sp, {"line_to", "arc"});
          if (sgm.contains("arc")) r.check_keys(sgm.at("arc"), sp + "/arc", {"radius", "sweep_deg"});
        }
      }
    }
    try {
      lane.centerline = lane_centerline(l, p);
    } catch (const LoadError& e) {
      r.fail(p, e.what());
    } catch (const std::exception& e) {
      r.fail(p, e.what());
    }
    out.lanes.push_back(std::move(lane));
  }
  try {
    out.finalize();
  } catch (const LoadError& e) {
    r.fail(ptr + "/lanes", e.what());
  }
}

}  // namespace detail

/// Parses and validates a scenario document. `source` names the document in
/// diagnostics; `base_dir` resolves "geometry_file".
inline ScenarioConfig load_scenario(std::string_view text, const std::string& source = "<scenario>",
                                    const std::filesystem::path& base_dir = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError(source + ": " + e.what());
  }
  const detail::DocReader r(source, json_pointer_lines(text));
  const std::string root;
  r.check_keys(doc, root, {"schema", "name", "geometry", "geometry_file", "sim", "decision", "baselines", "hdv", "vehicles"});
  ScenarioConfig cfg;
  if (!doc.contains("schema")) r.fail(root, "missing required field 'schema'");
  if (!doc.at("schema").is_number_integer() || doc.at("schema").get<int>() != 1)
    r.fail("/schema", "unsupported schema version (expected 1)");
  cfg.name = r.string(doc, root, "name", cfg.name);

  if (doc.contains("geometry") == doc.contains("geometry_file"))
    r.fail(root, "exactly one of 'geometry' or 'geometry_file' is required");
  if (doc.contains("geometry")) {
    detail::read_geometry(r, doc.at("geometry"), "/geometry", cfg.geometry);
  } else {
    const auto path = base_dir / r.string(doc, root, "geometry_file");
    std::ifstream in(path);
    if (!in) r.fail("/geometry_file", "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string gtext = ss.str();
    nlohmann::json g;
    try {
      g = nlohmann::json::parse(gtext);
    } catch (const nlohmann::json::parse_error& e) {
      throw LoadError(path.string() + ": " + e.what());
    }
    const detail::DocReader gr(path.string(), json_pointer_lines(gtext));
    detail::read_geometry(gr, g, "", cfg.geometry);
  }

  if (doc.contains("sim")) {
    const auto& s = doc.at("sim");
    r.check_keys(s, "/sim", {"dt", "max_duration", "seed", "stop_at_exit", "collision_distance", "start_jitter",
                             "desired_jitter"});
    cfg.sim.dt = r.number(s, "/sim", "dt", cfg.sim.dt, [](double x) { return x > 0.0 && x <= 0.5; }, "in (0, 0.5]");
    cfg.sim.max_duration = r.positive(s, "/sim", "max_duration", cfg.sim.max_duration);
    if (s.contains("seed")) {
      if (!s.at("seed").is_number_unsigned()) r.fail("/sim/seed", "expected a non-negative integer");
      cfg.sim.seed = s.at("seed").get<std::uint64_t>();
    }
    cfg.sim.stop_at_exit = r.boolean(s, "/sim", "stop_at_exit", cfg.sim.stop_at_exit);
    cfg.sim.collision_distance = r.positive(s, "/sim", "collision_distance", cfg.sim.collision_distance);
    cfg.sim.start_jitter = r.nonneg(s, "/sim", "start_jitter", cfg.sim.start_jitter);
    cfg.sim.desired_jitter = r.number(s, "/sim", "desired_jitter", cfg.sim.desired_jitter,
                                      [](double x) { return x >= 0.0 && x < 1.0; }, "in [0, 1)");
  }

  if (doc.contains("decision")) {
    const auto& d = doc.at("decision");
    const std::string P = "/decision";
    r.check_keys(d, P, {"utility", "trajectory", "thresholds", "replan_period", "commit_distance", "clearance",
                        "a_lat_max", "format"});
    auto& pp = cfg.proposed;
    pp.replan_period = r.positive(d, P, "replan_period", pp.replan_period);
    pp.commit_distance = r.nonneg(d, P, "commit_distance", pp.commit_distance);
    pp.clearance = r.positive(d, P, "clearance", pp.clearance);
    pp.a_lat_max = r.positive(d, P, "a_lat_max", pp.a_lat_max);
    if (d.contains("format")) {
      const auto f = format_from_string(r.string(d, P, "format"));
      if (!f) r.fail(P + "/format", "must be one of opm|raw|simple");
      pp.format = *f;
    }
    if (d.contains("utility")) {
      const auto& u = d.at("utility");
      const std::string U = P + "/utility";
      r.check_keys(u, U, {"beta", "gamma", "lambda", "route_penalty", "gate_threshold", "safety_band",
                          "history_window", "idm"});
      auto& up = pp.utility;
      if (u.contains("beta")) {
        const auto& b = u.at("beta");
        if (!b.is_array() || b.size() != kFeatureDim) r.fail(U + "/beta", "expected 5 numbers");
        for (std::size_t i = 0; i < kFeatureDim; ++i) {
          if (!b[i].is_number()) r.fail(U + "/beta/" + std::to_string(i), "expected a number");
          up.beta[i] = b[i].get<double>();
        }
      }
      up.gamma = r.nonneg(u, U, "gamma", up.gamma);
      up.lambda = r.nonneg(u, U, "lambda", up.lambda);
      up.route_penalty = r.number(u, U, "route_penalty", up.route_penalty, [](double x) { return x >= 0 && x <= 1; },
                                  "in [0, 1]");
      up.gate_threshold = r.number(u, U, "gate_threshold", up.gate_threshold,
                                   [](double x) { return x >= 0 && x <= 1; }, "in [0, 1]");
      up.safety_band = r.positive(u, U, "safety_band", up.safety_band);
      up.history_window = static_cast<std::size_t>(r.positive(u, U, "history_window", double(up.history_window)));
      if (u.contains("idm")) {
        const auto& m = u.at("idm");
        const std::string I = U + "/idm";
        r.check_keys(m, I, {"T", "a_max", "b_comf", "s0", "b_hard", "delta"});
        up.idm.T = r.positive(m, I, "T", up.idm.T);
        up.idm.a_max = r.positive(m, I, "a_max", up.idm.a_max);
        up.idm.b_comf = r.positive(m, I, "b_comf", up.idm.b_comf);
        up.idm.s0 = r.positive(m, I, "s0", up.idm.s0);
        up.idm.b_hard = r.positive(m, I, "b_hard", up.idm.b_hard);
        up.idm.delta = r.positive(m, I, "delta", up.idm.delta);
      }
    }
    if (d.contains("trajectory")) {
      const auto& t = d.at("trajectory");
      const std::string T = P + "/trajectory";
      r.check_keys(t, T, {"a_nom", "b_nom", "turn_cap", "T_n", "sigma", "c_e", "c_s", "T_ref", "J_max", "dt",
                          "n_samples", "accel_min", "accel_max", "b_comf", "occupancy_margin", "lookahead"});
      auto& tp = pp.trajectory;
      tp.a_nom = r.positive(t, T, "a_nom", tp.a_nom);
      tp.b_nom = r.positive(t, T, "b_nom", tp.b_nom);
      tp.turn_cap = r.positive(t, T, "turn_cap", tp.turn_cap);
      tp.T_n = r.positive(t, T, "T_n", tp.T_n);
      tp.sigma = r.nonneg(t, T, "sigma", tp.sigma);
      tp.c_e = r.nonneg(t, T, "c_e", tp.c_e);
      tp.c_s = r.nonneg(t, T, "c_s", tp.c_s);
      tp.T_ref = r.positive(t, T, "T_ref", tp.T_ref);
      tp.J_max = r.positive(t, T, "J_max", tp.J_max);
      tp.dt = r.positive(t, T, "dt", tp.dt);
      tp.n_samples = static_cast<std::size_t>(r.positive(t, T, "n_samples", double(tp.n_samples)));
      tp.accel_min = r.number(t, T, "accel_min", tp.accel_min, [](double x) { return x < 0; }, "< 0");
      tp.accel_max = r.positive(t, T, "accel_max", tp.accel_max);
      tp.b_comf = r.positive(t, T, "b_comf", tp.b_comf);
      tp.occupancy_margin = r.nonneg(t, T, "occupancy_margin", tp.occupancy_margin);
      tp.lookahead = r.nonneg(t, T, "lookahead", tp.lookahead);
    }
    if (d.contains("thresholds")) {
      const auto& h = d.at("thresholds");
      const std::string H = P + "/thresholds";
      r.check_keys(h, H, {"dttc", "proximity", "speed_floor", "accel_floor"});
      auto& th = pp.thresholds;
      th.dttc_threshold = r.positive(h, H, "dttc", th.dttc_threshold);
      th.proximity_threshold = r.positive(h, H, "proximity", th.proximity_threshold);
      th.speed_floor = r.positive(h, H, "speed_floor", th.speed_floor);
      th.accel_floor = r.positive(h, H, "accel_floor", th.accel_floor);
    }
  }
  cfg.idm.params = cfg.proposed.utility.idm;

  if (doc.contains("baselines")) {
    const auto& b = doc.at("baselines");
    r.check_keys(b, "/baselines", {"idm_clearance", "gt"});
    cfg.idm.clearance = r.positive(b, "/baselines", "idm_clearance", cfg.idm.clearance);
    if (b.contains("gt")) {
      const auto& g = b.at("gt");
      const std::string G = "/baselines/gt";
      r.check_keys(g, G, {"gain", "collision_cost", "delay_cost", "noncompliance", "margin", "a_nom", "b_nom",
                          "jerk_limit"});
      auto& gt = cfg.gt;
      gt.gain = r.positive(g, G, "gain", gt.gain);
      gt.collision_cost = r.positive(g, G, "collision_cost", gt.collision_cost);
      gt.delay_cost = r.nonneg(g, G, "delay_cost", gt.delay_cost);
      gt.noncompliance = r.number(g, G, "noncompliance", gt.noncompliance, [](double x) { return x >= 0 && x <= 1; },
                                  "in [0, 1]");
      gt.margin = r.positive(g, G, "margin", gt.margin);
      gt.a_nom = r.positive(g, G, "a_nom", gt.a_nom);
      gt.b_nom = r.positive(g, G, "b_nom", gt.b_nom);
      gt.jerk_limit = r.positive(g, G, "jerk_limit", gt.jerk_limit);
      if (!(gt.collision_cost > gt.gain)) r.fail(G + "/collision_cost", "must exceed gain");
    }
  }
  if (doc.contains("hdv")) {
    const auto& h = doc.at("hdv");
    r.check_keys(h, "/hdv", {"aggressive_brake_dttc", "clearance"});
    cfg.hdv.aggressive_brake_dttc = r.positive(h, "/hdv", "aggressive_brake_dttc", cfg.hdv.aggressive_brake_dttc);
    cfg.hdv.clearance = r.positive(h, "/hdv", "clearance", cfg.hdv.clearance);
  }

  if (!doc.contains("vehicles") || !doc.at("vehicles").is_array() || doc.at("vehicles").empty())
    r.fail("/vehicles", "at least one vehicle is required");
  std::set<std::string> ids;
  int i = 0;
  for (const auto& v : doc.at("vehicles")) {
    const std::string p = "/vehicles/" + std::to_string(i++);
    r.check_keys(v, p, {"id", "role", "position", "speed", "route", "controller", "style", "desired_speed",
                        "passenger_input"});
    VehicleConfig vc;
    vc.id = r.string(v, p, "id");
    if (vc.id.empty()) r.fail(p + "/id", "must be non-empty");
    if (!ids.insert(vc.id).second) r.fail(p + "/id", "duplicate vehicle id '" + vc.id + "'");
    vc.role = r.string(v, p, "role", std::string("hdv"));
    if (vc.role != "cav" && vc.role != "hdv") r.fail(p + "/role", "must be cav or hdv");
    if (!v.contains("position")) r.fail(p, "missing required field 'position'");
    vc.position = r.point(v.at("position"), p + "/position");
    vc.speed = r.nonneg(v, p, "speed", 0.0);
    if (!v.contains("route") || !v.at("route").is_array() || v.at("route").empty())
      r.fail(p + "/route", "expected a non-empty list of lane ids");
    int k = 0;
    for (const auto& l : v.at("route")) {
      const std::string lp = p + "/route/" + std::to_string(k++);
      if (!l.is_string()) r.fail(lp, "expected a lane id");
      if (!cfg.geometry.find_lane(l.get<std::string>())) r.fail(lp, "unknown lane '" + l.get<std::string>() + "'");
      vc.route.push_back(l.get<std::string>());
    }
    const auto ck = controller_from_string(r.string(v, p, "controller", std::string("scripted")));
    if (!ck) r.fail(p + "/controller", "must be one of idm|gt|proposed|scripted|human");
    vc.controller = *ck;
    const auto st = style_from_name(r.string(v, p, "style", std::string("idm")));
    if (!st) r.fail(p + "/style", "must be one of aggressive|conservative|idm|mixed");
    vc.style = *st;
    if (v.contains("desired_speed")) vc.desired_speed = r.positive(v, p, "desired_speed", 1.0);
    vc.passenger_input = r.string(v, p, "passenger_input", std::string());
    cfg.vehicles.push_back(std::move(vc));
  }
  return cfg;
}

inline ScenarioConfig load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open scenario " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario(ss.str(), path.string(), path.parent_path());
}

}  // namespace mixsim
