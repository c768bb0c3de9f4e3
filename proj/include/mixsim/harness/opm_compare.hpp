#pragma once

// Scene-serialization comparison: prompt size, element counts and decision
// agreement across the opm / raw / simple formats.

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "mixsim/pipeline.hpp"
#include "mixsim/sim_core.hpp"

namespace mixsim {

struct FormatStats {
  SceneFormat format{SceneFormat::Opm};
  double mean_length{0.0};          // characters per prompt
  std::size_t standard_length{0};   // the scenario's own scene after warm-up
  double objects{0.0}, processes{0.0}, relations{0.0};  // per scene
  double agreement{0.0};            // with the opm decision, mock reasoner
  std::optional<double> latency_ms;    // endpoint only
  std::optional<double> accuracy;      // endpoint only, against the mock-oracle label
  std::optional<double> reasoning_steps;
};

struct OpmCompareReport {
  std::size_t scenes{0};
  std::string endpoint;
  std::vector<FormatStats> formats;

  const FormatStats& of(SceneFormat f) const {
    for (const auto& s : formats)
      if (s.format == f) return s;
    throw InputError("format not in report");
  }
};

struct OpmCompareSpec {
  std::size_t scenes{200};
  std::uint64_t seed{1};
  std::vector<SceneFormat> formats{SceneFormat::Opm, SceneFormat::Raw, SceneFormat::Simple};
  double warmup{3.0};  // s simulated before the standard scene is taken
};

/// One randomized decision problem on the scenario geometry.
struct CompareScene {
  DecisionInputs inputs;
  RawContext raw;  // histories is bound at serialization time
  std::vector<VehicleState> vehicles;
  HistoryBuffer history;
};

namespace detail {

inline const std::vector<std::pair<IntentChannel, std::string>>& sample_payloads() {
  static const std::vector<std::pair<IntentChannel, std::string>> p = {
      {IntentChannel::EhmiText, "I am slowing down; please go ahead."},
      {IntentChannel::EhmiText, "I'm in a hurry, I will pass first."},
      {IntentChannel::EhmiText, "After you, I will wait."},
      {IntentChannel::VoiceText, "Keeping my speed."},
      {IntentChannel::TurnSignal, "left"},
      {IntentChannel::TurnSignal, "brake"},
      {IntentChannel::EhmiText, "hello"},
  };
  return p;
}

inline const std::vector<std::string>& sample_passenger_inputs() {
  static const std::vector<std::string> p = {
      "", "", "I am in a hurry and hope to pass through as soon as possible.", "Take your time.", "Drive carefully."};
  return p;
}

inline VehicleState state_on(const Route& r, const std::string& id, double s, double v, double a) {
  const Vec2 tan = r.path.tangent_at(s);
  const Vec2 p = r.path.point_at(s);
  VehicleState vs;
  vs.id = id;
  vs.x = p.x;
  vs.y = p.y;
  vs.vx = v * tan.x;
  vs.vy = v * tan.y;
  vs.ax = a * tan.x;
  vs.ay = a * tan.y;
  vs.phi = std::atan2(tan.y, tan.x);
  return vs;
}

}  // namespace detail

/// Vehicles are placed at random arc lengths and speeds on their scenario
/// routes, each with a short constant-acceleration history; a random
/// subset of other vehicles carries an intent message to the ego.
inline CompareScene random_compare_scene(const ScenarioConfig& cfg, std::mt19937_64& rng) {
  CompareScene sc;
  const auto& g = cfg.geometry;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Route> routes;
  std::string ego_id;
  for (const auto& vc : cfg.vehicles) {
    routes.push_back(build_route(g, vc.id, vc.route));
    if (ego_id.empty() && vc.role == "cav") ego_id = vc.id;
  }
  if (ego_id.empty()) ego_id = cfg.vehicles.front().id;
  const auto& th = cfg.proposed.thresholds;
  sc.history = HistoryBuffer(cfg.proposed.utility.history_window * cfg.sim.dt, cfg.sim.dt);

  double ego_s = 0.0;
  for (std::size_t k = 0; k < routes.size(); ++k) {
    const Route& r = routes[k];
    const double s = u01(rng) * std::min(60.0, r.path.length() - 1.0);
    const double v = u01(rng) < 0.1 ? 0.0 : 1.0 + 11.0 * u01(rng);
    const double a = v > 0.0 ? -2.0 + 4.0 * u01(rng) : 0.0;
    for (int h = 10; h >= 1; --h) {
      const double t = -h * cfg.sim.dt;
      const double vh = std::max(0.0, v + a * t);
      const double sh = std::max(0.0, s + v * t + 0.5 * a * t * t);
      sc.history.push(detail::state_on(r, r.vehicle_id, sh, vh, a), t);
    }
    sc.vehicles.push_back(detail::state_on(r, r.vehicle_id, s, v, a));
    if (r.vehicle_id == ego_id) ego_s = s;
  }

  std::vector<IntentPair> intents;
  const auto& payloads = detail::sample_payloads();
  for (const auto& v : sc.vehicles) {
    if (v.id == ego_id || u01(rng) < 0.4) continue;
    const auto& [ch, text] = payloads[static_cast<std::size_t>(u01(rng) * payloads.size()) % payloads.size()];
    intents.push_back({v.id, ego_id, ch, text});
  }

  OpmBuildInput bi;
  for (const auto& v : sc.vehicles) {
    if (v.id == ego_id) bi.ego = v;
    else bi.others.push_back(v);
  }
  bi.geometry = &g;
  bi.routes = routes;
  bi.intents = intents;
  bi.thresholds = th;
  OpmGraph graph = build_opm_graph(bi);

  const Route* ego_route = find_route(routes, ego_id);
  DecisionInputs& di = sc.inputs;
  di.nav = navigation_instruction(*ego_route, g, ego_s, cfg.proposed.commit_distance);
  const auto& passenger = detail::sample_passenger_inputs();
  const std::string& said = passenger[static_cast<std::size_t>(u01(rng) * passenger.size()) % passenger.size()];
  di.ego_intent = query_ego_intent(said, IntentVector{});
  for (const auto& ip : graph.intents) {
    if (ip.id_j != ego_id) continue;
    di.other_intents.emplace_back(ip.id_i, parse_explicit_intent(ip.channel, ip.payload));
  }
  di.leader = find_leader(*ego_route, ego_s, bi.ego, sc.vehicles);
  di.dttc_threshold = th.dttc_threshold;
  di.scene = std::move(graph);
  sc.raw.all_vehicles = sc.vehicles;
  return sc;
}

inline std::string prompt_for(const CompareScene& sc, SceneFormat f) {
  OpmGraph g = sc.inputs.scene;
  g.ego_navigation = sc.inputs.nav;
  RawContext raw = sc.raw;
  raw.histories = &sc.history;
  return serialize_opm(g, f, f == SceneFormat::Raw ? &raw : nullptr);
}

/// Prompt length of the scenario's own scene once `warmup` seconds of
/// history have accumulated.
inline std::size_t standard_prompt_length(const ScenarioConfig& cfg, SceneFormat f, double warmup) {
  Simulation sim(cfg, cfg.sim.seed, EpisodeOverrides{}, nullptr);
  while (sim.time() < warmup - 1e-9 && sim.step()) {
  }
  const auto vehicles = sim.snapshot();
  std::string ego_id;
  for (const auto& a : sim.agents())
    if (ego_id.empty() && a.is_cav()) ego_id = a.cfg.id;
  if (ego_id.empty()) ego_id = vehicles.front().id;
  OpmBuildInput bi;
  for (const auto& v : vehicles) {
    if (v.id == ego_id) bi.ego = v;
    else bi.others.push_back(v);
  }
  bi.geometry = &cfg.geometry;
  bi.routes = sim.routes();
  bi.thresholds = cfg.proposed.thresholds;
  bi.timestamp = sim.time();
  OpmGraph g = build_opm_graph(bi);
  const Agent* ego = sim.agent(ego_id);
  g.ego_navigation = navigation_instruction(ego->route, cfg.geometry, ego->s, cfg.proposed.commit_distance);
  RawContext raw{vehicles, &sim.history()};
  return serialize_opm(g, f, f == SceneFormat::Raw ? &raw : nullptr).size();
}

/// `endpoint` may be null. Agreement always uses the mock; the endpoint,
/// when present, is scored against the mock's opm decision as the label.
inline OpmCompareReport opm_compare(const ScenarioConfig& cfg, const OpmCompareSpec& spec,
                                    const Reasoner* endpoint = nullptr) {
  if (spec.scenes == 0) throw InputError("scene count must be positive");
  OpmCompareReport rep;
  rep.scenes = spec.scenes;
  if (endpoint) rep.endpoint = endpoint->name();
  MockReasoner mock(cfg.proposed.utility.gate_threshold, cfg.proposed.thresholds);
  std::mt19937_64 rng(splitmix64(spec.seed));

  struct Acc {
    double len{0}, obj{0}, proc{0}, rel{0};
    std::size_t agree{0}, correct{0}, step_n{0};
    double latency{0}, steps{0};
  };
  std::vector<Acc> acc(spec.formats.size());

  auto run = [&](const CompareScene& sc, SceneFormat f, const Reasoner* r) {
    DecisionInputs in = sc.inputs;
    in.format = f;
    DecisionContext ctx;
    return decide(in, ctx, cfg.proposed.utility, r);
  };

  for (std::size_t n = 0; n < spec.scenes; ++n) {
    const CompareScene sc = random_compare_scene(cfg, rng);
    const Maneuver label = run(sc, SceneFormat::Opm, &mock).final_maneuver;
    for (std::size_t k = 0; k < spec.formats.size(); ++k) {
      const SceneFormat f = spec.formats[k];
      Acc& a = acc[k];
      const std::string text = prompt_for(sc, f);
      a.len += static_cast<double>(text.size());
      const auto& g = sc.inputs.scene;
      a.obj += static_cast<double>(g.objects.size());
      if (f != SceneFormat::Raw) a.proc += static_cast<double>(g.processes.size());
      if (f == SceneFormat::Opm) a.rel += static_cast<double>(g.conflicts.size() + g.intents.size());
      if (f == SceneFormat::Raw && !sc.raw.all_vehicles.empty())
        a.obj += static_cast<double>(sc.raw.all_vehicles.size() - g.objects.size());
      if (run(sc, f, &mock).final_maneuver == label) ++a.agree;
      if (endpoint) {
        const auto t0 = std::chrono::steady_clock::now();
        const Decision d = run(sc, f, endpoint);
        a.latency += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (d.final_maneuver == label) ++a.correct;
        if (d.response && d.response->reasoning_steps && !d.response->fallback) {
          ++a.step_n;
          a.steps += *d.response->reasoning_steps;
        }
      }
    }
  }

  const double N = static_cast<double>(spec.scenes);
  for (std::size_t k = 0; k < spec.formats.size(); ++k) {
    FormatStats s;
    s.format = spec.formats[k];
    const Acc& a = acc[k];
    s.mean_length = a.len / N;
    s.objects = a.obj / N;
    s.processes = a.proc / N;
    s.relations = a.rel / N;
    s.agreement = static_cast<double>(a.agree) / N;
    s.standard_length = standard_prompt_length(cfg, s.format, spec.warmup);
    if (endpoint) {
      s.latency_ms = a.latency / N;
      s.accuracy = static_cast<double>(a.correct) / N;
      // steps are reported only when every reply carried a count
      if (a.step_n == spec.scenes) s.reasoning_steps = a.steps / N;
    }
    rep.formats.push_back(s);
  }
  return rep;
}

inline std::string format_report(const OpmCompareReport& r) {
  const bool ep = !r.endpoint.empty();
  std::string out = "scenes " + std::to_string(r.scenes) + (ep ? ", endpoint " + r.endpoint : ", mock reasoner") + "\n";
  out += "format  std_len  mean_len  objects  processes  relations  accuracy";
  if (ep) out += "  latency_ms  steps";
  out += '\n';
  char buf[256];
  for (const auto& s : r.formats) {
    // without an endpoint the accuracy column is the mock agreement
    const double accuracy = s.accuracy.value_or(s.agreement);
    std::snprintf(buf, sizeof buf, "%-7s %7zu  %8.1f  %7.2f  %9.2f  %9.2f  %8.3f", std::string(to_string(s.format)).c_str(),
                  s.standard_length, s.mean_length, s.objects, s.processes, s.relations, accuracy);
    out += buf;
    if (ep) {
      std::snprintf(buf, sizeof buf, "  %10.1f  %5s", s.latency_ms.value_or(0.0),
                    s.reasoning_steps ? std::to_string(*s.reasoning_steps).substr(0, 4).c_str() : "N/A");
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace mixsim
