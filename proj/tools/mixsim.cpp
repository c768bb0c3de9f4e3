#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mixsim/harness/session_server.hpp"
#include "mixsim/mixsim.hpp"

using namespace mixsim;

namespace {

std::atomic<bool> g_stop{false};

ScenarioConfig scenario_from_arg(const std::string& arg) {
  if (arg == "merging") return build_merging_scenario();
  return load_scenario_file(arg);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-traffic interaction simulator"};
  app.require_subcommand(1);

  std::string reasoner_url;
  app.add_option("--reasoner-url", reasoner_url, "reasoner endpoint (default: MIXSIM_REASONER_URL, else the mock)");

  // run-matrix
  auto* rm = app.add_subcommand("run-matrix", "controllers x speed classes x repetitions");
  std::vector<std::string> scenarios{"data/scenarios/intersection.json"};
  std::string controllers = "idm,gt,proposed", speeds = "6,8,10", out = "metrics.csv", hdv_style, audit, trace_dir;
  std::size_t reps = 30;
  std::uint64_t seed = 1;
  bool no_jitter = false;
  rm->add_option("--scenario", scenarios, "scenario file, or \"merging\"; repeatable")->capture_default_str();
  rm->add_option("--controllers", controllers)->capture_default_str();
  rm->add_option("--speeds", speeds)->capture_default_str();
  rm->add_option("--reps", reps)->capture_default_str()->check(CLI::PositiveNumber);
  rm->add_option("--seed", seed)->capture_default_str();
  rm->add_option("--out", out, "metrics CSV")->capture_default_str();
  rm->add_option("--hdv-style", hdv_style, "aggressive | conservative | idm | mixed");
  rm->add_flag("--no-jitter", no_jitter);
  rm->add_option("--trace-dir", trace_dir, "write one JSONL trace per episode");
  rm->add_option("--audit", audit, "append per-decision audit records (JSONL)");

  // opm-compare
  auto* oc = app.add_subcommand("opm-compare", "scene serialization formats compared");
  std::string oc_scenario = "data/scenarios/intersection.json", formats = "opm,raw,simple";
  std::size_t scenes = 200;
  std::uint64_t oc_seed = 1;
  oc->add_option("--scenario", oc_scenario)->capture_default_str();
  oc->add_option("--formats", formats)->capture_default_str();
  oc->add_option("--scenes", scenes)->capture_default_str()->check(CLI::PositiveNumber);
  oc->add_option("--seed", oc_seed)->capture_default_str();

  // serve
  auto* sv = app.add_subcommand("serve", "live sessions for the cockpit");
  std::string sv_scenario = "data/scenarios/intersection.json", role, log_dir = "sessions", bind = "127.0.0.1";
  std::uint16_t port = 8765;
  std::uint64_t sv_seed = 1;
  std::size_t sessions = 0;
  bool no_realtime = false;
  sv->add_option("--scenario", sv_scenario)->capture_default_str();
  sv->add_option("--port", port)->capture_default_str();
  sv->add_option("--bind", bind)->capture_default_str();
  sv->add_option("--seed", sv_seed)->capture_default_str();
  sv->add_option("--role", role, "fix the partner role (human | model); random per session otherwise");
  sv->add_option("--log-dir", log_dir)->capture_default_str();
  sv->add_option("--sessions", sessions, "stop after this many sessions (0: run until interrupted)");
  sv->add_flag("--no-realtime", no_realtime, "step as fast as clients keep up");

  // replay
  auto* rp = app.add_subcommand("replay", "re-run a logged session from its control log");
  std::string rp_scenario = "data/scenarios/intersection.json", session_log = "sessions/sessions.jsonl", session_id,
              rp_out;
  rp->add_option("--scenario", rp_scenario)->capture_default_str();
  rp->add_option("--session-log", session_log)->capture_default_str();
  rp->add_option("--session-id", session_id, "defaults to the last record");
  rp->add_option("--out", rp_out, "write the replayed trace here");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::optional<std::string> url = reasoner_url.empty() ? std::nullopt : std::optional(reasoner_url);
    const auto reasoner = make_reasoner(url);

    if (*rm) {
      MatrixSpec spec;
      spec.controllers.clear();
      for (const auto& c : split_csv(controllers)) {
        const auto ck = controller_from_string(c);
        if (!ck || (*ck != ControllerKind::Idm && *ck != ControllerKind::Gt && *ck != ControllerKind::Proposed))
          throw InputError("controllers are idm, gt, proposed; got " + c);
        spec.controllers.push_back(*ck);
      }
      spec.speeds.clear();
      for (const auto& s : split_csv(speeds)) spec.speeds.push_back(std::stod(s));
      spec.reps = reps;
      spec.seed = seed;
      spec.jitter = !no_jitter;
      if (!hdv_style.empty()) {
        spec.hdv_style = style_from_name(hdv_style);
        if (!spec.hdv_style) throw InputError("unknown hdv style " + hdv_style);
      }
      std::ofstream audit_os;
      if (!audit.empty()) {
        audit_os.open(audit, std::ios::app);
        if (!audit_os) throw LoadError("cannot open audit file " + audit);
        spec.audit = &audit_os;
      }
      if (!trace_dir.empty()) {
        std::filesystem::create_directories(trace_dir);
        spec.trace_dir = trace_dir;
      }
      std::vector<MetricsRecord> rows;
      for (const auto& sc : scenarios) {
        const ScenarioConfig cfg = scenario_from_arg(sc);
        const MatrixResult res = run_matrix(cfg, spec, reasoner.get());
        rows.insert(rows.end(), res.rows.begin(), res.rows.end());
        std::cout << "scenario " << cfg.name << '\n' << format_summary(res.cells);
      }
      std::ofstream os(out);
      if (!os) throw LoadError("cannot write " + out);
      write_csv(os, rows);
      std::cout << rows.size() << " rows written to " << out << '\n';
      return 0;
    }

    if (*oc) {
      OpmCompareSpec spec;
      spec.scenes = scenes;
      spec.seed = oc_seed;
      spec.formats.clear();
      for (const auto& f : split_csv(formats)) {
        auto ff = format_from_string(f);
        if (!ff) throw InputError("unknown format " + f);
        spec.formats.push_back(*ff);
      }
      const bool endpoint = url || std::getenv("MIXSIM_REASONER_URL");
      const auto rep = opm_compare(scenario_from_arg(oc_scenario), spec, endpoint ? reasoner.get() : nullptr);
      std::cout << format_report(rep);
      return 0;
    }

    if (*sv) {
      SessionServerConfig sc;
      sc.bind = bind;
      sc.port = port;
      sc.log_dir = log_dir;
      sc.seed = sv_seed;
      sc.real_time = !no_realtime;
      if (!role.empty()) sc.role = role;
      SessionServer server(scenario_from_arg(sv_scenario), sc, reasoner.get());
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      std::cout << "listening on ws://" << bind << ':' << server.port() << "/, sessions logged to "
                << server.log_path().string() << std::endl;
      server.serve(g_stop, sessions);
      return 0;
    }

    if (*rp) {
      std::optional<SessionRecord> rec;
      std::ifstream in(session_log);
      if (!in) throw LoadError("cannot open " + session_log);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        SessionRecord r = session_record_from_json(nlohmann::json::parse(line));
        if (session_id.empty() || r.session_id == session_id) rec = r;
      }
      if (!rec) throw InputError("session " + session_id + " not in " + session_log);
      const std::string replayed = replay_session(scenario_from_arg(rp_scenario), *rec, reasoner.get());
      if (!rp_out.empty()) std::ofstream(rp_out) << replayed;
      const bool same = !rec->trace.empty() && std::filesystem::exists(rec->trace) && read_file(rec->trace) == replayed;
      std::cout << "session " << rec->session_id << ": " << std::count(replayed.begin(), replayed.end(), '\n')
                << " ticks replayed, " << (same ? "identical to" : "differs from") << " the recorded trace\n";
      return same ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
