#pragma once

// Batch experiments: controllers x speed classes x repetitions.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mixsim/sim_core.hpp"

namespace mixsim {

struct MetricsRecord {
  std::string run_id;
  std::string controller;
  double speed_class{0.0};
  double avg_speed{0.0};
  double avg_jerk{0.0};
  double avg_conflict_duration{0.0};
  bool collision{false};
  double completion_time{0.0};
};

inline constexpr const char* kMetricsHeader =
    "run_id,controller,speed_class,avg_speed,avg_jerk,avg_conflict_duration,collision,completion_time";

inline std::string to_csv_row(const MetricsRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, ",%s,%g,%.6f,%.6f,%.6f,%d,%.6f", r.controller.c_str(), r.speed_class, r.avg_speed,
                r.avg_jerk, r.avg_conflict_duration, r.collision ? 1 : 0, r.completion_time);
  return r.run_id + buf;
}

inline void write_csv(std::ostream& os, const std::vector<MetricsRecord>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) os << to_csv_row(r) << '\n';
}

struct MatrixSpec {
  std::vector<ControllerKind> controllers{ControllerKind::Idm, ControllerKind::Gt, ControllerKind::Proposed};
  std::vector<double> speeds{6.0, 8.0, 10.0};
  std::size_t reps{30};
  std::uint64_t seed{1};
  bool jitter{true};
  std::optional<HdvStyle> hdv_style;
  std::ostream* audit{nullptr};  // per-decision JSONL
  std::string trace_dir;         // one <run_id>.jsonl per episode when set
};

struct Stat {
  double mean{0.0};
  double stddev{0.0};  // sample
};

inline Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= xs.size();
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / (xs.size() - 1));
  }
  return s;
}

struct CellSummary {
  std::string controller;
  double speed_class{0.0};
  std::size_t n{0};
  Stat avg_speed, avg_jerk, avg_conflict_duration, completion_time;
  std::size_t collisions{0};
  std::size_t faults{0};
};

struct MatrixResult {
  std::vector<MetricsRecord> rows;
  std::vector<CellSummary> cells;

  const CellSummary* cell(std::string_view controller, double speed) const {
    for (const auto& c : cells)
      if (c.controller == controller && std::fabs(c.speed_class - speed) < 1e-9) return &c;
    return nullptr;
  }
};

/// Every controller sees the same episode seeds, so the scripted drivers
/// and jitter are paired across controllers.
inline MatrixResult run_matrix(const ScenarioConfig& cfg, const MatrixSpec& spec, const Reasoner* reasoner) {
  if (spec.reps == 0) throw InputError("reps must be positive");
  MatrixResult res;
  for (auto ck : spec.controllers) {
    for (double speed : spec.speeds) {
      CellSummary cell;
      cell.controller = std::string(to_string(ck));
      cell.speed_class = speed;
      std::vector<double> sp, jk, cd, ct;
      for (std::size_t rep = 0; rep < spec.reps; ++rep) {
        EpisodeOverrides ov;
        ov.cav_controller = ck;
        ov.speed_class = speed;
        ov.jitter = spec.jitter;
        ov.hdv_style = spec.hdv_style;
        char id[128];
        std::snprintf(id, sizeof id, "%s-%s-%g-r%zu", cfg.name.c_str(), cell.controller.c_str(), speed, rep);
        Simulation sim(cfg, episode_seed(spec.seed, speed, rep), ov, reasoner);
        std::ofstream trace;
        if (!spec.trace_dir.empty()) {
          trace.open(std::filesystem::path(spec.trace_dir) / (std::string(id) + ".jsonl"));
          sim.set_trace(&trace);
        }
        sim.set_audit(spec.audit);
        const EpisodeMetrics m = sim.run();
        MetricsRecord r;
        r.run_id = id;
        r.controller = cell.controller;
        r.speed_class = speed;
        r.avg_speed = m.avg_speed;
        r.avg_jerk = m.avg_jerk;
        r.avg_conflict_duration = m.avg_conflict_duration;
        r.collision = m.collision;
        r.completion_time = m.completion_time;
        res.rows.push_back(r);
        sp.push_back(r.avg_speed);
        jk.push_back(r.avg_jerk);
        cd.push_back(r.avg_conflict_duration);
        ct.push_back(r.completion_time);
        cell.collisions += m.collision ? 1 : 0;
        cell.faults += m.fault ? 1 : 0;
      }
      cell.n = spec.reps;
      cell.avg_speed = stat_of(sp);
      cell.avg_jerk = stat_of(jk);
      cell.avg_conflict_duration = stat_of(cd);
      cell.completion_time = stat_of(ct);
      res.cells.push_back(cell);
    }
  }
  return res;
}

inline std::string format_summary(const std::vector<CellSummary>& cells) {
  std::string out =
      "controller  speed    n   avg_speed         avg_jerk          conflict_dur      completion        coll\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%-10s %6g %4zu   %6.3f +- %-6.3f  %6.3f +- %-6.3f  %6.3f +- %-6.3f  %6.2f +- %-6.2f  %zu\n",
                  c.controller.c_str(), c.speed_class, c.n, c.avg_speed.mean, c.avg_speed.stddev, c.avg_jerk.mean,
                  c.avg_jerk.stddev, c.avg_conflict_duration.mean, c.avg_conflict_duration.stddev,
                  c.completion_time.mean, c.completion_time.stddev, c.collisions);
    out += buf;
  }
  return out;
}

}  // namespace mixsim
