#pragma once

// Polynomial trajectory candidates around a maneuver's nominal terminal
// state, Gaussian terminal perturbation, scoring and selection.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mixsim/common.hpp"
#include "mixsim/maneuver.hpp"

namespace mixsim {

class DegenerateHorizonError : public InputError {
 public:
  using InputError::InputError;
};

inline constexpr double kMinHorizon = 1e-6;

/// Coefficients are in local time tau = t - t0.
struct LongitudinalPoly {
  std::array<double, 5> a{};
  double t0{0.0};
  double T{0.0};  // end time (absolute)

  double s(double t) const {
    const double u = t - t0;
    return a[0] + u * (a[1] + u * (a[2] + u * (a[3] + u * a[4])));
  }
  double v(double t) const {
    const double u = t - t0;
    return a[1] + u * (2 * a[2] + u * (3 * a[3] + u * 4 * a[4]));
  }
  double acc(double t) const {
    const double u = t - t0;
    return 2 * a[2] + u * (6 * a[3] + u * 12 * a[4]);
  }
  double jerk(double t) const { return 6 * a[3] + 24 * a[4] * (t - t0); }
};

struct LateralPoly {
  std::array<double, 6> b{};
  double t0{0.0};
  double T{0.0};

  double l(double t) const {
    const double u = t - t0;
    return b[0] + u * (b[1] + u * (b[2] + u * (b[3] + u * (b[4] + u * b[5]))));
  }
  double v(double t) const {
    const double u = t - t0;
    return b[1] + u * (2 * b[2] + u * (3 * b[3] + u * (4 * b[4] + u * 5 * b[5])));
  }
  double acc(double t) const {
    const double u = t - t0;
    return 2 * b[2] + u * (6 * b[3] + u * (12 * b[4] + u * 20 * b[5]));
  }
  double jerk(double t) const {
    const double u = t - t0;
    return 6 * b[3] + u * (24 * b[4] + u * 60 * b[5]);
  }
};

struct LongitudinalBC {
  double t0{0.0}, T{1.0};
  double s0{0.0}, v0{0.0}, a0{0.0};
  double vT{0.0}, aT{0.0};
};

struct LateralBC {
  double t0{0.0}, T{1.0};
  double l0{0.0}, v0{0.0}, a0{0.0};
  double lT{0.0}, vT{0.0}, aT{0.0};
};

inline LongitudinalPoly solve_longitudinal(const LongitudinalBC& bc) {
  const double h = bc.T - bc.t0;
  if (!(h >= kMinHorizon)) throw DegenerateHorizonError("longitudinal horizon below 1e-6 s");
  LongitudinalPoly p;
  p.t0 = bc.t0;
  p.T = bc.T;
  p.a[0] = bc.s0;
  p.a[1] = bc.v0;
  p.a[2] = 0.5 * bc.a0;
  Eigen::Matrix2d M;
  M << 3 * h * h, 4 * h * h * h, 6 * h, 12 * h * h;
  const Eigen::Vector2d rhs(bc.vT - p.a[1] - 2 * p.a[2] * h, bc.aT - 2 * p.a[2]);
  const Eigen::Vector2d x = M.fullPivLu().solve(rhs);
  p.a[3] = x(0);
  p.a[4] = x(1);
  return p;
}

inline LateralPoly solve_lateral(const LateralBC& bc) {
  const double h = bc.T - bc.t0;
  if (!(h >= kMinHorizon)) throw DegenerateHorizonError("lateral horizon below 1e-6 s");
  LateralPoly p;
  p.t0 = bc.t0;
  p.T = bc.T;
  p.b[0] = bc.l0;
  p.b[1] = bc.v0;
  p.b[2] = 0.5 * bc.a0;
  const double h2 = h * h, h3 = h2 * h, h4 = h3 * h, h5 = h4 * h;
  Eigen::Matrix3d M;
  M << h3, h4, h5, 3 * h2, 4 * h3, 5 * h4, 6 * h, 12 * h2, 20 * h3;
  const Eigen::Vector3d rhs(bc.lT - p.b[0] - p.b[1] * h - p.b[2] * h2, bc.vT - p.b[1] - 2 * p.b[2] * h,
                            bc.aT - 2 * p.b[2]);
  const Eigen::Vector3d x = M.fullPivLu().solve(rhs);
  p.b[3] = x(0);
  p.b[4] = x(1);
  p.b[5] = x(2);
  return p;
}

struct TrajectoryParams {
  double a_nom{1.5};     // m/s^2
  double b_nom{2.0};     // m/s^2
  double turn_cap{5.0};  // m/s
  double T_n{4.0};       // s
  double sigma{0.3};
  double c_e{0.5};
  double c_s{0.5};
  double T_ref{6.0};   // s
  double J_max{10.0};  // m/s^3
  double dt{0.1};
  std::size_t n_samples{100};
  double accel_min{-8.0};
  double accel_max{2.0};
  double b_comf{2.0};
  double occupancy_margin{0.5};  // s, padding around the opposing passage window
  double lookahead{2.0};         // s of constant-speed extrapolation past the horizon

  void validate() const {
    if (!(a_nom > 0 && b_nom > 0 && turn_cap > 0 && T_n > 0 && dt > 0 && T_ref > 0 && J_max > 0))
      throw ConfigError("trajectory parameters must be positive");
    if (sigma < 0 || c_e < 0 || c_s < 0) throw ConfigError("sigma and score weights must be >= 0");
    if (!(accel_min < 0 && accel_max > 0)) throw ConfigError("acceleration box must contain 0");
  }
};

struct StartState {
  double t0{0.0};
  double s{0.0}, v{0.0}, a{0.0};
  double l{0.0}, vl{0.0}, al{0.0};
  double v_cap{std::numeric_limits<double>::infinity()};  // desired/route speed cap
};

struct TerminalState {
  double T{4.0};  // horizon length
  double vT{0.0}, aT{0.0};
  double lT{0.0}, vlT{0.0}, alT{0.0};

  bool operator==(const TerminalState&) const = default;
};

/// Nominal horizon and terminal kinematics per maneuver. Lateral targets
/// are the route centerline (l = 0).
inline TerminalState nominal_terminal(const StartState& s, Maneuver m, const TrajectoryParams& p) {
  TerminalState t;
  t.T = p.T_n;
  switch (m) {
    case Maneuver::StraightAccel: t.vT = std::min(s.v_cap, s.v + p.a_nom * p.T_n); break;
    case Maneuver::StraightDecel: t.vT = std::max(0.0, s.v - p.b_nom * p.T_n); break;
    case Maneuver::StraightConst: t.vT = std::min(s.v, s.v_cap); break;
    case Maneuver::LeftTurn:
    case Maneuver::RightTurn: t.vT = std::min(p.turn_cap, s.v_cap); break;
  }
  t.vT = std::max(0.0, t.vT);
  return t;
}

/// 1 + sigma * z, z ~ N(0, 1).
template <typename Rng>
double gaussian_multiplier(Rng& rng, double sigma) {
  std::normal_distribution<double> n(0.0, 1.0);
  return 1.0 + sigma * n(rng);
}

/// Perturbs the terminal speed and the horizon; clamps speed >= 0 and the
/// horizon to [0.5, 2] x nominal.
template <typename Rng>
TerminalState perturb_terminal(const TerminalState& nominal, Rng& rng, double sigma) {
  if (sigma == 0.0) return nominal;
  TerminalState t = nominal;
  t.vT = std::max(0.0, nominal.vT * gaussian_multiplier(rng, sigma));
  t.T = std::clamp(nominal.T * gaussian_multiplier(rng, sigma), 0.5 * nominal.T, 2.0 * nominal.T);
  return t;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream per candidate index, so a run with N candidates is
/// a prefix of any run with more.
inline std::mt19937_64 candidate_rng(std::uint64_t seed, std::uint64_t k) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(k + 1)));
}

struct TrajectorySample {
  double t{0.0};
  double s{0.0}, l{0.0};
  double speed{0.0}, accel{0.0}, jerk{0.0};
  double lat_speed{0.0}, lat_accel{0.0}, lat_jerk{0.0};
};

struct Trajectory {
  Maneuver maneuver{Maneuver::StraightConst};
  LongitudinalPoly lon;
  LateralPoly lat;
  LongitudinalBC lon_bc;
  LateralBC lat_bc;
  TerminalState terminal;
  std::vector<TrajectorySample> samples;
  bool fallback{false};

  double horizon() const { return lon.T - lon.t0; }
};

inline Trajectory make_trajectory(const StartState& st, const TerminalState& term, Maneuver m, double dt) {
  Trajectory tr;
  tr.maneuver = m;
  tr.terminal = term;
  tr.lon_bc = {st.t0, st.t0 + term.T, st.s, st.v, st.a, term.vT, term.aT};
  tr.lat_bc = {st.t0, st.t0 + term.T, st.l, st.vl, st.al, term.lT, term.vlT, term.alT};
  tr.lon = solve_longitudinal(tr.lon_bc);
  tr.lat = solve_lateral(tr.lat_bc);
  const auto n = static_cast<std::size_t>(std::floor(term.T / dt + 1e-9)) + 1;
  tr.samples.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = st.t0 + static_cast<double>(k) * dt;
    tr.samples.push_back({t, tr.lon.s(t), tr.lat.l(t), tr.lon.v(t), tr.lon.acc(t), tr.lon.jerk(t), tr.lat.v(t),
                          tr.lat.acc(t), tr.lat.jerk(t)});
  }
  return tr;
}

struct ScoreWeights {
  double c_e{0.5}, c_s{0.5}, T_ref{6.0}, J_max{10.0};
};

struct TrajectoryScore {
  double T_avg{0.0};
  double V_avg{0.0};
  double j_avg{0.0};
  double jerk_integral{0.0};
  double S{0.0};
};

/// Reporting indicators use discrete sums over sample intervals; S uses the
/// trapezoidal integral of |jerk| over the samples.
inline TrajectoryScore score_trajectory(const Trajectory& tau, const ScoreWeights& w) {
  const auto& sm = tau.samples;
  if (sm.size() < 2) throw InputError("trajectory needs at least two samples");
  TrajectoryScore sc;
  const double n = static_cast<double>(sm.size() - 1);
  double sum_dt = 0.0, sum_ja = 0.0, integral = 0.0;
  for (std::size_t k = 0; k + 1 < sm.size(); ++k) {
    const double dt = sm[k + 1].t - sm[k].t;
    sum_dt += dt;
    sum_ja += dt * std::fabs(sm[k + 1].accel - sm[k].accel);
    integral += 0.5 * dt * (std::fabs(sm[k].jerk) + std::fabs(sm[k + 1].jerk));
  }
  sc.T_avg = sum_dt / n;
  const double d = sm.back().s - sm.front().s;
  sc.V_avg = sc.T_avg > 0.0 ? d / sc.T_avg : 0.0;
  sc.j_avg = sum_ja / n;
  sc.jerk_integral = integral;
  sc.S = w.c_e * tau.horizon() / w.T_ref + w.c_s * integral / w.J_max;
  return sc;
}

/// Interval of ego arc length that overlaps an opposing vehicle's path,
/// and the time window in which the opposing vehicle is predicted there.
struct ConflictWindow {
  double s_enter{0.0}, s_exit{0.0};  // ego route arc length
  double t_enter{0.0}, t_exit{0.0};  // absolute time
};

enum class Infeasibility { None, AccelBox, NegativeSpeed, ConflictOccupancy };

inline std::string_view to_string(Infeasibility r) {
  switch (r) {
    case Infeasibility::None: return "feasible";
    case Infeasibility::AccelBox: return "accel_box";
    case Infeasibility::NegativeSpeed: return "negative_speed";
    case Infeasibility::ConflictOccupancy: return "conflict_occupancy";
  }
  return "feasible";
}

inline Infeasibility check_feasibility(const Trajectory& tr, std::span<const ConflictWindow> windows,
                                       const TrajectoryParams& p) {
  for (const auto& s : tr.samples) {
    if (s.accel < p.accel_min - 1e-9 || s.accel > p.accel_max + 1e-9) return Infeasibility::AccelBox;
    if (s.speed < -1e-9) return Infeasibility::NegativeSpeed;
  }
  if (windows.empty()) return Infeasibility::None;
  const double s_start = tr.samples.front().s;
  const double t_end = tr.samples.back().t;
  const double s_end = tr.samples.back().s;
  const double v_end = std::max(0.0, tr.samples.back().speed);
  auto occupied = [&](double t, double s) {
    for (const auto& w : windows) {
      if (s_start >= w.s_enter) continue;  // already committed to this conflict
      if (s >= w.s_enter && s <= w.s_exit && t >= w.t_enter - p.occupancy_margin &&
          t <= w.t_exit + p.occupancy_margin)
        return true;
    }
    return false;
  };
  for (const auto& s : tr.samples)
    if (occupied(s.t, s.s)) return Infeasibility::ConflictOccupancy;
  for (double e = p.dt; e <= p.lookahead + 1e-9; e += p.dt)
    if (occupied(t_end + e, s_end + v_end * e)) return Infeasibility::ConflictOccupancy;
  return Infeasibility::None;
}

struct CandidateAudit {
  std::size_t index{0};
  TerminalState terminal;
  Infeasibility reason{Infeasibility::None};
  std::optional<double> score;

  bool feasible() const { return reason == Infeasibility::None; }
};

inline nlohmann::json to_json(const CandidateAudit& c) {
  nlohmann::json j = {{"candidate", c.index},
                      {"terminal", {{"T", c.terminal.T}, {"vT", c.terminal.vT}, {"lT", c.terminal.lT}}},
                      {"feasible", c.feasible()},
                      {"reason", to_string(c.reason)}};
  j["S"] = c.score ? nlohmann::json(*c.score) : nlohmann::json(nullptr);
  return j;
}

struct OptimizeResult {
  Trajectory best;
  TrajectoryScore score;
  bool fallback{false};
  std::vector<CandidateAudit> audit;
};

/// Comfortable braking towards standstill along the route.
inline Trajectory fallback_trajectory(const StartState& st, const TrajectoryParams& p) {
  TerminalState t;
  if (st.v - p.b_comf * p.T_n > 0.0) {
    t.T = p.T_n;
    t.vT = st.v - p.b_comf * p.T_n;
  } else {
    t.T = std::clamp(1.5 * st.v / p.b_comf, 0.5, p.T_n);
    t.vT = 0.0;
  }
  Trajectory tr = make_trajectory(st, t, Maneuver::StraightDecel, p.dt);
  tr.fallback = true;
  return tr;
}

/// Candidate 0 is the unperturbed nominal; candidates k >= 1 draw from
/// candidate_rng(seed, k).
inline OptimizeResult optimize(const StartState& st, Maneuver m, std::span<const ConflictWindow> windows,
                               const TrajectoryParams& p, std::uint64_t seed, std::ostream* audit_sink = nullptr) {
  p.validate();
  if (p.n_samples < 1) throw InputError("n_samples must be >= 1");
  const TerminalState nominal = nominal_terminal(st, m, p);
  const ScoreWeights w{p.c_e, p.c_s, p.T_ref, p.J_max};
  OptimizeResult res;
  res.audit.reserve(p.n_samples);
  std::optional<Trajectory> best;
  double best_score = std::numeric_limits<double>::infinity();
  TrajectoryScore best_sc;
  for (std::size_t k = 0; k < p.n_samples; ++k) {
    TerminalState term = nominal;
    if (k > 0) {
      auto rng = candidate_rng(seed, k);
      term = perturb_terminal(nominal, rng, p.sigma);
    }
    CandidateAudit a;
    a.index = k;
    a.terminal = term;
    Trajectory tr = make_trajectory(st, term, m, p.dt);
    a.reason = check_feasibility(tr, windows, p);
    if (a.feasible()) {
      const auto sc = score_trajectory(tr, w);
      a.score = sc.S;
      if (sc.S < best_score) {
        best_score = sc.S;
        best_sc = sc;
        best = std::move(tr);
      }
    }
    if (audit_sink) *audit_sink << to_json(a).dump() << '\n';
    res.audit.push_back(a);
  }
  if (best) {
    res.best = std::move(*best);
    res.score = best_sc;
  } else {
    res.best = fallback_trajectory(st, p);
    res.score = score_trajectory(res.best, w);
    res.fallback = true;
  }
  return res;
}

}  // namespace mixsim
