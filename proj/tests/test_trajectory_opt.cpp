#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"

using namespace mixsim;
using namespace mixsim::testing;

namespace {

LongitudinalBC random_lon(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t0(-5, 5), h(0.5, 8), s(-50, 50), v(0, 15), a(-4, 3);
  LongitudinalBC bc;
  bc.t0 = t0(rng);
  bc.T = bc.t0 + h(rng);
  bc.s0 = s(rng);
  bc.v0 = v(rng);
  bc.a0 = a(rng);
  bc.vT = v(rng);
  bc.aT = a(rng);
  return bc;
}

LateralBC random_lat(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> t0(-5, 5), h(0.5, 8), l(-4, 4), v(-2, 2), a(-2, 2);
  LateralBC bc;
  bc.t0 = t0(rng);
  bc.T = bc.t0 + h(rng);
  bc.l0 = l(rng);
  bc.v0 = v(rng);
  bc.a0 = a(rng);
  bc.lT = l(rng);
  bc.vT = v(rng);
  bc.aT = a(rng);
  return bc;
}

StartState start(double v, double a = 0.0) {
  StartState st;
  st.v = v;
  st.a = a;
  st.v_cap = 12.0;
  return st;
}

}  // namespace

TEST(Longitudinal, RestCase) {
  const auto p = solve_longitudinal({0, 4, 0, 0, 0, 0, 0});
  for (double c : p.a) EXPECT_EQ(c, 0.0);
}

TEST(Longitudinal, UniformMotionIsExact) {
  const auto p = solve_longitudinal({0, 4, 3.0, 7.5, 0, 7.5, 0});
  EXPECT_EQ(p.a[0], 3.0);
  EXPECT_EQ(p.a[1], 7.5);
  EXPECT_NEAR(p.a[3], 0.0, 1e-15);
  EXPECT_NEAR(p.a[4], 0.0, 1e-15);
  for (double t = 0; t <= 4; t += 0.25) EXPECT_NEAR(p.s(t), 3.0 + 7.5 * t, 1e-12);
}

TEST(Longitudinal, BoundaryResiduals) {
  std::mt19937_64 rng(21);
  for (int n = 0; n < 1000; ++n) {
    const auto bc = random_lon(rng);
    const auto p = solve_longitudinal(bc);
    EXPECT_LE(std::fabs(p.s(bc.t0) - bc.s0), 1e-9);
    EXPECT_LE(std::fabs(p.v(bc.t0) - bc.v0), 1e-9);
    EXPECT_LE(std::fabs(p.acc(bc.t0) - bc.a0), 1e-9);
    EXPECT_LE(std::fabs(p.v(bc.T) - bc.vT), 1e-9);
    EXPECT_LE(std::fabs(p.acc(bc.T) - bc.aT), 1e-9);
  }
}

TEST(Longitudinal, DegenerateHorizon) {
  EXPECT_THROW(solve_longitudinal({1.0, 1.0 + 1e-7, 0, 1, 0, 1, 0}), DegenerateHorizonError);
  EXPECT_THROW(solve_longitudinal({1.0, 0.5, 0, 1, 0, 1, 0}), DegenerateHorizonError);
}

TEST(Lateral, AllZeroBoundary) {
  const auto p = solve_lateral({0, 3, 0, 0, 0, 0, 0, 0});
  for (double c : p.b) EXPECT_EQ(c, 0.0);
}

TEST(Lateral, PureShiftIsClassicQuintic) {
  const double T = 4.0;
  const auto p = solve_lateral({0, T, 0, 0, 0, 3.5, 0, 0});
  for (double t = 0; t <= T; t += 0.1) {
    const double tau = t / T;
    const double ref = 3.5 * (10 * std::pow(tau, 3) - 15 * std::pow(tau, 4) + 6 * std::pow(tau, 5));
    EXPECT_NEAR(p.l(t), ref, 1e-12);
  }
}

TEST(Lateral, BoundaryResiduals) {
  std::mt19937_64 rng(22);
  for (int n = 0; n < 1000; ++n) {
    const auto bc = random_lat(rng);
    const auto p = solve_lateral(bc);
    EXPECT_LE(std::fabs(p.l(bc.t0) - bc.l0), 1e-9);
    EXPECT_LE(std::fabs(p.v(bc.t0) - bc.v0), 1e-9);
    EXPECT_LE(std::fabs(p.acc(bc.t0) - bc.a0), 1e-9);
    EXPECT_LE(std::fabs(p.l(bc.T) - bc.lT), 1e-9);
    EXPECT_LE(std::fabs(p.v(bc.T) - bc.vT), 1e-9);
    EXPECT_LE(std::fabs(p.acc(bc.T) - bc.aT), 1e-9);
  }
}

TEST(Trajectory, SampleCountAndJerkConsistency) {
  std::mt19937_64 rng(23);
  TerminalState term;
  term.T = 3.7;
  term.vT = 4;
  const auto tr = make_trajectory(start(8, -1), term, Maneuver::StraightDecel, 0.1);
  EXPECT_EQ(tr.samples.size(), static_cast<std::size_t>(std::floor(3.7 / 0.1)) + 1);
  for (std::size_t k = 0; k + 1 < tr.samples.size(); ++k) {
    const auto& a = tr.samples[k];
    const auto& b = tr.samples[k + 1];
    // jerk is linear in t for the quartic, so the midpoint value is exact
    EXPECT_NEAR((b.accel - a.accel) / (b.t - a.t), 0.5 * (a.jerk + b.jerk), 1e-9);
  }
}

TEST(Nominal, ConstKeepsSpeed) {
  const auto t = nominal_terminal(start(8), Maneuver::StraightConst, TrajectoryParams{});
  EXPECT_EQ(t.vT, 8.0);
  EXPECT_EQ(t.lT, 0.0);
}

TEST(Nominal, DecelClampsAtZero) {
  EXPECT_EQ(nominal_terminal(start(1), Maneuver::StraightDecel, TrajectoryParams{}).vT, 0.0);
}

TEST(Nominal, AccelCappedByDesiredSpeed) {
  TrajectoryParams p;
  EXPECT_EQ(nominal_terminal(start(11), Maneuver::StraightAccel, p).vT, 12.0);
  EXPECT_EQ(nominal_terminal(start(4), Maneuver::StraightAccel, p).vT, 4 + p.a_nom * p.T_n);
}

TEST(Nominal, LeftTurnEndsOnTurnCenterline) {
  const auto cfg = standard_scenario();
  const auto* cav = cfg.find("CAV");
  ASSERT_NE(cav, nullptr);
  StartState st = start(cav->speed);
  st.l = 0.4;
  const auto t = nominal_terminal(st, Maneuver::LeftTurn, TrajectoryParams{});
  EXPECT_EQ(t.lT, 0.0);
  EXPECT_EQ(t.vT, TrajectoryParams{}.turn_cap);
  EXPECT_EQ(cfg.geometry.find_lane(cav->route.back())->turn, TurnLabel::Left);
}

TEST(Perturb, ZeroSigmaIsNominal) {
  std::mt19937_64 rng(1);
  TerminalState n;
  n.vT = 6;
  EXPECT_EQ(perturb_terminal(n, rng, 0.0), n);
}

TEST(Perturb, FixedSeedRepeats) {
  TerminalState n;
  n.vT = 6;
  auto r1 = candidate_rng(42, 3), r2 = candidate_rng(42, 3);
  for (int k = 0; k < 10; ++k) EXPECT_EQ(perturb_terminal(n, r1, 0.3), perturb_terminal(n, r2, 0.3));
}

TEST(Perturb, MultiplierMean) {
  std::mt19937_64 rng(5);
  double sum = 0.0;
  const int n = 100000;
  for (int k = 0; k < n; ++k) sum += gaussian_multiplier(rng, 0.3);
  EXPECT_NEAR(sum / n, 1.0, 0.01);
}

TEST(Perturb, ClampedToBoxes) {
  TerminalState n;
  n.vT = 2;
  n.T = 4;
  std::mt19937_64 rng(6);
  for (int k = 0; k < 10000; ++k) {
    const auto t = perturb_terminal(n, rng, 1.0);
    EXPECT_GE(t.vT, 0.0);
    EXPECT_GE(t.T, 2.0);
    EXPECT_LE(t.T, 8.0);
  }
}

TEST(Score, UniformMotionHasOnlyTimeTerm) {
  TrajectoryParams p;
  TerminalState term;
  term.T = p.T_n;
  term.vT = 7;
  const auto tr = make_trajectory(start(7), term, Maneuver::StraightConst, p.dt);
  const ScoreWeights w{p.c_e, p.c_s, p.T_ref, p.J_max};
  const auto sc = score_trajectory(tr, w);
  EXPECT_NEAR(sc.jerk_integral, 0.0, 1e-12);
  EXPECT_NEAR(sc.S, p.c_e * p.T_n / p.T_ref, 1e-12);
  EXPECT_NEAR(sc.T_avg, p.dt, 1e-12);
  EXPECT_NEAR(sc.V_avg, 7.0 * p.T_n / p.dt, 1e-9);
}

TEST(Score, TimeTermIsLinearInWeight) {
  TerminalState term;
  term.T = 4;
  term.vT = 2;
  const auto tr = make_trajectory(start(7, 0.5), term, Maneuver::StraightDecel, 0.1);
  const auto a = score_trajectory(tr, {0.5, 0.5, 6, 10});
  const auto b = score_trajectory(tr, {1.0, 0.5, 6, 10});
  const double jerk_term = 0.5 * a.jerk_integral / 10;
  EXPECT_NEAR(b.S - jerk_term, 2.0 * (a.S - jerk_term), 1e-12);
  EXPECT_EQ(a.jerk_integral, b.jerk_integral);
}

TEST(Score, TwoSegmentAccelProfile) {
  // accel ramps 0 -> 2 over [0, 1] then back to 0 over [1, 2]
  Trajectory tr;
  tr.lon.t0 = 0;
  tr.lon.T = 2;
  for (int k = 0; k <= 20; ++k) {
    TrajectorySample s;
    s.t = k * 0.1;
    s.accel = s.t <= 1.0 ? 2.0 * s.t : 2.0 * (2.0 - s.t);
    s.jerk = s.t < 1.0 - 1e-9 ? 2.0 : -2.0;
    tr.samples.push_back(s);
  }
  const auto sc = score_trajectory(tr, {0.5, 0.5, 6, 10});
  EXPECT_NEAR(sc.jerk_integral, 4.0, 1e-3);
}

TEST(Score, NeedsTwoSamples) {
  Trajectory tr;
  tr.samples.resize(1);
  EXPECT_THROW(score_trajectory(tr, {}), InputError);
}

TEST(Optimize, SingleUnperturbedSampleIsNominal) {
  TrajectoryParams p;
  p.n_samples = 1;
  p.sigma = 0.0;
  const auto st = start(6, 0.3);
  const auto res = optimize(st, Maneuver::StraightDecel, {}, p, 99);
  const auto nominal = make_trajectory(st, nominal_terminal(st, Maneuver::StraightDecel, p), Maneuver::StraightDecel, p.dt);
  EXPECT_FALSE(res.fallback);
  EXPECT_EQ(res.best.lon.a, nominal.lon.a);
  EXPECT_EQ(res.best.lat.b, nominal.lat.b);
}

TEST(Optimize, ScoreIsAuditMinimum) {
  TrajectoryParams p;
  p.n_samples = 200;
  for (auto m : kManeuvers) {
    const auto res = optimize(start(7, -0.5), m, {}, p, 5);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& a : res.audit)
      if (a.score) best = std::min(best, *a.score);
    ASSERT_FALSE(res.fallback);
    EXPECT_EQ(res.score.S, best);
  }
}

TEST(Optimize, DeterministicForSeed) {
  TrajectoryParams p;
  const std::vector<ConflictWindow> w{{20, 30, 2.0, 4.0}};
  const auto a = optimize(start(8), Maneuver::StraightConst, w, p, 17);
  const auto b = optimize(start(8), Maneuver::StraightConst, w, p, 17);
  EXPECT_EQ(a.best.lon.a, b.best.lon.a);
  EXPECT_EQ(a.best.terminal, b.best.terminal);
  EXPECT_EQ(a.score.S, b.score.S);
}

TEST(Optimize, PrefixNestedRefinement) {
  TrajectoryParams small, large;
  small.n_samples = 100;
  large.n_samples = 2000;
  const auto a = optimize(start(8), Maneuver::StraightAccel, {}, small, 3);
  const auto b = optimize(start(8), Maneuver::StraightAccel, {}, large, 3);
  for (std::size_t k = 0; k < a.audit.size(); ++k) EXPECT_EQ(a.audit[k].terminal, b.audit[k].terminal);
  EXPECT_LE(b.score.S, a.score.S);
}

TEST(Optimize, FeasibleResultRespectsBox) {
  TrajectoryParams p;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> v(0, 12), a(-3, 2);
  for (int n = 0; n < 50; ++n) {
    const auto res = optimize(start(v(rng), a(rng)), kManeuvers[n % 5], {}, p, n);
    if (res.fallback) continue;
    for (const auto& s : res.best.samples) {
      EXPECT_GE(s.accel, p.accel_min - 1e-9);
      EXPECT_LE(s.accel, p.accel_max + 1e-9);
      EXPECT_GE(s.speed, -1e-9);
    }
  }
}

TEST(Optimize, ConflictWindowRejectsOccupyingCandidates) {
  TrajectoryParams p;
  // the crossing 10..20 m ahead is busy over the whole horizon
  const std::vector<ConflictWindow> w{{10, 20, 0.0, 20.0}};
  const auto res = optimize(start(8), Maneuver::StraightAccel, w, p, 1);
  for (const auto& a : res.audit)
    if (a.feasible()) ADD_FAILURE() << "candidate " << a.index << " enters an occupied window";
  EXPECT_TRUE(res.fallback);
  EXPECT_TRUE(res.best.fallback);
  EXPECT_EQ(res.best.maneuver, Maneuver::StraightDecel);
}

TEST(Optimize, AuditLinesAreJson) {
  TrajectoryParams p;
  p.n_samples = 5;
  std::ostringstream os;
  optimize(start(5), Maneuver::StraightConst, {}, p, 2, &os);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["candidate"], n++);
    EXPECT_TRUE(j.contains("feasible") && j.contains("S") && j.contains("terminal"));
  }
  EXPECT_EQ(n, 5);
}
