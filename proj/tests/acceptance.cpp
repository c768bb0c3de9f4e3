// Acceptance gate: one PASS/FAIL line per criterion, with wall time against
// its budget. Exit status is nonzero if any line fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "mixsim/mixsim.hpp"

using namespace mixsim;

namespace {

std::string data_path(const std::string& rel) { return std::string(MIXSIM_SOURCE_DIR) + "/data/" + rel; }

struct Outcome {
  bool pass{true};
  std::string detail;
};

int g_failures = 0;

void criterion(const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = o.pass && dt <= budget_s;
  if (!ok) ++g_failures;
  std::printf("%s  %-26s %8.2f s (budget %5.0f s)  %s%s\n", ok ? "PASS" : "FAIL", name, dt, budget_s,
              o.detail.c_str(), o.pass && !ok ? " [over budget]" : "");
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Independent softmax: p_i = 1 / sum_j exp(V_j - V_i).
PerManeuver<double> oracle_logit(const PerManeuver<double>& V) {
  PerManeuver<double> p{};
  for (std::size_t i = 0; i < kManeuverCount; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < kManeuverCount; ++j) s += std::exp(V[j] - V[i]);
    p[i] = 1.0 / s;
  }
  return p;
}

Outcome logit_criterion() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(-20, 20), shift(-500, 500);
  double worst_sum = 0, worst_shift = 0, worst_oracle = 0;
  bool uniform_exact = true;
  for (int n = 0; n < 10000; ++n) {
    PerManeuver<double> V;
    for (auto& v : V) v = u(rng);
    const auto p = logit_probs(V);
    double s = 0;
    for (double x : p) s += x;
    worst_sum = std::max(worst_sum, std::fabs(s - 1.0));
    const double c = shift(rng);
    PerManeuver<double> W;
    for (std::size_t i = 0; i < kManeuverCount; ++i) W[i] = V[i] + c;
    const auto q = logit_probs(W);
    const auto o = oracle_logit(V);
    for (std::size_t i = 0; i < kManeuverCount; ++i) {
      worst_shift = std::max(worst_shift, std::fabs(p[i] - q[i]));
      worst_oracle = std::max(worst_oracle, std::fabs(p[i] - o[i]));
    }
    const double e = u(rng);
    for (double x : logit_probs({e, e, e, e, e})) uniform_exact = uniform_exact && x == 0.2;
  }
  const bool pass = worst_sum <= 1e-12 && worst_shift <= 1e-12 && worst_oracle <= 1e-12 && uniform_exact;
  return {pass, "max |sum-1| " + fmt("%.1e", worst_sum) + ", max shift diff " + fmt("%.1e", worst_shift) +
                    ", max oracle diff " + fmt("%.1e", worst_oracle) + (uniform_exact ? ", equal -> 0.2 exact" : ", equal != 0.2")};
}

Outcome quintic_criterion() {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> t0(-5, 5), h(0.5, 8), s(-50, 50), v(0, 15), a(-4, 3), l(-4, 4), vl(-2, 2),
      al(-2, 2);
  double lon = 0, lat = 0;
  for (int n = 0; n < 1000; ++n) {
    LongitudinalBC bc;
    bc.t0 = t0(rng);
    bc.T = bc.t0 + h(rng);
    bc.s0 = s(rng);
    bc.v0 = v(rng);
    bc.a0 = a(rng);
    bc.vT = v(rng);
    bc.aT = a(rng);
    const auto p = solve_longitudinal(bc);
    for (double r : {p.s(bc.t0) - bc.s0, p.v(bc.t0) - bc.v0, p.acc(bc.t0) - bc.a0, p.v(bc.T) - bc.vT,
                     p.acc(bc.T) - bc.aT})
      lon = std::max(lon, std::fabs(r));
  }
  for (int n = 0; n < 1000; ++n) {
    LateralBC bc;
    bc.t0 = t0(rng);
    bc.T = bc.t0 + h(rng);
    bc.l0 = l(rng);
    bc.v0 = vl(rng);
    bc.a0 = al(rng);
    bc.lT = l(rng);
    bc.vT = vl(rng);
    bc.aT = al(rng);
    const auto p = solve_lateral(bc);
    for (double r : {p.l(bc.t0) - bc.l0, p.v(bc.t0) - bc.v0, p.acc(bc.t0) - bc.a0, p.l(bc.T) - bc.lT,
                     p.v(bc.T) - bc.vT, p.acc(bc.T) - bc.aT})
      lat = std::max(lat, std::fabs(r));
  }
  return {lon <= 1e-9 && lat <= 1e-9,
          "max residual longitudinal " + fmt("%.1e", lon) + ", lateral " + fmt("%.1e", lat)};
}

Outcome optimizer_criterion() {
  std::mt19937_64 rng(103);
  std::uniform_real_distribution<double> v(0, 12), a(-2, 1.5), l(-0.5, 0.5), w0(5, 40), wt(0, 4);
  std::size_t cases = 0, min_ok = 0, det_ok = 0, nest_ok = 0, fallbacks = 0;
  for (int n = 0; n < 40; ++n) {
    StartState st;
    st.v = v(rng);
    st.a = a(rng);
    st.l = l(rng);
    st.v_cap = 12.0;
    const Maneuver m = kManeuvers[n % kManeuverCount];
    std::vector<ConflictWindow> windows;
    if (n % 2) {
      const double s0 = w0(rng), t = wt(rng);
      windows.push_back({s0, s0 + 8.0, t, t + 2.0});
    }
    TrajectoryParams small, large;
    small.n_samples = 100;
    large.n_samples = 2000;
    const auto seed = static_cast<std::uint64_t>(1000 + n);
    const auto r1 = optimize(st, m, windows, small, seed);
    const auto r2 = optimize(st, m, windows, small, seed);
    const auto r3 = optimize(st, m, windows, large, seed);
    ++cases;
    if (r1.fallback) ++fallbacks;

    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : r1.audit)
      if (c.score) best = std::min(best, *c.score);
    if (r1.fallback ? !std::isfinite(best) : r1.score.S == best) ++min_ok;

    if (r1.best.lon.a == r2.best.lon.a && r1.best.lat.b == r2.best.lat.b && r1.best.terminal == r2.best.terminal &&
        r1.score.S == r2.score.S && r1.fallback == r2.fallback)
      ++det_ok;

    bool prefix = r3.audit.size() >= r1.audit.size();
    for (std::size_t k = 0; prefix && k < r1.audit.size(); ++k) prefix = r1.audit[k].terminal == r3.audit[k].terminal;
    const bool nonincreasing = r1.fallback || (!r3.fallback && r3.score.S <= r1.score.S);
    if (prefix && nonincreasing) ++nest_ok;
  }
  const bool pass = min_ok == cases && det_ok == cases && nest_ok == cases;
  return {pass, std::to_string(cases) + " cases (" + std::to_string(fallbacks) + " fallback): minimum " +
                    std::to_string(min_ok) + ", deterministic " + std::to_string(det_ok) + ", nested N=100/2000 " +
                    std::to_string(nest_ok)};
}

Outcome dttc_criterion() {
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> d(0, 120), v(0, 15), low(0, 0.3), u01(0, 1);
  const double floor = 0.1;
  std::size_t exact = 0, indet = 0, indet_ok = 0;
  const std::size_t N = 10000;
  for (std::size_t n = 0; n < N; ++n) {
    const double di = d(rng), dj = d(rng);
    auto speed = [&] {
      const double r = u01(rng);
      if (r < 0.05) return floor;  // boundary is determinate
      return r < 0.3 ? low(rng) : v(rng);
    };
    const double vi = speed(), vj = speed();
    const auto got = compute_delta_ttc(di, vi, dj, vj, floor);
    const bool should_be_indet = vi < floor || vj < floor;
    if (should_be_indet) {
      ++indet;
      if (!got) {
        ++indet_ok;
        ++exact;
      }
      continue;
    }
    const double ti = di / vi, tj = dj / vj;
    const double oracle = ti >= tj ? ti - tj : tj - ti;
    if (got && *got == oracle) ++exact;
  }
  return {exact == N && indet_ok == indet, std::to_string(exact) + "/" + std::to_string(N) + " match, " +
                                               std::to_string(indet_ok) + "/" + std::to_string(indet) +
                                               " indeterminate below the floor"};
}

Outcome intersection_matrix_criterion() {
  const auto cfg = load_scenario_file(data_path("scenarios/intersection.json"));
  const MockReasoner mock(cfg.proposed.utility.gate_threshold, cfg.proposed.thresholds);
  MatrixSpec spec;  // idm, gt, proposed x 6, 8, 10 x 30 reps, seed 1, jitter on
  const auto res = run_matrix(cfg, spec, &mock);
  std::cout << format_summary(res.cells);
  bool pass = res.rows.size() == 270;
  std::ostringstream why;
  for (double sp : spec.speeds) {
    const auto *idm = res.cell("idm", sp), *gt = res.cell("gt", sp), *pr = res.cell("proposed", sp);
    const double red = 1.0 - pr->avg_conflict_duration.mean / idm->avg_conflict_duration.mean;
    const bool speed = pr->avg_speed.mean > idm->avg_speed.mean;
    const bool jerk = idm->avg_jerk.mean > gt->avg_jerk.mean;
    const bool conflict = pr->avg_conflict_duration.mean < idm->avg_conflict_duration.mean && (sp < 7 || red >= 0.2);
    const bool vs_gt = pr->avg_conflict_duration.mean <= gt->avg_conflict_duration.mean;
    const bool safe = pr->collisions == 0;
    pass = pass && speed && jerk && conflict && vs_gt && safe;
    why << sp << " m/s: conflict -" << fmt("%.0f%%", 100 * red) << (speed ? "" : " speed!") << (jerk ? "" : " jerk!")
        << (conflict ? "" : " conflict!") << (vs_gt ? "" : " gt!") << (safe ? "" : " collision!") << "; ";
  }
  return {pass, why.str()};
}

Outcome merging_criterion() {
  const auto cfg = build_merging_scenario();
  const MockReasoner mock(cfg.proposed.utility.gate_threshold, cfg.proposed.thresholds);
  MatrixSpec spec;
  spec.controllers = {ControllerKind::Idm, ControllerKind::Proposed};
  const auto res = run_matrix(cfg, spec, &mock);
  std::cout << format_summary(res.cells);
  bool pass = true;
  std::ostringstream why;
  for (double sp : spec.speeds) {
    const double p = res.cell("proposed", sp)->avg_speed.mean, i = res.cell("idm", sp)->avg_speed.mean;
    pass = pass && p > i;
    why << sp << " m/s: " << fmt("%.2f", p) << " vs " << fmt("%.2f", i) << "; ";
  }
  return {pass, why.str()};
}

std::size_t count_switches(const std::vector<DecisionInputs>& inputs, UtilityParams up, double lambda,
                           const Reasoner* reasoner) {
  up.lambda = lambda;
  DecisionContext ctx;
  std::optional<Maneuver> prev;
  std::size_t switches = 0;
  for (const auto& in : inputs) {
    const Maneuver m = decide(in, ctx, up, reasoner).final_maneuver;
    if (prev && *prev != m) ++switches;
    prev = m;
  }
  return switches;
}

Outcome switch_penalty_criterion() {
  const auto cfg = load_scenario_file(data_path("scenarios/intersection.json"));
  const MockReasoner mock(cfg.proposed.utility.gate_threshold, cfg.proposed.thresholds);
  EpisodeOverrides ov;
  ov.stop_at_exit = false;
  ov.max_duration = 60.0;
  Simulation sim(cfg, 7, ov, &mock);
  sim.record_decision_inputs(true);
  sim.run();
  const Agent* cav = sim.agent("CAV");
  if (!cav || !cav->proposed) return {false, "no proposed agent"};
  const auto& inputs = cav->proposed->recorded_inputs();
  const auto& up = cfg.proposed.utility;
  const std::size_t with = count_switches(inputs, up, 0.3, &mock), without = count_switches(inputs, up, 0.0, &mock);
  const std::size_t stat_with = count_switches(inputs, up, 0.3, nullptr),
                    stat_without = count_switches(inputs, up, 0.0, nullptr);
  return {with <= without && stat_with <= stat_without,
          std::to_string(inputs.size()) + " decisions over " + fmt("%.0f s", sim.time()) + ": switches " +
              std::to_string(with) + " (0.3) vs " + std::to_string(without) + " (0); statistical layer " +
              std::to_string(stat_with) + " vs " + std::to_string(stat_without)};
}

/// Replies with a fixed, low-confidence response.
class FixedReasoner : public Reasoner {
 public:
  explicit FixedReasoner(ReasonerResponse r) : r_(std::move(r)) {}
  ReasonerResponse recommend(const ReasonerRequest&) const override { return r_; }
  std::string name() const override { return "fixed"; }

 private:
  ReasonerResponse r_;
};

Outcome weak_gate_criterion() {
  const auto cfg = load_scenario_file(data_path("scenarios/intersection.json"));
  std::mt19937_64 rng(105);
  std::uniform_real_distribution<double> conf(0.0, 0.7);
  std::uniform_int_distribution<std::size_t> pick(0, kManeuverCount - 1);
  std::bernoulli_distribution coin(0.3);
  const auto& up = cfg.proposed.utility;
  std::size_t ok = 0;
  const std::size_t N = 1000;
  for (std::size_t n = 0; n < N; ++n) {
    const CompareScene sc = random_compare_scene(cfg, rng);
    ReasonerResponse r;
    r.chosen = kManeuvers[pick(rng)];
    r.confidence = std::min(conf(rng), std::nextafter(up.gate_threshold, 0.0));
    for (auto m : kManeuvers)
      if (m != r.chosen && coin(rng)) r.pruned.push_back(m);
    const FixedReasoner fuzz(r);
    DecisionContext c0, c1;
    const Decision plain = decide(sc.inputs, c0, up, nullptr);
    const Decision gated = decide(sc.inputs, c1, up, &fuzz);
    std::size_t best = 0;
    for (std::size_t i = 1; i < kManeuverCount; ++i)
      if (plain.dist.P[i] > plain.dist.P[best]) best = i;
    if (gated.final_maneuver == kManeuvers[best] && !gated.from_reasoner) ++ok;
  }
  return {ok == N, std::to_string(ok) + "/" + std::to_string(N) + " weak replies left the argmax in place"};
}

Outcome opm_criterion() {
  const auto cfg = load_scenario_file(data_path("scenarios/intersection.json"));
  OpmCompareSpec spec;
  spec.scenes = 200;
  const auto rep = opm_compare(cfg, spec);
  std::cout << format_report(rep);
  std::size_t opm = 0, raw = 0;
  double agree = 0;
  for (const auto& f : rep.formats) {
    if (f.format == SceneFormat::Opm) opm = f.standard_length;
    if (f.format == SceneFormat::Raw) raw = f.standard_length;
    if (f.format == SceneFormat::Simple) agree = f.agreement;
  }
  return {opm > 0 && opm <= raw && agree >= 0.95, "standard length opm " + std::to_string(opm) + " vs raw " +
                                                      std::to_string(raw) + ", opm/simple agreement " +
                                                      fmt("%.3f", agree)};
}

Outcome ehmi_criterion() {
  const std::string text = ehmi_render(Maneuver::StraightDecel, std::nullopt).text;
  return {text == "I am slowing down; please go ahead.", "\"" + text + "\""};
}

}  // namespace

int main() {
  criterion("logit", 5, logit_criterion);
  criterion("quintic/quartic solvers", 5, quintic_criterion);
  criterion("optimizer", 30, optimizer_criterion);
  criterion("delta-ttc oracle", 5, dttc_criterion);
  criterion("intersection matrix", 300, intersection_matrix_criterion);
  criterion("merging matrix", 120, merging_criterion);
  criterion("switch penalty", 30, switch_penalty_criterion);
  criterion("weak-intent gate", 10, weak_gate_criterion);
  criterion("opm format", 60, opm_criterion);
  criterion("ehmi template", 1, ehmi_criterion);
  std::printf("%s: %d failing\n", g_failures ? "FAIL" : "PASS", g_failures);
  return g_failures ? 1 : 0;
}
