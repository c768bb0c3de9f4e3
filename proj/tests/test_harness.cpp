#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fixtures.hpp"

using namespace mixsim;
using namespace mixsim::testing;

namespace {

std::size_t code_points(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

const std::string kEllipsis = "\xE2\x80\xA6";

}  // namespace

TEST(Ehmi, DecelTemplateText) {
  EXPECT_EQ(ehmi_render(Maneuver::StraightDecel, std::nullopt).text, "I am slowing down; please go ahead.");
}

TEST(Ehmi, EveryManeuverHasADistinctShortTemplate) {
  std::set<std::string> seen;
  for (auto m : kManeuvers) {
    const std::string t(ehmi_template(m));
    EXPECT_FALSE(t.empty());
    EXPECT_LE(code_points(t), kEhmiBudget);
    seen.insert(t);
  }
  EXPECT_EQ(seen.size(), kManeuvers.size());
}

TEST(Ehmi, EmptyReasonerTextFallsBackToTemplate) {
  const auto msg = ehmi_render(Maneuver::LeftTurn, std::string());
  EXPECT_EQ(msg.text, ehmi_template(Maneuver::LeftTurn));
  EXPECT_EQ(msg.trigger, EhmiTrigger::Decision);
}

TEST(Ehmi, ReasonerTextWinsOverTemplate) {
  EXPECT_EQ(ehmi_render(Maneuver::StraightDecel, std::string("After you.")).text, "After you.");
}

TEST(Ehmi, ClarificationWinsOverDecision) {
  EhmiContext ctx;
  ctx.clarification = "Do you want to go first?";
  const auto msg = ehmi_render(Maneuver::StraightAccel, std::string("Going."), ctx);
  EXPECT_EQ(msg.text, "Do you want to go first?");
  EXPECT_EQ(msg.trigger, EhmiTrigger::Clarification);
}

TEST(Ehmi, ShortTextIsUntouched) {
  const std::string s(kEhmiBudget, 'a');
  EXPECT_EQ(truncate_words(s), s);
}

TEST(Ehmi, LongTextIsCutAtAWordWithEllipsis) {
  std::string s;
  while (code_points(s) < 300) s += "please yield ";
  const auto out = truncate_words(s);
  EXPECT_LE(code_points(out), kEhmiBudget);
  ASSERT_TRUE(ends_with(out, kEllipsis));
  const std::string head = out.substr(0, out.size() - kEllipsis.size());
  EXPECT_EQ(s.compare(0, head.size(), head), 0);
  EXPECT_NE(head.back(), ' ');
  EXPECT_TRUE(ends_with(head, "please") || ends_with(head, "yield"));
}

TEST(Ehmi, TruncationCountsCodePointsNotBytes) {
  std::string s;
  for (int i = 0; i < 100; ++i) s += "\xC3\xA9\xC3\xA9 ";  // "éé "
  const auto out = truncate_words(s);
  EXPECT_LE(code_points(out), kEhmiBudget);
  EXPECT_GT(code_points(out), kEhmiBudget - 5);
  EXPECT_TRUE(ends_with(out, kEllipsis));
}

TEST(Ehmi, RandomTextAlwaysFitsBudget) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(0, 400), ch(0, 27);
  for (int n = 0; n < 500; ++n) {
    std::string s;
    const int L = len(rng);
    for (int i = 0; i < L; ++i) {
      const int c = ch(rng);
      s += c < 26 ? static_cast<char>('a' + c) : ' ';
    }
    const auto out = ehmi_render(Maneuver::StraightConst, s).text;
    EXPECT_LE(code_points(out), kEhmiBudget);
  }
}

TEST(Csv, GoldenHeader) {
  std::ostringstream os;
  write_csv(os, {});
  EXPECT_EQ(os.str(),
            "run_id,controller,speed_class,avg_speed,avg_jerk,avg_conflict_duration,collision,completion_time\n");
}

TEST(Csv, RowFieldsInHeaderOrder) {
  MetricsRecord r;
  r.run_id = "x-idm-8-r0";
  r.controller = "idm";
  r.speed_class = 8;
  r.avg_speed = 4.5;
  r.avg_jerk = 0.25;
  r.avg_conflict_duration = 1.5;
  r.collision = true;
  r.completion_time = 12;
  EXPECT_EQ(to_csv_row(r), "x-idm-8-r0,idm,8,4.500000,0.250000,1.500000,1,12.000000");
}

TEST(Matrix, OneRowPerCellPerRep) {
  MatrixSpec spec;
  spec.reps = 2;
  spec.speeds = {6, 10};
  const auto res = run_matrix(standard_scenario(), spec, nullptr);
  EXPECT_EQ(res.rows.size(), 3u * 2u * 2u);
  EXPECT_EQ(res.cells.size(), 6u);
  std::set<std::string> ids;
  for (const auto& r : res.rows) ids.insert(r.run_id);
  EXPECT_EQ(ids.size(), res.rows.size());
  for (const auto& c : res.cells) EXPECT_EQ(c.n, 2u);
}

TEST(Matrix, DefaultMatrixHas270Rows) {
  const MatrixSpec spec;
  EXPECT_EQ(spec.controllers.size() * spec.speeds.size() * spec.reps, 270u);
}

TEST(Matrix, SameSeedSameCsv) {
  MatrixSpec spec;
  spec.reps = 2;
  const MockReasoner mock;
  const auto cfg = standard_scenario();
  std::ostringstream a, b;
  write_csv(a, run_matrix(cfg, spec, &mock).rows);
  write_csv(b, run_matrix(cfg, spec, &mock).rows);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Matrix, DifferentSeedChangesJitteredRuns) {
  MatrixSpec spec;
  spec.reps = 2;
  spec.controllers = {ControllerKind::Idm};
  const auto cfg = standard_scenario();
  std::ostringstream a, b;
  write_csv(a, run_matrix(cfg, spec, nullptr).rows);
  spec.seed = 2;
  write_csv(b, run_matrix(cfg, spec, nullptr).rows);
  EXPECT_NE(a.str(), b.str());
}

TEST(Matrix, ZeroRepsRejected) {
  MatrixSpec spec;
  spec.reps = 0;
  EXPECT_THROW(run_matrix(standard_scenario(), spec, nullptr), InputError);
}

TEST(Matrix, SummaryStatsMatchRows) {
  MatrixSpec spec;
  spec.reps = 3;
  spec.controllers = {ControllerKind::Gt};
  spec.speeds = {8};
  const auto res = run_matrix(standard_scenario(), spec, nullptr);
  double mean = 0;
  for (const auto& r : res.rows) mean += r.avg_speed;
  mean /= 3;
  double ss = 0;
  for (const auto& r : res.rows) ss += (r.avg_speed - mean) * (r.avg_speed - mean);
  const auto* c = res.cell("gt", 8);
  ASSERT_NE(c, nullptr);
  EXPECT_NEAR(c->avg_speed.mean, mean, 1e-12);
  EXPECT_NEAR(c->avg_speed.stddev, std::sqrt(ss / 2), 1e-12);
}

TEST(Matrix, MergingScenarioRuns) {
  MatrixSpec spec;
  spec.reps = 1;
  const MockReasoner mock;
  const auto res = run_matrix(build_merging_scenario(), spec, &mock);
  EXPECT_EQ(res.rows.size(), 9u);
  for (const auto& r : res.rows) EXPECT_GT(r.completion_time, 0.0);
}

TEST(OpmCompare, SimpleHasNoRelationsAndRawNoProcesses) {
  OpmCompareSpec spec;
  spec.scenes = 20;
  const auto rep = opm_compare(standard_scenario(), spec);
  ASSERT_EQ(rep.formats.size(), 3u);
  for (const auto& f : rep.formats) {
    if (f.format == SceneFormat::Simple) {
      EXPECT_EQ(f.relations, 0.0);
    }
    if (f.format == SceneFormat::Raw) {
      EXPECT_EQ(f.processes, 0.0);
      EXPECT_EQ(f.relations, 0.0);
    }
    if (f.format == SceneFormat::Opm) {
      EXPECT_EQ(f.agreement, 1.0);
    }
  }
}

TEST(OpmCompare, NoEndpointMeansNoLatency) {
  OpmCompareSpec spec;
  spec.scenes = 10;
  const auto rep = opm_compare(standard_scenario(), spec);
  EXPECT_TRUE(rep.endpoint.empty());
  for (const auto& f : rep.formats) {
    EXPECT_FALSE(f.latency_ms);
    EXPECT_FALSE(f.accuracy);
    EXPECT_FALSE(f.reasoning_steps);
  }
  EXPECT_EQ(format_report(rep).find("latency"), std::string::npos);
}

TEST(OpmCompare, EndpointAddsLatencyColumns) {
  OpmCompareSpec spec;
  spec.scenes = 5;
  const MockReasoner mock;
  const auto rep = opm_compare(standard_scenario(), spec, &mock);
  EXPECT_EQ(rep.endpoint, mock.name());
  for (const auto& f : rep.formats) {
    ASSERT_TRUE(f.latency_ms);
    EXPECT_GE(*f.latency_ms, 0.0);
    ASSERT_TRUE(f.accuracy);
  }
  EXPECT_NE(format_report(rep).find("latency_ms"), std::string::npos);
}

TEST(OpmCompare, StandardOpmShorterThanRaw) {
  OpmCompareSpec spec;
  spec.scenes = 5;
  const auto rep = opm_compare(standard_scenario(), spec);
  std::size_t opm = 0, raw = 0;
  for (const auto& f : rep.formats) {
    if (f.format == SceneFormat::Opm) opm = f.standard_length;
    if (f.format == SceneFormat::Raw) raw = f.standard_length;
  }
  EXPECT_GT(opm, 0u);
  EXPECT_LE(opm, raw);
}

TEST(OpmCompare, SeededScenesAreReproducible) {
  OpmCompareSpec spec;
  spec.scenes = 15;
  const auto cfg = standard_scenario();
  EXPECT_EQ(format_report(opm_compare(cfg, spec)), format_report(opm_compare(cfg, spec)));
}

TEST(OpmCompare, ZeroScenesRejected) {
  OpmCompareSpec spec;
  spec.scenes = 0;
  EXPECT_THROW(opm_compare(standard_scenario(), spec), InputError);
}
