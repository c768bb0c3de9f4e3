#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"

using namespace mixsim;
using namespace mixsim::testing;

namespace {

AttentionWeights identity_weights() {
  AttentionWeights w;
  w.K.assign(25, 0.0);
  for (int i = 0; i < 5; ++i) w.K[i * 5 + i] = 1.0;
  w.V.assign(5, 1.0);
  return w;
}

IntentVector iv(Style s, Action a, Task t, double c) {
  IntentVector v;
  v.style = s;
  v.action = a;
  v.task = t;
  v.confidence = c;
  return v;
}

OpmGraph conflict_graph(double other_speed) {
  const auto g = cross_geometry();
  OpmBuildInput in;
  in.geometry = &g;
  in.routes = {build_route(g, "ego", {"EW"}), build_route(g, "other", {"SN"})};
  in.ego = vehicle("ego", -20, 0, 5, 0);
  in.others = {vehicle("other", 0, -30, 0, other_speed)};
  return build_opm_graph(in);
}

}  // namespace

TEST(Attention, SingletonIsOne) {
  const std::vector<QueryVector> q{{"a", {1, 2, 3, 4, 5}}};
  const auto s = attention_saliency(q, AttentionWeights::defaults());
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0], 1.0);
}

TEST(Attention, IdenticalQueriesSplitEvenly) {
  const std::vector<QueryVector> q{{"a", {1, 2, 3, 4, 5}}, {"b", {1, 2, 3, 4, 5}}};
  const auto s = attention_saliency(q, AttentionWeights::defaults());
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Attention, ScaledDotProductWithIdentityKeys) {
  const std::vector<QueryVector> q{{"a", {1, 0, 0, 0, 0}}, {"b", {0, 0, 0, 0, 0}}};
  const auto s = attention_saliency(q, identity_weights());
  const double e = std::exp(1.0 / std::sqrt(5.0));
  EXPECT_NEAR(s[0], e / (e + 1.0), 1e-12);
  EXPECT_NEAR(s[1], 1.0 / (e + 1.0), 1e-12);
}

TEST(Attention, ShapeMismatchIsConfigError) {
  const std::vector<QueryVector> q{{"a", {1, 2, 3}}};
  EXPECT_THROW(attention_saliency(q, AttentionWeights::defaults()), ConfigError);
  auto w = AttentionWeights::defaults();
  w.K.pop_back();
  const std::vector<QueryVector> ok{{"a", {1, 2, 3, 4, 5}}};
  EXPECT_THROW(attention_saliency(ok, w), ConfigError);
}

TEST(Attention, SaliencyIsADistribution) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-30, 30);
  for (int n = 0; n < 200; ++n) {
    std::vector<QueryVector> q;
    for (int k = 0; k < 1 + n % 6; ++k) q.push_back({std::to_string(k), {u(rng), u(rng), u(rng), u(rng), u(rng)}});
    const auto s = attention_saliency(q, AttentionWeights::defaults());
    double sum = 0.0;
    for (double x : s) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Attention, ShippedWeightsFileMatchesDefaults) {
  const auto w = AttentionWeights::load(data_path("attention_weights.json"));
  const auto d = AttentionWeights::defaults();
  EXPECT_EQ(w.d_k, d.d_k);
  EXPECT_EQ(w.K, d.K);
  EXPECT_EQ(w.V, d.V);
}

TEST(ParseIntent, HurriedPassenger) {
  const auto v = parse_explicit_intent(IntentChannel::VoiceText,
                                       "I am in a hurry and hope to pass through as soon as possible.");
  EXPECT_EQ(v.task, Task::Emergency);
  EXPECT_GE(v.confidence, 0.7);
}

TEST(ParseIntent, GibberishIsAllUnknown) {
  const auto v = parse_explicit_intent(IntentChannel::EhmiText, "qwzx plorb");
  EXPECT_EQ(v, IntentVector{});
}

TEST(ParseIntent, RightSignal) {
  const auto v = parse_explicit_intent(IntentChannel::TurnSignal, "right");
  EXPECT_EQ(v.action, Action::SteeringRight);
  EXPECT_DOUBLE_EQ(v.confidence, 0.9);
}

TEST(ParseIntent, SignalLabelsDoNotMatchText) {
  EXPECT_TRUE(parse_explicit_intent(IntentChannel::EhmiText, "left").all_unknown());
  EXPECT_TRUE(parse_explicit_intent(IntentChannel::TurnSignal, "hurry").all_unknown());
}

TEST(ParseIntent, NoHurryOutranksHurry) {
  const auto v = parse_explicit_intent(IntentChannel::VoiceText, "No hurry at all");
  EXPECT_EQ(v.task, Task::Leisure);
}

TEST(ParseIntent, ConfidenceInRange) {
  std::mt19937_64 rng(4);
  const std::vector<std::string> words{"hurry", "after", "you", "left", "go", "first", "slow", "down", "x", "wait"};
  for (int n = 0; n < 500; ++n) {
    std::string s;
    for (int k = 0; k < 5; ++k) s += words[rng() % words.size()] + " ";
    const auto v = parse_explicit_intent(IntentChannel::EhmiText, s);
    EXPECT_GE(v.confidence, 0.0);
    EXPECT_LE(v.confidence, 1.0);
    EXPECT_EQ(v.all_unknown(), v.confidence == 0.0);
  }
}

TEST(KeywordTable, ShippedFileMatchesBuiltin) {
  const auto file = KeywordTable::load(data_path("intent_keywords.json"));
  const auto& b = KeywordTable::builtin();
  ASSERT_EQ(file.rules.size(), b.rules.size());
  for (std::size_t k = 0; k < b.rules.size(); ++k) {
    EXPECT_EQ(file.rules[k].channel, b.rules[k].channel);
    EXPECT_EQ(file.rules[k].match, b.rules[k].match);
    EXPECT_EQ(file.rules[k].field, b.rules[k].field);
    EXPECT_EQ(file.rules[k].value, b.rules[k].value);
    EXPECT_EQ(file.rules[k].confidence, b.rules[k].confidence);
  }
}

TEST(Gate, BelowThresholdBecomesWeak) {
  const auto g = gate_weak_intent(iv(Style::Aggressive, Action::Accelerating, Task::Emergency, 0.69), 0.7);
  EXPECT_TRUE(g.all_unknown());
  EXPECT_TRUE(g.weak);
  EXPECT_DOUBLE_EQ(g.confidence, 0.69);
}

TEST(Gate, AtThresholdPasses) {
  const auto in = iv(Style::Aggressive, Action::Accelerating, Task::Emergency, 0.70);
  EXPECT_EQ(gate_weak_intent(in, 0.7), in);
}

TEST(Gate, FullConfidenceUnchanged) {
  const auto in = iv(Style::Balanced, Action::Cruising, Task::Leisure, 1.0);
  EXPECT_EQ(gate_weak_intent(in, 0.7), in);
}

TEST(Gate, MonotoneInThreshold) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int n = 0; n < 1000; ++n) {
    const auto in = iv(Style::Aggressive, Action::Accelerating, Task::Emergency, u(rng));
    const double lo = u(rng), hi = lo + (1 - lo) * u(rng);
    // passing the higher threshold implies passing the lower one
    if (!gate_weak_intent(in, hi).weak) {
      EXPECT_FALSE(gate_weak_intent(in, lo).weak);
    }
  }
  EXPECT_THROW(gate_weak_intent({}, 1.5), InputError);
}

TEST(QueryEgoIntent, EmptyInputKeepsPrior) {
  const auto prior = iv(Style::Balanced, Action::Cruising, Task::Commuting, 0.8);
  EXPECT_EQ(query_ego_intent("", prior), prior);
}

TEST(QueryEgoIntent, UrgencyFillsUnknownTask) {
  const auto prior = iv(Style::Balanced, Action::Unknown, Task::Unknown, 0.9);
  const auto out = query_ego_intent("I am in a hurry", prior);
  EXPECT_EQ(out.task, Task::Emergency);
  EXPECT_EQ(out.style, Style::Balanced);
}

TEST(QueryEgoIntent, HigherConfidenceStyleWins) {
  // "out of my way" is aggressive at 0.85
  const auto weaker = iv(Style::Conservative, Action::Unknown, Task::Unknown, 0.7);
  EXPECT_EQ(query_ego_intent("get out of my way", weaker).style, Style::Aggressive);
  const auto stronger = iv(Style::Conservative, Action::Unknown, Task::Unknown, 0.95);
  EXPECT_EQ(query_ego_intent("get out of my way", stronger).style, Style::Conservative);
}

TEST(Confirmatory, StrongIntentAsksNothing) {
  const auto strong = gate_weak_intent(iv(Style::Unknown, Action::Unknown, Task::Emergency, 0.9));
  EXPECT_FALSE(confirmatory_question(strong, conflict_graph(6)));
}

TEST(Confirmatory, WeakIntentWithConflictAsks) {
  const auto weak = gate_weak_intent(iv(Style::Unknown, Action::Unknown, Task::Emergency, 0.5));
  const auto q = confirmatory_question(weak, conflict_graph(6));
  ASSERT_TRUE(q);
  EXPECT_EQ(*q, "Do you want me to accelerate to pass through?");
}

TEST(Confirmatory, WeakIntentWithoutConflictAsksNothing) {
  const auto g = cross_geometry();
  OpmBuildInput in;
  in.geometry = &g;
  in.routes = {build_route(g, "ego", {"EW"})};
  in.ego = vehicle("ego", -20, 0, 5, 0);
  const auto weak = gate_weak_intent(iv(Style::Unknown, Action::Unknown, Task::Emergency, 0.5));
  EXPECT_FALSE(confirmatory_question(weak, build_opm_graph(in)));
}

namespace {

ReasonerRequest request(const OpmGraph& graph, PerManeuver<double> p, TurnLabel nav = TurnLabel::Through) {
  OpmGraph g = graph;
  g.ego_navigation = nav;
  ReasonerRequest r;
  r.scene_text = serialize_opm(g, SceneFormat::Opm);
  r.candidate_probs = p;
  return r;
}

bool same_response(const ReasonerResponse& a, const ReasonerResponse& b) {
  return a.chosen == b.chosen && a.pruned == b.pruned && a.confidence == b.confidence &&
         a.rationale == b.rationale && a.ehmi_text == b.ehmi_text;
}

}  // namespace

TEST(MockReasoner, HurriedPassengerWithSlowLeftTurner) {
  // oncoming left turner crawling at 3.2 m/s, far from being a close conflict
  const auto cfg = standard_scenario();
  OpmBuildInput in;
  in.geometry = &cfg.geometry;
  in.routes = {build_route(cfg.geometry, "CAV", {"E_through"}), build_route(cfg.geometry, "HDV", {"W_left"})};
  in.ego = on_route(in.routes[0], "CAV", 30, 8);
  in.others = {on_route(in.routes[1], "HDV", 45, 3.2)};
  auto req = request(build_opm_graph(in), {0.32, 0.48, 0.10, 0.05, 0.05});
  req.ego_intent = gate_weak_intent(parse_explicit_intent(
      IntentChannel::VoiceText, "I am in a hurry and hope to pass through as soon as possible."));
  req.other_intents = {{"HDV", parse_explicit_intent(IntentChannel::TurnSignal, "left")}};
  const auto r = MockReasoner().recommend(req);
  EXPECT_TRUE(r.chosen == Maneuver::StraightAccel || r.chosen == Maneuver::StraightDecel);
  EXPECT_FALSE(r.rationale.empty());
  EXPECT_TRUE(r.is_pruned(Maneuver::LeftTurn));
}

TEST(MockReasoner, UniformProbabilitiesTieBreakToFirst) {
  const auto g = cross_geometry();
  OpmBuildInput in;
  in.geometry = &g;
  in.routes = {build_route(g, "ego", {"EW"})};
  in.ego = vehicle("ego", -20, 0, 5, 0);
  const auto r = MockReasoner().recommend(request(build_opm_graph(in), {0.2, 0.2, 0.2, 0.2, 0.2}));
  EXPECT_EQ(r.chosen, Maneuver::StraightAccel);
}

TEST(MockReasoner, UnreachableEndpointEqualsMock) {
  auto req = request(conflict_graph(6), {0.1, 0.5, 0.2, 0.1, 0.1});
  req.ego_intent = gate_weak_intent(parse_explicit_intent(IntentChannel::VoiceText, "I am in a hurry"));
  const HttpReasoner http("http://127.0.0.1:1/recommend", std::chrono::milliseconds(300));
  const auto a = http.recommend(req);
  const auto b = MockReasoner().recommend(req);
  EXPECT_TRUE(same_response(a, b));
  EXPECT_TRUE(a.fallback);
  EXPECT_FALSE(a.diagnostic.empty());
}

TEST(MockReasoner, DeterministicAndNeverChoosesPruned) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  const auto& payloads = std::vector<std::string>{"", "I am in a hurry", "after you", "I will pass first", "qq"};
  const MockReasoner mock;
  for (int n = 0; n < 500; ++n) {
    PerManeuver<double> p;
    double z = 0;
    for (auto& x : p) z += (x = u(rng));
    for (auto& x : p) x /= z;
    const TurnLabel nav = static_cast<TurnLabel>(rng() % 3);
    auto req = request(conflict_graph(1 + n % 10), p, nav);
    req.ego_intent = gate_weak_intent(parse_explicit_intent(IntentChannel::VoiceText, payloads[rng() % 5]));
    req.other_intents = {{"other", parse_explicit_intent(IntentChannel::EhmiText, payloads[rng() % 5])}};
    const auto a = mock.recommend(req);
    EXPECT_TRUE(same_response(a, mock.recommend(req)));
    EXPECT_FALSE(a.is_pruned(a.chosen));
    EXPECT_GE(a.confidence, 0.0);
    EXPECT_LE(a.confidence, 1.0);
  }
}

TEST(ReasonerWire, ResponseRoundTrip) {
  ReasonerResponse r;
  r.chosen = Maneuver::LeftTurn;
  r.pruned = {Maneuver::RightTurn};
  r.confidence = 0.8;
  r.rationale = "because";
  r.ehmi_text = "I am turning left; please watch for me.";
  std::string why;
  const auto back = response_from_json(to_json(r), &why);
  ASSERT_TRUE(back) << why;
  EXPECT_TRUE(same_response(*back, r));
  EXPECT_FALSE(response_from_json(nlohmann::json{{"chosen_maneuver", "fly"}}, &why));
}
