#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "stf2m/errors.hpp"
#include "stf2m/fuzzy.hpp"

using namespace stf2m;
using namespace stf2m::fuzzy;

namespace {

const FuzzyConfig kDefault{};

ComponentCoding crisp(const Coding& c) { return {c, CodingMode::Crisp}; }

}  // namespace

TEST(Emotion, IndexRoundTrip) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    const auto c = EmotionClass::from_index(i);
    EXPECT_EQ(c.index(), i);
    EXPECT_EQ(parse_class_name(class_name(c)), c);
  }
  EXPECT_EQ(class_name({Emotion::Surprise, Intensity::High}), "Surprise-High");
  EXPECT_FALSE(parse_class_name("Angry-Huge"));
  EXPECT_FALSE(parse_emotion("Calm"));
}

TEST(Membership, Triangular) {
  EXPECT_DOUBLE_EQ(tri_membership(0.0, 0.0, 0.9), 1.0);
  EXPECT_DOUBLE_EQ(tri_membership(0.9, 0.0, 0.9), 0.0);
  EXPECT_NEAR(tri_membership(0.5, 0.0, 0.9), 0.4444, 5e-5);
  EXPECT_DOUBLE_EQ(tri_membership(-3.0, 0.0, 0.9), 0.0);
  EXPECT_THROW(tri_membership(0.0, 0.0, 0.0), ParameterError);
  EXPECT_THROW(tri_membership(0.0, 0.0, -1.0), ParameterError);
}

TEST(Membership, BoundedAndPeaked) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0), w(0.01, 2.0);
  for (int i = 0; i < 2000; ++i) {
    const double x = u(rng), c = u(rng), h = w(rng);
    const double m = tri_membership(x, c, h);
    EXPECT_GE(m, 0.0);
    EXPECT_LE(m, 1.0);
    if (std::abs(x - c) >= h) EXPECT_EQ(m, 0.0);
    EXPECT_EQ(tri_membership(c, c, h), 1.0);
  }
}

TEST(Fcis, ComponentTable) {
  const auto& specs = facial_components();
  for (std::size_t j = 0; j < kNumComponents; ++j) {
    EXPECT_EQ(specs[j].component_index, static_cast<int>(j + 1));
    const bool binary = j == 2 || j == 5 || j == 6 || j == 7;
    EXPECT_EQ(specs[j].value_set, binary ? std::vector<int>({0, 1}) : std::vector<int>({-1, 0, 1}));
  }
}

TEST(Fcis, MembershipExamples) {
  const auto& three = facial_components()[0];
  const auto& binary = facial_components()[2];
  auto m = fcis_memberships(1.0, three, kDefault);
  EXPECT_EQ(m[0], 0.0);
  EXPECT_EQ(m[1], 0.0);
  EXPECT_EQ(m[2], 1.0);
  m = fcis_memberships(0.5, three, kDefault);
  EXPECT_NEAR(m[1], 0.4444, 5e-5);
  EXPECT_NEAR(m[2], 0.4444, 5e-5);
  EXPECT_DOUBLE_EQ(m[1], m[2]);
  m = fcis_memberships(0.0, binary, kDefault);
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 0.0);
}

TEST(Fcis, DefuzzifyExamples) {
  std::vector<double> u(kNumComponents, 0.0);
  u[0] = -1.0;
  u[2] = 1.0;
  u[11] = 1.0;
  auto c = fcis_defuzzify(u, kDefault);
  EXPECT_EQ(c.mode, CodingMode::Soft);
  for (std::size_t j = 0; j < kNumComponents; ++j) EXPECT_DOUBLE_EQ(c.values[j], u[j]);

  u.assign(kNumComponents, 0.5);
  c = fcis_defuzzify(u, kDefault);
  EXPECT_DOUBLE_EQ(c.values[0], 0.5);

  u.assign(kNumComponents, 5.0);
  c = fcis_defuzzify(u, kDefault);
  for (double v : c.values) EXPECT_EQ(v, 1.0);
  u.assign(kNumComponents, -5.0);
  c = fcis_defuzzify(u, kDefault);
  EXPECT_EQ(c.values[0], -1.0);
  EXPECT_EQ(c.values[2], 0.0);

  EXPECT_THROW(fcis_defuzzify(std::vector<double>(11, 0.0), kDefault), ParameterError);
}

TEST(Fcis, DefuzzifyStaysInHull) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 2.0);
  std::uniform_real_distribution<double> lam(0.01, 0.99);
  const auto& specs = facial_components();
  for (int it = 0; it < 500; ++it) {
    std::vector<double> u(kNumComponents);
    for (auto& x : u) x = n(rng);
    const FuzzyConfig cfg{lam(rng), lam(rng)};
    const auto c = fcis_defuzzify(u, cfg);
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      EXPECT_GE(c.values[j], specs[j].min_value());
      EXPECT_LE(c.values[j], specs[j].max_value());
    }
  }
}

TEST(Fcis, LambdaWidensSupport) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0), lam(0.01, 0.98);
  for (int it = 0; it < 1000; ++it) {
    const double a = lam(rng);
    const double b = std::min(0.99, a + 0.5 * lam(rng));
    const double x = u(rng);
    const FuzzyConfig lo{a, a}, hi{b, b};
    EXPECT_GE(hi.fcis_half_width(), lo.fcis_half_width());
    EXPECT_GE(hi.fkis_half_width(), lo.fkis_half_width());
    const auto ml = fcis_memberships(x, facial_components()[0], lo);
    const auto mh = fcis_memberships(x, facial_components()[0], hi);
    for (std::size_t k = 0; k < ml.size(); ++k) EXPECT_GE(mh[k], ml[k]);
    const double e = std::abs(x) / 2.0;
    EXPECT_GE(tri_membership(e, 0.0, hi.fkis_half_width()), tri_membership(e, 0.0, lo.fkis_half_width()));
  }
}

TEST(FuzzyConfig, Validation) {
  EXPECT_NO_THROW(kDefault.validate());
  EXPECT_THROW((FuzzyConfig{0.0, 0.4}).validate(), ParameterError);
  EXPECT_THROW((FuzzyConfig{0.4, 1.0}).validate(), ParameterError);
  EXPECT_DOUBLE_EQ(kDefault.fcis_half_width(), 0.9);
  EXPECT_DOUBLE_EQ(kDefault.fkis_half_width(), 0.45);
}

TEST(Eccentricity, Examples) {
  Coding plus, minus;
  plus.fill(1.0);
  minus.fill(-1.0);
  EXPECT_EQ(eccentricity(crisp(plus), crisp(plus)), 0.0);
  EXPECT_EQ(eccentricity(crisp(plus), crisp(minus)), 1.0);
  const auto table = oracle::published_prototypes();
  EXPECT_DOUBLE_EQ(eccentricity(table[0].second, table[3].second), 15.0 / 24.0);
  EXPECT_THROW(eccentricity(std::vector<double>(12), std::vector<double>(11)), ParameterError);
}

TEST(Eccentricity, MetricOnCodings) {
  std::mt19937_64 rng(5);
  for (int it = 0; it < 1000; ++it) {
    const auto a = oracle::random_soft(rng), b = oracle::random_soft(rng), c = oracle::random_soft(rng);
    const double ab = eccentricity(a, b), ba = eccentricity(b, a);
    EXPECT_EQ(ab, ba);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
    EXPECT_LE(ab, eccentricity(a, c) + eccentricity(c, b) + 1e-12);
    EXPECT_EQ(eccentricity(a, a), 0.0);
    if (a.values != b.values) EXPECT_GT(ab, 0.0);
  }
}

TEST(RuleBank, PublishedPrototypesMatchTranscription) {
  const auto table = oracle::published_prototypes();
  const auto rules = published_rules();
  ASSERT_EQ(rules.size(), table.size());
  for (std::size_t i = 0; i < rules.size(); ++i) {
    EXPECT_EQ(rules[i].label, table[i].first);
    EXPECT_EQ(rules[i].prototype, table[i].second) << class_name(table[i].first);
  }
  for (std::size_t i = 0; i < rules.size(); ++i)
    for (std::size_t j = i + 1; j < rules.size(); ++j) EXPECT_NE(rules[i].prototype, rules[j].prototype);
}

TEST(RuleBank, ShippedBankIsConsistent) {
  const auto bank = default_rule_bank();
  EXPECT_TRUE(bank.complete());
  EXPECT_EQ(bank.size(), 18u);
  EXPECT_TRUE(bank.fixed_point_violations(kDefault).empty());
  for (const auto& r : bank.rules()) {
    const auto m = fkis_class_memberships(crisp(r.prototype), bank, kDefault);
    const auto top = *std::max_element(m.membership.begin(), m.membership.end());
    EXPECT_EQ(m.membership[r.label.index()], top);
  }
}

TEST(RuleBank, Errors) {
  EXPECT_THROW(RuleBank{published_rules()}, ConfigError);
  EXPECT_NO_THROW(RuleBank::partial(published_rules()));
  auto rules = published_rules();
  rules[0].weight = 0.0;
  EXPECT_THROW(RuleBank::partial(rules), ConfigError);
  rules = published_rules();
  rules[0].prototype[0] = 0.5;
  EXPECT_THROW(RuleBank::partial(rules), ConfigError);
}

TEST(RuleBank, ParseAndRoundTrip) {
  const auto bank = parse_rule_bank("Angry High 0 0 1 0 0 1 0 -1 -1 -1 -1 -1\n", false);
  ASSERT_EQ(bank.size(), 1u);
  EXPECT_EQ(bank.rules()[0].label, (EmotionClass{Emotion::Angry, Intensity::High}));
  EXPECT_EQ(bank.rules()[0].prototype, oracle::published_prototypes()[0].second);
  EXPECT_EQ(bank.rules()[0].weight, 1.0);

  const auto shipped = default_rule_bank();
  EXPECT_EQ(parse_rule_bank(serialize_rule_bank(shipped)), shipped);
  auto weighted = published_rules();
  weighted[4].weight = 0.625;
  const auto pb = RuleBank::partial(weighted);
  EXPECT_EQ(parse_rule_bank(serialize_rule_bank(pb), false), pb);

  const auto w = parse_rule_bank("# comment\n\nHappy Low 0 0 0 0 0 0 0 0 0 0 0 0 w=0.5  # trailing\n", false);
  EXPECT_EQ(w.rules()[0].weight, 0.5);
}

TEST(RuleBank, ParseErrorsCarryLine) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_rule_bank(text, false);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("Angry High 0 0 1 0 0 1 0 -1 -1 -1 -1 -1\nAngry Low 0 0 0 0 0 0 0 0 0 0 0\n"), 2u);
  EXPECT_EQ(line_of("# x\nAngry Low 0 0 0 0 0 0 0 0 0 0 0 2\n"), 2u);
  EXPECT_EQ(line_of("Calm Low 0 0 0 0 0 0 0 0 0 0 0 0\n"), 1u);
  EXPECT_EQ(line_of("Angry Huge 0 0 0 0 0 0 0 0 0 0 0 0\n"), 1u);
  EXPECT_EQ(line_of("Angry Low 0 0 0 0 0 0 0 0 0 0 0 x\n"), 1u);
}

TEST(IntensityCurves, QuotedAnchors) {
  const auto curves = default_intensity_curves();
  const EmotionClass medium{Emotion::Angry, Intensity::Medium}, low{Emotion::Angry, Intensity::Low};
  EXPECT_NEAR(curves.eval(medium, 0.2), 0.34, 0.005);
  EXPECT_EQ(curves.eval(low, 0.2), 0.0);
  for (const auto& c : curves.curves()) EXPECT_EQ(curves.eval(c.label, c.center), 1.0);
}

TEST(IntensityCurves, ErrorsAndRoundTrip) {
  IntensityCurves one({{{Emotion::Angry, Intensity::Low}, 0.5, 0.2}});
  EXPECT_THROW(one.eval({Emotion::Happy, Intensity::Low}, 0.1), std::out_of_range);
  EXPECT_THROW(IntensityCurves({{{Emotion::Angry, Intensity::Low}, 0.5, 0.0}}), ConfigError);
  EXPECT_THROW(IntensityCurves({{{Emotion::Angry, Intensity::Low}, 0.5, 0.2}, {{Emotion::Angry, Intensity::Low}, 0.4, 0.2}}),
               ConfigError);
  const auto d = default_intensity_curves();
  const auto back = parse_intensity_curves(serialize_intensity_curves(d));
  ASSERT_EQ(back.curves().size(), d.curves().size());
  for (const auto& c : d.curves()) {
    EXPECT_EQ(back.curve(c.label).center, c.center);
    EXPECT_EQ(back.curve(c.label).half_width, c.half_width);
  }
  EXPECT_THROW(parse_intensity_curves("Angry Low 0.5\n"), ParseError);
}

TEST(Fkis, TablePrototypesAreExact) {
  const auto bank = default_rule_bank();
  for (const auto& [label, coding] : oracle::published_prototypes()) {
    const auto m = fkis_class_memberships(crisp(coding), bank, kDefault);
    EXPECT_EQ(m.membership[label.index()], 1.0);
    const auto a = annotate(crisp(coding), bank, default_intensity_curves(), kDefault);
    EXPECT_EQ(a.label, label) << class_name(label);
    EXPECT_EQ(a.confidence, 1.0);
  }
}

TEST(Fkis, DisgustMediumAnnotation) {
  const auto a = annotate(crisp(oracle::parse_table_coding("110000000(-1)00")), default_rule_bank(),
                          default_intensity_curves(), kDefault);
  EXPECT_EQ(a.label, (EmotionClass{Emotion::Disgust, Intensity::Medium}));
  EXPECT_EQ(a.confidence, 1.0);
  EXPECT_EQ(a.eccentricity, 0.0);
}

TEST(Fkis, MonotoneInEccentricity) {
  // Walk away from one prototype: the class membership never rises.
  const auto bank = default_rule_bank();
  const auto target = oracle::published_prototypes()[9];
  Coding c = target.second;
  double prev = 1.0;
  for (std::size_t j = 0; j < kNumComponents; ++j) {
    c[j] = c[j] >= 0.5 ? -1.0 : 1.0;
    const auto m = fkis_class_memberships(crisp(c), bank, kDefault);
    const double e = eccentricity(c, target.second);
    EXPECT_GE(m.eccentricity[target.first.index()], 0.0);
    EXPECT_LE(m.eccentricity[target.first.index()], e);
    EXPECT_LE(m.membership[target.first.index()], prev);
    prev = m.membership[target.first.index()];
  }
}

TEST(Fkis, SingleRuleBankAndFallback) {
  const auto table = oracle::published_prototypes();
  const auto bank = RuleBank::partial({FuzzyRule{table[3].first, table[3].second, 1.0}});
  std::mt19937_64 rng(9);
  bool saw_fallback = false;
  for (int it = 0; it < 200; ++it) {
    const auto o = oracle::random_soft(rng);
    const auto m = fkis_class_memberships(o, bank, kDefault);
    if (m.fallback) {
      saw_fallback = true;
      for (double mu : m.membership) EXPECT_DOUBLE_EQ(mu, 1.0 / 18.0);
    } else {
      for (std::size_t c = 0; c < kNumClasses; ++c)
        if (c != table[3].first.index()) EXPECT_EQ(m.membership[c], 0.0);
    }
  }
  EXPECT_TRUE(saw_fallback);
}

TEST(SemanticVector, Examples) {
  const auto bank = default_rule_bank();
  const auto table = oracle::published_prototypes();
  ClassMatch m;
  m.nearest_rule.fill(-1);
  m.nearest_rule[table[3].first.index()] = 3;
  m.membership[table[3].first.index()] = 1.0;
  EXPECT_EQ(fuzzy_semantic_vector(m, bank), table[3].second);

  m.nearest_rule[table[0].first.index()] = 0;
  m.membership[table[0].first.index()] = 1.0;
  m.membership[table[3].first.index()] = 1.0;
  const auto s = fuzzy_semantic_vector(m, bank);
  for (std::size_t j = 0; j < kNumComponents; ++j)
    EXPECT_DOUBLE_EQ(s[j], (table[0].second[j] + table[3].second[j]) / 2.0);

  ClassMatch zero;
  zero.nearest_rule.fill(0);
  EXPECT_THROW(fuzzy_semantic_vector(zero, bank), std::logic_error);
}

TEST(SemanticVector, MatchesCentroidOracle) {
  const auto bank = default_rule_bank();
  std::mt19937_64 rng(21);
  std::vector<ComponentCoding> inputs;
  for (const auto& [label, coding] : oracle::published_prototypes()) inputs.push_back(crisp(coding));
  for (int i = 0; i < 100; ++i) inputs.push_back(oracle::random_soft(rng));
  for (const auto& o : inputs) {
    const auto m = fkis_class_memberships(o, bank, kDefault);
    const auto got = fuzzy_semantic_vector(m, bank);
    const auto want = oracle::semantic_vector(o, bank.rules(), kDefault.fkis_half_width());
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      EXPECT_NEAR(got[j], want[j], 1e-12);
      EXPECT_GE(got[j], -1.0);
      EXPECT_LE(got[j], 1.0);
    }
  }
}

TEST(Annotate, BruteForceOracle) {
  const auto bank = default_rule_bank();
  const auto curves = default_intensity_curves();
  std::mt19937_64 rng(4242);
  std::vector<ComponentCoding> inputs;
  for (int i = 0; i < 1000; ++i) inputs.push_back(i % 2 ? oracle::random_soft(rng) : oracle::random_crisp(rng));
  for (const auto& [label, coding] : oracle::published_prototypes())
    for (const auto& p : oracle::hamming1(coding)) inputs.push_back(crisp(p));
  Coding zero{};
  inputs.push_back(crisp(zero));
  for (const auto& o : inputs) {
    const auto want = oracle::nearest_rule(o, bank.rules(), kDefault.fkis_half_width());
    const auto got = annotate(o, bank, curves, kDefault);
    ASSERT_EQ(got.label, want.label);
    ASSERT_EQ(got.confidence, want.confidence);
  }
}

TEST(Annotate, HammingOneKeepsSadHigh) {
  const auto bank = default_rule_bank();
  const auto sad_high = oracle::published_prototypes()[9];
  ASSERT_EQ(class_name(sad_high.first), "Sad-High");
  for (const auto& p : oracle::hamming1(sad_high.second)) {
    const auto a = annotate(crisp(p), bank, default_intensity_curves(), kDefault);
    EXPECT_EQ(a.label, sad_high.first);
  }
}

TEST(Annotate, ReducedSystemExhaustive) {
  // 4 live components (others held at 0), a 3-rule bank, every crisp coding.
  const std::vector<FuzzyRule> rules = {
      {{Emotion::Angry, Intensity::High}, {1, -1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0}, 1.0},
      {{Emotion::Happy, Intensity::Low}, {0, 1, 1, -1, 0, 0, 0, 0, 0, 0, 0, 0}, 1.0},
      {{Emotion::Sad, Intensity::Medium}, {-1, 0, -1, 0, 0, 0, 0, 0, 0, 0, 0, 0}, 1.0},
  };
  const auto bank = RuleBank::partial(rules);
  const auto curves = default_intensity_curves();
  const int live[4] = {0, 1, 3, 4};
  for (int code = 0; code < 81; ++code) {
    Coding c{};
    int k = code;
    for (int j : live) {
      c[j] = k % 3 - 1;
      k /= 3;
    }
    // Exhaustive nearest rule, ties to the lower class index.
    std::size_t best = 0;
    double best_e = 1e9;
    for (const auto& r : rules) {
      double e = 0.0;
      for (std::size_t j = 0; j < kNumComponents; ++j) e += std::abs(c[j] - r.prototype[j]);
      e /= 24.0;
      if (e < best_e || (e == best_e && r.label.index() < best)) {
        best_e = e;
        best = r.label.index();
      }
    }
    const auto a = annotate(crisp(c), bank, curves, kDefault);
    EXPECT_EQ(a.label.index(), best) << code;
  }
}

TEST(Annotate, ConfidenceAndIntensityDegree) {
  const auto bank = default_rule_bank();
  const auto curves = default_intensity_curves();
  const auto p = oracle::published_prototypes()[1].second;
  Coding c = p;
  c[5] = 1.0;
  const auto a = annotate(crisp(c), bank, curves, kDefault);
  EXPECT_EQ(a.label, (EmotionClass{Emotion::Angry, Intensity::Medium}));
  EXPECT_DOUBLE_EQ(a.eccentricity, 1.0 / 24.0);
  EXPECT_DOUBLE_EQ(a.confidence, 1.0 - (1.0 / 24.0) / 0.45);
  EXPECT_DOUBLE_EQ(a.intensity_degree, curves.eval(a.label, 1.0 / 24.0));
}

TEST(Pipeline, InferSemanticVectorFromHead) {
  const auto bank = default_rule_bank();
  const auto hh = oracle::published_prototypes()[3].second;
  const std::vector<double> u(hh.begin(), hh.end());
  const auto s = infer_semantic_vector(u, bank, kDefault);
  const auto want = oracle::semantic_vector(crisp(hh), bank.rules(), kDefault.fkis_half_width());
  for (std::size_t j = 0; j < kNumComponents; ++j) EXPECT_NEAR(s[j], want[j], 1e-12);
}
