#include "stf2m/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "stf2m/errors.hpp"

namespace stf2m::fuzzy {

const std::array<AttributeSpec, kNumComponents>& facial_components() {
  static const std::array<AttributeSpec, kNumComponents> specs = {{
      {1, "left eyebrow", {-1, 0, 1}},
      {2, "right eyebrow", {-1, 0, 1}},
      {3, "brow crest", {0, 1}},
      {4, "left eye", {-1, 0, 1}},
      {5, "right eye", {-1, 0, 1}},
      {6, "nose", {0, 1}},
      {7, "nostril", {0, 1}},
      {8, "mouth", {0, 1}},
      {9, "upper lip", {-1, 0, 1}},
      {10, "lower lip", {-1, 0, 1}},
      {11, "left mouth corner", {-1, 0, 1}},
      {12, "right mouth corner", {-1, 0, 1}},
  }};
  return specs;
}

void FuzzyConfig::validate() const {
  if (!(lambda1 > 0.0 && lambda1 < 1.0)) throw ParameterError("lambda1 must lie in (0, 1)");
  if (!(lambda2 > 0.0 && lambda2 < 1.0)) throw ParameterError("lambda2 must lie in (0, 1)");
}

double tri_membership(double u, double center, double half_width) {
  if (!(half_width > 0.0)) throw ParameterError("tri_membership: half_width must be positive");
  return std::max(0.0, 1.0 - std::abs(u - center) / half_width);
}

std::vector<double> fcis_memberships(double u, const AttributeSpec& spec, const FuzzyConfig& cfg) {
  std::vector<double> mu;
  mu.reserve(spec.value_set.size());
  for (int v : spec.value_set) mu.push_back(tri_membership(u, v, cfg.fcis_half_width()));
  return mu;
}

ComponentCoding fcis_defuzzify(std::span<const double> head_output, const FuzzyConfig& cfg) {
  return fcis_defuzzify(head_output, facial_components(), cfg);
}

ComponentCoding fcis_defuzzify(std::span<const double> head_output, std::span<const AttributeSpec> specs,
                               const FuzzyConfig& cfg) {
  if (head_output.size() != kNumComponents || specs.size() != kNumComponents)
    throw ParameterError("fcis_defuzzify: expected " + std::to_string(kNumComponents) + " components, got " +
                         std::to_string(head_output.size()));
  ComponentCoding out;
  out.mode = CodingMode::Soft;
  for (std::size_t j = 0; j < kNumComponents; ++j) {
    const auto& spec = specs[j];
    const double u = head_output[j];
    const auto mu = fcis_memberships(u, spec, cfg);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      num += mu[k] * spec.value_set[k];
      den += mu[k];
    }
    if (den > 0.0) {
      out.values[j] = num / den;
    } else {
      // Outside every support: nearest attribute value.
      double best = spec.value_set.front();
      for (int v : spec.value_set)
        if (std::abs(u - v) < std::abs(u - best)) best = v;
      out.values[j] = best;
    }
  }
  return out;
}

double eccentricity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw ParameterError("eccentricity: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  double sum = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) sum += std::abs(a[j] - b[j]);
  return sum / (2.0 * static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// Rule bank

RuleBank::RuleBank(std::vector<FuzzyRule> rules) : RuleBank(std::move(rules), true) {}

RuleBank RuleBank::partial(std::vector<FuzzyRule> rules) { return RuleBank(std::move(rules), false); }

RuleBank::RuleBank(std::vector<FuzzyRule> rules, bool strict) : rules_(std::move(rules)) {
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const auto& r = rules_[i];
    if (!(r.weight > 0.0 && r.weight <= 1.0))
      throw ConfigError("rule " + std::to_string(i) + " (" + class_name(r.label) + "): weight must lie in (0, 1]");
    for (double v : r.prototype)
      if (v != -1.0 && v != 0.0 && v != 1.0)
        throw ConfigError("rule " + std::to_string(i) + " (" + class_name(r.label) + "): prototype is not crisp");
    by_class_[r.label.index()].push_back(i);
  }
  if (strict) {
    for (std::size_t c = 0; c < kNumClasses; ++c)
      if (by_class_[c].empty())
        throw ConfigError("rule bank has no rule for class " + class_name(EmotionClass::from_index(c)));
  }
}

bool RuleBank::complete() const noexcept {
  return std::all_of(by_class_.begin(), by_class_.end(), [](const auto& v) { return !v.empty(); });
}

std::vector<std::size_t> RuleBank::fixed_point_violations(const FuzzyConfig& cfg) const {
  std::vector<std::size_t> bad;
  const auto curves = default_intensity_curves();
  for (const auto& rule : rules_) {
    const auto a = annotate({rule.prototype, CodingMode::Crisp}, *this, curves, cfg);
    if (!(a.label == rule.label)) bad.push_back(rule.label.index());
  }
  std::sort(bad.begin(), bad.end());
  bad.erase(std::unique(bad.begin(), bad.end()), bad.end());
  return bad;
}

namespace {

FuzzyRule make_rule(Emotion e, Intensity i, Coding c) { return FuzzyRule{{e, i}, c, 1.0}; }

}  // namespace

std::vector<FuzzyRule> published_rules() {
  using E = Emotion;
  using I = Intensity;
  return {
      make_rule(E::Angry, I::High, {0, 0, 1, 0, 0, 1, 0, -1, -1, -1, -1, -1}),
      make_rule(E::Angry, I::Medium, {-1, 0, -1, 0, 0, 0, 1, 0, 1, 0, 1, 1}),
      make_rule(E::Angry, I::Low, {0, 0, 0, 1, 1, 0, 1, -1, 0, 0, 0, 0}),
      make_rule(E::Happy, I::High, {1, 1, 0, 1, 1, 0, 1, 0, 0, 1, 1, 1}),
      make_rule(E::Happy, I::Medium, {0, 1, 1, 0, 1, 1, 0, 0, 0, -1, 0, 0}),
      make_rule(E::Happy, I::Low, {-1, 0, 1, 0, 1, 0, 0, 0, 1, 0, -1, -1}),
      make_rule(E::Disgust, I::High, {1, 1, -1, 0, 0, 0, 0, 0, 1, -1, 0, 0}),
      make_rule(E::Disgust, I::Medium, {1, 1, 0, 0, 0, 0, 0, 0, 0, -1, 0, 0}),
      make_rule(E::Fear, I::Low, {0, 0, 0, -1, -1, 0, 0, 0, 0, 0, 1, 1}),
      make_rule(E::Sad, I::High, {-1, -1, 0, -1, -1, 1, 0, 0, -1, -1, 0, 0}),
      make_rule(E::Sad, I::Medium, {-1, -1, 0, 0, 0, 1, 0, 0, 0, -1, 0, 0}),
      make_rule(E::Surprise, I::Low, {0, 0, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1}),
  };
}

RuleBank default_rule_bank() {
  using E = Emotion;
  using I = Intensity;
  auto rules = published_rules();
  rules.push_back(make_rule(E::Disgust, I::Low, {0, 0, 0, 0, 0, 1, 1, 0, 1, 0, -1, 0}));
  rules.push_back(make_rule(E::Fear, I::Medium, {1, 1, 1, 1, 1, 0, 0, 0, 0, 0, -1, -1}));
  rules.push_back(make_rule(E::Fear, I::High, {1, 1, 1, 1, 1, 0, 1, 1, -1, -1, -1, -1}));
  rules.push_back(make_rule(E::Sad, I::Low, {-1, -1, 0, 0, 0, 0, 0, 0, 0, 0, -1, -1}));
  rules.push_back(make_rule(E::Surprise, I::Medium, {1, 1, 0, 1, 1, 0, 0, 1, 0, 0, 0, 0}));
  rules.push_back(make_rule(E::Surprise, I::High, {1, 1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0}));
  return RuleBank(std::move(rules));
}

// ---------------------------------------------------------------------------
// Intensity curves

IntensityCurves::IntensityCurves(std::vector<IntensityCurve> curves) : curves_(std::move(curves)) {
  slot_.fill(-1);
  for (std::size_t i = 0; i < curves_.size(); ++i) {
    const auto& c = curves_[i];
    if (!(c.half_width > 0.0))
      throw ConfigError("intensity curve " + class_name(c.label) + ": half_width must be positive");
    if (!(c.center >= 0.0 && c.center <= 1.0))
      throw ConfigError("intensity curve " + class_name(c.label) + ": center must lie in [0, 1]");
    if (slot_[c.label.index()] >= 0) throw ConfigError("duplicate intensity curve for " + class_name(c.label));
    slot_[c.label.index()] = static_cast<int>(i);
  }
}

const IntensityCurve& IntensityCurves::curve(const EmotionClass& c) const {
  const int s = slot_[c.index()];
  if (s < 0) throw std::out_of_range("no intensity curve for " + class_name(c));
  return curves_[static_cast<std::size_t>(s)];
}

double IntensityCurves::eval(const EmotionClass& c, double e) const {
  const auto& curve = this->curve(c);
  return tri_membership(e, curve.center, curve.half_width);
}

IntensityCurves default_intensity_curves() {
  std::vector<IntensityCurve> curves;
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    const auto emotion = static_cast<Emotion>(e);
    curves.push_back({{emotion, Intensity::Low}, 0.65, 0.30});
    curves.push_back({{emotion, Intensity::Medium}, 0.35, 0.2273});
    curves.push_back({{emotion, Intensity::High}, 0.05, 0.25});
  }
  return IntensityCurves(std::move(curves));
}

// ---------------------------------------------------------------------------
// Knowledge inference

ClassMatch fkis_class_memberships(const ComponentCoding& coding, const RuleBank& bank, const FuzzyConfig& cfg) {
  const double width = cfg.fkis_half_width();
  ClassMatch m;
  m.nearest_rule.fill(-1);
  m.eccentricity.fill(std::numeric_limits<double>::infinity());
  const auto& rules = bank.rules();
  double total = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t idx : bank.rules_for(EmotionClass::from_index(c))) {
      const double e = eccentricity(coding.values, rules[idx].prototype);
      // Strict '<' keeps the first rule on ties.
      if (e < m.eccentricity[c]) {
        m.eccentricity[c] = e;
        m.nearest_rule[c] = static_cast<int>(idx);
      }
    }
    if (m.nearest_rule[c] >= 0)
      m.membership[c] = tri_membership(m.eccentricity[c], 0.0, width) * rules[m.nearest_rule[c]].weight;
    total += m.membership[c];
  }
  if (total == 0.0) {
    m.membership.fill(1.0 / static_cast<double>(kNumClasses));
    m.fallback = true;
  }
  return m;
}

Coding fuzzy_semantic_vector(const ClassMatch& match, const RuleBank& bank) {
  Coding s{};
  double den = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const double mu = match.membership[c];
    if (mu < 0.0) throw std::logic_error("fuzzy_semantic_vector: negative membership");
    if (mu == 0.0 || match.nearest_rule[c] < 0) continue;
    const auto& p = bank.rules()[static_cast<std::size_t>(match.nearest_rule[c])].prototype;
    for (std::size_t j = 0; j < kNumComponents; ++j) s[j] += mu * p[j];
    den += mu;
  }
  if (den == 0.0) throw std::logic_error("fuzzy_semantic_vector: all memberships are zero");
  for (double& v : s) v /= den;
  return s;
}

Annotation annotate(const ComponentCoding& coding, const RuleBank& bank, const IntensityCurves& curves,
                    const FuzzyConfig& cfg) {
  const auto m = fkis_class_memberships(coding, bank, cfg);
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c)
    if (m.membership[c] > m.membership[best]) best = c;
  Annotation a;
  a.label = EmotionClass::from_index(best);
  a.confidence = m.membership[best];
  a.eccentricity = m.eccentricity[best];
  if (m.nearest_rule[best] >= 0) a.intensity_degree = curves.eval(a.label, std::min(1.0, a.eccentricity));
  return a;
}

Coding infer_semantic_vector(std::span<const double> head_output, const RuleBank& bank, const FuzzyConfig& cfg) {
  const auto coding = fcis_defuzzify(head_output, cfg);
  return fuzzy_semantic_vector(fkis_class_memberships(coding, bank, cfg), bank);
}

}  // namespace stf2m::fuzzy
