#pragma once

// Fuzzy component inference (encoder output -> facial component coding) and
// fuzzy knowledge inference (component coding -> 18 emotion/intensity classes).

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stf2m/emotion.hpp"

namespace stf2m::fuzzy {

inline constexpr std::size_t kNumComponents = 12;

using Coding = std::array<double, kNumComponents>;

enum class CodingMode { Crisp, Soft };

struct ComponentCoding {
  Coding values{};
  CodingMode mode = CodingMode::Crisp;
};

/// One facial component and the attribute values it can take.
struct AttributeSpec {
  int component_index = 0;  // 1-based
  std::string name;
  std::vector<int> value_set;  // ascending; also the membership centers

  double min_value() const { return value_set.front(); }
  double max_value() const { return value_set.back(); }
};

/// The twelve facial components (eyebrows, brow crest, eyes, nose, nostril,
/// mouth, lips, mouth corners). Components 3, 6, 7 and 8 are binary {0,1}.
const std::array<AttributeSpec, kNumComponents>& facial_components();

struct FuzzyConfig {
  double lambda1 = 0.4;  // FCIS membership range
  double lambda2 = 0.4;  // FKIS matching range

  /// Throws ParameterError unless both lie in (0, 1).
  void validate() const;
  double fcis_half_width() const noexcept { return 0.5 + lambda1; }
  double fkis_half_width() const noexcept { return 0.25 + lambda2 / 2.0; }
};

/// max(0, 1 - |u - center| / half_width). Throws ParameterError if half_width <= 0.
double tri_membership(double u, double center, double half_width);

/// Membership of `u` in each value of `spec.value_set`, in value_set order.
std::vector<double> fcis_memberships(double u, const AttributeSpec& spec, const FuzzyConfig& cfg);

/// Centroid de-fuzzification of one scalar per component. A component whose
/// memberships are all zero snaps to the nearest attribute value.
ComponentCoding fcis_defuzzify(std::span<const double> head_output, const FuzzyConfig& cfg);
ComponentCoding fcis_defuzzify(std::span<const double> head_output, std::span<const AttributeSpec> specs,
                               const FuzzyConfig& cfg);

/// Scaled L1 distance sum_j |a_j - b_j| / (2 n). In [0, 1] for codings in [-1, 1].
double eccentricity(std::span<const double> a, std::span<const double> b);
inline double eccentricity(const ComponentCoding& a, const ComponentCoding& b) {
  return eccentricity(a.values, b.values);
}

struct FuzzyRule {
  EmotionClass label;
  Coding prototype{};
  double weight = 1.0;

  friend bool operator==(const FuzzyRule&, const FuzzyRule&) = default;
};

/// Immutable rule collection indexed by class.
class RuleBank {
 public:
  /// Strict: every one of the 18 classes needs at least one rule.
  explicit RuleBank(std::vector<FuzzyRule> rules);
  /// Allows classes without rules; those classes never win a match.
  static RuleBank partial(std::vector<FuzzyRule> rules);

  const std::vector<FuzzyRule>& rules() const noexcept { return rules_; }
  /// Indices into rules() for one class, in insertion order.
  const std::vector<std::size_t>& rules_for(const EmotionClass& c) const { return by_class_[c.index()]; }
  bool complete() const noexcept;
  std::size_t size() const noexcept { return rules_.size(); }

  /// Indices of classes whose own prototypes fail to win their own match.
  /// Empty for a consistent bank.
  std::vector<std::size_t> fixed_point_violations(const FuzzyConfig& cfg) const;

  friend bool operator==(const RuleBank& a, const RuleBank& b) { return a.rules_ == b.rules_; }

 private:
  RuleBank(std::vector<FuzzyRule> rules, bool strict);

  std::vector<FuzzyRule> rules_;
  std::array<std::vector<std::size_t>, kNumClasses> by_class_;
};

/// The twelve codings published for the knowledge system.
std::vector<FuzzyRule> published_rules();
/// published_rules() plus one synthetic prototype for each of the six classes it
/// leaves uncovered. This is the bank shipped in data/rules.txt.
RuleBank default_rule_bank();

RuleBank parse_rule_bank(std::string_view text, bool require_complete = true);
std::string serialize_rule_bank(const RuleBank& bank);

/// Triangular curve over eccentricity for one (emotion, intensity).
struct IntensityCurve {
  EmotionClass label;
  double center = 0.0;
  double half_width = 1.0;
};

class IntensityCurves {
 public:
  explicit IntensityCurves(std::vector<IntensityCurve> curves);

  /// Throws std::out_of_range for a class with no curve.
  double eval(const EmotionClass& c, double eccentricity) const;
  const IntensityCurve& curve(const EmotionClass& c) const;
  const std::vector<IntensityCurve>& curves() const noexcept { return curves_; }

 private:
  std::vector<IntensityCurve> curves_;
  std::array<int, kNumClasses> slot_{};
};

/// Angry: High (0.05, 0.25), Medium (0.35, 0.2273), Low (0.65, 0.30); the other
/// emotions reuse the same shape.
IntensityCurves default_intensity_curves();
IntensityCurves parse_intensity_curves(std::string_view text);
std::string serialize_intensity_curves(const IntensityCurves& curves);

/// Result of matching one coding against every class of a bank.
struct ClassMatch {
  std::array<double, kNumClasses> membership{};
  std::array<double, kNumClasses> eccentricity{};
  std::array<int, kNumClasses> nearest_rule{};  // -1 for classes without rules
  bool fallback = false;                        // all memberships were zero
};

/// e_c = min over class rules of eccentricity; mu_c = tri(e_c, 0, 0.25 + lambda2/2)
/// times the nearest rule's weight. All-zero memberships become uniform 1/18.
ClassMatch fkis_class_memberships(const ComponentCoding& coding, const RuleBank& bank, const FuzzyConfig& cfg);

/// Membership-weighted centroid of the per-class nearest prototypes.
/// Throws std::logic_error when every membership is zero.
Coding fuzzy_semantic_vector(const ClassMatch& match, const RuleBank& bank);

struct Annotation {
  EmotionClass label;
  double confidence = 0.0;        // FKIS membership of the winning class
  double eccentricity = 0.0;      // distance to the winning class's nearest rule
  double intensity_degree = 0.0;  // intensity curve at that eccentricity
};

/// Argmax class with ties broken by class order.
Annotation annotate(const ComponentCoding& coding, const RuleBank& bank, const IntensityCurves& curves,
                    const FuzzyConfig& cfg);

/// FCIS followed by FKIS and the semantic vector, as used inside the encoder.
Coding infer_semantic_vector(std::span<const double> head_output, const RuleBank& bank, const FuzzyConfig& cfg);

}  // namespace stf2m::fuzzy
