// Plain-text rule bank and intensity curve formats.
//
//   rules:  <Emotion> <Intensity> v1 ... v12 [w=<real>]
//   curves: <Emotion> <Intensity> <center> <half_width>
//
// '#' starts a comment. Blank lines are ignored.

#include <charconv>
#include <sstream>

#include "stf2m/errors.hpp"
#include "stf2m/fuzzy.hpp"
#include "text_util.hpp"

namespace stf2m::fuzzy {
namespace {

EmotionClass parse_label(std::size_t line_no, const std::vector<std::string_view>& tok) {
  auto e = parse_emotion(tok[0]);
  if (!e) throw ParseError(line_no, "unknown emotion '" + std::string(tok[0]) + "'");
  auto i = parse_intensity(tok[1]);
  if (!i) throw ParseError(line_no, "unknown intensity '" + std::string(tok[1]) + "'");
  return {*e, *i};
}

}  // namespace

RuleBank parse_rule_bank(std::string_view text, bool require_complete) {
  std::vector<FuzzyRule> rules;
  std::size_t line_no = 0;
  for (auto line : detail::lines(text)) {
    ++line_no;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    FuzzyRule rule;
    std::size_t n = tok.size();
    if (n > 0 && tok[n - 1].starts_with("w=")) {
      auto w = detail::parse_double(tok[n - 1].substr(2));
      if (!w) throw ParseError(line_no, "bad weight '" + std::string(tok[n - 1]) + "'");
      if (!(*w > 0.0 && *w <= 1.0)) throw ParseError(line_no, "weight must lie in (0, 1]");
      rule.weight = *w;
      --n;
    }
    if (n != 2 + kNumComponents)
      throw ParseError(line_no, "expected emotion, intensity and " + std::to_string(kNumComponents) +
                                    " values, got " + std::to_string(n) + " fields");
    rule.label = parse_label(line_no, tok);
    for (std::size_t j = 0; j < kNumComponents; ++j) {
      int v = 0;
      const auto s = tok[2 + j];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size() || v < -1 || v > 1)
        throw ParseError(line_no, "component " + std::to_string(j + 1) + " value '" + std::string(s) +
                                      "' is not in {-1,0,1}");
      rule.prototype[j] = v;
    }
    rules.push_back(rule);
  }
  return require_complete ? RuleBank(std::move(rules)) : RuleBank::partial(std::move(rules));
}

std::string serialize_rule_bank(const RuleBank& bank) {
  std::ostringstream os;
  for (const auto& r : bank.rules()) {
    os << to_string(r.label.emotion) << ' ' << to_string(r.label.intensity);
    for (double v : r.prototype) os << ' ' << static_cast<int>(v);
    if (r.weight != 1.0) os << " w=" << detail::format_double(r.weight);
    os << '\n';
  }
  return os.str();
}

IntensityCurves parse_intensity_curves(std::string_view text) {
  std::vector<IntensityCurve> curves;
  std::size_t line_no = 0;
  for (auto line : detail::lines(text)) {
    ++line_no;
    auto tok = detail::split_ws(detail::strip_comment(line));
    if (tok.empty()) continue;
    if (tok.size() != 4) throw ParseError(line_no, "expected 4 fields, got " + std::to_string(tok.size()));
    IntensityCurve c;
    c.label = parse_label(line_no, tok);
    auto center = detail::parse_double(tok[2]);
    auto width = detail::parse_double(tok[3]);
    if (!center || !width) throw ParseError(line_no, "bad number");
    if (!(*width > 0.0)) throw ParseError(line_no, "half_width must be positive");
    c.center = *center;
    c.half_width = *width;
    curves.push_back(c);
  }
  return IntensityCurves(std::move(curves));
}

std::string serialize_intensity_curves(const IntensityCurves& curves) {
  std::ostringstream os;
  for (const auto& c : curves.curves())
    os << to_string(c.label.emotion) << ' ' << to_string(c.label.intensity) << ' ' << detail::format_double(c.center)
       << ' ' << detail::format_double(c.half_width) << '\n';
  return os.str();
}

}  // namespace stf2m::fuzzy
