#include "stf2m/emotion.hpp"

namespace stf2m {
namespace {

constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {"Angry", "Happy", "Disgust",
                                                                       "Fear",  "Sad",   "Surprise"};
constexpr std::array<std::string_view, kNumIntensities> kIntensityNames = {"Low", "Medium", "High"};

}  // namespace

std::string_view to_string(Emotion e) noexcept { return kEmotionNames[static_cast<std::size_t>(e)]; }

std::string_view to_string(Intensity i) noexcept { return kIntensityNames[static_cast<std::size_t>(i)]; }

std::string class_name(const EmotionClass& c) {
  std::string out(to_string(c.emotion));
  out += '-';
  out += to_string(c.intensity);
  return out;
}

std::optional<Emotion> parse_emotion(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kEmotionNames.size(); ++i)
    if (kEmotionNames[i] == s) return static_cast<Emotion>(i);
  return std::nullopt;
}

std::optional<Intensity> parse_intensity(std::string_view s) noexcept {
  for (std::size_t i = 0; i < kIntensityNames.size(); ++i)
    if (kIntensityNames[i] == s) return static_cast<Intensity>(i);
  return std::nullopt;
}

std::optional<EmotionClass> parse_class_name(std::string_view s) noexcept {
  const auto dash = s.find('-');
  if (dash == std::string_view::npos) return std::nullopt;
  auto e = parse_emotion(s.substr(0, dash));
  auto i = parse_intensity(s.substr(dash + 1));
  if (!e || !i) return std::nullopt;
  return EmotionClass{*e, *i};
}

}  // namespace stf2m
