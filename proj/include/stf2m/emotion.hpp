#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace stf2m {

// Declaration order is the tie-breaking order used everywhere.
enum class Emotion : int { Angry = 0, Happy, Disgust, Fear, Sad, Surprise };
enum class Intensity : int { Low = 0, Medium, High };

inline constexpr std::size_t kNumEmotions = 6;
inline constexpr std::size_t kNumIntensities = 3;
inline constexpr std::size_t kNumClasses = kNumEmotions * kNumIntensities;

/// A fine-grained (emotion, intensity) label.
struct EmotionClass {
  Emotion emotion = Emotion::Angry;
  Intensity intensity = Intensity::Low;

  /// Dense index in [0, 18): emotion-major, intensity-minor.
  constexpr std::size_t index() const noexcept {
    return static_cast<std::size_t>(emotion) * kNumIntensities + static_cast<std::size_t>(intensity);
  }
  static constexpr EmotionClass from_index(std::size_t i) noexcept {
    return {static_cast<Emotion>(i / kNumIntensities), static_cast<Intensity>(i % kNumIntensities)};
  }
  friend constexpr bool operator==(const EmotionClass&, const EmotionClass&) = default;
};

std::string_view to_string(Emotion e) noexcept;
std::string_view to_string(Intensity i) noexcept;
/// "Angry-High" style name.
std::string class_name(const EmotionClass& c);

std::optional<Emotion> parse_emotion(std::string_view s) noexcept;
std::optional<Intensity> parse_intensity(std::string_view s) noexcept;
/// Accepts "Angry-High".
std::optional<EmotionClass> parse_class_name(std::string_view s) noexcept;

}  // namespace stf2m
