#include "stf2m/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "io_util.hpp"
#include "stf2m/errors.hpp"
#include "text_util.hpp"

namespace stf2m {

void GeneratorConfig::validate() const {
  if (!(ramp_min > 0.0 && ramp_min <= ramp_max && ramp_max <= 1.0))
    throw ConfigError("ramp range must satisfy 0 < r_min <= r_max <= 1");
  if (!(sigma >= 0.0)) throw ConfigError("generator sigma must be non-negative");
  if (frames_per_segment == 0) throw ConfigError("frames_per_segment must be positive");
  if (segments_per_video == 0) throw ConfigError("segments_per_video must be positive");
}

FeatureLifts FeatureLifts::make(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureLifts f;
  f.visual.resize(static_cast<Eigen::Index>(fuzzy::kNumComponents), static_cast<Eigen::Index>(kVisualDim));
  for (Eigen::Index i = 0; i < f.visual.size(); ++i) f.visual.data()[i] = normal(rng) / std::sqrt(12.0);
  f.text.resize(static_cast<Eigen::Index>(kNumClasses), static_cast<Eigen::Index>(kTextDim));
  for (Eigen::Index i = 0; i < f.text.size(); ++i) f.text.data()[i] = normal(rng) / std::sqrt(18.0);
  return f;
}

LongVideo generate_video(const std::vector<EmotionClass>& labels, const fuzzy::RuleBank& bank,
                         const FeatureLifts& lifts, const GeneratorConfig& cfg, std::uint64_t seed,
                         std::vector<SegmentTrace>* trace) {
  cfg.validate();
  if (labels.empty()) throw DataError("generate_video: empty label sequence");
  for (const auto& c : labels)
    if (bank.rules_for(c).empty()) throw DataError("generate_video: no prototype for " + class_name(c));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> ramp(cfg.ramp_min, cfg.ramp_max);

  const auto seg_len = static_cast<Eigen::Index>(cfg.frames_per_segment);
  const auto nc = static_cast<Eigen::Index>(fuzzy::kNumComponents);
  LongVideo v;
  v.visual.resize(seg_len * static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(kVisualDim));
  v.text.resize(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(kTextDim));
  if (trace) trace->clear();

  for (std::size_t s = 0; s < labels.size(); ++s) {
    const auto& proto = bank.rules()[bank.rules_for(labels[s]).front()].prototype;
    const double r = cfg.ramp_min == cfg.ramp_max ? cfg.ramp_min : ramp(rng);
    const auto ramp_frames =
        std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::lround(r * static_cast<double>(seg_len))));
    RowMatrix coding(seg_len, nc);
    for (Eigen::Index t = 0; t < seg_len; ++t) {
      const double a = std::min(1.0, static_cast<double>(t + 1) / static_cast<double>(ramp_frames));
      for (Eigen::Index j = 0; j < nc; ++j) {
        double x = a * proto[static_cast<std::size_t>(j)];
        if (cfg.sigma > 0.0) x += cfg.sigma * noise(rng);
        coding(t, j) = x;
      }
    }
    const auto start = static_cast<Eigen::Index>(s) * seg_len;
    v.visual.middleRows(start, seg_len) = coding * lifts.visual;
    v.text.row(static_cast<Eigen::Index>(s)) = lifts.text.row(static_cast<Eigen::Index>(labels[s].index()));
    if (cfg.sigma > 0.0)
      for (Eigen::Index k = 0; k < v.text.cols(); ++k) v.text(static_cast<Eigen::Index>(s), k) += cfg.sigma * noise(rng);
    v.labels.push_back({labels[s], static_cast<std::size_t>(start), static_cast<std::size_t>(start + seg_len)});
    if (trace) trace->push_back({r, static_cast<std::size_t>(ramp_frames), std::move(coding)});
  }
  return v;
}

// ---------------------------------------------------------------------------
// Noise

const char* to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::Fog: return "fog";
    case NoiseKind::Mask: return "mask";
    case NoiseKind::Distortion: return "distortion";
  }
  return "?";
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "fog") return NoiseKind::Fog;
  if (s == "mask") return NoiseKind::Mask;
  if (s == "distortion") return NoiseKind::Distortion;
  throw ConfigError("unknown noise kind '" + s + "' (fog, mask, distortion)");
}

void NoiseSpec::validate(bool strict) const {
  if (strict) {
    for (double allowed : {0.0, 0.1, 0.3, 0.5})
      if (level == allowed) return;
    throw ConfigError("noise level must be one of 0, 0.1, 0.3, 0.5");
  }
  if (!(level >= 0.0 && level <= 1.0)) throw ConfigError("noise level must lie in [0, 1]");
}

namespace {

void check_level(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("noise level must lie in [0, 1]");
}

}  // namespace

LongVideo inject_mask(const LongVideo& v, double p, std::uint64_t seed) {
  check_level(p);
  if (p == 0.0) return v;
  LongVideo out = v;
  const auto t = out.visual.rows();
  // The epsilon keeps p*T that is integral in exact arithmetic from rounding up.
  const auto window = std::min<Eigen::Index>(t, static_cast<Eigen::Index>(std::ceil(p * static_cast<double>(t) - 1e-9)));
  if (window == 0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, t - window);
  const auto start = pick(rng);
  out.visual.middleRows(start, window).setZero();
  std::bernoulli_distribution drop(p);
  for (std::size_t s = 0; s < out.labels.size(); ++s) {
    const auto& seg = out.labels[s];
    const bool touched = static_cast<Eigen::Index>(seg.frame_start) < start + window &&
                         static_cast<Eigen::Index>(seg.frame_end) > start;
    if (touched && drop(rng)) out.text.row(static_cast<Eigen::Index>(s)).setZero();
  }
  return out;
}

LongVideo inject_fog(const LongVideo& v, double p, std::uint64_t /*seed*/) {
  check_level(p);
  if (p == 0.0) return v;
  LongVideo out = v;
  const Eigen::RowVectorXd mean = v.visual.colwise().mean();
  out.visual = (1.0 - p) * v.visual;
  out.visual.rowwise() += p * mean;
  return out;
}

LongVideo inject_distortion(const LongVideo& v, double p, std::uint64_t seed) {
  check_level(p);
  if (p == 0.0) return v;
  LongVideo out = v;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::RowVectorXd gamma(v.visual.cols());
  for (Eigen::Index j = 0; j < gamma.size(); ++j) gamma(j) = u(rng);
  for (Eigen::Index i = 0; i < out.visual.rows(); ++i)
    for (Eigen::Index j = 0; j < out.visual.cols(); ++j)
      out.visual(i, j) = v.visual(i, j) + p * gamma(j) * std::tanh(v.visual(i, j));
  return out;
}

LongVideo apply_noise(const LongVideo& v, const NoiseSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case NoiseKind::Fog: return inject_fog(v, spec.level, spec.seed);
    case NoiseKind::Mask: return inject_mask(v, spec.level, spec.seed);
    case NoiseKind::Distortion: return inject_distortion(v, spec.level, spec.seed);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Benchmark

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::vector<const BenchmarkVideo*> Benchmark::split(Split s) const {
  std::vector<const BenchmarkVideo*> out;
  for (const auto& v : videos)
    if (v.split == s) out.push_back(&v);
  return out;
}

std::string format_labels(const LongVideo& v) {
  std::string out;
  for (std::size_t i = 0; i < v.labels.size(); ++i) {
    if (i) out += ',';
    out += class_name(v.labels[i].label);
  }
  return out;
}

namespace {

constexpr std::uint64_t kLiftTag = 0x11f7;
constexpr std::uint64_t kDeckTag = 0xdec0;
constexpr std::uint64_t kNoiseTag = 0x9015e;

std::vector<std::vector<EmotionClass>> deal_labels(std::size_t videos, std::size_t per_video, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<EmotionClass> deck;
  std::vector<std::vector<EmotionClass>> out(videos);
  for (auto& labels : out) {
    for (std::size_t s = 0; s < per_video; ++s) {
      if (deck.empty()) {
        for (std::size_t c = 0; c < kNumClasses; ++c) deck.push_back(EmotionClass::from_index(c));
        std::shuffle(deck.begin(), deck.end(), rng);
      }
      labels.push_back(deck.back());
      deck.pop_back();
    }
  }
  return out;
}

}  // namespace

Benchmark generate_benchmark(const BenchmarkConfig& cfg, const fuzzy::RuleBank& bank) {
  cfg.generator.validate();
  const auto lifts = FeatureLifts::make(mix_seed(cfg.seed, kLiftTag));
  Benchmark b;
  const std::pair<Split, std::size_t> plan[] = {
      {Split::Train, cfg.train_videos}, {Split::Val, cfg.val_videos}, {Split::Test, cfg.test_videos}};
  for (const auto& [split, count] : plan) {
    const auto split_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(split) + 1);
    const auto labels = deal_labels(count, cfg.generator.segments_per_video, mix_seed(split_seed, kDeckTag));
    for (std::size_t i = 0; i < count; ++i) {
      BenchmarkVideo bv;
      bv.split = split;
      bv.seed = mix_seed(split_seed, i);
      bv.path = std::string(to_string(split)) + "/video_" + std::string(i < 10 ? "00" : i < 100 ? "0" : "") +
                std::to_string(i) + ".stv";
      bv.video = generate_video(labels[i], bank, lifts, cfg.generator, bv.seed);
      if (cfg.noise) {
        NoiseSpec spec = *cfg.noise;
        spec.seed = mix_seed(bv.seed, kNoiseTag ^ spec.seed);
        bv.video = apply_noise(bv.video, spec);
      }
      b.videos.push_back(std::move(bv));
    }
  }
  return b;
}

void write_benchmark(const std::filesystem::path& dir, const Benchmark& b) {
  std::string manifest = "path\tseed\tlabels\n";
  for (const auto& v : b.videos) {
    std::filesystem::create_directories((dir / v.path).parent_path());
    save_video(dir / v.path, v.video);
    manifest += v.path + '\t' + std::to_string(v.seed) + '\t' + format_labels(v.video) + '\n';
  }
  detail::write_file_atomic(dir / "manifest.tsv", manifest);
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
  const auto text = detail::read_file(dir / "manifest.tsv");
  Benchmark b;
  std::size_t line_no = 0;
  for (auto line : detail::lines(text)) {
    ++line_no;
    if (line_no == 1 || detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 3) throw DataError("manifest line " + std::to_string(line_no) + ": expected 3 fields");
    BenchmarkVideo bv;
    bv.path = std::string(fields[0]);
    const auto seed = detail::parse_int<std::uint64_t>(fields[1]);
    if (!seed) throw DataError("manifest line " + std::to_string(line_no) + ": bad seed");
    bv.seed = *seed;
    const auto slash = bv.path.find('/');
    const auto prefix = bv.path.substr(0, slash);
    if (prefix == "train") bv.split = Split::Train;
    else if (prefix == "val") bv.split = Split::Val;
    else if (prefix == "test") bv.split = Split::Test;
    else throw DataError("manifest line " + std::to_string(line_no) + ": unknown split '" + prefix + "'");
    bv.video = load_video(dir / bv.path);
    if (format_labels(bv.video) != fields[2])
      throw DataError("manifest line " + std::to_string(line_no) + ": labels disagree with " + bv.path);
    b.videos.push_back(std::move(bv));
  }
  return b;
}

}  // namespace stf2m
