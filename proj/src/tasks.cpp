#include "stf2m/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include "io_util.hpp"
#include "stf2m/errors.hpp"

namespace stf2m {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void LongVideo::validate() const {
  if (labels.empty()) throw DataError("video has no label segments");
  if (static_cast<std::size_t>(text.rows()) != labels.size())
    throw DataError("video has " + std::to_string(text.rows()) + " text rows for " + std::to_string(labels.size()) +
                    " segments");
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& s = labels[i];
    if (s.frame_end <= s.frame_start)
      throw DataError("segment " + std::to_string(i) + " is empty [" + std::to_string(s.frame_start) + ", " +
                      std::to_string(s.frame_end) + ")");
    if (s.frame_start < prev_end) throw DataError("segment " + std::to_string(i) + " overlaps its predecessor");
    if (s.frame_end > frames())
      throw DataError("segment " + std::to_string(i) + " ends at frame " + std::to_string(s.frame_end) +
                      " beyond T = " + std::to_string(frames()));
    prev_end = s.frame_end;
  }
}

// ---------------------------------------------------------------------------
// Container

namespace {
constexpr char kVideoMagic[8] = {'S', 'T', 'F', '2', 'M', 'V', 'I', 'D'};
constexpr std::uint32_t kVideoVersion = 1;
}  // namespace

std::string encode_video(const LongVideo& v) {
  v.validate();
  detail::ByteWriter w;
  w.raw(kVideoMagic, sizeof kVideoMagic);
  w.u32(kVideoVersion);
  w.u64(static_cast<std::uint64_t>(v.visual.rows()));
  w.u64(static_cast<std::uint64_t>(v.text.rows()));
  w.u32(static_cast<std::uint32_t>(v.visual.cols()));
  w.u32(static_cast<std::uint32_t>(v.text.cols()));
  w.u32(static_cast<std::uint32_t>(v.labels.size()));
  for (const auto& s : v.labels) {
    w.u32(static_cast<std::uint32_t>(s.label.emotion));
    w.u32(static_cast<std::uint32_t>(s.label.intensity));
    w.u64(s.frame_start);
    w.u64(s.frame_end);
  }
  for (Eigen::Index i = 0; i < v.visual.size(); ++i) w.f64(v.visual.data()[i]);
  for (Eigen::Index i = 0; i < v.text.size(); ++i) w.f64(v.text.data()[i]);
  return w.take();
}

LongVideo decode_video(const std::string& bytes) {
  detail::ByteReader r(bytes, "video");
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kVideoMagic, sizeof kVideoMagic) != 0) throw DataError("video: bad magic");
  if (auto ver = r.u32(); ver != kVideoVersion) throw DataError("video: unsupported version " + std::to_string(ver));
  const auto t = r.u64();
  const auto s = r.u64();
  const auto dv = r.u32();
  const auto dt = r.u32();
  const auto n = r.u32();
  LongVideo v;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto e = r.u32();
    const auto in = r.u32();
    if (e >= kNumEmotions || in >= kNumIntensities) throw DataError("video: bad label in segment " + std::to_string(i));
    LabelSegment seg;
    seg.label = {static_cast<Emotion>(e), static_cast<Intensity>(in)};
    seg.frame_start = r.u64();
    seg.frame_end = r.u64();
    v.labels.push_back(seg);
  }
  if ((t * dv + s * dt) * 8 != r.remaining()) throw DataError("video: payload size does not match header");
  v.visual.resize(static_cast<Eigen::Index>(t), dv);
  v.text.resize(static_cast<Eigen::Index>(s), dt);
  for (Eigen::Index i = 0; i < v.visual.size(); ++i) v.visual.data()[i] = r.f64();
  for (Eigen::Index i = 0; i < v.text.size(); ++i) v.text.data()[i] = r.f64();
  v.validate();
  return v;
}

void save_video(const std::filesystem::path& path, const LongVideo& v) {
  detail::write_file_atomic(path, encode_video(v));
}

LongVideo load_video(const std::filesystem::path& path) { return decode_video(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Streams and views

std::pair<ModalityStream, ModalityStream> segment_modalities(const LongVideo& v) {
  v.validate();
  std::vector<std::size_t> positions(v.labels.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  ModalityStream visual{Modality::Visual, v.visual, v.labels, positions};
  ModalityStream text{Modality::Text, v.text, v.labels, positions};
  return {std::move(visual), std::move(text)};
}

PositionEncoder::PositionEncoder() {
  std::mt19937_64 rng(0x9051'7105'e9c0'deULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto init = [&](Eigen::Index r, Eigen::Index c, double scale) {
    RowMatrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
    return m;
  };
  w1_ = init(2, 16, 1.0);
  b1_ = init(1, 16, 0.5);
  w2_ = init(16, static_cast<Eigen::Index>(kPositionDim), 1.0 / 4.0);
  b2_ = RowMatrix::Zero(1, static_cast<Eigen::Index>(kPositionDim));
}

PositionEncoder::PositionEncoder(RowMatrix w1, RowMatrix b1, RowMatrix w2, RowMatrix b2)
    : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), b2_(std::move(b2)) {
  if (w1_.rows() != 2 || b1_.rows() != 1 || b1_.cols() != w1_.cols() || w2_.rows() != w1_.cols() ||
      b2_.rows() != 1 || b2_.cols() != w2_.cols())
    throw ParameterError("PositionEncoder: inconsistent weight shapes");
}

PositionEncoder PositionEncoder::zeros() {
  const auto d = static_cast<Eigen::Index>(kPositionDim);
  return PositionEncoder(RowMatrix::Zero(2, 16), RowMatrix::Zero(1, 16), RowMatrix::Zero(16, d), RowMatrix::Zero(1, d));
}

std::vector<double> PositionEncoder::encode(std::size_t position_index, std::size_t segment_count,
                                            Modality modality) const {
  if (segment_count == 0) throw ParameterError("positional_encode: segment_count must be >= 1");
  RowMatrix x(1, 2);
  x(0, 0) = static_cast<double>(position_index) / static_cast<double>(segment_count);
  x(0, 1) = modality == Modality::Text ? 1.0 : 0.0;
  RowMatrix h = ((x * w1_) + b1_).array().tanh().matrix();
  RowMatrix out = h * w2_ + b2_;
  return {out.data(), out.data() + out.size()};
}

std::vector<View> segment_by_labels(const ModalityStream& stream, const PositionEncoder& encoder,
                                    std::size_t video_id) {
  std::vector<View> views;
  const auto count = stream.labels.size();
  const std::size_t limit = stream.modality == Modality::Visual ? static_cast<std::size_t>(stream.features.rows())
                                                                 : std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < count; ++i) {
    const auto& seg = stream.labels[i];
    if (seg.frame_end <= seg.frame_start)
      throw DataError("segment " + std::to_string(i) + " (" + class_name(seg.label) + ") has zero length");
    if (seg.frame_end > limit)
      throw DataError("segment " + std::to_string(i) + " (" + class_name(seg.label) + ") ends at frame " +
                      std::to_string(seg.frame_end) + " beyond stream length " + std::to_string(limit));
    const auto len = static_cast<Eigen::Index>(seg.frame_end - seg.frame_start);
    View v;
    v.modality = stream.modality;
    if (stream.modality == Modality::Visual) {
      v.frames = stream.features.middleRows(static_cast<Eigen::Index>(seg.frame_start), len);
    } else {
      if (i >= static_cast<std::size_t>(stream.features.rows()))
        throw DataError("segment " + std::to_string(i) + " has no text feature row");
      v.frames = stream.features.row(static_cast<Eigen::Index>(i)).replicate(len, 1);
    }
    v.position_index = stream.positions[i];
    v.segment_count = count;
    v.position_code = encoder.encode(v.position_index, count, stream.modality);
    v.label = seg.label;
    v.video_id = video_id;
    views.push_back(std::move(v));
  }
  return views;
}

std::vector<ViewGroup> group_views(const std::vector<View>& visual, const std::vector<View>& text) {
  if (visual.size() != text.size()) throw DataError("group_views: modality view counts differ");
  std::vector<ViewGroup> groups;
  for (const auto& v : visual) {
    auto it = std::find_if(text.begin(), text.end(), [&](const View& t) {
      return t.position_index == v.position_index && t.video_id == v.video_id;
    });
    if (it == text.end()) throw DataError("group_views: no text view at position " + std::to_string(v.position_index));
    if (!(it->label == v.label)) throw DataError("group_views: labels disagree at position " + std::to_string(v.position_index));
    if (v.modality != Modality::Visual || it->modality != Modality::Text)
      throw DataError("group_views: modality mix-up at position " + std::to_string(v.position_index));
    groups.push_back({v, *it});
  }
  return groups;
}

std::vector<ViewGroup> build_view_groups(const LongVideo& v, const PositionEncoder& encoder, std::size_t video_id) {
  auto [visual, text] = segment_modalities(v);
  return group_views(segment_by_labels(visual, encoder, video_id), segment_by_labels(text, encoder, video_id));
}

// ---------------------------------------------------------------------------
// Sampling

MetaTask sample_task(const std::vector<ViewGroup>& pool, Emotion emotion, std::size_t k_support, std::size_t k_query,
                     std::uint64_t seed) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].label().emotion == emotion) eligible.push_back(i);
  const std::size_t need = k_support + k_query;
  if (eligible.size() < need)
    throw DataError("sample_task: " + std::string(to_string(emotion)) + " has " + std::to_string(eligible.size()) +
                    " groups, need " + std::to_string(need));
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < need; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  MetaTask task;
  task.emotion = emotion;
  task.seed = seed;
  for (std::size_t i = 0; i < k_support; ++i) task.support.push_back(pool[eligible[i]]);
  for (std::size_t i = k_support; i < need; ++i) task.query.push_back(pool[eligible[i]]);
  return task;
}

MetaTask sample_any_task(const std::vector<ViewGroup>& pool, std::size_t k_support, std::size_t k_query,
                         std::uint64_t seed) {
  std::array<std::size_t, kNumEmotions> counts{};
  for (const auto& g : pool) ++counts[static_cast<std::size_t>(g.label().emotion)];
  std::vector<Emotion> usable;
  for (std::size_t e = 0; e < kNumEmotions; ++e)
    if (counts[e] >= k_support + k_query) usable.push_back(static_cast<Emotion>(e));
  if (usable.empty()) throw DataError("sample_any_task: no emotion has enough view groups");
  std::mt19937_64 rng(mix_seed(seed, 0xe0));
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  return sample_task(pool, usable[pick(rng)], k_support, k_query, seed);
}

}  // namespace stf2m
