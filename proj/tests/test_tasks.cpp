#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "stf2m/errors.hpp"
#include "stf2m/tasks.hpp"

using namespace stf2m;

namespace {

LongVideo make_video(const std::vector<std::pair<EmotionClass, std::size_t>>& spans, std::size_t tail = 0,
                     std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  LongVideo v;
  std::size_t t = 0;
  for (const auto& [label, len] : spans) {
    v.labels.push_back({label, t, t + len});
    t += len;
  }
  v.visual.resize(static_cast<Eigen::Index>(t + tail), kVisualDim);
  v.text.resize(static_cast<Eigen::Index>(spans.size()), kTextDim);
  for (Eigen::Index i = 0; i < v.visual.size(); ++i) v.visual.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < v.text.size(); ++i) v.text.data()[i] = n(rng);
  return v;
}

const EmotionClass kAngryHigh{Emotion::Angry, Intensity::High};
const EmotionClass kHappyLow{Emotion::Happy, Intensity::Low};
const EmotionClass kSadMedium{Emotion::Sad, Intensity::Medium};

std::vector<ViewGroup> pool_of(Emotion e, std::size_t n, std::size_t video_id) {
  std::vector<std::pair<EmotionClass, std::size_t>> spans;
  for (std::size_t i = 0; i < n; ++i) spans.push_back({{e, static_cast<Intensity>(i % 3)}, 4});
  return build_view_groups(make_video(spans, 0, video_id + 100), PositionEncoder(), video_id);
}

}  // namespace

TEST(Segment, CountsAndPositions) {
  const auto v = make_video({{kAngryHigh, 10}, {kHappyLow, 7}, {kSadMedium, 5}});
  const auto [vis, txt] = segment_modalities(v);
  EXPECT_EQ(vis.modality, Modality::Visual);
  EXPECT_EQ(txt.modality, Modality::Text);
  EXPECT_EQ(vis.labels, txt.labels);
  EXPECT_EQ(vis.positions, (std::vector<std::size_t>{0, 1, 2}));
  const PositionEncoder enc;
  const auto views = segment_by_labels(vis, enc);
  ASSERT_EQ(views.size(), 3u);
  EXPECT_EQ(views[0].frames.rows(), 10);
  EXPECT_EQ(views[1].frames.rows(), 7);
  EXPECT_EQ(views[2].frames.rows(), 5);
  const auto tviews = segment_by_labels(txt, enc);
  EXPECT_EQ(tviews[1].frames.rows(), 7);
  for (Eigen::Index r = 0; r < 7; ++r) EXPECT_EQ(tviews[1].frames.row(r), v.text.row(1));
}

TEST(Segment, SingleSegmentAndFiveSegments) {
  const auto one = make_video({{kAngryHigh, 6}});
  EXPECT_EQ(segment_modalities(one).first.positions, std::vector<std::size_t>{0});
  const auto five = make_video({{kAngryHigh, 3}, {kHappyLow, 3}, {kAngryHigh, 4}, {kHappyLow, 2}, {kHappyLow, 5}});
  const auto groups = build_view_groups(five, PositionEncoder(), 7);
  ASSERT_EQ(groups.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(groups[i].position_index(), i);
    EXPECT_EQ(groups[i].label(), five.labels[i].label);
    EXPECT_EQ(groups[i].visual.video_id, 7u);
  }
}

TEST(Segment, PartitionCoversLabeledRegion) {
  const auto v = make_video({{kAngryHigh, 10}, {kHappyLow, 10}}, 3);
  EXPECT_EQ(v.frames(), 23u);
  const auto views = segment_by_labels(segment_modalities(v).first, PositionEncoder());
  ASSERT_EQ(views.size(), 2u);
  Eigen::Index row = 0;
  for (const auto& view : views) {
    EXPECT_EQ(view.frames, v.visual.middleRows(row, view.frames.rows()));
    row += view.frames.rows();
  }
  EXPECT_EQ(row, 20);
}

TEST(Segment, Errors) {
  auto v = make_video({{kAngryHigh, 5}, {kHappyLow, 5}});
  auto bad = v;
  bad.labels.clear();
  bad.text.resize(0, kTextDim);
  EXPECT_THROW(segment_modalities(bad), DataError);
  bad = v;
  bad.labels[1].frame_end = bad.labels[1].frame_start;
  EXPECT_THROW(bad.validate(), DataError);
  bad = v;
  bad.labels[1].frame_end = 40;
  EXPECT_THROW(bad.validate(), DataError);
  try {
    auto [vis, txt] = segment_modalities(v);
    vis.labels[1].frame_end = 99;
    segment_by_labels(vis, PositionEncoder());
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("segment 1"), std::string::npos);
  }
}

TEST(Segment, GroupCoherenceChecked) {
  const auto v = make_video({{kAngryHigh, 5}, {kHappyLow, 5}});
  const auto [vis, txt] = segment_modalities(v);
  const PositionEncoder enc;
  auto tv = segment_by_labels(txt, enc);
  tv[0].label = kSadMedium;
  EXPECT_THROW(group_views(segment_by_labels(vis, enc), tv), DataError);
}

TEST(VideoContainer, RoundTripAndCorruption) {
  const auto v = make_video({{kAngryHigh, 5}, {kHappyLow, 4}}, 2);
  const auto bytes = encode_video(v);
  EXPECT_EQ(decode_video(bytes), v);
  EXPECT_THROW(decode_video(bytes.substr(0, bytes.size() - 8)), DataError);
  auto broken = bytes;
  broken[0] = 'X';
  EXPECT_THROW(decode_video(broken), DataError);
}

TEST(PositionEncoder, Properties) {
  const auto zero = PositionEncoder::zeros();
  for (double x : zero.encode(3, 5, Modality::Text)) EXPECT_EQ(x, 0.0);
  const PositionEncoder enc;
  EXPECT_EQ(enc.encode(1, 4, Modality::Visual), enc.encode(1, 4, Modality::Visual));
  EXPECT_EQ(PositionEncoder().encode(2, 3, Modality::Text), enc.encode(2, 3, Modality::Text));
  const auto a = enc.encode(0, 2, Modality::Visual), b = enc.encode(1, 2, Modality::Visual);
  ASSERT_EQ(a.size(), kPositionDim);
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_GT(std::sqrt(d), 0.0);
  EXPECT_THROW(enc.encode(0, 0, Modality::Visual), ParameterError);
}

TEST(SampleTask, DeterministicDisjointAndPure) {
  auto pool = pool_of(Emotion::Angry, 12, 0);
  const auto more = pool_of(Emotion::Happy, 12, 1);
  pool.insert(pool.end(), more.begin(), more.end());
  const auto a = sample_task(pool, Emotion::Happy, 5, 5, 99);
  const auto b = sample_task(pool, Emotion::Happy, 5, 5, 99);
  ASSERT_EQ(a.support.size(), 5u);
  ASSERT_EQ(a.query.size(), 5u);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(a.support[i].position_index(), b.support[i].position_index());
    EXPECT_EQ(a.query[i].position_index(), b.query[i].position_index());
    for (const auto* g : {&a.support[i], &a.query[i]}) {
      EXPECT_EQ(g->label().emotion, Emotion::Happy);
      seen.insert({g->visual.video_id, g->position_index()});
    }
  }
  EXPECT_EQ(seen.size(), 10u);
}

TEST(SampleTask, FullPoolIsPartition) {
  const auto pool = pool_of(Emotion::Fear, 6, 0);
  const auto t = sample_task(pool, Emotion::Fear, 3, 3, 5);
  std::set<std::size_t> pos;
  for (const auto& g : t.support) pos.insert(g.position_index());
  for (const auto& g : t.query) pos.insert(g.position_index());
  EXPECT_EQ(pos.size(), 6u);
}

TEST(SampleTask, InsufficientPoolReportsCount) {
  const auto pool = pool_of(Emotion::Sad, 4, 0);
  try {
    sample_task(pool, Emotion::Sad, 3, 3, 1);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sample_task(pool, Emotion::Happy, 1, 1, 1), DataError);
  EXPECT_THROW(sample_any_task(pool, 3, 3, 1), DataError);
}

TEST(SampleTask, SelectionFrequencyIsUniform) {
  const auto pool = pool_of(Emotion::Surprise, 10, 0);
  const std::size_t draws = 10000, k = 4;
  std::vector<int> hits(10, 0);
  for (std::size_t s = 0; s < draws; ++s) {
    const auto t = sample_task(pool, Emotion::Surprise, 2, 2, s);
    for (const auto& g : t.support) ++hits[g.position_index()];
    for (const auto& g : t.query) ++hits[g.position_index()];
  }
  const double p = static_cast<double>(k) / 10.0;
  const double mean = draws * p, sd = std::sqrt(draws * p * (1 - p));
  for (int h : hits) EXPECT_LE(std::abs(h - mean), 3 * sd) << h;
}

TEST(SampleTask, AnyTaskUsesEligibleEmotions) {
  auto pool = pool_of(Emotion::Angry, 10, 0);
  const auto small = pool_of(Emotion::Happy, 3, 1);
  pool.insert(pool.end(), small.begin(), small.end());
  for (std::uint64_t s = 0; s < 50; ++s) EXPECT_EQ(sample_any_task(pool, 2, 2, s).emotion, Emotion::Angry);
}

TEST(MixSeed, Spreads) {
  std::set<std::uint64_t> out;
  for (std::uint64_t i = 0; i < 1000; ++i) out.insert(mix_seed(42, i));
  EXPECT_EQ(out.size(), 1000u);
  EXPECT_EQ(mix_seed(1, 2), mix_seed(1, 2));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
}
