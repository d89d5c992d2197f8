#include "stf2m/harness.hpp"

#include <set>
#include <sstream>

#include "io_util.hpp"
#include "stf2m/errors.hpp"
#include "text_util.hpp"

namespace stf2m {

// ---------------------------------------------------------------------------
// RunConfig

namespace {

enum class Kind { U64, Int, Size, Double, Bool, String, Mode };

struct Field {
  const char* key;
  Kind kind;
  void* (*ptr)(RunConfig&);
};

#define STF2M_FIELD(name, kind) \
  Field { #name, kind, [](RunConfig& c) -> void* { return &c.name; } }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      STF2M_FIELD(seed, Kind::U64),
      STF2M_FIELD(precision, Kind::Int),
      STF2M_FIELD(lambda1, Kind::Double),
      STF2M_FIELD(lambda2, Kind::Double),
      STF2M_FIELD(rules_path, Kind::String),
      STF2M_FIELD(curves_path, Kind::String),
      STF2M_FIELD(inner_lr, Kind::Double),
      STF2M_FIELD(outer_lr, Kind::Double),
      STF2M_FIELD(tasks_per_batch, Kind::Size),
      STF2M_FIELD(inner_steps, Kind::Size),
      STF2M_FIELD(mode, Kind::Mode),
      STF2M_FIELD(k_support, Kind::Size),
      STF2M_FIELD(k_query, Kind::Size),
      STF2M_FIELD(outer_steps, Kind::Size),
      STF2M_FIELD(checkpoint_every, Kind::Size),
      STF2M_FIELD(eval_tasks_per_emotion, Kind::Size),
      STF2M_FIELD(dim, Kind::Size),
      STF2M_FIELD(kernel_width, Kind::Size),
      STF2M_FIELD(temporal_layers, Kind::Size),
      STF2M_FIELD(coding_weight, Kind::Double),
      STF2M_FIELD(use_fuzzy, Kind::Bool),
      STF2M_FIELD(use_spatial, Kind::Bool),
      STF2M_FIELD(use_temporal, Kind::Bool),
      STF2M_FIELD(use_meta, Kind::Bool),
      STF2M_FIELD(normalize_embedding, Kind::Bool),
      STF2M_FIELD(frames_per_segment, Kind::Size),
      STF2M_FIELD(sigma, Kind::Double),
      STF2M_FIELD(ramp_min, Kind::Double),
      STF2M_FIELD(ramp_max, Kind::Double),
      STF2M_FIELD(segments_per_video, Kind::Size),
      STF2M_FIELD(train_videos, Kind::Size),
      STF2M_FIELD(val_videos, Kind::Size),
      STF2M_FIELD(test_videos, Kind::Size),
      STF2M_FIELD(bench_noise, Kind::String),
      STF2M_FIELD(bench_noise_level, Kind::Double),
  };
  return f;
}

#undef STF2M_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& f = find_field(key);
  void* p = f.ptr(*this);
  auto bad = [&]() { return ConfigError("bad value '" + value + "' for " + key); };
  switch (f.kind) {
    case Kind::U64: {
      auto v = detail::parse_int<std::uint64_t>(value);
      if (!v) throw bad();
      *static_cast<std::uint64_t*>(p) = *v;
      break;
    }
    case Kind::Int: {
      auto v = detail::parse_int<int>(value);
      if (!v) throw bad();
      *static_cast<int*>(p) = *v;
      break;
    }
    case Kind::Size: {
      auto v = detail::parse_int<std::size_t>(value);
      if (!v) throw bad();
      *static_cast<std::size_t*>(p) = *v;
      break;
    }
    case Kind::Double: {
      auto v = detail::parse_double(value);
      if (!v) throw bad();
      *static_cast<double*>(p) = *v;
      break;
    }
    case Kind::Bool:
      if (value == "true" || value == "1") *static_cast<bool*>(p) = true;
      else if (value == "false" || value == "0") *static_cast<bool*>(p) = false;
      else throw bad();
      break;
    case Kind::String:
      *static_cast<std::string*>(p) = value;
      break;
    case Kind::Mode:
      if (value == "second_order") *static_cast<MetaMode*>(p) = MetaMode::SecondOrder;
      else if (value == "first_order") *static_cast<MetaMode*>(p) = MetaMode::FirstOrder;
      else throw bad();
      break;
  }
}

void RunConfig::validate() const {
  if (precision != 64 && precision != 32) throw ConfigError("precision must be 64 or 32");
  fuzzy().validate();
  encoder().validate();
  meta().validate();
  if (k_support == 0 || k_query == 0) throw ConfigError("k_support and k_query must be positive");
  if (eval_tasks_per_emotion == 0) throw ConfigError("eval_tasks_per_emotion must be positive");
  benchmark().generator.validate();
  if (use_temporal && frames_per_segment < encoder().min_frames())
    throw ConfigError("frames_per_segment must be at least " + std::to_string(encoder().min_frames()));
  if (bench_noise != "none") {
    NoiseSpec{parse_noise_kind(bench_noise), bench_noise_level, 0}.validate();
  } else if (bench_noise_level != 0.0) {
    throw ConfigError("bench_noise_level set without bench_noise");
  }
  const std::size_t need = k_support + k_query;
  const std::pair<const char*, std::size_t> splits[] = {
      {"train_videos", train_videos}, {"val_videos", val_videos}, {"test_videos", test_videos}};
  for (const auto& [name, videos] : splits) {
    // Dealt decks give every emotion videos * segments / 6 groups per split.
    if (videos * segments_per_video < need * kNumEmotions)
      throw ConfigError(std::string(name) + " is too small to draw " + std::to_string(need) + " groups per emotion");
  }
  if (!rules_path.empty() && !std::filesystem::exists(rules_path))
    throw ConfigError("rules_path does not exist: " + rules_path);
  if (!curves_path.empty() && !std::filesystem::exists(curves_path))
    throw ConfigError("curves_path does not exist: " + curves_path);
}

std::string RunConfig::to_text() const {
  std::string out;
  RunConfig copy = *this;
  for (const auto& f : fields()) {
    void* p = f.ptr(copy);
    std::string v;
    switch (f.kind) {
      case Kind::U64: v = std::to_string(*static_cast<std::uint64_t*>(p)); break;
      case Kind::Int: v = std::to_string(*static_cast<int*>(p)); break;
      case Kind::Size: v = std::to_string(*static_cast<std::size_t*>(p)); break;
      case Kind::Double: v = detail::format_double(*static_cast<double*>(p)); break;
      case Kind::Bool: v = *static_cast<bool*>(p) ? "true" : "false"; break;
      case Kind::String: v = *static_cast<std::string*>(p); break;
      case Kind::Mode: v = *static_cast<MetaMode*>(p) == MetaMode::SecondOrder ? "second_order" : "first_order"; break;
    }
    out += std::string(f.key) + " = " + v + "\n";
  }
  return out;
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (auto raw : detail::lines(text)) {
    ++line_no;
    const auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  return parse(text);
}

EncoderConfig RunConfig::encoder() const {
  EncoderConfig e;
  e.dim = dim;
  e.kernel_width = kernel_width;
  e.temporal_layers = temporal_layers;
  e.use_fuzzy = use_fuzzy;
  e.use_spatial = use_spatial;
  e.use_temporal = use_temporal;
  e.coding_weight = coding_weight;
  e.normalize_embedding = normalize_embedding;
  return e;
}

MetaConfig RunConfig::meta() const {
  MetaConfig m;
  m.inner_lr = inner_lr;
  m.outer_lr = outer_lr;
  m.tasks_per_batch = tasks_per_batch;
  m.inner_steps = inner_steps;
  m.mode = mode;
  return m;
}

fuzzy::FuzzyConfig RunConfig::fuzzy() const {
  fuzzy::FuzzyConfig f;
  f.lambda1 = lambda1;
  f.lambda2 = lambda2;
  try {
    f.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return f;
}

BenchmarkConfig RunConfig::benchmark() const {
  BenchmarkConfig b;
  b.generator.frames_per_segment = frames_per_segment;
  b.generator.sigma = sigma;
  b.generator.ramp_min = ramp_min;
  b.generator.ramp_max = ramp_max;
  b.generator.segments_per_video = segments_per_video;
  b.train_videos = train_videos;
  b.val_videos = val_videos;
  b.test_videos = test_videos;
  b.seed = seed;
  if (bench_noise != "none") b.noise = NoiseSpec{parse_noise_kind(bench_noise), bench_noise_level, seed};
  return b;
}

fuzzy::RuleBank RunConfig::rule_bank() const {
  if (rules_path.empty()) return fuzzy::default_rule_bank();
  try {
    return fuzzy::parse_rule_bank(detail::read_file(rules_path));
  } catch (const ParseError& e) {
    throw ConfigError(rules_path + ":" + std::to_string(e.line()) + ": " + e.what());
  }
}

fuzzy::IntensityCurves RunConfig::intensity_curves() const {
  if (curves_path.empty()) return fuzzy::default_intensity_curves();
  try {
    return fuzzy::parse_intensity_curves(detail::read_file(curves_path));
  } catch (const ParseError& e) {
    throw ConfigError(curves_path + ":" + std::to_string(e.line()) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Pools

namespace {
constexpr std::uint64_t kPoolNoiseTag = 0x5eed'0f'0015eULL;
constexpr std::uint64_t kInitTag = 0x1417;
constexpr std::uint64_t kTrainTag = 0x7a5c;
constexpr std::uint64_t kEvalTag = 0xe7a1;
}  // namespace

std::vector<ViewGroup> build_pool(const Benchmark& b, Split split, const std::optional<NoiseSpec>& noise) {
  const PositionEncoder encoder;
  std::vector<ViewGroup> pool;
  std::size_t id = 0;
  for (const auto* bv : b.split(split)) {
    LongVideo v = bv->video;
    if (noise) {
      NoiseSpec spec = *noise;
      spec.seed = mix_seed(bv->seed, kPoolNoiseTag ^ noise->seed);
      v = apply_noise(v, spec);
    }
    auto groups = build_view_groups(v, encoder, id++);
    pool.insert(pool.end(), std::make_move_iterator(groups.begin()), std::make_move_iterator(groups.end()));
  }
  return pool;
}

std::string TrainLogLine::format() const {
  return std::to_string(step) + '\t' + detail::format_fixed(support_loss, 6) + '\t' +
         detail::format_fixed(query_loss, 6) + '\t' + detail::format_fixed(query_accuracy, 6) + '\t' +
         detail::format_fixed(wall_ms, 1);
}

// ---------------------------------------------------------------------------
// Pipeline

template <typename T>
Pipeline<T>::Pipeline(const RunConfig& cfg)
    : cfg_(cfg), encoder_(cfg.encoder(), cfg.rule_bank(), cfg.fuzzy()), meta_(cfg.meta()) {
  cfg_.validate();
  if (!cfg_.use_meta) meta_.inner_lr = 0.0;
}

template <typename T>
ad::ParamSet<T> Pipeline<T>::initial_params() const {
  return encoder_.init_params(mix_seed(cfg_.seed, kInitTag));
}

template <typename T>
TaskObjective<T> Pipeline<T>::objective(const MetaTask& task, std::string id) const {
  auto support = std::make_shared<TaskInputs<T>>(encoder_.prepare(task.support));
  auto query = std::make_shared<TaskInputs<T>>(encoder_.prepare(task.query));
  const Encoder<T>* enc = &encoder_;
  auto make = [enc](std::shared_ptr<TaskInputs<T>> in) {
    return [enc, in](const ad::ParamSet<T>& p) {
      const auto out = enc->forward(p, *in);
      LossOutput<T> r;
      r.loss = enc->loss(out, *in);
      const auto pred = predict(out.log_probs);
      for (std::size_t i = 0; i < pred.size(); ++i) r.correct += pred[i] == in->labels[i];
      r.count = pred.size();
      return r;
    };
  };
  return {std::move(id), make(support), make(query)};
}

template <typename T>
std::vector<MetaTask> Pipeline<T>::training_batch(const std::vector<ViewGroup>& pool, std::size_t step) const {
  std::vector<MetaTask> batch;
  const auto base = mix_seed(cfg_.seed, kTrainTag);
  for (std::size_t i = 0; i < cfg_.tasks_per_batch; ++i)
    batch.push_back(sample_any_task(pool, cfg_.k_support, cfg_.k_query,
                                    mix_seed(base, step * cfg_.tasks_per_batch + i)));
  return batch;
}

template <typename T>
ad::ParamSet<T> Pipeline<T>::train(const ad::ParamSet<T>& init, const std::vector<ViewGroup>& pool,
                                   std::size_t steps, const StepCallback& on_step) const {
  MetaState<T> state(init, meta_);
  for (std::size_t step = 0; step < steps; ++step) {
    const auto started = std::chrono::steady_clock::now();
    const auto tasks = training_batch(pool, step);
    std::vector<TaskObjective<T>> batch;
    for (std::size_t i = 0; i < tasks.size(); ++i)
      batch.push_back(objective(tasks[i], "step" + std::to_string(step) + ".task" + std::to_string(i)));
    const auto records = cfg_.use_meta ? outer_step(state, batch) : plain_step(state, batch);
    TrainLogLine line;
    line.step = step + 1;
    for (const auto& r : records) {
      line.support_loss += r.support_loss;
      line.query_loss += r.query_loss;
      line.query_accuracy += r.query_accuracy;
    }
    const auto n = static_cast<double>(records.size());
    line.support_loss /= n;
    line.query_loss /= n;
    line.query_accuracy /= n;
    line.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (on_step) on_step(line, state.params);
  }
  return state.params;
}

template <typename T>
std::vector<MetaTask> Pipeline<T>::evaluation_tasks(const std::vector<ViewGroup>& pool) const {
  std::vector<MetaTask> tasks;
  const auto base = mix_seed(cfg_.seed, kEvalTag);
  for (std::size_t e = 0; e < kNumEmotions; ++e)
    for (std::size_t k = 0; k < cfg_.eval_tasks_per_emotion; ++k)
      tasks.push_back(sample_task(pool, static_cast<Emotion>(e), cfg_.k_support, cfg_.k_query,
                                  mix_seed(base, e * 1000003 + k)));
  return tasks;
}

template <typename T>
EvalResult Pipeline<T>::evaluate(const ad::ParamSet<T>& params, const std::vector<MetaTask>& tasks) const {
  EvalResult result;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto obj = objective(tasks[t], "eval" + std::to_string(t));
    const auto adapted = inner_adapt(params, obj.support, meta_.inner_lr, meta_.inner_steps, MetaMode::FirstOrder);
    ad::NoGradGuard guard;
    const auto query = encoder_.prepare(tasks[t].query);
    const auto out = encoder_.forward(adapted, query);
    const auto pred = predict(out.log_probs);
    for (std::size_t i = 0; i < pred.size(); ++i) result.predictions.push_back({query.labels[i], pred[i]});
  }
  result.metrics = compute_metrics(result.predictions);
  return result;
}

template class Pipeline<double>;
template class Pipeline<float>;

// ---------------------------------------------------------------------------
// Reports

std::string metrics_csv(const Metrics& m) {
  std::string out = "metric,value\n";
  out += "accuracy_18," + detail::format_double(m.accuracy) + "\n";
  out += "accuracy_6," + detail::format_double(m.accuracy_emotion) + "\n";
  out += "macro_recall_18," + detail::format_double(m.macro_recall) + "\n";
  out += "macro_recall_6," + detail::format_double(m.macro_recall_emotion) + "\n";
  out += "count," + std::to_string(m.count) + "\n";
  return out;
}

std::string confusion_csv(const Metrics& m, bool collapsed) {
  std::string out = "truth";
  const std::size_t n = collapsed ? kNumEmotions : kNumClasses;
  auto name = [&](std::size_t i) {
    return collapsed ? std::string(to_string(static_cast<Emotion>(i))) : class_name(EmotionClass::from_index(i));
  };
  for (std::size_t j = 0; j < n; ++j) out += "," + name(j);
  out += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    out += name(i);
    for (std::size_t j = 0; j < n; ++j)
      out += "," + std::to_string(collapsed ? m.confusion_emotion[i][j] : m.confusion[i][j]);
    out += "\n";
  }
  return out;
}

std::string predictions_csv(const std::vector<Prediction>& p) {
  std::string out = "truth,predicted\n";
  for (const auto& x : p) out += std::to_string(x.truth) + "," + std::to_string(x.predicted) + "\n";
  return out;
}

std::vector<Prediction> parse_predictions_csv(std::string_view text) {
  std::vector<Prediction> out;
  std::size_t line_no = 0;
  for (auto line : detail::lines(text)) {
    if (++line_no == 1 || detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    const auto a = f.size() == 2 ? detail::parse_int<std::size_t>(f[0]) : std::nullopt;
    const auto b = f.size() == 2 ? detail::parse_int<std::size_t>(f[1]) : std::nullopt;
    if (!a || !b) throw DataError("predictions line " + std::to_string(line_no) + ": expected truth,predicted");
    out.push_back({*a, *b});
  }
  return out;
}

}  // namespace stf2m
