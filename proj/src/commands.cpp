#include "stf2m/commands.hpp"

#include <cmath>
#include <ostream>

#include "io_util.hpp"
#include "json.hpp"
#include "stf2m/checkpoint.hpp"
#include "stf2m/errors.hpp"
#include "text_util.hpp"

namespace stf2m::cmd {

namespace {

void write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file_atomic(path, bytes);
}

template <typename T>
ad::ParamSet<T> load_params(const Pipeline<T>& pipe, const fs::path& checkpoint) {
  auto params = from_entries<T>(load_checkpoint(checkpoint));
  const auto expected = pipe.initial_params();
  if (params.names() != expected.names())
    throw DataError(checkpoint.string() + ": tensor names do not match the configured encoder");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].rows() != expected[i].rows() || params[i].cols() != expected[i].cols())
      throw DataError(checkpoint.string() + ": tensor " + params.name(i) + " has the wrong shape");
  return params;
}

/// Calls fn with a Pipeline of the configured precision.
template <typename Fn>
auto with_pipeline(const RunConfig& cfg, Fn&& fn) {
  cfg.validate();
  if (cfg.precision == 32) return fn(Pipeline<float>(cfg));
  return fn(Pipeline<double>(cfg));
}

}  // namespace

void gen(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto bench = generate_benchmark(cfg.benchmark(), cfg.rule_bank());
  write_benchmark(out, bench);
  write(out / "config.txt", cfg.to_text());
}

void train(const RunConfig& cfg, const fs::path& bench_dir, const fs::path& out, std::ostream* progress) {
  const auto bench = read_benchmark(bench_dir);
  with_pipeline(cfg, [&](auto pipe) {
    using Params = decltype(pipe.initial_params());
    const auto pool = build_pool(bench, Split::Train);
    std::string log;
    const auto every = cfg.checkpoint_every;
    const auto params = pipe.train(pipe.initial_params(), pool, cfg.outer_steps,
                                   [&](const TrainLogLine& line, const Params& p) {
                                     log += line.format() + "\n";
                                     if (progress && (line.step % 50 == 0 || line.step == cfg.outer_steps))
                                       *progress << line.format() << std::endl;
                                     if (every && line.step % every == 0 && line.step != cfg.outer_steps)
                                       save_checkpoint(out / ("ckpt_step" + std::to_string(line.step) + ".ckpt"),
                                                       to_entries(p));
                                   });
    fs::create_directories(out);
    save_checkpoint(out / "model.ckpt", to_entries(params));
    write(out / "train_log.tsv", log);
    write(out / "config.txt", cfg.to_text());
    return 0;
  });
}

Metrics eval(const RunConfig& cfg, const fs::path& bench_dir, const fs::path& checkpoint, const fs::path& out) {
  const auto bench = read_benchmark(bench_dir);
  return with_pipeline(cfg, [&](auto pipe) {
    const auto params = load_params(pipe, checkpoint);
    const auto result = pipe.evaluate(params, pipe.evaluation_tasks(build_pool(bench, Split::Test)));
    const auto& m = result.metrics;
    nlohmann::ordered_json j;
    j["accuracy_18"] = m.accuracy;
    j["accuracy_6"] = m.accuracy_emotion;
    j["macro_recall_18"] = m.macro_recall;
    j["macro_recall_6"] = m.macro_recall_emotion;
    j["count"] = m.count;
    j["confusion_18"] = m.confusion;
    j["confusion_6"] = m.confusion_emotion;
    write(out / "metrics.csv", metrics_csv(m));
    write(out / "metrics.json", j.dump(2) + "\n");
    write(out / "confusion_18.csv", confusion_csv(m, false));
    write(out / "confusion_6.csv", confusion_csv(m, true));
    write(out / "predictions.csv", predictions_csv(result.predictions));
    write(out / "eval_config.txt", cfg.to_text());
    return m;
  });
}

std::vector<RobustnessRow> robustness(const RunConfig& cfg, const fs::path& bench_dir, const fs::path& checkpoint,
                                      const fs::path& out) {
  const auto bench = read_benchmark(bench_dir);
  return with_pipeline(cfg, [&](auto pipe) {
    const auto params = load_params(pipe, checkpoint);
    std::vector<RobustnessRow> rows;
    std::string csv = "noise,level,acc,recall\n";
    for (auto kind : {NoiseKind::Fog, NoiseKind::Mask, NoiseKind::Distortion}) {
      for (double level : {0.0, 0.1, 0.3, 0.5}) {
        const NoiseSpec spec{kind, level, cfg.seed};
        spec.validate(true);
        const auto pool = build_pool(bench, Split::Test, spec);
        const auto r = pipe.evaluate(params, pipe.evaluation_tasks(pool));
        rows.push_back({kind, level, r.metrics.accuracy, r.metrics.macro_recall});
        csv += std::string(to_string(kind)) + "," + detail::format_double(level) + "," +
               detail::format_double(r.metrics.accuracy) + "," + detail::format_double(r.metrics.macro_recall) + "\n";
      }
    }
    write(out / "robustness.csv", csv);
    write(out / "robustness_config.txt", cfg.to_text());
    return rows;
  });
}

std::vector<double> lambda_sweep() {
  std::vector<double> v;
  for (int i = 1; i <= 9; ++i) v.push_back(i / 10.0);
  return v;
}

GridResult grid(const RunConfig& cfg, const fs::path& bench_dir, const fs::path& checkpoint, const fs::path& out) {
  const auto bench = read_benchmark(bench_dir);
  return with_pipeline(cfg, [&](auto pipe) {
    const auto params = load_params(pipe, checkpoint);
    const auto tasks = pipe.evaluation_tasks(build_pool(bench, Split::Val));
    GridResult g;
    std::string csv = "lambda1,lambda2,acc,recall\n";
    for (double l1 : lambda_sweep()) {
      for (double l2 : lambda_sweep()) {
        pipe.encoder().set_fuzzy_config({l1, l2});
        const auto r = pipe.evaluate(params, tasks);
        const GridCell cell{l1, l2, r.metrics.accuracy, r.metrics.macro_recall};
        if (g.cells.empty() || cell.accuracy > g.best.accuracy) g.best = cell;
        g.cells.push_back(cell);
        csv += detail::format_double(l1) + "," + detail::format_double(l2) + "," + detail::format_double(cell.accuracy) +
               "," + detail::format_double(cell.recall) + "\n";
      }
    }
    write(out / "grid.csv", csv);
    write(out / "grid_config.txt", cfg.to_text());
    write(out / "grid_best.csv", "lambda1,lambda2,acc,recall\n" + detail::format_double(g.best.lambda1) + "," +
                                     detail::format_double(g.best.lambda2) + "," +
                                     detail::format_double(g.best.accuracy) + "," +
                                     detail::format_double(g.best.recall) + "\n");
    return g;
  });
}

std::string annotate_text(std::string_view codings, const fuzzy::RuleBank& bank, const fuzzy::IntensityCurves& curves,
                          const fuzzy::FuzzyConfig& fcfg) {
  std::string out = "emotion,intensity,confidence\n";
  std::size_t line_no = 0;
  for (auto raw : detail::lines(codings)) {
    ++line_no;
    const auto line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    std::string normalized(line);
    for (auto& ch : normalized)
      if (ch == ',') ch = ' ';
    const auto tokens = detail::split_ws(normalized);
    if (tokens.size() != fuzzy::kNumComponents)
      throw ParseError(line_no, "expected 12 values, got " + std::to_string(tokens.size()));
    fuzzy::ComponentCoding c;
    c.mode = fuzzy::CodingMode::Soft;
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      const auto v = detail::parse_double(tokens[j]);
      if (!v || !std::isfinite(*v)) throw ParseError(line_no, "bad number '" + std::string(tokens[j]) + "'");
      c.values[j] = *v;
    }
    const auto a = fuzzy::annotate(c, bank, curves, fcfg);
    out += std::string(to_string(a.label.emotion)) + "," + std::string(to_string(a.label.intensity)) + "," +
           detail::format_double(a.confidence) + "\n";
  }
  return out;
}

void annotate(const RunConfig& cfg, const fs::path& input, const fs::path& output) {
  cfg.validate();
  const auto text = detail::read_file(input);
  write(output, annotate_text(text, cfg.rule_bank(), cfg.intensity_curves(), cfg.fuzzy()));
}

}  // namespace stf2m::cmd
