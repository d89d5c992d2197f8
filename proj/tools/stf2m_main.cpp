// stf2m: generate the synthetic benchmark, meta-train, evaluate, and report.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stf2m/commands.hpp"
#include "stf2m/errors.hpp"

namespace fs = std::filesystem;
using namespace stf2m;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<int> precision;
  std::vector<std::string> overrides;

  std::string bench;
  std::string checkpoint;
  std::optional<std::size_t> outer_steps;
  bool no_fuzzy = false, no_spatial = false, no_temporal = false, no_meta = false;

  std::string input;
  std::string rules;
  std::string curves;
};

/// Config file (or the echo next to the checkpoint), then --set, then flags.
RunConfig effective_config(const Options& o) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = RunConfig::load(o.config);
  } else if (!o.checkpoint.empty()) {
    const auto echo = fs::path(o.checkpoint).parent_path() / "config.txt";
    if (fs::exists(echo)) cfg = RunConfig::load(echo);
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.precision) cfg.precision = *o.precision;
  if (o.outer_steps) cfg.outer_steps = *o.outer_steps;
  if (o.no_fuzzy) cfg.use_fuzzy = false;
  if (o.no_spatial) cfg.use_spatial = false;
  if (o.no_temporal) cfg.use_temporal = false;
  if (o.no_meta) cfg.use_meta = false;
  if (!o.rules.empty()) cfg.rules_path = o.rules;
  if (!o.curves.empty()) cfg.curves_path = o.curves;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fine-grained emotion recognition with fuzzy meta-learning on synthetic long videos"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "key = value configuration file");
  app.add_option("--seed", o.seed, "master seed");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--precision", o.precision, "floating point width")->check(CLI::IsMember({32, 64}));
  app.add_option("--set", o.overrides, "config override key=value (repeatable)");

  auto* gen = app.add_subcommand("gen", "generate the synthetic benchmark");

  auto* train = app.add_subcommand("train", "meta-train the encoder");
  train->add_option("--bench", o.bench, "benchmark directory")->required();
  train->add_option("--outer-steps", o.outer_steps, "number of outer updates");
  train->add_flag("--no-fuzzy", o.no_fuzzy, "drop the fuzzy semantic features");
  train->add_flag("--no-spatial", o.no_spatial, "drop spatial message passing");
  train->add_flag("--no-temporal", o.no_temporal, "drop the temporal convolutions");
  train->add_flag("--no-meta", o.no_meta, "single-level training, no inner adaptation");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* robust = app.add_subcommand("robustness", "evaluate under fog, mask and distortion");
  auto* grid = app.add_subcommand("grid", "sweep lambda1 and lambda2 on the validation split");
  for (auto* sub : {eval, robust, grid}) {
    sub->add_option("--bench", o.bench, "benchmark directory")->required();
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  }

  auto* annotate = app.add_subcommand("annotate", "label component codings with emotion and intensity");
  annotate->add_option("--input", o.input, "file with 12 values per line")->required();
  annotate->add_option("--rules", o.rules, "rule bank file");
  annotate->add_option("--curves", o.curves, "intensity curve file");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const auto cfg = effective_config(o);
    const fs::path out = o.out;
    if (gen->parsed()) {
      cmd::gen(cfg, out);
      std::cout << "wrote benchmark to " << out.string() << "\n";
    } else if (train->parsed()) {
      cmd::train(cfg, o.bench, out, &std::cerr);
      std::cout << "wrote " << (out / "model.ckpt").string() << "\n";
    } else if (eval->parsed()) {
      const auto m = cmd::eval(cfg, o.bench, o.checkpoint, out);
      std::cout << "accuracy_18 " << m.accuracy << "\naccuracy_6 " << m.accuracy_emotion << "\nmacro_recall_18 "
                << m.macro_recall << "\n";
    } else if (robust->parsed()) {
      for (const auto& r : cmd::robustness(cfg, o.bench, o.checkpoint, out))
        std::cout << to_string(r.kind) << " " << r.level << " " << r.accuracy << "\n";
    } else if (grid->parsed()) {
      const auto g = cmd::grid(cfg, o.bench, o.checkpoint, out);
      std::cout << "best lambda1=" << g.best.lambda1 << " lambda2=" << g.best.lambda2 << " acc=" << g.best.accuracy
                << "\n";
    } else if (annotate->parsed()) {
      cmd::annotate(cfg, o.input, out / "annotations.csv");
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
