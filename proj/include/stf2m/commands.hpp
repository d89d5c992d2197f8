#pragma once

// File-producing commands. Every output is written to a temporary sibling and
// renamed into place, so a failing command leaves no partial files.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "stf2m/harness.hpp"

namespace stf2m::cmd {

namespace fs = std::filesystem;

/// Benchmark videos + manifest.tsv + config.txt under `out`.
void gen(const RunConfig& cfg, const fs::path& out);

/// model.ckpt, train_log.tsv, config.txt and optional step checkpoints.
void train(const RunConfig& cfg, const fs::path& bench, const fs::path& out, std::ostream* progress = nullptr);

/// metrics.csv, metrics.json, confusion_18.csv, confusion_6.csv, predictions.csv.
Metrics eval(const RunConfig& cfg, const fs::path& bench, const fs::path& checkpoint, const fs::path& out);

struct RobustnessRow {
  NoiseKind kind;
  double level;
  double accuracy;
  double recall;
};
/// robustness.csv with `noise,level,acc,recall`, 3 kinds x 4 levels.
std::vector<RobustnessRow> robustness(const RunConfig& cfg, const fs::path& bench, const fs::path& checkpoint,
                                      const fs::path& out);

struct GridCell {
  double lambda1;
  double lambda2;
  double accuracy;
  double recall;
};
struct GridResult {
  std::vector<GridCell> cells;
  GridCell best;  // first maximum in sweep order
};
/// grid.csv (81 cells, validation split) and grid_best.csv.
GridResult grid(const RunConfig& cfg, const fs::path& bench, const fs::path& checkpoint, const fs::path& out);

/// One line of 12 numbers per coding in, `emotion,intensity,confidence` out.
std::string annotate_text(std::string_view codings, const fuzzy::RuleBank& bank, const fuzzy::IntensityCurves& curves,
                          const fuzzy::FuzzyConfig& fcfg);
void annotate(const RunConfig& cfg, const fs::path& input, const fs::path& output);

/// The sweep values 0.1, 0.2, ..., 0.9.
std::vector<double> lambda_sweep();

}  // namespace stf2m::cmd
