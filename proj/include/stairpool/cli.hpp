#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stairpool/config.hpp"

namespace stairpool {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;
inline constexpr int kExitModel = 4;

// Output file names inside --out-dir.
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kModelFile = "model.spk";
inline constexpr const char* kPrunedFile = "pruned.spk";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kValScoresFile = "val_scores.csv";
inline constexpr const char* kTeReportFile = "te_report.csv";
inline constexpr const char* kEvalFile = "eval.csv";
inline constexpr const char* kCorrelateFile = "correlate.csv";
inline constexpr const char* kFitFile = "correlate_fit.csv";
inline constexpr const char* kScatterFile = "te_dice_scatter.svg";
inline constexpr const char* kStripFile = "te_distribution.svg";

// Each command appends one step to <out_dir>/manifest.json. A step records
// the full effective config and any input checkpoint, which is enough to
// replay it.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_search(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                std::ostream& log);
void cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
              std::ostream& log);
void cmd_correlate(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);
// Replays every step of a manifest into out_dir. Checkpoints that the
// original run produced inside its own directory are taken from out_dir.
void cmd_rerun(const std::filesystem::path& manifest, const std::filesystem::path& out_dir, std::ostream& log);

// Maps an exception escaping a command to an exit code.
int exit_code_for(const std::exception& e);

// Full command-line entry point: argv[0] is the program name.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace stairpool
