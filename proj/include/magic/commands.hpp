#pragma once

// Pipeline stages behind the `magic` subcommands. Every stage reads and
// writes files under the configured work directory.

#include "magic/config.hpp"
#include "magic/metrics.hpp"

#include <exception>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace magic {

namespace files {
inline constexpr const char* kScenes = "scenes.bin";
inline constexpr const char* kEvalScenes = "eval.bin";
inline constexpr const char* kCorpus = "corpus.bin";
inline constexpr const char* kVocab = "vocab.bin";
inline constexpr const char* kPretrained = "pretrained.bin";
inline constexpr const char* kModel = "model.bin";
inline constexpr const char* kDiverged = "model.diverged.bin";
inline constexpr const char* kPretrainCurve = "pretrain_curve.csv";
inline constexpr const char* kLanguageCurve = "language_curve.csv";
inline constexpr const char* kTrainLog = "train_log.csv";
inline constexpr const char* kPredictions = "predictions.jsonl";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kReportText = "report.txt";
inline constexpr const char* kAblationJson = "ablation.json";
inline constexpr const char* kAblationText = "ablation.txt";
}  // namespace files

/// Exit code for an exception: 1 validation, 2 divergence, 3 I/O, 1 otherwise.
int exit_code_for(const std::exception& e);

void cmd_synth(const RunConfig& cfg, std::ostream& log);
void cmd_pretrain(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_generate(const RunConfig& cfg, std::ostream& log);
void cmd_eval(const RunConfig& cfg, std::ostream& log);
void cmd_ablate(const RunConfig& cfg, std::ostream& log);

/// Runs a subcommand by name and maps failures to exit codes, printing the
/// diagnostic to `err`.
int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err);

struct Prediction {
  std::string image_id;
  int caption_index = 0;
  std::string text;
};

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
std::map<std::string, std::vector<std::string>> group_predictions(const std::vector<Prediction>& predictions);

/// Captions for every evaluation scene with the given pool size and rule.
std::vector<Prediction> predict(const EvaluationSet& eval, CaptionModel& model, int N_k, SelectionRule rule,
                                std::uint64_t seed);

std::map<std::string, std::vector<std::string>> references_by_id(const EvaluationSet& eval);

}  // namespace magic
