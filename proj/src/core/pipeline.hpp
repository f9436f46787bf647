#pragma once

#include <iosfwd>
#include <optional>

#include "core/engine.hpp"

namespace dgpic {

// Line-oriented `key = value` config with [benchmark], [model], [eval] and
// [output] sections; see README for the full key list.
struct ExperimentConfig {
  BenchmarkConfig benchmark;
  ModelConfig model;
  std::vector<ShiftMode> eval_modes{ShiftMode::none, ShiftMode::full};
  double lambda = 0.5;
  bool negate_distances = false;
  bool prototypes_per_task = true;
  std::vector<uint64_t> seeds{1, 2, 3};
  std::string out_dir = "out";

  static ExperimentConfig parse_file(const std::filesystem::path& path);
  static ExperimentConfig parse_string(const std::string& text,
                                       const std::string& where);
  std::string to_text() const;
  void validate() const;

  std::filesystem::path data_dir() const;
  std::filesystem::path manifest_path(const std::string& domain, Split split) const;
  std::filesystem::path checkpoint_path(uint64_t seed) const;
  std::filesystem::path loss_path(uint64_t seed) const;
  std::filesystem::path prototypes_path(uint64_t seed) const;
  std::filesystem::path results_path() const;
  std::filesystem::path ablation_path() const;
};

struct EvalRow {
  std::string mode;
  TaskId task = TaskId::reconstruction;
  uint64_t seed = 0;
  double mean_cd = 0.0;
  int n_samples = 0;
};

struct EvalAggregate {
  std::string mode;
  TaskId task = TaskId::reconstruction;
  double mean = 0.0;  // over seeds
  double std_dev = 0.0;
  int n_seeds = 0;
};

std::vector<EvalAggregate> aggregate_rows(const std::vector<EvalRow>& rows);

void cmd_gen_data(const ExperimentConfig& config, bool force);
void cmd_train(const ExperimentConfig& config, std::optional<uint64_t> only_seed);
void cmd_estimate_prototypes(const ExperimentConfig& config,
                             std::optional<uint64_t> only_seed);
std::vector<EvalRow> cmd_eval(const ExperimentConfig& config,
                              const std::vector<ShiftMode>& modes,
                              std::optional<uint64_t> only_seed, bool self_check,
                              std::ostream& console);
std::vector<EvalRow> cmd_ablate(const ExperimentConfig& config,
                                std::optional<uint64_t> only_seed,
                                std::ostream& console);

void write_rows_csv(const std::vector<EvalRow>& rows,
                    const std::filesystem::path& path);
std::vector<EvalRow> read_rows_csv(const std::filesystem::path& path);

}  // namespace dgpic
