#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "core/model.hpp"

namespace dgpic {

// Per source domain (and, by default, per task): mean patch tokens and mean
// pooled global feature over the domain's training inputs.
struct DomainPrototype {
  std::string domain;
  std::optional<TaskId> task;  // empty when prototypes pool all tasks
  Eigen::VectorXd global;      // C
  Eigen::MatrixXd local;       // C x M
  uint32_t sample_count = 0;
};

struct DistanceProfile {
  Eigen::VectorXd e_global;  // R
  Eigen::MatrixXd e_local;   // R x M
};

struct ShiftCoefficients {
  Eigen::VectorXd alpha;   // R, sums to 1
  Eigen::MatrixXd beta;    // R x M, each row sums to 1
  double lambda = 0.5;
};

enum class ShiftMode {
  none,
  random_average_one,
  global_only_average_one,
  local_only_average_one,
  dual_average_one,
  dual_average_all,
  macro_only,
  micro_only,
  full,
};

const char* to_string(ShiftMode mode);
ShiftMode shift_mode_from_string(const std::string& s);
const std::vector<ShiftMode>& all_shift_modes();

struct BankEntry {
  uint64_t sample_id = 0;
  Eigen::VectorXd global;
  Eigen::MatrixXd local;
  std::string input_path;   // manifest-relative reference to the stored pair
  std::string target_path;
};

// Cached source-sample features per (domain, task), sorted by sample_id.
struct PromptBank {
  std::map<std::pair<std::string, TaskId>, std::vector<BankEntry>> entries;
};

struct PrototypeStore {
  std::array<uint8_t, 32> checkpoint_hash{};
  int feature_dim = 0;
  int patch_count = 0;
  bool per_task = true;
  std::vector<DomainPrototype> prototypes;
  PromptBank bank;

  // prototypes applicable to a test sample of the given task, one per domain
  std::vector<const DomainPrototype*> for_task(TaskId task) const;
};

// Dedicated post-training pass over training-split inputs. Features come
// from the frozen patch encoder; the bank caches them for prompt selection.
PrototypeStore estimate_prototypes(const std::vector<DomainDataset>& sources,
                                   const ModelParams& model,
                                   const std::array<uint8_t, 32>& checkpoint_hash,
                                   bool per_task = true);

DistanceProfile distance_profile(const Eigen::VectorXd& f_global,
                                 const Eigen::MatrixXd& f_local,
                                 const std::vector<const DomainPrototype*>& protos);

// softmax over raw distances as written; negate flips to softmax(-e)
Eigen::VectorXd macro_coefficients(const Eigen::VectorXd& e_global,
                                   bool negate = false);
Eigen::VectorXd micro_coefficients(const Eigen::VectorXd& e_local_row,
                                   bool negate = false);
ShiftCoefficients compute_coefficients(const DistanceProfile& profile, double lambda,
                                       bool negate = false);

// lambda-blended distance: lambda * e_global + (1-lambda) * mean_m e_local;
// argmin over domains, ties to the smallest index.
int select_source_domain(const DistanceProfile& profile, double lambda);

Eigen::MatrixXd shift_features(const Eigen::MatrixXd& f_local,
                               const std::vector<const DomainPrototype*>& protos,
                               const DistanceProfile& profile,
                               const ShiftCoefficients& coeffs, ShiftMode mode,
                               uint64_t seed);

// Per-column sum of the F and Z coefficients a mode applies; 1.0 means the
// output is an exact convex combination.
Eigen::VectorXd coefficient_mass(const ShiftCoefficients& coeffs, ShiftMode mode);

// argmin over the bank of the same lambda-blended distance, sample-to-sample;
// returns the index into the bank list.
int select_prompt(const Eigen::VectorXd& f_global, const Eigen::MatrixXd& f_local,
                  const std::vector<BankEntry>& bank, double lambda);

struct InferOptions {
  ShiftMode mode = ShiftMode::full;
  double lambda = 0.5;
  bool negate_distances = false;
  uint64_t seed = 0;  // only consumed by random-average-one
};

struct InferResult {
  PointCloud prediction;
  int selected_domain = -1;
  uint64_t selected_prompt = 0;
};

// Resolves the selected prompt's stored pair; the pipeline backs this with
// the loaded source datasets.
using PromptResolver =
    std::function<const SamplePair&(const std::string& domain, TaskId task,
                                    uint64_t sample_id)>;

InferResult infer(const PointCloud& input, TaskId task, const ModelParams& model,
                  const std::array<uint8_t, 32>& model_hash,
                  const PrototypeStore& store, const PromptResolver& resolve,
                  const InferOptions& options);

// Prototype store "DGPC": little-endian, checkpoint hash, prototype records,
// prompt-bank index, trailing CRC32.
void save_prototypes(const PrototypeStore& store, const std::filesystem::path& path);
PrototypeStore load_prototypes(const std::filesystem::path& path);

}  // namespace dgpic
