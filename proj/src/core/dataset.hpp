#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "core/geometry.hpp"

namespace dgpic {

enum class TaskId { reconstruction, denoising, registration };
const char* to_string(TaskId t);
TaskId task_from_string(const std::string& s);

enum class DensityProfile { uniform, surface_clustered };

struct DomainStyle {
  std::string name;
  DensityProfile density_profile = DensityProfile::uniform;
  double noise_sigma = 0.0;          // fraction of unit radius
  double occlusion_fraction = 0.0;   // half-space cut, < 0.5
  double jitter_lo = 1.0;            // resampling factor range
  double jitter_hi = 1.0;
};

// The four built-in styles stand in for the synthetic/real dataset axes:
// clean-dense, clean-clustered, scan-noisy-occluded, low-res-jittered.
const std::vector<DomainStyle>& builtin_styles();
const DomainStyle& style_by_name(const std::string& name);

enum class ShapeKind { sphere, box, cylinder, table_composite, chair_composite };
const char* to_string(ShapeKind k);
ShapeKind shape_from_string(const std::string& s);

// n surface samples of the shape, normalized to the unit sphere.
PointCloud generate_primitive(ShapeKind kind, int n, uint64_t seed);

// Resolution jitter -> occlusion cut -> Gaussian jitter -> renormalize ->
// pad/trim to out_points.
PointCloud stylize(const PointCloud& cloud, const DomainStyle& style,
                   uint64_t seed, int out_points = 1024);

enum class Split { train, test };
const char* to_string(Split s);

struct SamplePair {
  PointCloud input;
  PointCloud target;
  std::string domain;
  TaskId task = TaskId::reconstruction;
  uint64_t sample_id = 0;
  std::string generator_params;  // key=value;... record for the manifest
};

SamplePair make_reconstruction_pair(const PointCloud& cloud, int sparse_count,
                                    uint64_t seed);
SamplePair make_denoising_pair(const PointCloud& cloud, double sigma, uint64_t seed);
SamplePair make_registration_pair(const PointCloud& cloud, double max_angle,
                                  uint64_t seed);

struct AugmentParams {
  double max_angle = 10.0 * M_PI / 180.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double jitter_sigma = 0.01;  // input only
};

struct AugmentDraw {
  RotationSpec rotation;
  double scale = 1.0;
  uint64_t jitter_seed = 0;
};

// Split out so tests can replay the exact drawn transform.
AugmentDraw draw_augment(const AugmentParams& params, uint64_t seed);
SamplePair augment(const SamplePair& pair, const AugmentParams& params, uint64_t seed);

struct BenchmarkConfig {
  std::vector<std::string> sources;
  std::string target;
  std::vector<TaskId> tasks{TaskId::reconstruction, TaskId::denoising,
                            TaskId::registration};
  int train_per_domain_task = 200;
  int test_per_domain_task = 50;
  int n_points = 1024;
  int sparse_count = 128;       // reconstruction input size
  double noise_sigma = 0.05;    // denoising corruption
  double max_angle = M_PI / 4;  // registration corruption
  bool augment = true;
  AugmentParams augment_params;
  uint64_t seed = 7;

  void validate() const;
};

struct DomainDataset {
  DomainStyle style;
  Split split = Split::train;
  std::vector<SamplePair> pairs;  // all tasks, interleaved

  std::vector<const SamplePair*> task_pairs(TaskId t) const;
};

struct Benchmark {
  std::vector<DomainDataset> datasets;  // (sources + target) x (train, test)

  const DomainDataset& find(const std::string& domain, Split split) const;
};

Benchmark build_benchmark(const BenchmarkConfig& config);

// One manifest per DomainDataset; clouds as .xyz files under cloud_dir.
// Round trips are bit-exact.
void save_dataset(const DomainDataset& ds, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& cloud_dir);
DomainDataset load_dataset(const std::filesystem::path& manifest_path);

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud load_xyz(const std::filesystem::path& path);

}  // namespace dgpic
