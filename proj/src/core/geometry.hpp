#pragma once

#include <vector>

#include <Eigen/Core>

#include "core/common.hpp"

namespace dgpic {

// N points as columns of a 3xN matrix, column order is significant.
struct PointCloud {
  Eigen::Matrix3Xd points;

  int n() const { return static_cast<int>(points.cols()); }
  bool all_finite() const { return points.allFinite(); }
};

// M patches over a parent cloud, sorted canonically: lexicographic on
// center coordinates, ties by center index. Patch index m is the positional
// correspondence key used when comparing different samples.
struct PatchSet {
  Eigen::Matrix3Xd centers;              // 3 x M
  std::vector<std::vector<int>> groups;  // M groups of k point indices
  std::vector<int> center_index;         // index of each center in the parent

  int patch_count() const { return static_cast<int>(groups.size()); }
  int patch_size() const { return groups.empty() ? 0 : static_cast<int>(groups[0].size()); }
};

struct RotationSpec {
  Eigen::Vector3d axis;  // unit vector
  double angle = 0.0;    // radians

  Eigen::Matrix3d matrix() const;  // Rodrigues
};

// Center on the centroid and scale so the farthest point sits on the unit
// sphere. Throws on empty or degenerate (all points coincident) clouds.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Greedy farthest point sampling. Start index is seed mod N; each next pick
// maximizes the min distance to the chosen set, ties to the smallest index.
// Returned in selection order.
std::vector<int> farthest_point_sample(const PointCloud& cloud, int k, uint64_t seed);

// Groups the k nearest points (center included) around each given center,
// ties to the smaller index, then sorts patches into canonical order.
PatchSet knn_group(const PointCloud& cloud, const std::vector<int>& center_indices, int k);

// Symmetric mean of squared nearest-neighbor distances:
//   (1/|P|) sum_x min_y |x-y|^2 + (1/|G|) sum_y min_x |y-x|^2
double chamfer_distance(const PointCloud& p, const PointCloud& g);

// Raw-matrix variant; optionally reports per-point nearest indices
// (nn_p[i] = index in g nearest to p
// column i, nn_g likewise), which is what the loss gradient needs.
double chamfer_distance(const Eigen::Matrix3Xd& p, const Eigen::Matrix3Xd& g,
                        std::vector<int>* nn_p = nullptr,
                        std::vector<int>* nn_g = nullptr);

// Axis uniform on the sphere, angle uniform in [0, max_angle].
RotationSpec random_rotation(uint64_t seed, double max_angle);

PointCloud apply_rotation(const PointCloud& cloud, const RotationSpec& rot,
                          bool inverse = false);

}  // namespace dgpic
