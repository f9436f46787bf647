#include "core/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dgpic {

Eigen::Matrix3d RotationSpec::matrix() const {
  Eigen::Vector3d a = axis.normalized();
  double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix3d k;
  k << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Eigen::Matrix3d::Identity() + s * k + (1.0 - c) * (k * k);
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.n() < 1) throw_invalid_input("normalize_unit_sphere: empty cloud");
  if (!cloud.all_finite())
    throw_invalid_input("normalize_unit_sphere: non-finite coordinates");
  Eigen::Vector3d centroid = cloud.points.rowwise().mean();
  Eigen::Matrix3Xd centered = cloud.points.colwise() - centroid;
  double scale = centered.colwise().norm().maxCoeff();
  if (scale < 1e-12)
    throw_invalid_input("normalize_unit_sphere: degenerate cloud, all points coincide");
  return PointCloud{centered / scale};
}

std::vector<int> farthest_point_sample(const PointCloud& cloud, int k, uint64_t seed) {
  const int n = cloud.n();
  if (n < 1) throw_invalid_input("farthest_point_sample: empty cloud");
  if (k < 1 || k > n)
    throw_invalid_input("farthest_point_sample: k out of range");

  std::vector<int> chosen;
  chosen.reserve(k);
  int start = static_cast<int>(seed % static_cast<uint64_t>(n));
  chosen.push_back(start);

  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  int last = start;
  for (int step = 1; step < k; ++step) {
    Eigen::Vector3d c = cloud.points.col(last);
    int best = -1;
    double best_d2 = -1.0;
    for (int i = 0; i < n; ++i) {
      double d2 = (cloud.points.col(i) - c).squaredNorm();
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    chosen.push_back(best);
    min_d2[best] = -1.0;  // never re-selected, keeps ties at smallest index
    last = best;
  }
  return chosen;
}

PatchSet knn_group(const PointCloud& cloud, const std::vector<int>& center_indices, int k) {
  const int n = cloud.n();
  if (k < 1 || k > n) throw_invalid_input("knn_group: k out of range");
  const int m = static_cast<int>(center_indices.size());

  struct Entry {
    Eigen::Vector3d center;
    int center_idx;
    std::vector<int> group;
  };
  std::vector<Entry> entries(m);

  std::vector<std::pair<double, int>> dist(n);
  for (int j = 0; j < m; ++j) {
    int ci = center_indices[j];
    if (ci < 0 || ci >= n) throw_invalid_input("knn_group: center index out of range");
    Eigen::Vector3d c = cloud.points.col(ci);
    for (int i = 0; i < n; ++i)
      dist[i] = {(cloud.points.col(i) - c).squaredNorm(), i};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    entries[j].center = c;
    entries[j].center_idx = ci;
    entries[j].group.resize(k);
    for (int i = 0; i < k; ++i) entries[j].group[i] = dist[i].second;
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.center.x() != b.center.x()) return a.center.x() < b.center.x();
    if (a.center.y() != b.center.y()) return a.center.y() < b.center.y();
    if (a.center.z() != b.center.z()) return a.center.z() < b.center.z();
    return a.center_idx < b.center_idx;
  });

  PatchSet out;
  out.centers.resize(3, m);
  out.groups.resize(m);
  out.center_index.resize(m);
  for (int j = 0; j < m; ++j) {
    out.centers.col(j) = entries[j].center;
    out.groups[j] = std::move(entries[j].group);
    out.center_index[j] = entries[j].center_idx;
  }
  return out;
}

double chamfer_distance(const Eigen::Matrix3Xd& p, const Eigen::Matrix3Xd& g,
                        std::vector<int>* nn_p, std::vector<int>* nn_g) {
  const int np = static_cast<int>(p.cols());
  const int ng = static_cast<int>(g.cols());
  if (np == 0 || ng == 0) throw_invalid_input("chamfer_distance: empty operand");
  if (nn_p) nn_p->resize(np);
  if (nn_g) nn_g->resize(ng);

  std::vector<double> min_g(ng, std::numeric_limits<double>::infinity());
  std::vector<int> arg_g(ng, 0);

  double sum_p = 0.0;
  for (int i = 0; i < np; ++i) {
    Eigen::Vector3d x = p.col(i);
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (int j = 0; j < ng; ++j) {
      double d2 = (g.col(j) - x).squaredNorm();
      if (d2 < best) {
        best = d2;
        best_j = j;
      }
      if (d2 < min_g[j]) {
        min_g[j] = d2;
        arg_g[j] = i;
      }
    }
    sum_p += best;
    if (nn_p) (*nn_p)[i] = best_j;
  }
  double sum_g = std::accumulate(min_g.begin(), min_g.end(), 0.0);
  if (nn_g) *nn_g = arg_g;
  return sum_p / np + sum_g / ng;
}

double chamfer_distance(const PointCloud& p, const PointCloud& g) {
  return chamfer_distance(p.points, g.points);
}

RotationSpec random_rotation(uint64_t seed, double max_angle) {
  if (!(max_angle > 0.0 && max_angle <= M_PI))
    throw_invalid_input("random_rotation: max_angle must be in (0, pi]");
  Rng rng(seed);
  RotationSpec spec;
  spec.axis = rng.unit_vector();
  spec.angle = rng.uniform(0.0, max_angle);
  return spec;
}

PointCloud apply_rotation(const PointCloud& cloud, const RotationSpec& rot,
                          bool inverse) {
  Eigen::Matrix3d r = rot.matrix();
  if (inverse) r.transposeInPlace();
  return PointCloud{r * cloud.points};
}

}  // namespace dgpic
