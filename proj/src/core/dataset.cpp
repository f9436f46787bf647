#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dgpic {

const char* to_string(TaskId t) {
  switch (t) {
    case TaskId::reconstruction: return "reconstruction";
    case TaskId::denoising: return "denoising";
    case TaskId::registration: return "registration";
  }
  return "?";
}

TaskId task_from_string(const std::string& s) {
  if (s == "reconstruction") return TaskId::reconstruction;
  if (s == "denoising") return TaskId::denoising;
  if (s == "registration") return TaskId::registration;
  throw_invalid_input("unknown task: " + s);
}

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

const std::vector<DomainStyle>& builtin_styles() {
  static const std::vector<DomainStyle> styles = {
      {"clean-dense", DensityProfile::uniform, 0.0, 0.0, 1.0, 1.0},
      {"clean-clustered", DensityProfile::surface_clustered, 0.0, 0.0, 0.65, 0.85},
      {"scan-noisy-occluded", DensityProfile::uniform, 0.04, 0.3, 0.9, 1.0},
      {"low-res-jittered", DensityProfile::uniform, 0.015, 0.0, 0.3, 0.5},
  };
  return styles;
}

const DomainStyle& style_by_name(const std::string& name) {
  for (const auto& s : builtin_styles())
    if (s.name == name) return s;
  throw_invalid_input("unknown domain style: " + name);
}

const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::cylinder: return "cylinder";
    case ShapeKind::table_composite: return "table_composite";
    case ShapeKind::chair_composite: return "chair_composite";
  }
  return "?";
}

ShapeKind shape_from_string(const std::string& s) {
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "box") return ShapeKind::box;
  if (s == "cylinder") return ShapeKind::cylinder;
  if (s == "table_composite") return ShapeKind::table_composite;
  if (s == "chair_composite") return ShapeKind::chair_composite;
  throw_invalid_input("unknown shape kind: " + s);
}

namespace {

// Uniform sample on the surface of an axis-aligned box, faces weighted by area.
Eigen::Vector3d box_surface_point(Rng& rng, const Eigen::Vector3d& half) {
  double ax = half.y() * half.z();  // +-x faces
  double ay = half.x() * half.z();
  double az = half.x() * half.y();
  double u = rng.uniform() * (ax + ay + az);
  int axis = (u < ax) ? 0 : (u < ax + ay ? 1 : 2);
  double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  Eigen::Vector3d p;
  p[axis] = sign * half[axis];
  int a = (axis + 1) % 3, b = (axis + 2) % 3;
  p[a] = rng.uniform(-half[a], half[a]);
  p[b] = rng.uniform(-half[b], half[b]);
  return p;
}

struct BoxPart {
  Eigen::Vector3d center;
  Eigen::Vector3d half;
  double area() const {
    return 8.0 * (half.y() * half.z() + half.x() * half.z() + half.x() * half.y());
  }
};

PointCloud sample_box_parts(const std::vector<BoxPart>& parts, int n, Rng& rng) {
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& part : parts) {
    total += part.area();
    cumulative.push_back(total);
  }
  PointCloud out;
  out.points.resize(3, n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    size_t j = std::lower_bound(cumulative.begin(), cumulative.end(), u) -
               cumulative.begin();
    if (j >= parts.size()) j = parts.size() - 1;
    out.points.col(i) = parts[j].center + box_surface_point(rng, parts[j].half);
  }
  return out;
}

PointCloud raw_sphere(int n, Rng& rng) {
  PointCloud out;
  out.points.resize(3, n);
  // antithetic pairs keep the sample centroid at the origin
  int pairs = n / 2;
  for (int i = 0; i < pairs; ++i) {
    Eigen::Vector3d v = rng.unit_vector();
    out.points.col(2 * i) = v;
    out.points.col(2 * i + 1) = -v;
  }
  if (n % 2 == 1) out.points.col(n - 1) = rng.unit_vector();
  return out;
}

PointCloud raw_cylinder(int n, Rng& rng) {
  const double radius = 0.4, half_h = 0.5;
  const double lateral = 2.0 * M_PI * radius * 2.0 * half_h;
  const double cap = M_PI * radius * radius;
  const double total = lateral + 2.0 * cap;
  PointCloud out;
  out.points.resize(3, n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    if (u < lateral) {
      double z = rng.uniform(-half_h, half_h);
      out.points.col(i) = Eigen::Vector3d(radius * std::cos(theta),
                                          radius * std::sin(theta), z);
    } else {
      double r = radius * std::sqrt(rng.uniform());
      double z = (u < lateral + cap) ? half_h : -half_h;
      out.points.col(i) =
          Eigen::Vector3d(r * std::cos(theta), r * std::sin(theta), z);
    }
  }
  return out;
}

std::vector<BoxPart> table_parts(Rng& rng) {
  double w = rng.uniform(0.45, 0.55);   // top half-width
  double d = rng.uniform(0.3, 0.4);     // top half-depth
  double leg_h = rng.uniform(0.45, 0.6);
  double top_t = 0.03, leg_s = 0.035;
  std::vector<BoxPart> parts;
  parts.push_back({{0, 0, leg_h + top_t}, {w, d, top_t}});
  double lx = w - leg_s, ly = d - leg_s;
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      parts.push_back({{sx * lx, sy * ly, leg_h / 2}, {leg_s, leg_s, leg_h / 2}});
  return parts;
}

std::vector<BoxPart> chair_parts(Rng& rng) {
  double w = rng.uniform(0.25, 0.32);   // seat half-width
  double d = rng.uniform(0.25, 0.32);   // seat half-depth
  double leg_h = rng.uniform(0.35, 0.45);
  double back_h = rng.uniform(0.4, 0.55);
  double seat_t = 0.03, leg_s = 0.03, back_t = 0.025;
  std::vector<BoxPart> parts;
  parts.push_back({{0, 0, leg_h + seat_t}, {w, d, seat_t}});
  parts.push_back({{0, -d + back_t, leg_h + 2 * seat_t + back_h}, {w, back_t, back_h}});
  double lx = w - leg_s, ly = d - leg_s;
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      parts.push_back({{sx * lx, sy * ly, leg_h / 2}, {leg_s, leg_s, leg_h / 2}});
  return parts;
}

}  // namespace

namespace detail {

// Pre-normalization surface samples; exposed so tests can check surface
// membership against the shape definition.
PointCloud raw_primitive(ShapeKind kind, int n, uint64_t seed) {
  Rng rng(derive_seed(seed, {hash_string("primitive"), static_cast<uint64_t>(kind)}));
  switch (kind) {
    case ShapeKind::sphere: return raw_sphere(n, rng);
    case ShapeKind::box: {
      std::vector<BoxPart> parts = {{{0, 0, 0}, {0.5, 0.4, 0.3}}};
      return sample_box_parts(parts, n, rng);
    }
    case ShapeKind::cylinder: return raw_cylinder(n, rng);
    case ShapeKind::table_composite: {
      auto parts = table_parts(rng);
      return sample_box_parts(parts, n, rng);
    }
    case ShapeKind::chair_composite: {
      auto parts = chair_parts(rng);
      return sample_box_parts(parts, n, rng);
    }
  }
  throw_invalid_input("unknown shape kind");
}

}  // namespace detail

PointCloud generate_primitive(ShapeKind kind, int n, uint64_t seed) {
  if (n < 64) throw_invalid_input("generate_primitive: n must be >= 64");
  return normalize_unit_sphere(detail::raw_primitive(kind, n, seed));
}

namespace {

std::vector<int> resample_indices(const PointCloud& cloud, const DomainStyle& style,
                                  int n_target, Rng& rng) {
  const int n = cloud.n();
  if (n_target == n) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (n_target > n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = n; i < n_target; ++i)
      idx.push_back(static_cast<int>(rng.uniform_below(n)));
    return idx;
  }
  std::vector<double> weight(n, 1.0);
  if (style.density_profile == DensityProfile::surface_clustered) {
    const int n_anchors = 6;
    const double tau = 0.35;
    std::vector<Eigen::Vector3d> anchors;
    for (int a = 0; a < n_anchors; ++a)
      anchors.push_back(cloud.points.col(rng.uniform_below(n)));
    for (int i = 0; i < n; ++i) {
      double w = 0.0;
      for (const auto& anchor : anchors)
        w += std::exp(-(cloud.points.col(i) - anchor).squaredNorm() / (2 * tau * tau));
      weight[i] = w + 1e-9;
    }
  }
  // weighted sampling without replacement (Efraimidis-Spirakis keys)
  std::vector<std::pair<double, int>> keys(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    keys[i] = {std::log(u) / weight[i], i};
  }
  std::partial_sort(keys.begin(), keys.begin() + n_target, keys.end(),
                    [](auto& a, auto& b) { return a.first > b.first; });
  std::vector<int> idx(n_target);
  for (int i = 0; i < n_target; ++i) idx[i] = keys[i].second;
  std::sort(idx.begin(), idx.end());
  return idx;
}

PointCloud select_columns(const PointCloud& cloud, const std::vector<int>& idx) {
  PointCloud out;
  out.points.resize(3, static_cast<Eigen::Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out.points.col(i) = cloud.points.col(idx[i]);
  return out;
}

PointCloud pad_trim(const PointCloud& cloud, int n_target) {
  const int n = cloud.n();
  if (n == n_target) return cloud;
  PointCloud out;
  out.points.resize(3, n_target);
  if (n > n_target) {
    for (int i = 0; i < n_target; ++i)
      out.points.col(i) = cloud.points.col(static_cast<int>(
          static_cast<int64_t>(i) * n / n_target));
  } else {
    for (int i = 0; i < n_target; ++i) out.points.col(i) = cloud.points.col(i % n);
  }
  return out;
}

}  // namespace

PointCloud stylize(const PointCloud& cloud, const DomainStyle& style,
                   uint64_t seed, int out_points) {
  if (style.noise_sigma < 0.0) throw_invalid_input("style noise_sigma < 0");
  if (style.occlusion_fraction < 0.0 || style.occlusion_fraction >= 0.5)
    throw_invalid_input("style occlusion_fraction out of [0, 0.5)");
  if (cloud.n() < 1) throw_invalid_input("stylize: empty cloud");

  Rng rng(derive_seed(seed, {hash_string("stylize"), hash_string(style.name)}));

  // resolution jitter
  double factor = rng.uniform(style.jitter_lo, style.jitter_hi);
  int n_target = std::max(32, static_cast<int>(std::lround(factor * cloud.n())));
  PointCloud current = select_columns(cloud, resample_indices(cloud, style, n_target, rng));

  // occlusion: drop the top fraction along a random direction
  if (style.occlusion_fraction > 0.0) {
    Eigen::Vector3d dir = rng.unit_vector();
    const int n = current.n();
    int n_drop = static_cast<int>(std::lround(style.occlusion_fraction * n));
    if (n_drop > 0 && n_drop < n) {
      std::vector<std::pair<double, int>> proj(n);
      for (int i = 0; i < n; ++i) proj[i] = {current.points.col(i).dot(dir), i};
      std::nth_element(proj.begin(), proj.begin() + (n - n_drop), proj.end());
      std::vector<int> keep;
      keep.reserve(n - n_drop);
      for (int i = 0; i < n - n_drop; ++i) keep.push_back(proj[i].second);
      std::sort(keep.begin(), keep.end());
      current = select_columns(current, keep);
    }
  }

  if (style.noise_sigma > 0.0) {
    for (int i = 0; i < current.n(); ++i)
      for (int a = 0; a < 3; ++a)
        current.points(a, i) += style.noise_sigma * rng.normal();
  }

  current = normalize_unit_sphere(current);
  return pad_trim(current, out_points);
}

SamplePair make_reconstruction_pair(const PointCloud& cloud, int sparse_count,
                                    uint64_t seed) {
  const int n = cloud.n();
  if (sparse_count < 8) throw_invalid_input("make_reconstruction_pair: sparse_count < 8");
  if (sparse_count > n)
    throw_invalid_input("make_reconstruction_pair: sparse_count exceeds cloud size");
  std::vector<int> idx = farthest_point_sample(cloud, sparse_count, seed);
  SamplePair pair;
  pair.task = TaskId::reconstruction;
  pair.target = cloud;
  pair.input.points.resize(3, n);
  for (int i = 0; i < n; ++i)
    pair.input.points.col(i) = cloud.points.col(idx[i % sparse_count]);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "sparse_count=%d", sparse_count);
  pair.generator_params = buf;
  return pair;
}

SamplePair make_denoising_pair(const PointCloud& cloud, double sigma, uint64_t seed) {
  if (sigma < 0.0) throw_invalid_input("make_denoising_pair: sigma < 0");
  Rng rng(derive_seed(seed, {hash_string("denoise")}));
  SamplePair pair;
  pair.task = TaskId::denoising;
  pair.target = cloud;
  pair.input = cloud;
  for (int i = 0; i < pair.input.n(); ++i)
    for (int a = 0; a < 3; ++a) pair.input.points(a, i) += sigma * rng.normal();
  pair.generator_params = "sigma=" + format_double(sigma);
  return pair;
}

SamplePair make_registration_pair(const PointCloud& cloud, double max_angle,
                                  uint64_t seed) {
  RotationSpec rot = random_rotation(derive_seed(seed, {hash_string("register")}), max_angle);
  SamplePair pair;
  pair.task = TaskId::registration;
  pair.target = cloud;
  pair.input = apply_rotation(cloud, rot);
  pair.generator_params = "max_angle=" + format_double(max_angle);
  return pair;
}

AugmentDraw draw_augment(const AugmentParams& params, uint64_t seed) {
  Rng rng(derive_seed(seed, {hash_string("augment")}));
  AugmentDraw draw;
  if (params.max_angle > 0.0) {
    draw.rotation.axis = rng.unit_vector();
    draw.rotation.angle = rng.uniform(0.0, params.max_angle);
  } else {
    draw.rotation.axis = Eigen::Vector3d::UnitZ();
    draw.rotation.angle = 0.0;
  }
  draw.scale = rng.uniform(params.scale_lo, params.scale_hi);
  draw.jitter_seed = rng.next_u64();
  return draw;
}

SamplePair augment(const SamplePair& pair, const AugmentParams& params, uint64_t seed) {
  AugmentDraw draw = draw_augment(params, seed);
  Eigen::Matrix3d r = draw.rotation.matrix();
  SamplePair out = pair;
  out.target.points = draw.scale * (r * pair.target.points);
  out.input.points = draw.scale * (r * pair.input.points);
  if (params.jitter_sigma > 0.0) {
    Rng jitter(draw.jitter_seed);
    for (int i = 0; i < out.input.n(); ++i)
      for (int a = 0; a < 3; ++a)
        out.input.points(a, i) += params.jitter_sigma * jitter.normal();
  }
  return out;
}

void BenchmarkConfig::validate() const {
  if (sources.size() < 2) throw_invalid_input("benchmark needs >= 2 source styles");
  if (target.empty()) throw_invalid_input("benchmark needs a target style");
  for (const auto& s : sources) {
    if (s == target)
      throw_invalid_input("target style '" + target + "' collides with a source style");
    style_by_name(s);
  }
  style_by_name(target);
  std::vector<std::string> uniq = sources;
  std::sort(uniq.begin(), uniq.end());
  if (std::adjacent_find(uniq.begin(), uniq.end()) != uniq.end())
    throw_invalid_input("duplicate source style");
  if (tasks.empty()) throw_invalid_input("benchmark needs >= 1 task");
  if (train_per_domain_task < 1 || test_per_domain_task < 1)
    throw_invalid_input("per-domain-task sample counts must be >= 1");
  if (sparse_count < 8 || sparse_count > n_points)
    throw_invalid_input("sparse_count out of [8, n_points]");
}

std::vector<const SamplePair*> DomainDataset::task_pairs(TaskId t) const {
  std::vector<const SamplePair*> out;
  for (const auto& p : pairs)
    if (p.task == t) out.push_back(&p);
  return out;
}

const DomainDataset& Benchmark::find(const std::string& domain, Split split) const {
  for (const auto& ds : datasets)
    if (ds.style.name == domain && ds.split == split) return ds;
  throw_data("benchmark has no dataset for domain '" + domain + "' split " +
             to_string(split));
}

Benchmark build_benchmark(const BenchmarkConfig& config) {
  config.validate();
  static const ShapeKind kinds[] = {ShapeKind::sphere, ShapeKind::box,
                                    ShapeKind::cylinder, ShapeKind::table_composite,
                                    ShapeKind::chair_composite};

  std::vector<std::string> domains = config.sources;
  domains.push_back(config.target);

  Benchmark bench;
  uint64_t next_id = 0;
  for (const auto& domain : domains) {
    const DomainStyle& style = style_by_name(domain);
    for (Split split : {Split::train, Split::test}) {
      DomainDataset ds;
      ds.style = style;
      ds.split = split;
      int per = split == Split::train ? config.train_per_domain_task
                                      : config.test_per_domain_task;
      struct Slot {
        TaskId task;
        int idx;
        uint64_t sample_id;
      };
      std::vector<Slot> slots;
      for (TaskId task : config.tasks)
        for (int idx = 0; idx < per; ++idx) slots.push_back({task, idx, next_id++});
      ds.pairs.resize(slots.size());

      parallel_for(static_cast<int>(slots.size()), [&](int begin, int end) {
        for (int s = begin; s < end; ++s) {
          const Slot& slot = slots[s];
          uint64_t base = derive_seed(
              config.seed,
              {hash_string(domain), static_cast<uint64_t>(slot.task),
               static_cast<uint64_t>(split), static_cast<uint64_t>(slot.idx)});
          ShapeKind kind = kinds[slot.idx % 5];
          PointCloud cloud = generate_primitive(kind, config.n_points,
                                                derive_seed(base, {1}));
          cloud = stylize(cloud, style, derive_seed(base, {2}), config.n_points);
          SamplePair pair;
          switch (slot.task) {
            case TaskId::reconstruction:
              pair = make_reconstruction_pair(cloud, config.sparse_count,
                                              derive_seed(base, {3}));
              break;
            case TaskId::denoising:
              pair = make_denoising_pair(cloud, config.noise_sigma,
                                         derive_seed(base, {3}));
              break;
            case TaskId::registration:
              pair = make_registration_pair(cloud, config.max_angle,
                                            derive_seed(base, {3}));
              break;
          }
          if (config.augment)
            pair = augment(pair, config.augment_params, derive_seed(base, {4}));
          pair.domain = domain;
          pair.sample_id = slot.sample_id;
          pair.generator_params = std::string("kind=") + to_string(kind) + ";" +
                                  pair.generator_params + ";base_seed=" +
                                  std::to_string(base);
          ds.pairs[s] = std::move(pair);
        }
      });
      bench.datasets.push_back(std::move(ds));
    }
  }
  return bench;
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw_data("cannot write " + path.string());
  for (int i = 0; i < cloud.n(); ++i)
    out << format_double(cloud.points(0, i)) << ' '
        << format_double(cloud.points(1, i)) << ' '
        << format_double(cloud.points(2, i)) << '\n';
  if (!out) throw_data("write failed for " + path.string());
}

PointCloud load_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open cloud file " + path.string());
  std::vector<Eigen::Vector3d> pts;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* s = line.c_str();
    char* end = nullptr;
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) {
      p[a] = std::strtod(s, &end);
      if (end == s)
        throw_data(path.string() + ":" + std::to_string(line_no) +
                   ": malformed coordinate");
      s = end;
    }
    while (*s == ' ') ++s;
    if (*s != '\0')
      throw_data(path.string() + ":" + std::to_string(line_no) + ": trailing junk");
    pts.push_back(p);
  }
  if (pts.empty()) throw_data(path.string() + ": empty cloud file");
  PointCloud cloud;
  cloud.points.resize(3, static_cast<Eigen::Index>(pts.size()));
  for (size_t i = 0; i < pts.size(); ++i) cloud.points.col(i) = pts[i];
  return cloud;
}

namespace {

std::string cloud_file_name(const DomainDataset& ds, const SamplePair& pair,
                            const char* role) {
  std::ostringstream name;
  name << ds.style.name << '_' << to_string(ds.split) << '_' << pair.sample_id
       << '_' << role << ".xyz";
  return name.str();
}

}  // namespace

void save_dataset(const DomainDataset& ds, const std::filesystem::path& manifest_path,
                  const std::filesystem::path& cloud_dir) {
  std::filesystem::create_directories(cloud_dir);
  std::filesystem::create_directories(manifest_path.parent_path());
  std::ofstream out(manifest_path);
  if (!out) throw_data("cannot write manifest " + manifest_path.string());
  out << "dgpic-manifest/1\n";
  out << "domain " << ds.style.name << '\n';
  out << "split " << to_string(ds.split) << '\n';
  out << "count " << ds.pairs.size() << '\n';
  std::filesystem::path rel_dir =
      std::filesystem::relative(cloud_dir, manifest_path.parent_path());
  for (const auto& pair : ds.pairs) {
    std::string in_name = cloud_file_name(ds, pair, "in");
    std::string tgt_name = cloud_file_name(ds, pair, "tgt");
    save_xyz(pair.input, cloud_dir / in_name);
    save_xyz(pair.target, cloud_dir / tgt_name);
    out << to_string(pair.task) << '\t' << pair.sample_id << '\t'
        << (rel_dir / in_name).generic_string() << '\t'
        << (rel_dir / tgt_name).generic_string() << '\t'
        << (pair.generator_params.empty() ? "-" : pair.generator_params) << '\n';
  }
  if (!out) throw_data("write failed for manifest " + manifest_path.string());
}

DomainDataset load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw_data("cannot open manifest " + manifest_path.string());
  auto fail = [&](int line_no, const std::string& msg) {
    throw_data(manifest_path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::string line;
  int line_no = 0;
  auto next_line = [&]() -> std::string& {
    if (!std::getline(in, line)) fail(line_no + 1, "unexpected end of manifest");
    ++line_no;
    return line;
  };

  if (next_line() != "dgpic-manifest/1")
    fail(line_no, "bad or unsupported manifest version (want dgpic-manifest/1)");

  DomainDataset ds;
  size_t count = 0;
  {
    std::istringstream hdr(next_line());
    std::string key, value;
    if (!(hdr >> key >> value) || key != "domain") fail(line_no, "expected 'domain <name>'");
    ds.style = style_by_name(value);
  }
  {
    std::istringstream hdr(next_line());
    std::string key, value;
    if (!(hdr >> key >> value) || key != "split") fail(line_no, "expected 'split <name>'");
    if (value == "train") ds.split = Split::train;
    else if (value == "test") ds.split = Split::test;
    else fail(line_no, "bad split: " + value);
  }
  {
    std::istringstream hdr(next_line());
    std::string key;
    if (!(hdr >> key >> count) || key != "count") fail(line_no, "expected 'count <n>'");
  }

  std::filesystem::path base = manifest_path.parent_path();
  for (size_t r = 0; r < count; ++r) {
    std::string& rec = next_line();
    std::vector<std::string> fields;
    size_t pos = 0;
    while (true) {
      size_t tab = rec.find('\t', pos);
      fields.push_back(rec.substr(pos, tab == std::string::npos ? tab : tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (fields.size() != 5) fail(line_no, "expected 5 tab-separated fields");
    SamplePair pair;
    pair.task = task_from_string(fields[0]);
    try {
      pair.sample_id = std::stoull(fields[1]);
    } catch (const std::exception&) {
      fail(line_no, "bad sample_id: " + fields[1]);
    }
    std::filesystem::path in_path = base / fields[2];
    std::filesystem::path tgt_path = base / fields[3];
    if (!std::filesystem::exists(in_path))
      throw_data("manifest " + manifest_path.string() + ": sample " + fields[1] +
                 " references missing cloud file " + in_path.string());
    if (!std::filesystem::exists(tgt_path))
      throw_data("manifest " + manifest_path.string() + ": sample " + fields[1] +
                 " references missing cloud file " + tgt_path.string());
    pair.input = load_xyz(in_path);
    pair.target = load_xyz(tgt_path);
    pair.domain = ds.style.name;
    pair.generator_params = fields[4] == "-" ? "" : fields[4];
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

}  // namespace dgpic
