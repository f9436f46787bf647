// Acceptance suite: runs every acceptance criterion and prints one
// PASS/FAIL line per criterion. Exit code 0 iff all selected criteria pass.
//
//   acceptance [--only SUBSTR] [--skip SUBSTR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "core/engine.hpp"
#include "core/pipeline.hpp"
#include "dgpic.h"

using namespace dgpic;
namespace fs = std::filesystem;

namespace {

struct Criterion {
  std::string name;
  std::function<void(std::string&)> run;  // throws or appends detail on pass
};

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

PointCloud random_cloud(Rng& rng, int n, bool normalize = true) {
  PointCloud c;
  c.points.resize(3, n);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) c.points(a, i) = rng.normal();
  return normalize ? normalize_unit_sphere(c) : c;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), "cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("dgpic_accept_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.feature_dim = 16;
  c.patch_count = 8;
  c.patch_size = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.mlp_ratio = 2;
  c.mask_ratio = 0.7;
  c.seed = 3;
  return c;
}

// ---------------------------------------------------------------------------

void chamfer_oracle_equivalence(std::string& detail) {
  double t0 = now_s();
  Rng rng(2024);
  double max_rel = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    int np = 1 + static_cast<int>(rng.uniform_below(16));
    int ng = 1 + static_cast<int>(rng.uniform_below(16));
    PointCloud p = random_cloud(rng, np, false);
    PointCloud g = random_cloud(rng, ng, false);

    double oracle_p = 0.0, oracle_g = 0.0;
    for (int i = 0; i < np; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < ng; ++j)
        best = std::min(best, (p.points.col(i) - g.points.col(j)).squaredNorm());
      oracle_p += best;
    }
    for (int j = 0; j < ng; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < np; ++i)
        best = std::min(best, (g.points.col(j) - p.points.col(i)).squaredNorm());
      oracle_g += best;
    }
    double oracle = oracle_p / np + oracle_g / ng;
    double got = chamfer_distance(p, g);
    double rel = std::abs(got - oracle) / std::max(oracle, 1e-300);
    max_rel = std::max(max_rel, rel);
  }
  double elapsed = now_s() - t0;
  require(max_rel < 1e-9, "max relative error " + std::to_string(max_rel));
  require(elapsed < 5.0, "took " + std::to_string(elapsed) + " s (budget 5 s)");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max rel %.2e over 500 pairs in %.2f s", max_rel,
                elapsed);
  detail = buf;
}

void gradient_correctness(std::string& detail) {
  double t0 = now_s();
  ModelConfig config = tiny_model_config();
  ModelParams params = ModelParams::init(config);
  Rng rng(41);
  const int n = config.patch_count * config.patch_size;
  TokenizerInput q_in = tokenize_cloud(random_cloud(rng, n), 8, 8);
  TokenizerInput q_tgt = tokenize_cloud(random_cloud(rng, n), 8, 8);
  TokenizerInput p_in = tokenize_cloud(random_cloud(rng, n), 8, 8);
  TokenizerInput p_tgt = tokenize_cloud(random_cloud(rng, n), 8, 8);
  TrainExample example{&q_in, &q_tgt, &p_in, &p_tgt, 140};

  double max_rel = gradient_check(params, example, 1e-5, 220, 7);
  double elapsed = now_s() - t0;
  require(max_rel < 1e-4, "max relative error " + std::to_string(max_rel));
  require(elapsed < 60.0, "took " + std::to_string(elapsed) + " s (budget 60 s)");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max rel %.2e over 220 params in %.2f s",
                max_rel, elapsed);
  detail = buf;
}

void coefficient_normalization(std::string& detail) {
  Rng rng(7);
  double worst_alpha = 0.0, worst_beta = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    int r = 1 + static_cast<int>(rng.uniform_below(6));
    int m = 1 + static_cast<int>(rng.uniform_below(12));
    DistanceProfile profile;
    profile.e_global.resize(r);
    profile.e_local.resize(r, m);
    for (int i = 0; i < r; ++i) {
      profile.e_global[i] = std::abs(rng.normal()) * 4.0;
      for (int mm = 0; mm < m; ++mm)
        profile.e_local(i, mm) = std::abs(rng.normal()) * 4.0;
    }
    ShiftCoefficients coeffs = compute_coefficients(profile, 0.5);
    worst_alpha = std::max(worst_alpha, std::abs(coeffs.alpha.sum() - 1.0));
    for (int i = 0; i < r; ++i)
      worst_beta = std::max(worst_beta, std::abs(coeffs.beta.row(i).sum() - 1.0));
  }
  require(worst_alpha < 1e-6, "alpha sum deviation " + std::to_string(worst_alpha));
  require(worst_beta < 1e-6, "beta row sum deviation " + std::to_string(worst_beta));

  Eigen::VectorXd e(2);
  e << 0.0, std::log(2.0);
  Eigen::VectorXd alpha = macro_coefficients(e);
  require(std::abs(alpha[0] - 1.0 / 3.0) < 1e-9 &&
              std::abs(alpha[1] - 2.0 / 3.0) < 1e-9,
          "softmax(0, ln 2) != (1/3, 2/3)");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "worst alpha dev %.1e, worst beta dev %.1e",
                worst_alpha, worst_beta);
  detail = buf;
}

void shift_mode_identities(std::string& detail) {
  const int c = 12, m = 6, r = 3;
  Rng rng(15);
  std::vector<DomainPrototype> protos(r);
  for (int i = 0; i < r; ++i) {
    protos[i].domain = "d" + std::to_string(i);
    protos[i].global.resize(c);
    protos[i].local.resize(c, m);
    for (int j = 0; j < c; ++j) protos[i].global[j] = rng.normal();
    for (int mm = 0; mm < m; ++mm)
      for (int j = 0; j < c; ++j) protos[i].local(j, mm) = rng.normal();
  }
  std::vector<const DomainPrototype*> pp;
  for (const auto& p : protos) pp.push_back(&p);

  Eigen::MatrixXd f(c, m);
  for (int mm = 0; mm < m; ++mm)
    for (int j = 0; j < c; ++j) f(j, mm) = rng.normal();
  Eigen::VectorXd fg = f.rowwise().maxCoeff();
  DistanceProfile profile = distance_profile(fg, f, pp);
  ShiftCoefficients coeffs = compute_coefficients(profile, 0.5);

  // none: bit exact
  require(shift_features(f, pp, profile, coeffs, ShiftMode::none, 1) == f,
          "mode none is not a bit-exact identity");

  // macro-only with R = 1
  std::vector<const DomainPrototype*> one{&protos[0]};
  DistanceProfile p1 = distance_profile(fg, f, one);
  ShiftCoefficients c1 = compute_coefficients(p1, 0.5);
  Eigen::MatrixXd macro1 = shift_features(f, one, p1, c1, ShiftMode::macro_only, 1);
  require((macro1 - f).cwiseAbs().maxCoeff() < 1e-9, "macro-only R=1 deviates");

  // dual-average-one halves the distance to the anchor
  int anchor = select_source_domain(profile, 0.5);
  Eigen::MatrixXd shifted =
      shift_features(f, pp, profile, coeffs, ShiftMode::dual_average_one, 1);
  double before = (f - protos[anchor].local).norm();
  double after = (shifted - protos[anchor].local).norm();
  require(std::abs(after - 0.5 * before) < 1e-9 * std::max(1.0, before),
          "dual-average-one does not halve the anchor distance");

  // modes A-E are exact convex combinations per column
  for (ShiftMode mode :
       {ShiftMode::random_average_one, ShiftMode::global_only_average_one,
        ShiftMode::local_only_average_one, ShiftMode::dual_average_one,
        ShiftMode::dual_average_all}) {
    Eigen::VectorXd mass = coefficient_mass(coeffs, mode);
    for (int mm = 0; mm < m; ++mm)
      require(std::abs(mass[mm] - 1.0) < 1e-9,
              std::string("mode ") + to_string(mode) + " coefficient sum != 1");
  }
  detail = "none/macro-R1/halving/convexity all within tolerance";
}

void prototype_exactness(std::string& detail) {
  ModelConfig config = tiny_model_config();
  ModelParams model = ModelParams::init(config);
  const int n = config.patch_count * config.patch_size;
  Rng rng(33);

  DomainDataset solo;
  solo.style = style_by_name("clean-dense");
  solo.split = Split::train;
  SamplePair pair;
  pair.task = TaskId::denoising;
  pair.domain = solo.style.name;
  pair.sample_id = 1;
  pair.input = random_cloud(rng, n);
  pair.target = pair.input;
  solo.pairs.push_back(pair);

  PrototypeStore store = estimate_prototypes({solo}, model, {}, true);
  TokenMatrix feats = embed_patches(
      tokenize_cloud(pair.input, config.patch_count, config.patch_size), model,
      SegmentRole::query_input);
  require(store.prototypes.size() == 1, "expected one prototype record");
  require(store.prototypes[0].local == feats.tokens,
          "single-sample local prototype is not bit-exact");
  require(store.prototypes[0].global == global_feature(feats),
          "single-sample global prototype is not bit-exact");

  DomainDataset five;
  five.style = style_by_name("clean-clustered");
  five.split = Split::train;
  Eigen::MatrixXd local_sum = Eigen::MatrixXd::Zero(config.feature_dim,
                                                    config.patch_count);
  Eigen::VectorXd global_sum = Eigen::VectorXd::Zero(config.feature_dim);
  for (int i = 0; i < 5; ++i) {
    SamplePair s;
    s.task = TaskId::reconstruction;
    s.domain = five.style.name;
    s.sample_id = 10 + i;
    s.input = random_cloud(rng, n);
    s.target = s.input;
    TokenMatrix f = embed_patches(
        tokenize_cloud(s.input, config.patch_count, config.patch_size), model,
        SegmentRole::query_input);
    local_sum += f.tokens;
    global_sum += global_feature(f);
    five.pairs.push_back(std::move(s));
  }
  PrototypeStore store5 = estimate_prototypes({five}, model, {}, true);
  require(store5.prototypes.size() == 1, "expected one prototype record");
  double dev_l = (store5.prototypes[0].local - local_sum / 5).cwiseAbs().maxCoeff();
  double dev_g = (store5.prototypes[0].global - global_sum / 5).cwiseAbs().maxCoeff();
  require(dev_l < 1e-9 && dev_g < 1e-9, "5-sample mean deviates from the oracle");
  char buf[96];
  std::snprintf(buf, sizeof(buf), "1-sample bit-exact; 5-sample dev %.1e/%.1e",
                dev_l, dev_g);
  detail = buf;
}

// shared micro pipeline used by the frozen-model and determinism criteria
std::string micro_config_text(const fs::path& out_dir) {
  std::ostringstream cfg;
  cfg << "[benchmark]\n"
         "sources = clean-dense, clean-clustered\n"
         "target = scan-noisy-occluded\n"
         "tasks = reconstruction, denoising\n"
         "train_per_domain_task = 6\n"
         "test_per_domain_task = 2\n"
         "n_points = 64\n"
         "sparse_count = 16\n"
         "seed = 99\n"
         "[model]\n"
         "feature_dim = 16\npatch_count = 8\npatch_size = 8\n"
         "n_blocks = 1\nn_heads = 2\nmlp_ratio = 2\n"
         "batch_size = 4\nepochs = 2\n"
         "[eval]\nmodes = none, full\nseeds = 1\n"
         "[output]\ndir = "
      << out_dir.string() << "\n";
  return cfg.str();
}

void frozen_model_contract(std::string& detail) {
  fs::path dir = fresh_dir("frozen");
  ExperimentConfig config =
      ExperimentConfig::parse_string(micro_config_text(dir), "<frozen>");
  cmd_gen_data(config, false);
  cmd_train(config, 1);
  cmd_estimate_prototypes(config, 1);

  fs::path ckpt = config.checkpoint_path(1);
  auto hash_before = sha256_file(ckpt);

  ModelParams model = load_checkpoint(ckpt);
  PrototypeStore store = load_prototypes(config.prototypes_path(1));
  std::vector<DomainDataset> sources;
  for (const auto& d : config.benchmark.sources)
    sources.push_back(load_dataset(config.manifest_path(d, Split::train)));
  DomainDataset target =
      load_dataset(config.manifest_path(config.benchmark.target, Split::test));

  PromptResolver resolve = [&sources](const std::string& domain, TaskId task,
                                      uint64_t sample_id) -> const SamplePair& {
    for (const auto& ds : sources)
      for (const auto& p : ds.pairs)
        if (p.domain == domain && p.task == task && p.sample_id == sample_id)
          return p;
    throw_data("missing prompt sample");
  };

  InferOptions options;
  options.mode = ShiftMode::full;
  int runs = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const SamplePair& sample = target.pairs[rep % target.pairs.size()];
    InferResult res = infer(sample.input, sample.task, model, hash_before, store,
                            resolve, options);
    require(res.prediction.n() == config.benchmark.n_points,
            "prediction size mismatch");
    ++runs;
  }
  auto hash_after = sha256_file(ckpt);
  require(hash_before == hash_after,
          "checkpoint hash changed across " + std::to_string(runs) + " inferences");
  detail = "checkpoint hash stable across 100 full-mode inferences";
}

void masking_arithmetic(std::string& detail) {
  ModelConfig config = tiny_model_config();
  config.patch_count = 64;
  config.patch_size = 4;
  ModelParams params = ModelParams::init(config);
  Rng rng(8);
  const int n = config.patch_count * config.patch_size;
  auto embed = [&](SegmentRole role) {
    return embed_patches(tokenize_cloud(random_cloud(rng, n), 64, 4), params, role);
  };
  TokenMatrix seq = assemble_icl_sequence(embed(SegmentRole::query_input),
                                          embed(SegmentRole::query_target),
                                          embed(SegmentRole::prompt_input),
                                          embed(SegmentRole::prompt_target));
  TokenMatrix w1 = seq, w2 = seq, w3 = seq;
  size_t at_07 = mask_tokens(w1, 0.7, params, 5).size();
  size_t at_0 = mask_tokens(w2, 0.0, params, 5).size();
  size_t at_1 = mask_tokens(w3, 1.0, params, 5).size();
  require(at_07 == 45, "ratio 0.7 on M=64 masked " + std::to_string(at_07));
  require(at_0 == 0, "ratio 0 masked " + std::to_string(at_0));
  require(at_1 == 64, "ratio 1 masked " + std::to_string(at_1));
  detail = "ceil(0.7*64)=45, 0 and 64 at the extremes";
}

void determinism(std::string& detail) {
  setenv("DGPIC_THREADS", "1", 1);
  fs::path dir_a = fresh_dir("det_a");
  ExperimentConfig config =
      ExperimentConfig::parse_string(micro_config_text(dir_a), "<det>");

  cmd_gen_data(config, false);
  std::string manifest =
      file_bytes(config.manifest_path("clean-dense", Split::train));
  std::string cloud;
  for (const auto& entry :
       fs::directory_iterator(config.data_dir() / "clouds")) {
    cloud = file_bytes(entry.path());
    break;
  }
  cmd_gen_data(config, true);
  require(file_bytes(config.manifest_path("clean-dense", Split::train)) == manifest,
          "gen-data manifest differs between runs");

  cmd_train(config, 1);
  std::string ckpt = file_bytes(config.checkpoint_path(1));
  std::string loss = file_bytes(config.loss_path(1));
  cmd_train(config, 1);
  require(file_bytes(config.checkpoint_path(1)) == ckpt,
          "train checkpoint differs between runs");
  require(file_bytes(config.loss_path(1)) == loss,
          "train loss history differs between runs");

  cmd_estimate_prototypes(config, 1);
  std::ostringstream sink;
  cmd_eval(config, {}, std::nullopt, false, sink);
  std::string results = file_bytes(config.results_path());
  cmd_eval(config, {}, std::nullopt, false, sink);
  require(file_bytes(config.results_path()) == results,
          "eval results differ between runs");
  unsetenv("DGPIC_THREADS");
  detail = "gen-data, train and eval outputs byte-identical on reruns";
}

void e2e_toy_replication(std::string& detail) {
  double t0 = now_s();
  fs::path dir = fresh_dir("e2e");

  std::ostringstream cfg;
  cfg << "[benchmark]\n"
         "sources = clean-dense, clean-clustered, low-res-jittered\n"
         "target = scan-noisy-occluded\n"
         "tasks = reconstruction, denoising, registration\n"
         "train_per_domain_task = 200\n"
         "test_per_domain_task = 50\n"
         "n_points = 1024\n"
         "sparse_count = 128\n"
         "noise_sigma = 0.05\n"
         "max_angle = 0.78539816339744828\n"
         "augment = true\n"
         "seed = 7\n"
         "[model]\n"
         "feature_dim = 128\npatch_count = 16\npatch_size = 64\n"
         "n_blocks = 4\nn_heads = 4\nmlp_ratio = 2\n"
         "mask_ratio = 0.7\nlearning_rate = 0.001\nweight_decay = 0.05\n"
         "batch_size = 16\nepochs = 30\n"
         "[eval]\nmodes = none, full\nlambda = 0.5\nseeds = 1, 2, 3\n"
         "[output]\ndir = "
      << dir.string() << "\n";
  ExperimentConfig config = ExperimentConfig::parse_string(cfg.str(), "<e2e>");

  std::printf("  [e2e] generating corpus...\n");
  std::fflush(stdout);
  cmd_gen_data(config, false);
  std::printf("  [e2e] corpus done at %.1f min; training 3 seeds x 30 epochs...\n",
              (now_s() - t0) / 60);
  std::fflush(stdout);
  cmd_train(config, std::nullopt);
  std::printf("  [e2e] training done at %.1f min; estimating prototypes...\n",
              (now_s() - t0) / 60);
  std::fflush(stdout);
  cmd_estimate_prototypes(config, std::nullopt);
  std::printf("  [e2e] running the ablation grid...\n");
  std::fflush(stdout);
  std::ostringstream console;
  std::vector<EvalRow> rows = cmd_ablate(config, std::nullopt, console);
  std::printf("%s\n", console.str().c_str());

  auto cd = [&rows](const std::string& mode, TaskId task, uint64_t seed) {
    for (const auto& r : rows)
      if (r.mode == mode && r.task == task && r.seed == seed) return r.mean_cd;
    throw std::runtime_error("missing ablation row " + mode);
  };

  const TaskId tasks[3] = {TaskId::reconstruction, TaskId::denoising,
                           TaskId::registration};
  int seeds_with_majority = 0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    int better = 0;
    for (TaskId task : tasks)
      if (cd("full", task, seed) < cd("none", task, seed)) ++better;
    std::printf("  [e2e] seed %llu: full beats none on %d of 3 tasks\n",
                static_cast<unsigned long long>(seed), better);
    if (better >= 2) ++seeds_with_majority;
  }
  int e_not_better = 0;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    double e_cd = cd("dual-average-all", TaskId::denoising, seed);
    double full_cd = cd("full", TaskId::denoising, seed);
    std::printf("  [e2e] seed %llu denoising: model E %.4f vs full %.4f (x1e-3: "
                "%.1f vs %.1f)\n",
                static_cast<unsigned long long>(seed), e_cd, full_cd, e_cd * 1e3,
                full_cd * 1e3);
    if (e_cd >= full_cd) ++e_not_better;
  }

  double minutes = (now_s() - t0) / 60.0;
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  double budget = 45.0 * std::max(1.0, 8.0 / hw);
  std::printf("  [e2e] wall time %.1f min (budget %.0f min for %u hardware "
              "threads; stated budget is 45 min on 8 cores)\n",
              minutes, budget, hw);

  require(seeds_with_majority >= 2,
          "full-vs-none task majority held on only " +
              std::to_string(seeds_with_majority) + " of 3 seeds");
  require(e_not_better >= 2, "model E beat full on denoising in " +
                                 std::to_string(3 - e_not_better) + " of 3 seeds");
  require(minutes < budget, "runtime " + std::to_string(minutes) + " min over budget");

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "majority on %d/3 seeds, E-not-better on %d/3 seeds, %.1f min",
                seeds_with_majority, e_not_better, minutes);
  detail = buf;
}

}  // namespace

int main(int argc, char** argv) {
  std::string only, skip;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) only = argv[++i];
    else if (!std::strcmp(argv[i], "--skip") && i + 1 < argc) skip = argv[++i];
    else {
      std::fprintf(stderr, "usage: acceptance [--only SUBSTR] [--skip SUBSTR]\n");
      return 2;
    }
  }

  std::vector<Criterion> criteria = {
      {"chamfer-oracle-equivalence", chamfer_oracle_equivalence},
      {"gradient-correctness", gradient_correctness},
      {"coefficient-normalization", coefficient_normalization},
      {"shift-mode-identities", shift_mode_identities},
      {"prototype-exactness", prototype_exactness},
      {"frozen-model-contract", frozen_model_contract},
      {"masking-arithmetic", masking_arithmetic},
      {"e2e-toy-replication", e2e_toy_replication},
      {"determinism", determinism},
  };

  int failures = 0, ran = 0;
  for (auto& criterion : criteria) {
    if (!only.empty() && criterion.name.find(only) == std::string::npos) continue;
    if (!skip.empty() && criterion.name.find(skip) != std::string::npos) continue;
    ++ran;
    std::string info;
    try {
      criterion.run(info);
      std::printf("[PASS] %-28s %s\n", criterion.name.c_str(), info.c_str());
    } catch (const std::exception& e) {
      ++failures;
      std::printf("[FAIL] %-28s %s\n", criterion.name.c_str(), e.what());
    }
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
