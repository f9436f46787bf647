#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <Eigen/Dense>

#include "core/engine.hpp"

using namespace dgpic;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.feature_dim = 16;
  c.patch_count = 8;
  c.patch_size = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.mlp_ratio = 2;
  c.seed = 3;
  return c;
}

PointCloud random_cloud(Rng& rng, int n) {
  PointCloud c;
  c.points.resize(3, n);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) c.points(a, i) = rng.normal();
  return normalize_unit_sphere(c);
}

DomainDataset tiny_domain(const std::string& name, TaskId task, int count,
                          uint64_t seed, int n_points) {
  DomainDataset ds;
  ds.style = style_by_name(name);
  ds.split = Split::train;
  Rng rng(seed);
  static uint64_t next_id = 1000;
  for (int i = 0; i < count; ++i) {
    SamplePair pair;
    pair.task = task;
    pair.domain = name;
    pair.sample_id = next_id++;
    pair.target = random_cloud(rng, n_points);
    pair.input = random_cloud(rng, n_points);
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

std::vector<const DomainPrototype*> ptrs(const std::vector<DomainPrototype>& v) {
  std::vector<const DomainPrototype*> out;
  for (const auto& p : v) out.push_back(&p);
  return out;
}

// hand-built prototypes with direct feature control
std::vector<DomainPrototype> synth_protos(int r, int c, int m, uint64_t seed) {
  Rng rng(seed);
  std::vector<DomainPrototype> protos(r);
  for (int i = 0; i < r; ++i) {
    protos[i].domain = "d" + std::to_string(i);
    protos[i].task = TaskId::reconstruction;
    protos[i].global.resize(c);
    for (int j = 0; j < c; ++j) protos[i].global[j] = rng.normal();
    protos[i].local.resize(c, m);
    for (int mm = 0; mm < m; ++mm)
      for (int j = 0; j < c; ++j) protos[i].local(j, mm) = rng.normal();
    protos[i].sample_count = 1;
  }
  return protos;
}

DistanceProfile random_profile(Rng& rng, int r, int m) {
  DistanceProfile p;
  p.e_global.resize(r);
  p.e_local.resize(r, m);
  for (int i = 0; i < r; ++i) {
    p.e_global[i] = std::abs(rng.normal()) * 3.0;
    for (int mm = 0; mm < m; ++mm) p.e_local(i, mm) = std::abs(rng.normal()) * 3.0;
  }
  return p;
}

}  // namespace

TEST_CASE("estimate_prototypes: one sample equals its own features") {
  ModelConfig config = tiny_config();
  ModelParams model = ModelParams::init(config);
  int n = config.patch_count * config.patch_size;
  DomainDataset ds = tiny_domain("clean-dense", TaskId::denoising, 1, 21, n);

  std::array<uint8_t, 32> hash{};
  hash[0] = 0xab;
  PrototypeStore store = estimate_prototypes({ds}, model, hash, true);
  REQUIRE(store.prototypes.size() == 1);  // only the denoising group is non-empty
  const DomainPrototype& proto = store.prototypes[0];
  CHECK(proto.task == TaskId::denoising);
  CHECK(proto.sample_count == 1);

  TokenizerInput tok =
      tokenize_cloud(ds.pairs[0].input, config.patch_count, config.patch_size);
  TokenMatrix tokens = embed_patches(tok, model, SegmentRole::query_input);
  CHECK(proto.local == tokens.tokens);  // bit-exact
  CHECK(proto.global == global_feature(tokens));
}

TEST_CASE("estimate_prototypes matches the brute-force mean oracle") {
  ModelConfig config = tiny_config();
  ModelParams model = ModelParams::init(config);
  int n = config.patch_count * config.patch_size;
  DomainDataset ds = tiny_domain("clean-dense", TaskId::reconstruction, 5, 22, n);

  PrototypeStore store = estimate_prototypes({ds}, model, {}, true);
  REQUIRE(store.prototypes.size() == 1);

  Eigen::MatrixXd local_sum =
      Eigen::MatrixXd::Zero(config.feature_dim, config.patch_count);
  Eigen::VectorXd global_sum = Eigen::VectorXd::Zero(config.feature_dim);
  for (const auto& pair : ds.pairs) {
    TokenMatrix tokens = embed_patches(
        tokenize_cloud(pair.input, config.patch_count, config.patch_size), model,
        SegmentRole::query_input);
    local_sum += tokens.tokens;
    global_sum += global_feature(tokens);
  }
  CHECK((store.prototypes[0].local - local_sum / 5).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((store.prototypes[0].global - global_sum / 5).cwiseAbs().maxCoeff() < 1e-9);

  // the mean of two samples is their midpoint (so opposite features cancel)
  DomainDataset two = tiny_domain("clean-clustered", TaskId::reconstruction, 2, 31, n);
  PrototypeStore store2 = estimate_prototypes({two}, model, {}, true);
  TokenMatrix f1 = embed_patches(
      tokenize_cloud(two.pairs[0].input, config.patch_count, config.patch_size),
      model, SegmentRole::query_input);
  TokenMatrix f2 = embed_patches(
      tokenize_cloud(two.pairs[1].input, config.patch_count, config.patch_size),
      model, SegmentRole::query_input);
  CHECK((store2.prototypes[0].local - 0.5 * (f1.tokens + f2.tokens))
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  DomainDataset empty;
  empty.style = style_by_name("low-res-jittered");
  CHECK_THROWS_AS(estimate_prototypes({empty}, model, {}, true), DgpicError);
}

TEST_CASE("distance_profile basics and invariance") {
  SUBCASE("zero distance to the matching prototype") {
    auto protos = synth_protos(3, 4, 5, 1);
    DistanceProfile p =
        distance_profile(protos[1].global, protos[1].local, ptrs(protos));
    CHECK(p.e_global[1] == 0.0);
    CHECK(p.e_local.row(1).maxCoeff() == 0.0);
    CHECK(p.e_global[0] > 0.0);
  }
  SUBCASE("scalar hand oracle") {
    std::vector<DomainPrototype> protos(2);
    for (int i = 0; i < 2; ++i) {
      protos[i].global.resize(1);
      protos[i].local.resize(1, 1);
      protos[i].local(0, 0) = 0.0;
    }
    protos[0].global << 1.0;
    protos[1].global << 5.0;
    Eigen::VectorXd f(1);
    f << 3.0;
    Eigen::MatrixXd fl(1, 1);
    fl << 0.0;
    DistanceProfile p = distance_profile(f, fl, ptrs(protos));
    CHECK(p.e_global[0] == doctest::Approx(2.0));
    CHECK(p.e_global[1] == doctest::Approx(2.0));
  }
  SUBCASE("invariant under a common orthogonal transform") {
    const int c = 6, m = 4;
    auto protos = synth_protos(3, c, m, 2);
    Rng rng(3);
    Eigen::VectorXd f(c);
    for (int i = 0; i < c; ++i) f[i] = rng.normal();
    Eigen::MatrixXd fl(c, m);
    for (int mm = 0; mm < m; ++mm)
      for (int i = 0; i < c; ++i) fl(i, mm) = rng.normal();
    DistanceProfile before = distance_profile(f, fl, ptrs(protos));

    Eigen::MatrixXd gauss(c, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < c; ++i) gauss(i, j) = rng.normal();
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ();

    auto rotated = protos;
    for (auto& p : rotated) {
      p.global = q * p.global;
      p.local = q * p.local;
    }
    DistanceProfile after = distance_profile(q * f, q * fl, ptrs(rotated));
    CHECK((after.e_global - before.e_global).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((after.e_local - before.e_local).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("macro and micro coefficients") {
  SUBCASE("closed forms") {
    Eigen::VectorXd one(1);
    one << 4.2;
    CHECK(macro_coefficients(one)(0) == 1.0);

    Eigen::VectorXd equal(3);
    equal << 2, 2, 2;
    Eigen::VectorXd a = macro_coefficients(equal);
    for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Eigen::VectorXd e(2);
    e << 0.0, std::log(2.0);
    Eigen::VectorXd soft = macro_coefficients(e);
    CHECK(soft[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
    CHECK(soft[1] == doctest::Approx(2.0 / 3).epsilon(1e-9));

    Eigen::VectorXd row(2);
    row << 0.0, std::log(3.0);
    Eigen::VectorXd beta = micro_coefficients(row);
    CHECK(beta[0] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(beta[1] == doctest::Approx(0.75).epsilon(1e-9));
  }
  SUBCASE("negated variant flips the weighting") {
    Eigen::VectorXd e(2);
    e << 0.0, std::log(2.0);
    Eigen::VectorXd soft = macro_coefficients(e, true);
    CHECK(soft[0] == doctest::Approx(2.0 / 3).epsilon(1e-9));
    CHECK(soft[1] == doctest::Approx(1.0 / 3).epsilon(1e-9));
  }
  SUBCASE("non-finite input is a numeric error") {
    Eigen::VectorXd bad(2);
    bad << 1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(macro_coefficients(bad), DgpicError);
    CHECK_THROWS_AS(micro_coefficients(bad), DgpicError);
  }
  SUBCASE("normalization holds for random profiles") {
    Rng rng(7);
    for (int t = 0; t < 200; ++t) {
      int r = 1 + static_cast<int>(rng.uniform_below(5));
      int m = 1 + static_cast<int>(rng.uniform_below(9));
      DistanceProfile p = random_profile(rng, r, m);
      ShiftCoefficients c = compute_coefficients(p, 0.5);
      CHECK(std::abs(c.alpha.sum() - 1.0) < 1e-6);
      for (int i = 0; i < r; ++i)
        CHECK(std::abs(c.beta.row(i).sum() - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("select_source_domain") {
  SUBCASE("zero-distance prototype wins") {
    auto protos = synth_protos(3, 4, 5, 4);
    DistanceProfile p =
        distance_profile(protos[2].global, protos[2].local, ptrs(protos));
    CHECK(select_source_domain(p, 0.5) == 2);
  }
  SUBCASE("lambda = 1 reduces to global argmin") {
    DistanceProfile p;
    p.e_global.resize(3);
    p.e_global << 3, 1, 2;
    p.e_local.resize(3, 2);
    p.e_local << 0, 0, 9, 9, 9, 9;
    CHECK(select_source_domain(p, 1.0) == 1);
    CHECK(select_source_domain(p, 0.0) == 0);
  }
  SUBCASE("hand-blended tie resolves to the smallest index") {
    DistanceProfile p;
    p.e_global.resize(2);
    p.e_global << 1, 3;
    p.e_local.resize(2, 2);
    p.e_local << 3, 3, 1, 1;
    CHECK(select_source_domain(p, 0.5) == 0);  // E = (2, 2)
  }
  SUBCASE("argmin is invariant under monotone transforms") {
    Rng rng(8);
    for (int t = 0; t < 50; ++t) {
      DistanceProfile p = random_profile(rng, 4, 3);
      int base = select_source_domain(p, 0.5);
      DistanceProfile shifted = p;
      shifted.e_global.array() += 2.5;  // adds a constant to every blend
      CHECK(select_source_domain(shifted, 0.5) == base);
      DistanceProfile scaled = p;
      scaled.e_global *= 3.0;
      scaled.e_local *= 3.0;  // strictly increasing map of the blend
      CHECK(select_source_domain(scaled, 0.5) == base);
    }
  }
}

TEST_CASE("shift_features identities and convexity") {
  const int c = 6, m = 5, r = 3;
  auto protos = synth_protos(r, c, m, 9);
  Rng rng(10);
  Eigen::MatrixXd f(c, m);
  for (int mm = 0; mm < m; ++mm)
    for (int i = 0; i < c; ++i) f(i, mm) = rng.normal();
  Eigen::VectorXd fg = f.rowwise().maxCoeff();
  DistanceProfile profile = distance_profile(fg, f, ptrs(protos));
  ShiftCoefficients coeffs = compute_coefficients(profile, 0.5);

  SUBCASE("mode none is bit-exact identity") {
    Eigen::MatrixXd out =
        shift_features(f, ptrs(protos), profile, coeffs, ShiftMode::none, 1);
    CHECK(out == f);
  }
  SUBCASE("macro-only with a single domain is the identity") {
    std::vector<DomainPrototype> one{protos[0]};
    DistanceProfile p1 = distance_profile(fg, f, ptrs(one));
    ShiftCoefficients c1 = compute_coefficients(p1, 0.5);
    Eigen::MatrixXd out =
        shift_features(f, ptrs(one), p1, c1, ShiftMode::macro_only, 1);
    CHECK((out - f).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("dual-average-one: fixed point and distance halving") {
    int anchor = select_source_domain(profile, 0.5);
    Eigen::MatrixXd out = shift_features(f, ptrs(protos), profile, coeffs,
                                         ShiftMode::dual_average_one, 1);
    double before = (f - protos[anchor].local).norm();
    double after = (out - protos[anchor].local).norm();
    CHECK(after == doctest::Approx(0.5 * before).epsilon(1e-9));

    Eigen::MatrixXd fixed = protos[anchor].local;
    DistanceProfile pfix = distance_profile(fixed.rowwise().maxCoeff(), fixed,
                                            ptrs(protos));
    ShiftCoefficients cfix = compute_coefficients(pfix, 0.5);
    Eigen::MatrixXd out2 = shift_features(fixed, ptrs(protos), pfix, cfix,
                                          ShiftMode::dual_average_one, 1);
    CHECK((out2 - fixed).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("average modes are exact convex combinations") {
    for (ShiftMode mode : {ShiftMode::random_average_one,
                           ShiftMode::global_only_average_one,
                           ShiftMode::local_only_average_one,
                           ShiftMode::dual_average_one, ShiftMode::dual_average_all}) {
      Eigen::VectorXd mass = coefficient_mass(coeffs, mode);
      for (int mm = 0; mm < m; ++mm) CHECK(mass[mm] == doctest::Approx(1.0).epsilon(1e-9));
    }
    // model E explicitly: F/2 + mean(Z)/2
    Eigen::MatrixXd expect = 0.5 * f;
    for (int i = 0; i < r; ++i) expect += protos[i].local / (2.0 * r);
    Eigen::MatrixXd out = shift_features(f, ptrs(protos), profile, coeffs,
                                         ShiftMode::dual_average_all, 1);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("macro-only matches its closed form") {
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(c, m);
    for (int i = 0; i < r; ++i)
      expect += coeffs.alpha[i] * f + (1.0 - coeffs.alpha[i]) * protos[i].local;
    expect /= r;
    Eigen::MatrixXd out =
        shift_features(f, ptrs(protos), profile, coeffs, ShiftMode::macro_only, 1);
    CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((coefficient_mass(coeffs, ShiftMode::macro_only).array() - 1.0)
              .abs()
              .maxCoeff() < 1e-12);
  }
  SUBCASE("full mode: per-patch locality given fixed coefficients") {
    Eigen::MatrixXd out =
        shift_features(f, ptrs(protos), profile, coeffs, ShiftMode::full, 1);
    Eigen::MatrixXd f2 = f;
    f2.col(2).array() += 5.0;
    Eigen::MatrixXd out2 =
        shift_features(f2, ptrs(protos), profile, coeffs, ShiftMode::full, 1);
    for (int mm = 0; mm < m; ++mm) {
      if (mm == 2) continue;
      CHECK((out2.col(mm) - out.col(mm)).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((out2.col(2) - out.col(2)).cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("full mode mass matches the direct recomputation") {
    Eigen::VectorXd mass = coefficient_mass(coeffs, ShiftMode::full);
    for (int mm = 0; mm < m; ++mm) {
      double expect = 0.0;
      for (int i = 0; i < r; ++i)
        expect += (coeffs.alpha[i] * coeffs.beta(i, mm) +
                   (1 - coeffs.alpha[i]) * (1 - coeffs.beta(i, mm))) /
                  r;
      CHECK(mass[mm] == doctest::Approx(expect).epsilon(1e-12));
      CHECK(mass[mm] <= 1.0 + 1e-12);
    }
  }
  SUBCASE("random-average-one is seed-deterministic and spans domains") {
    Eigen::MatrixXd a = shift_features(f, ptrs(protos), profile, coeffs,
                                       ShiftMode::random_average_one, 5);
    Eigen::MatrixXd b = shift_features(f, ptrs(protos), profile, coeffs,
                                       ShiftMode::random_average_one, 5);
    CHECK(a == b);
    std::set<int> anchors;
    for (uint64_t s = 0; s < 50; ++s) {
      Eigen::MatrixXd out = shift_features(f, ptrs(protos), profile, coeffs,
                                           ShiftMode::random_average_one, s);
      for (int i = 0; i < r; ++i)
        if ((out - 0.5 * (f + protos[i].local)).cwiseAbs().maxCoeff() < 1e-12)
          anchors.insert(i);
    }
    CHECK(anchors.size() == static_cast<size_t>(r));
  }
}

TEST_CASE("select_prompt") {
  const int c = 4, m = 3;
  Rng rng(11);
  std::vector<BankEntry> bank;
  for (int i = 0; i < 5; ++i) {
    BankEntry e;
    e.sample_id = 100 + i;
    e.global.resize(c);
    for (int j = 0; j < c; ++j) e.global[j] = rng.normal();
    e.local.resize(c, m);
    for (int mm = 0; mm < m; ++mm)
      for (int j = 0; j < c; ++j) e.local(j, mm) = rng.normal();
    bank.push_back(std::move(e));
  }

  SUBCASE("exact feature match wins") {
    CHECK(select_prompt(bank[3].global, bank[3].local, bank, 0.5) == 3);
  }
  SUBCASE("single-sample bank always wins") {
    std::vector<BankEntry> solo{bank[2]};
    Eigen::VectorXd far = bank[2].global.array() + 100.0;
    CHECK(select_prompt(far, bank[2].local, solo, 0.5) == 0);
  }
  SUBCASE("matches the exhaustive scan oracle") {
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd fg(c);
      for (int j = 0; j < c; ++j) fg[j] = rng.normal();
      Eigen::MatrixXd fl(c, m);
      for (int mm = 0; mm < m; ++mm)
        for (int j = 0; j < c; ++j) fl(j, mm) = rng.normal();
      const double lambda = 0.5;
      int best = -1;
      double best_d = std::numeric_limits<double>::infinity();
      for (int i = 0; i < static_cast<int>(bank.size()); ++i) {
        double lm = 0;
        for (int mm = 0; mm < m; ++mm)
          lm += (fl.col(mm) - bank[i].local.col(mm)).norm();
        double d = lambda * (fg - bank[i].global).norm() + (1 - lambda) * lm / m;
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      CHECK(select_prompt(fg, fl, bank, lambda) == best);
    }
  }
  SUBCASE("empty bank is a contract error") {
    std::vector<BankEntry> empty;
    CHECK_THROWS_AS(select_prompt(bank[0].global, bank[0].local, empty, 0.5),
                    DgpicError);
  }
}

TEST_CASE("prototype store round trip and failure modes") {
  ModelConfig config = tiny_config();
  ModelParams model = ModelParams::init(config);
  int n = config.patch_count * config.patch_size;
  DomainDataset d1 = tiny_domain("clean-dense", TaskId::reconstruction, 3, 51, n);
  DomainDataset d2 = tiny_domain("clean-clustered", TaskId::reconstruction, 2, 52, n);
  std::array<uint8_t, 32> hash{};
  for (int i = 0; i < 32; ++i) hash[i] = static_cast<uint8_t>(i * 7);
  PrototypeStore store = estimate_prototypes({d1, d2}, model, hash, true);

  auto dir = std::filesystem::temp_directory_path() / "dgpic_test_store";
  std::filesystem::create_directories(dir);
  auto path = dir / "p.dgpc";
  save_prototypes(store, path);
  PrototypeStore back = load_prototypes(path);

  CHECK(back.checkpoint_hash == store.checkpoint_hash);
  CHECK(back.feature_dim == store.feature_dim);
  CHECK(back.patch_count == store.patch_count);
  CHECK(back.per_task == store.per_task);
  REQUIRE(back.prototypes.size() == store.prototypes.size());
  for (size_t i = 0; i < store.prototypes.size(); ++i) {
    CHECK(back.prototypes[i].domain == store.prototypes[i].domain);
    CHECK(back.prototypes[i].task == store.prototypes[i].task);
    CHECK(back.prototypes[i].sample_count == store.prototypes[i].sample_count);
    for (int j = 0; j < back.prototypes[i].global.size(); ++j)
      CHECK(back.prototypes[i].global[j] ==
            static_cast<double>(static_cast<float>(store.prototypes[i].global[j])));
  }
  REQUIRE(back.bank.entries.size() == store.bank.entries.size());

  // save(load(x)) is byte-identical
  auto path2 = dir / "p2.dgpc";
  save_prototypes(back, path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  SUBCASE("CRC catches corruption") {
    std::fstream fix(path, std::ios::in | std::ios::out | std::ios::binary);
    fix.seekp(60);
    char byte = 0x21;
    fix.write(&byte, 1);
    fix.close();
    CHECK_THROWS_WITH_AS(load_prototypes(path), doctest::Contains("CRC"), DgpicError);
  }
  SUBCASE("empty prototype list refuses to save") {
    PrototypeStore empty;
    CHECK_THROWS_AS(save_prototypes(empty, dir / "empty.dgpc"), DgpicError);
  }
}

TEST_CASE("infer pipeline on a tiny model") {
  ModelConfig config = tiny_config();
  ModelParams model = ModelParams::init(config);
  const int n = config.patch_count * config.patch_size;

  DomainDataset d1 = tiny_domain("clean-dense", TaskId::denoising, 3, 61, n);
  DomainDataset d2 = tiny_domain("clean-clustered", TaskId::denoising, 3, 62, n);
  std::array<uint8_t, 32> hash{};
  hash[5] = 9;
  PrototypeStore store = estimate_prototypes({d1, d2}, model, hash, true);

  auto resolve = [&](const std::string& domain, TaskId task,
                     uint64_t sample_id) -> const SamplePair& {
    for (const auto* ds : {&d1, &d2})
      for (const auto& pair : ds->pairs)
        if (pair.domain == domain && pair.task == task && pair.sample_id == sample_id)
          return pair;
    throw_data("missing prompt");
  };

  Rng rng(63);
  PointCloud test_input = random_cloud(rng, n);

  InferOptions options;
  options.mode = ShiftMode::full;
  InferResult full = infer(test_input, TaskId::denoising, model, hash, store,
                           resolve, options);
  CHECK(full.prediction.n() == n);
  CHECK(full.prediction.all_finite());

  SUBCASE("deterministic and mode-independent selection") {
    InferResult again = infer(test_input, TaskId::denoising, model, hash, store,
                              resolve, options);
    CHECK(again.prediction.points == full.prediction.points);

    InferOptions none = options;
    none.mode = ShiftMode::none;
    InferResult base = infer(test_input, TaskId::denoising, model, hash, store,
                             resolve, none);
    CHECK(base.selected_domain == full.selected_domain);
    CHECK(base.selected_prompt == full.selected_prompt);
    CHECK(base.prediction.points != full.prediction.points);
  }
  SUBCASE("stale store is rejected") {
    std::array<uint8_t, 32> other = hash;
    other[0] ^= 1;
    CHECK_THROWS_WITH_AS(infer(test_input, TaskId::denoising, model, other, store,
                               resolve, options),
                         doctest::Contains("stale"), DgpicError);
  }
  SUBCASE("missing task in store is an error") {
    CHECK_THROWS_AS(infer(test_input, TaskId::registration, model, hash, store,
                          resolve, options),
                    DgpicError);
  }
  SUBCASE("model parameters are untouched by inference") {
    auto before = model.values;
    for (int i = 0; i < 10; ++i)
      infer(test_input, TaskId::denoising, model, hash, store, resolve, options);
    CHECK(model.values == before);
  }
}
