#include "core/engine.hpp"

#include <algorithm>
#include <cmath>

#include "core/binio.hpp"

namespace dgpic {

const char* to_string(ShiftMode mode) {
  switch (mode) {
    case ShiftMode::none: return "none";
    case ShiftMode::random_average_one: return "random-average-one";
    case ShiftMode::global_only_average_one: return "global-only-average-one";
    case ShiftMode::local_only_average_one: return "local-only-average-one";
    case ShiftMode::dual_average_one: return "dual-average-one";
    case ShiftMode::dual_average_all: return "dual-average-all";
    case ShiftMode::macro_only: return "macro-only";
    case ShiftMode::micro_only: return "micro-only";
    case ShiftMode::full: return "full";
  }
  return "?";
}

const std::vector<ShiftMode>& all_shift_modes() {
  static const std::vector<ShiftMode> modes = {
      ShiftMode::none,           ShiftMode::random_average_one,
      ShiftMode::global_only_average_one, ShiftMode::local_only_average_one,
      ShiftMode::dual_average_one,        ShiftMode::dual_average_all,
      ShiftMode::macro_only,     ShiftMode::micro_only,
      ShiftMode::full,
  };
  return modes;
}

ShiftMode shift_mode_from_string(const std::string& s) {
  for (ShiftMode mode : all_shift_modes())
    if (s == to_string(mode)) return mode;
  std::string valid;
  for (ShiftMode mode : all_shift_modes()) {
    if (!valid.empty()) valid += ", ";
    valid += to_string(mode);
  }
  throw_invalid_input("unknown shift mode '" + s + "' (valid: " + valid + ")");
}

std::vector<const DomainPrototype*> PrototypeStore::for_task(TaskId task) const {
  std::vector<const DomainPrototype*> out;
  for (const auto& p : prototypes) {
    if (per_task) {
      if (p.task && *p.task == task) out.push_back(&p);
    } else {
      out.push_back(&p);
    }
  }
  return out;
}

PrototypeStore estimate_prototypes(const std::vector<DomainDataset>& sources,
                                   const ModelParams& model,
                                   const std::array<uint8_t, 32>& checkpoint_hash,
                                   bool per_task) {
  const ModelConfig& config = model.config;
  PrototypeStore store;
  store.checkpoint_hash = checkpoint_hash;
  store.feature_dim = config.feature_dim;
  store.patch_count = config.patch_count;
  store.per_task = per_task;

  for (const auto& ds : sources) {
    if (ds.pairs.empty())
      throw_contract("estimate_prototypes: empty domain " + ds.style.name);

    // one feature pass per sample; accumulation is in sample order
    struct Feat {
      TaskId task;
      uint64_t sample_id;
      Eigen::VectorXd global;
      Eigen::MatrixXd local;
    };
    std::vector<Feat> feats(ds.pairs.size());
    parallel_for(static_cast<int>(ds.pairs.size()), [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        const SamplePair& pair = ds.pairs[i];
        TokenizerInput tok = tokenize_cloud(pair.input, config.patch_count,
                                            config.patch_size);
        TokenMatrix tokens = embed_patches(tok, model, SegmentRole::query_input);
        feats[i] = {pair.task, pair.sample_id, global_feature(tokens),
                    tokens.tokens};
      }
    });

    auto add_group = [&](std::optional<TaskId> task) {
      Eigen::VectorXd global_sum = Eigen::VectorXd::Zero(config.feature_dim);
      Eigen::MatrixXd local_sum =
          Eigen::MatrixXd::Zero(config.feature_dim, config.patch_count);
      uint32_t count = 0;
      for (const auto& f : feats) {
        if (task && f.task != *task) continue;
        global_sum += f.global;
        local_sum += f.local;
        ++count;
      }
      if (count == 0) return;
      DomainPrototype proto;
      proto.domain = ds.style.name;
      proto.task = task;
      proto.global = global_sum / count;
      proto.local = local_sum / count;
      proto.sample_count = count;
      store.prototypes.push_back(std::move(proto));
    };
    if (per_task) {
      for (TaskId task : {TaskId::reconstruction, TaskId::denoising,
                          TaskId::registration})
        add_group(task);
    } else {
      add_group(std::nullopt);
    }

    for (size_t i = 0; i < feats.size(); ++i) {
      const SamplePair& pair = ds.pairs[i];
      BankEntry entry;
      entry.sample_id = feats[i].sample_id;
      entry.global = feats[i].global;
      entry.local = feats[i].local;
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s_%s_%llu_in.xyz", ds.style.name.c_str(),
                    to_string(ds.split), static_cast<unsigned long long>(pair.sample_id));
      entry.input_path = buf;
      std::snprintf(buf, sizeof(buf), "%s_%s_%llu_tgt.xyz", ds.style.name.c_str(),
                    to_string(ds.split), static_cast<unsigned long long>(pair.sample_id));
      entry.target_path = buf;
      store.bank.entries[{ds.style.name, pair.task}].push_back(std::move(entry));
    }
  }
  for (auto& [key, list] : store.bank.entries)
    std::sort(list.begin(), list.end(),
              [](const BankEntry& a, const BankEntry& b) {
                return a.sample_id < b.sample_id;
              });
  return store;
}

DistanceProfile distance_profile(const Eigen::VectorXd& f_global,
                                 const Eigen::MatrixXd& f_local,
                                 const std::vector<const DomainPrototype*>& protos) {
  if (protos.empty()) throw_contract("distance_profile: no prototypes");
  const int r = static_cast<int>(protos.size());
  const int m = static_cast<int>(f_local.cols());
  DistanceProfile profile;
  profile.e_global.resize(r);
  profile.e_local.resize(r, m);
  for (int i = 0; i < r; ++i) {
    const DomainPrototype& p = *protos[i];
    if (p.global.size() != f_global.size() || p.local.rows() != f_local.rows() ||
        p.local.cols() != f_local.cols())
      throw_contract("distance_profile: feature/prototype shape mismatch");
    profile.e_global[i] = (f_global - p.global).norm();
    for (int mm = 0; mm < m; ++mm)
      profile.e_local(i, mm) = (f_local.col(mm) - p.local.col(mm)).norm();
  }
  return profile;
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  Eigen::VectorXd e = (x.array() - x.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

Eigen::VectorXd macro_coefficients(const Eigen::VectorXd& e_global, bool negate) {
  if (e_global.size() < 1) throw_contract("macro_coefficients: empty input");
  if (!e_global.allFinite()) throw_numeric("macro_coefficients: non-finite distance");
  return softmax(negate ? Eigen::VectorXd(-e_global) : e_global);
}

Eigen::VectorXd micro_coefficients(const Eigen::VectorXd& e_local_row, bool negate) {
  if (e_local_row.size() < 1) throw_contract("micro_coefficients: empty input");
  if (!e_local_row.allFinite())
    throw_numeric("micro_coefficients: non-finite distance");
  return softmax(negate ? Eigen::VectorXd(-e_local_row) : e_local_row);
}

ShiftCoefficients compute_coefficients(const DistanceProfile& profile, double lambda,
                                       bool negate) {
  if (lambda < 0.0 || lambda > 1.0)
    throw_contract("compute_coefficients: lambda out of [0,1]");
  ShiftCoefficients coeffs;
  coeffs.lambda = lambda;
  coeffs.alpha = macro_coefficients(profile.e_global, negate);
  coeffs.beta.resize(profile.e_local.rows(), profile.e_local.cols());
  for (int i = 0; i < profile.e_local.rows(); ++i)
    coeffs.beta.row(i) =
        micro_coefficients(profile.e_local.row(i).transpose(), negate).transpose();
  return coeffs;
}

int select_source_domain(const DistanceProfile& profile, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw_contract("select_source_domain: lambda out of [0,1]");
  const int r = static_cast<int>(profile.e_global.size());
  int best = 0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int i = 0; i < r; ++i) {
    double v = lambda * profile.e_global[i] +
               (1.0 - lambda) * profile.e_local.row(i).mean();
    if (v < best_v) {
      best_v = v;
      best = i;
    }
  }
  return best;
}

Eigen::MatrixXd shift_features(const Eigen::MatrixXd& f_local,
                               const std::vector<const DomainPrototype*>& protos,
                               const DistanceProfile& profile,
                               const ShiftCoefficients& coeffs, ShiftMode mode,
                               uint64_t seed) {
  const int r = static_cast<int>(protos.size());
  const int m = static_cast<int>(f_local.cols());
  if (coeffs.alpha.size() != r || coeffs.beta.rows() != r || coeffs.beta.cols() != m)
    throw_contract("shift_features: coefficient shape mismatch");
  for (const auto* p : protos)
    if (p->local.rows() != f_local.rows() || p->local.cols() != f_local.cols())
      throw_contract("shift_features: prototype shape mismatch");

  auto average_with = [&](int anchor) {
    return Eigen::MatrixXd(0.5 * (f_local + protos[anchor]->local));
  };

  switch (mode) {
    case ShiftMode::none:
      return f_local;
    case ShiftMode::random_average_one: {
      Rng rng(seed);
      return average_with(static_cast<int>(rng.uniform_below(r)));
    }
    case ShiftMode::global_only_average_one: {
      int anchor = 0;
      profile.e_global.minCoeff(&anchor);
      return average_with(anchor);
    }
    case ShiftMode::local_only_average_one: {
      int anchor = 0;
      Eigen::VectorXd means = profile.e_local.rowwise().mean();
      means.minCoeff(&anchor);
      return average_with(anchor);
    }
    case ShiftMode::dual_average_one:
      return average_with(select_source_domain(profile, coeffs.lambda));
    case ShiftMode::dual_average_all: {
      Eigen::MatrixXd out = 0.5 * f_local;
      for (int i = 0; i < r; ++i) out += protos[i]->local / (2.0 * r);
      return out;
    }
    case ShiftMode::macro_only: {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(f_local.rows(), m);
      for (int i = 0; i < r; ++i)
        out += coeffs.alpha[i] * f_local + (1.0 - coeffs.alpha[i]) * protos[i]->local;
      return out / r;
    }
    case ShiftMode::micro_only:
    case ShiftMode::full: {
      Eigen::MatrixXd out = Eigen::MatrixXd::Zero(f_local.rows(), m);
      for (int i = 0; i < r; ++i) {
        double alpha = mode == ShiftMode::full ? coeffs.alpha[i] : 1.0 / r;
        for (int mm = 0; mm < m; ++mm) {
          double beta = coeffs.beta(i, mm);
          out.col(mm) += alpha * beta * f_local.col(mm) +
                         (1.0 - alpha) * (1.0 - beta) * protos[i]->local.col(mm);
        }
      }
      return out / r;
    }
  }
  throw_contract("shift_features: unknown mode");
}

Eigen::VectorXd coefficient_mass(const ShiftCoefficients& coeffs, ShiftMode mode) {
  const int r = static_cast<int>(coeffs.alpha.size());
  const int m = static_cast<int>(coeffs.beta.cols());
  Eigen::VectorXd mass = Eigen::VectorXd::Ones(m);
  switch (mode) {
    case ShiftMode::none:
    case ShiftMode::random_average_one:
    case ShiftMode::global_only_average_one:
    case ShiftMode::local_only_average_one:
    case ShiftMode::dual_average_one:
    case ShiftMode::dual_average_all:
    case ShiftMode::macro_only:
      return mass;  // exact convex combinations
    case ShiftMode::micro_only:
    case ShiftMode::full: {
      mass.setZero();
      for (int i = 0; i < r; ++i) {
        double alpha = mode == ShiftMode::full ? coeffs.alpha[i] : 1.0 / r;
        for (int mm = 0; mm < m; ++mm)
          mass[mm] += (alpha * coeffs.beta(i, mm) +
                       (1.0 - alpha) * (1.0 - coeffs.beta(i, mm))) /
                      r;
      }
      return mass;
    }
  }
  throw_contract("coefficient_mass: unknown mode");
}

int select_prompt(const Eigen::VectorXd& f_global, const Eigen::MatrixXd& f_local,
                  const std::vector<BankEntry>& bank, double lambda) {
  if (bank.empty()) throw_contract("select_prompt: empty prompt bank");
  const int m = static_cast<int>(f_local.cols());
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(bank.size()); ++i) {
    const BankEntry& e = bank[i];
    double local_mean = 0.0;
    for (int mm = 0; mm < m; ++mm)
      local_mean += (f_local.col(mm) - e.local.col(mm)).norm();
    local_mean /= m;
    double d = lambda * (f_global - e.global).norm() + (1.0 - lambda) * local_mean;
    if (d < best_d) {  // entries sorted by sample_id, so ties keep the smallest
      best_d = d;
      best = i;
    }
  }
  return best;
}

InferResult infer(const PointCloud& input, TaskId task, const ModelParams& model,
                  const std::array<uint8_t, 32>& model_hash,
                  const PrototypeStore& store, const PromptResolver& resolve,
                  const InferOptions& options) {
  if (model_hash != store.checkpoint_hash)
    throw_data("prototype store is stale: checkpoint hash mismatch");
  const ModelConfig& config = model.config;
  const int m = config.patch_count;
  const int k = config.patch_size;

  TokenizerInput tok = tokenize_cloud(input, m, k);
  TokenMatrix query = embed_patches(tok, model, SegmentRole::query_input);
  Eigen::VectorXd f_global = global_feature(query);

  std::vector<const DomainPrototype*> protos = store.for_task(task);
  if (protos.empty())
    throw_data("prototype store has no prototypes for task " +
               std::string(to_string(task)));

  DistanceProfile profile = distance_profile(f_global, query.tokens, protos);
  ShiftCoefficients coeffs =
      compute_coefficients(profile, options.lambda, options.negate_distances);
  Eigen::MatrixXd shifted = shift_features(query.tokens, protos, profile, coeffs,
                                           options.mode, options.seed);

  int domain_idx = select_source_domain(profile, options.lambda);
  const std::string& domain = protos[domain_idx]->domain;
  auto bank_it = store.bank.entries.find({domain, task});
  if (bank_it == store.bank.entries.end() || bank_it->second.empty())
    throw_contract("prompt bank has no samples for domain " + domain + ", task " +
                   to_string(task));
  int prompt_pos = select_prompt(f_global, query.tokens, bank_it->second,
                                 options.lambda);
  uint64_t prompt_id = bank_it->second[prompt_pos].sample_id;

  const SamplePair& prompt = resolve(domain, task, prompt_id);
  TokenMatrix prompt_in = embed_patches(tokenize_cloud(prompt.input, m, k), model,
                                        SegmentRole::prompt_input);
  TokenMatrix prompt_tgt = embed_patches(tokenize_cloud(prompt.target, m, k), model,
                                         SegmentRole::prompt_target);

  TokenMatrix query_shifted = query;
  query_shifted.tokens = shifted;
  // the unknown target slot is fully masked, anchored at the input's centers
  TokenMatrix target_slot = mask_segment(tok.centers, model);

  TokenMatrix seq =
      assemble_icl_sequence(query_shifted, target_slot, prompt_in, prompt_tgt);
  TokenMatrix out = transformer_forward(seq, model);

  std::vector<int> indices(m);
  for (int i = 0; i < m; ++i) indices[i] = m + i;
  std::vector<Eigen::Matrix3Xd> patches = reconstruct_patches(out, indices, model);

  InferResult result;
  result.prediction.points.resize(3, static_cast<Eigen::Index>(m) * k);
  for (int i = 0; i < m; ++i)
    result.prediction.points.middleCols(i * k, k) = patches[i];
  result.selected_domain = domain_idx;
  result.selected_prompt = prompt_id;
  return result;
}

// ---------------------------------------------------------------------------
// Prototype store "DGPC".

namespace {
constexpr uint32_t kStoreVersion = 1;
}

void save_prototypes(const PrototypeStore& store, const std::filesystem::path& path) {
  if (store.prototypes.empty())
    throw_data("refusing to save an empty prototype list");
  std::string buf;
  buf.append("DGPC", 4);
  binio::put_u32(buf, kStoreVersion);
  buf.append(reinterpret_cast<const char*>(store.checkpoint_hash.data()), 32);
  binio::put_u32(buf, static_cast<uint32_t>(store.prototypes.size()));
  binio::put_u32(buf, static_cast<uint32_t>(store.feature_dim));
  binio::put_u32(buf, static_cast<uint32_t>(store.patch_count));
  binio::put_u8(buf, store.per_task ? 1 : 0);
  for (const auto& p : store.prototypes) {
    binio::put_str(buf, p.domain);
    binio::put_u8(buf, p.task ? 1 : 0);
    binio::put_u8(buf, p.task ? static_cast<uint8_t>(*p.task) : 0);
    binio::put_u32(buf, p.sample_count);
    for (int i = 0; i < p.global.size(); ++i)
      binio::put_f32(buf, static_cast<float>(p.global[i]));
    // column-major by patch: each patch's C floats are contiguous
    for (int mm = 0; mm < p.local.cols(); ++mm)
      for (int i = 0; i < p.local.rows(); ++i)
        binio::put_f32(buf, static_cast<float>(p.local(i, mm)));
  }
  binio::put_u32(buf, static_cast<uint32_t>(store.bank.entries.size()));
  for (const auto& [key, list] : store.bank.entries) {
    binio::put_str(buf, key.first);
    binio::put_u8(buf, static_cast<uint8_t>(key.second));
    binio::put_u32(buf, static_cast<uint32_t>(list.size()));
    for (const auto& e : list) {
      binio::put_u64(buf, e.sample_id);
      binio::put_str(buf, e.input_path);
      binio::put_str(buf, e.target_path);
      for (int i = 0; i < e.global.size(); ++i)
        binio::put_f32(buf, static_cast<float>(e.global[i]));
      for (int mm = 0; mm < e.local.cols(); ++mm)
        for (int i = 0; i < e.local.rows(); ++i)
          binio::put_f32(buf, static_cast<float>(e.local(i, mm)));
    }
  }
  binio::write_with_crc(path, buf);
}

PrototypeStore load_prototypes(const std::filesystem::path& path) {
  std::string buf = binio::read_file(path);
  const std::string where = path.string();
  binio::check_crc(buf, where);
  binio::Reader r{buf, 0, where};
  if (r.bytes(4) != "DGPC") throw_data(where + ": not a DGPC prototype store");
  uint32_t version = r.u32();
  if (version != kStoreVersion)
    throw_data(where + ": unsupported store version " + std::to_string(version));

  PrototypeStore store;
  std::string hash = r.bytes(32);
  std::copy(hash.begin(), hash.end(), store.checkpoint_hash.begin());
  uint32_t records = r.u32();
  store.feature_dim = static_cast<int>(r.u32());
  store.patch_count = static_cast<int>(r.u32());
  store.per_task = r.u8() != 0;
  if (records == 0) throw_data(where + ": store holds no prototypes");

  const int c = store.feature_dim;
  const int m = store.patch_count;
  auto read_features = [&](Eigen::VectorXd& global, Eigen::MatrixXd& local) {
    global.resize(c);
    for (int i = 0; i < c; ++i) global[i] = r.f32();
    local.resize(c, m);
    for (int mm = 0; mm < m; ++mm)
      for (int i = 0; i < c; ++i) local(i, mm) = r.f32();
  };

  for (uint32_t rec = 0; rec < records; ++rec) {
    DomainPrototype p;
    p.domain = r.str();
    bool has_task = r.u8() != 0;
    uint8_t task = r.u8();
    if (has_task) {
      if (task > 2) throw_data(where + ": bad task tag");
      p.task = static_cast<TaskId>(task);
    }
    p.sample_count = r.u32();
    read_features(p.global, p.local);
    store.prototypes.push_back(std::move(p));
  }

  uint32_t groups = r.u32();
  for (uint32_t g = 0; g < groups; ++g) {
    std::string domain = r.str();
    uint8_t task = r.u8();
    if (task > 2) throw_data(where + ": bad task tag in prompt bank");
    uint32_t count = r.u32();
    auto& list = store.bank.entries[{domain, static_cast<TaskId>(task)}];
    list.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
      BankEntry e;
      e.sample_id = r.u64();
      e.input_path = r.str();
      e.target_path = r.str();
      read_features(e.global, e.local);
      list.push_back(std::move(e));
    }
  }
  return store;
}

}  // namespace dgpic
