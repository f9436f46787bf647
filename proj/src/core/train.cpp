#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "core/binio.hpp"
#include "core/model.hpp"

namespace dgpic {

namespace {

struct AdamW {
  std::vector<double> m, v;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamW(size_t n) : m(n, 0.0), v(n, 0.0) {}

  void step(ModelParams& params, const ParamVec& grad, double lr,
            double weight_decay, const std::vector<uint8_t>& decay_mask) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < grad.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
      if (decay_mask[i]) update += weight_decay * params.values[i];
      params.values[i] -= lr * update;
    }
  }
};

// weight decay applies to 2-D weights only, not biases/norm scales/mask token
std::vector<uint8_t> build_decay_mask(const ParamLayout& layout) {
  std::vector<uint8_t> mask(layout.total, 0);
  auto mark = [&mask](const ParamSlice& s) {
    if (s.cols > 1) std::fill_n(mask.begin() + s.offset, s.size(), 1);
  };
  mark(layout.embed_w1);
  mark(layout.embed_w2);
  mark(layout.pos_w1);
  mark(layout.pos_w2);
  for (const auto& b : layout.blocks) {
    mark(b.wq);
    mark(b.wk);
    mark(b.wv);
    mark(b.wo);
    mark(b.ffn_w1);
    mark(b.ffn_w2);
  }
  mark(layout.recon_w);
  return mask;
}

}  // namespace

std::vector<double> train(ModelParams& params,
                          const std::vector<DomainDataset>& sources,
                          const TrainOptions& options) {
  const ModelConfig& config = params.config;
  config.validate();
  if (sources.empty()) throw_contract("train: no source domains");
  auto warn = options.warn ? options.warn : [](const std::string& msg) {
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
  };
  const int n_domains = static_cast<int>(sources.size());
  if (n_domains < 2)
    warn("single source domain: prompt pairs fall back to the query's own domain");

  // tokenize every cloud once; patching is independent of the parameters
  struct Entry {
    int domain = 0;
    TaskId task = TaskId::reconstruction;
    uint64_t sample_id = 0;
    TokenizerInput input, target;
  };
  std::vector<Entry> entries;
  for (int d = 0; d < n_domains; ++d) {
    if (sources[d].pairs.empty())
      throw_contract("train: empty source domain " + sources[d].style.name);
    for (const auto& pair : sources[d].pairs) {
      Entry e;
      e.domain = d;
      e.task = pair.task;
      e.sample_id = pair.sample_id;
      entries.push_back(std::move(e));
    }
  }
  {
    std::vector<const SamplePair*> flat;
    for (const auto& ds : sources)
      for (const auto& pair : ds.pairs) flat.push_back(&pair);
    parallel_for(static_cast<int>(entries.size()), [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        entries[i].input = tokenize_cloud(flat[i]->input, config.patch_count,
                                          config.patch_size);
        entries[i].target = tokenize_cloud(flat[i]->target, config.patch_count,
                                           config.patch_size);
      }
    });
  }

  // per (domain, task) index lists for prompt lookup
  std::vector<std::vector<std::vector<int>>> by_domain_task(
      n_domains, std::vector<std::vector<int>>(3));
  for (int i = 0; i < static_cast<int>(entries.size()); ++i)
    by_domain_task[entries[i].domain][static_cast<int>(entries[i].task)].push_back(i);

  const int n = static_cast<int>(entries.size());
  const int batch = std::min(config.batch_size, n);
  const ParamLayout& layout = params.layout();
  AdamW opt(layout.total);
  std::vector<uint8_t> decay_mask = build_decay_mask(layout);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<ParamVec> grad_buf(batch);
  std::vector<double> loss_buf(batch);
  ParamVec grad_total(layout.total);
  std::vector<double> history;
  history.reserve(config.epochs);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double lr = config.learning_rate * 0.5 *
                (1.0 + std::cos(M_PI * epoch / std::max(1, config.epochs)));
    Rng shuffle(derive_seed(config.seed, {hash_string("order"),
                                          static_cast<uint64_t>(epoch)}));
    for (int i = 0; i + 1 < n; ++i) {
      int j = i + static_cast<int>(shuffle.uniform_below(n - i));
      std::swap(order[i], order[j]);
    }

    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += batch) {
      int count = std::min(batch, n - start);
      parallel_for(count, [&](int begin, int end) {
        for (int bpos = begin; bpos < end; ++bpos) {
          const Entry& query = entries[order[start + bpos]];
          Rng pick(derive_seed(config.seed,
                               {hash_string("prompt"), static_cast<uint64_t>(epoch),
                                query.sample_id}));
          // prompt from a different domain, same task
          int prompt_idx = -1;
          if (n_domains > 1) {
            int offset = 1 + static_cast<int>(pick.uniform_below(n_domains - 1));
            for (int probe = 0; probe < n_domains - 1 && prompt_idx < 0; ++probe) {
              int d = (query.domain + offset + probe) % n_domains;
              if (d == query.domain) continue;
              const auto& list = by_domain_task[d][static_cast<int>(query.task)];
              if (!list.empty())
                prompt_idx = list[pick.uniform_below(list.size())];
            }
          }
          if (prompt_idx < 0) {
            const auto& own = by_domain_task[query.domain][static_cast<int>(query.task)];
            prompt_idx = own[pick.uniform_below(own.size())];
          }
          const Entry& prompt = entries[prompt_idx];

          TrainExample example;
          example.query_input = &query.input;
          example.query_target = &query.target;
          example.prompt_input = &prompt.input;
          example.prompt_target = &prompt.target;
          example.mask_seed = derive_seed(
              config.seed,
              {hash_string("mask"), static_cast<uint64_t>(epoch), query.sample_id});
          loss_buf[bpos] = train_step(params, example, &grad_buf[bpos]);
        }
      });

      // fixed reduction order: results do not depend on thread scheduling
      std::fill(grad_total.begin(), grad_total.end(), 0.0);
      for (int bpos = 0; bpos < count; ++bpos) {
        const ParamVec& g = grad_buf[bpos];
        for (size_t i = 0; i < grad_total.size(); ++i) grad_total[i] += g[i];
        epoch_loss += loss_buf[bpos];
      }
      double inv = 1.0 / count;
      for (double& g : grad_total) g *= inv;
      opt.step(params, grad_total, lr, config.weight_decay, decay_mask);
    }
    history.push_back(epoch_loss / n);
  }
  return history;
}

double gradient_check(const ModelParams& params, const TrainExample& example,
                      double epsilon, int n_probe, uint64_t seed) {
  if (epsilon <= 0.0) throw_contract("gradient_check: epsilon must be positive");
  ParamVec grad;
  train_step(params, example, &grad);

  const size_t total = grad.size();
  std::vector<size_t> probes;
  if (static_cast<size_t>(n_probe) >= total) {
    probes.resize(total);
    std::iota(probes.begin(), probes.end(), 0);
  } else {
    Rng rng(seed);
    std::vector<size_t> pool(total);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < n_probe; ++i) {
      size_t j = i + rng.uniform_below(total - i);
      std::swap(pool[i], pool[j]);
    }
    probes.assign(pool.begin(), pool.begin() + n_probe);
  }

  ModelParams work = params;
  double max_rel = 0.0;
  for (size_t idx : probes) {
    double orig = work.values[idx];
    work.values[idx] = orig + epsilon;
    double lp = train_step(work, example, nullptr);
    work.values[idx] = orig - epsilon;
    double lm = train_step(work, example, nullptr);
    work.values[idx] = orig;
    double fd = (lp - lm) / (2.0 * epsilon);
    double rel = std::abs(fd - grad[idx]) /
                 std::max({std::abs(fd), std::abs(grad[idx]), 1e-6});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoint format "DGPM": little-endian header, f32 parameters in layout
// order, trailing CRC32 of all preceding bytes.

namespace {
using binio::put_f32;
using binio::put_u32;
using binio::put_u64;

constexpr uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const ParamLayout& layout = params.layout();
  const ModelConfig& c = params.config;
  std::string buf;
  buf.reserve(68 + 4 * layout.total);
  buf.append("DGPM", 4);
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<uint32_t>(c.feature_dim));
  put_u32(buf, static_cast<uint32_t>(c.patch_count));
  put_u32(buf, static_cast<uint32_t>(c.patch_size));
  put_u32(buf, static_cast<uint32_t>(c.n_blocks));
  put_u32(buf, static_cast<uint32_t>(c.n_heads));
  put_u32(buf, static_cast<uint32_t>(c.mlp_ratio));
  put_u32(buf, static_cast<uint32_t>(c.batch_size));
  put_u32(buf, static_cast<uint32_t>(c.epochs));
  put_f32(buf, static_cast<float>(c.mask_ratio));
  put_f32(buf, static_cast<float>(c.learning_rate));
  put_f32(buf, static_cast<float>(c.weight_decay));
  put_u64(buf, c.seed);
  put_u64(buf, layout.total);
  for (double v : params.values) put_f32(buf, static_cast<float>(v));
  binio::write_with_crc(path, buf);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::string buf = binio::read_file(path);
  const std::string where = path.string();
  binio::check_crc(buf, where);
  binio::Reader r{buf, 0, where};
  if (r.bytes(4) != "DGPM") throw_data(where + ": not a DGPM checkpoint");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw_data(where + ": unsupported checkpoint version " + std::to_string(version));

  ModelConfig c;
  c.feature_dim = static_cast<int>(r.u32());
  c.patch_count = static_cast<int>(r.u32());
  c.patch_size = static_cast<int>(r.u32());
  c.n_blocks = static_cast<int>(r.u32());
  c.n_heads = static_cast<int>(r.u32());
  c.mlp_ratio = static_cast<int>(r.u32());
  c.batch_size = static_cast<int>(r.u32());
  c.epochs = static_cast<int>(r.u32());
  c.mask_ratio = r.f32();
  c.learning_rate = r.f32();
  c.weight_decay = r.f32();
  c.seed = r.u64();
  c.validate();

  uint64_t count = r.u64();
  const ParamLayout layout = ParamLayout::make(c);
  if (count != layout.total)
    throw_data(where + ": parameter count does not match the stored config");

  ModelParams params;
  params.config = c;
  params.values.resize(layout.total);
  for (size_t i = 0; i < layout.total; ++i) params.values[i] = r.f32();
  return params;
}

}  // namespace dgpic
