#include "core/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace dgpic {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& v, const std::string& where) {
  char* end = nullptr;
  double d = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw_invalid_input(where + ": bad number '" + v + "'");
  return d;
}

int64_t parse_int(const std::string& v, const std::string& where) {
  try {
    size_t used = 0;
    int64_t i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw_invalid_input(where + ": bad integer '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw_invalid_input(where + ": bad boolean '" + v + "' (want true/false)");
}

void append_log(const ExperimentConfig& config, const std::string& line) {
  std::filesystem::create_directories(config.out_dir);
  std::ofstream log(std::filesystem::path(config.out_dir) / "dgpic.log",
                    std::ios::app);
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  log << stamp << ' ' << line << '\n';
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_string(const std::string& text,
                                                const std::string& where) {
  ExperimentConfig config;
  config.eval_modes.clear();
  config.seeds.clear();

  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  bool saw_modes = false, saw_seeds = false, saw_tasks = false;

  while (std::getline(in, line)) {
    ++line_no;
    std::string at = where + ":" + std::to_string(line_no);
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw_invalid_input(at + ": unterminated section header");
      section = s.substr(1, s.size() - 2);
      if (section != "benchmark" && section != "model" && section != "eval" &&
          section != "output")
        throw_invalid_input(at + ": unknown section [" + section + "]");
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw_invalid_input(at + ": expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty()) throw_invalid_input(at + ": empty key");

    if (section == "benchmark") {
      auto& b = config.benchmark;
      if (key == "sources") b.sources = split_list(value);
      else if (key == "target") b.target = value;
      else if (key == "tasks") {
        b.tasks.clear();
        for (const auto& t : split_list(value)) b.tasks.push_back(task_from_string(t));
        saw_tasks = true;
      } else if (key == "train_per_domain_task")
        b.train_per_domain_task = static_cast<int>(parse_int(value, at));
      else if (key == "test_per_domain_task")
        b.test_per_domain_task = static_cast<int>(parse_int(value, at));
      else if (key == "n_points") b.n_points = static_cast<int>(parse_int(value, at));
      else if (key == "sparse_count")
        b.sparse_count = static_cast<int>(parse_int(value, at));
      else if (key == "noise_sigma") b.noise_sigma = parse_double(value, at);
      else if (key == "max_angle") b.max_angle = parse_double(value, at);
      else if (key == "augment") b.augment = parse_bool(value, at);
      else if (key == "seed") b.seed = static_cast<uint64_t>(parse_int(value, at));
      else throw_invalid_input(at + ": unknown benchmark key '" + key + "'");
    } else if (section == "model") {
      auto& m = config.model;
      if (key == "feature_dim") m.feature_dim = static_cast<int>(parse_int(value, at));
      else if (key == "patch_count")
        m.patch_count = static_cast<int>(parse_int(value, at));
      else if (key == "patch_size")
        m.patch_size = static_cast<int>(parse_int(value, at));
      else if (key == "n_blocks") m.n_blocks = static_cast<int>(parse_int(value, at));
      else if (key == "n_heads") m.n_heads = static_cast<int>(parse_int(value, at));
      else if (key == "mlp_ratio") m.mlp_ratio = static_cast<int>(parse_int(value, at));
      else if (key == "mask_ratio") m.mask_ratio = parse_double(value, at);
      else if (key == "learning_rate") m.learning_rate = parse_double(value, at);
      else if (key == "weight_decay") m.weight_decay = parse_double(value, at);
      else if (key == "batch_size") m.batch_size = static_cast<int>(parse_int(value, at));
      else if (key == "epochs") m.epochs = static_cast<int>(parse_int(value, at));
      else throw_invalid_input(at + ": unknown model key '" + key + "'");
    } else if (section == "eval") {
      if (key == "modes") {
        config.eval_modes.clear();
        for (const auto& m : split_list(value))
          config.eval_modes.push_back(shift_mode_from_string(m));
        saw_modes = true;
      } else if (key == "lambda")
        config.lambda = parse_double(value, at);
      else if (key == "negate_distances")
        config.negate_distances = parse_bool(value, at);
      else if (key == "prototypes_per_task")
        config.prototypes_per_task = parse_bool(value, at);
      else if (key == "seeds") {
        config.seeds.clear();
        for (const auto& s2 : split_list(value))
          config.seeds.push_back(static_cast<uint64_t>(parse_int(s2, at)));
        saw_seeds = true;
      } else
        throw_invalid_input(at + ": unknown eval key '" + key + "'");
    } else if (section == "output") {
      if (key == "dir") config.out_dir = value;
      else throw_invalid_input(at + ": unknown output key '" + key + "'");
    } else {
      throw_invalid_input(at + ": key outside any section");
    }
  }

  if (!saw_modes) config.eval_modes = {ShiftMode::none, ShiftMode::full};
  if (!saw_seeds) config.seeds = {1, 2, 3};
  if (!saw_tasks && config.benchmark.tasks.empty())
    config.benchmark.tasks = {TaskId::reconstruction, TaskId::denoising,
                              TaskId::registration};
  config.validate();
  return config;
}

ExperimentConfig ExperimentConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_string(text, path.string());
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream out;
  const auto& b = benchmark;
  out << "[benchmark]\n";
  out << "sources = ";
  for (size_t i = 0; i < b.sources.size(); ++i)
    out << (i ? ", " : "") << b.sources[i];
  out << "\ntarget = " << b.target << "\ntasks = ";
  for (size_t i = 0; i < b.tasks.size(); ++i)
    out << (i ? ", " : "") << to_string(b.tasks[i]);
  out << "\ntrain_per_domain_task = " << b.train_per_domain_task
      << "\ntest_per_domain_task = " << b.test_per_domain_task
      << "\nn_points = " << b.n_points << "\nsparse_count = " << b.sparse_count
      << "\nnoise_sigma = " << format_double(b.noise_sigma)
      << "\nmax_angle = " << format_double(b.max_angle)
      << "\naugment = " << (b.augment ? "true" : "false") << "\nseed = " << b.seed
      << "\n\n[model]\n";
  const auto& m = model;
  out << "feature_dim = " << m.feature_dim << "\npatch_count = " << m.patch_count
      << "\npatch_size = " << m.patch_size << "\nn_blocks = " << m.n_blocks
      << "\nn_heads = " << m.n_heads << "\nmlp_ratio = " << m.mlp_ratio
      << "\nmask_ratio = " << format_double(m.mask_ratio)
      << "\nlearning_rate = " << format_double(m.learning_rate)
      << "\nweight_decay = " << format_double(m.weight_decay)
      << "\nbatch_size = " << m.batch_size << "\nepochs = " << m.epochs
      << "\n\n[eval]\nmodes = ";
  for (size_t i = 0; i < eval_modes.size(); ++i)
    out << (i ? ", " : "") << to_string(eval_modes[i]);
  out << "\nlambda = " << format_double(lambda)
      << "\nnegate_distances = " << (negate_distances ? "true" : "false")
      << "\nprototypes_per_task = " << (prototypes_per_task ? "true" : "false")
      << "\nseeds = ";
  for (size_t i = 0; i < seeds.size(); ++i) out << (i ? ", " : "") << seeds[i];
  out << "\n\n[output]\ndir = " << out_dir << "\n";
  return out.str();
}

void ExperimentConfig::validate() const {
  benchmark.validate();
  model.validate();
  if (seeds.empty()) throw_invalid_input("config needs at least one seed");
  if (eval_modes.empty()) throw_invalid_input("config needs at least one eval mode");
  if (lambda < 0.0 || lambda > 1.0) throw_invalid_input("lambda must lie in [0,1]");
  if (model.patch_count * model.patch_size != benchmark.n_points)
    throw_invalid_input("patch_count * patch_size must equal n_points so "
                        "predictions match the cloud size");
  if (out_dir.empty()) throw_invalid_input("output dir must not be empty");
}

std::filesystem::path ExperimentConfig::data_dir() const {
  return std::filesystem::path(out_dir) / "data";
}
std::filesystem::path ExperimentConfig::manifest_path(const std::string& domain,
                                                      Split split) const {
  return data_dir() / (domain + "_" + to_string(split) + ".manifest");
}
std::filesystem::path ExperimentConfig::checkpoint_path(uint64_t seed) const {
  return std::filesystem::path(out_dir) /
         ("checkpoint_seed" + std::to_string(seed) + ".dgpm");
}
std::filesystem::path ExperimentConfig::loss_path(uint64_t seed) const {
  return std::filesystem::path(out_dir) / ("loss_seed" + std::to_string(seed) + ".csv");
}
std::filesystem::path ExperimentConfig::prototypes_path(uint64_t seed) const {
  return std::filesystem::path(out_dir) /
         ("prototypes_seed" + std::to_string(seed) + ".dgpc");
}
std::filesystem::path ExperimentConfig::results_path() const {
  return std::filesystem::path(out_dir) / "results.csv";
}
std::filesystem::path ExperimentConfig::ablation_path() const {
  return std::filesystem::path(out_dir) / "ablation.csv";
}

void cmd_gen_data(const ExperimentConfig& config, bool force) {
  config.validate();
  std::vector<std::string> domains = config.benchmark.sources;
  domains.push_back(config.benchmark.target);
  if (!force) {
    for (const auto& d : domains)
      for (Split split : {Split::train, Split::test})
        if (std::filesystem::exists(config.manifest_path(d, split)))
          throw_data("dataset already exists at " + config.data_dir().string() +
                     " (use --force to regenerate)");
  }
  Benchmark bench = build_benchmark(config.benchmark);
  std::filesystem::path clouds = config.data_dir() / "clouds";
  for (const auto& ds : bench.datasets)
    save_dataset(ds, config.manifest_path(ds.style.name, ds.split), clouds);
  append_log(config, "gen-data ok");
}

namespace {

std::vector<DomainDataset> load_source_train(const ExperimentConfig& config) {
  std::vector<DomainDataset> out;
  for (const auto& d : config.benchmark.sources) {
    std::filesystem::path p = config.manifest_path(d, Split::train);
    if (!std::filesystem::exists(p))
      throw_data("missing dataset manifest " + p.string() + " (run gen-data first)");
    out.push_back(load_dataset(p));
  }
  return out;
}

DomainDataset load_target_test(const ExperimentConfig& config) {
  std::filesystem::path p =
      config.manifest_path(config.benchmark.target, Split::test);
  if (!std::filesystem::exists(p))
    throw_data("missing dataset manifest " + p.string() + " (run gen-data first)");
  return load_dataset(p);
}

std::vector<uint64_t> seeds_to_run(const ExperimentConfig& config,
                                   std::optional<uint64_t> only_seed) {
  if (!only_seed) return config.seeds;
  return {*only_seed};
}

}  // namespace

void cmd_train(const ExperimentConfig& config, std::optional<uint64_t> only_seed) {
  config.validate();
  std::vector<DomainDataset> sources = load_source_train(config);
  for (uint64_t seed : seeds_to_run(config, only_seed)) {
    ModelConfig mc = config.model;
    mc.seed = seed;
    ModelParams params = ModelParams::init(mc);
    std::vector<double> history = train(params, sources);
    save_checkpoint(params, config.checkpoint_path(seed));
    std::ofstream loss(config.loss_path(seed));
    if (!loss) throw_data("cannot write " + config.loss_path(seed).string());
    loss << "epoch,mean_loss\n";
    for (size_t e = 0; e < history.size(); ++e)
      loss << e << ',' << format_double(history[e]) << '\n';
    append_log(config, "train seed=" + std::to_string(seed) + " ok");
  }
}

void cmd_estimate_prototypes(const ExperimentConfig& config,
                             std::optional<uint64_t> only_seed) {
  config.validate();
  std::vector<DomainDataset> sources = load_source_train(config);
  for (uint64_t seed : seeds_to_run(config, only_seed)) {
    std::filesystem::path ckpt = config.checkpoint_path(seed);
    if (!std::filesystem::exists(ckpt))
      throw_data("missing checkpoint " + ckpt.string() + " (run train first)");
    ModelParams params = load_checkpoint(ckpt);
    PrototypeStore store = estimate_prototypes(sources, params, sha256_file(ckpt),
                                               config.prototypes_per_task);
    save_prototypes(store, config.prototypes_path(seed));
    append_log(config, "estimate-prototypes seed=" + std::to_string(seed) + " ok");
  }
}

std::vector<EvalAggregate> aggregate_rows(const std::vector<EvalRow>& rows) {
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& r : rows)
    groups[{r.mode, static_cast<int>(r.task)}].push_back(r.mean_cd);
  std::vector<EvalAggregate> out;
  for (const auto& [key, values] : groups) {
    EvalAggregate a;
    a.mode = key.first;
    a.task = static_cast<TaskId>(key.second);
    a.n_seeds = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    a.mean = sum / values.size();
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std_dev = values.size() > 1 ? std::sqrt(ss / (values.size() - 1)) : 0.0;
    out.push_back(a);
  }
  return out;
}

namespace {

struct SeedArtifacts {
  ModelParams params;
  std::array<uint8_t, 32> hash;
  PrototypeStore store;
};

SeedArtifacts load_seed_artifacts(const ExperimentConfig& config, uint64_t seed) {
  std::filesystem::path ckpt = config.checkpoint_path(seed);
  std::filesystem::path proto = config.prototypes_path(seed);
  if (!std::filesystem::exists(ckpt))
    throw_data("missing checkpoint " + ckpt.string() + " (run train first)");
  if (!std::filesystem::exists(proto))
    throw_data("missing prototype store " + proto.string() +
               " (run estimate-prototypes first)");
  SeedArtifacts art{load_checkpoint(ckpt), sha256_file(ckpt), load_prototypes(proto)};
  if (art.store.checkpoint_hash != art.hash)
    throw_data("prototype store " + proto.string() +
               " is stale: checkpoint hash mismatch");
  return art;
}

std::vector<EvalRow> run_eval(const ExperimentConfig& config,
                              const std::vector<ShiftMode>& modes,
                              std::optional<uint64_t> only_seed, bool self_check,
                              std::ostream& console,
                              const std::filesystem::path& csv_path) {
  config.validate();
  std::vector<DomainDataset> sources = load_source_train(config);
  DomainDataset target = load_target_test(config);

  std::map<std::tuple<std::string, int, uint64_t>, const SamplePair*> prompt_map;
  for (const auto& ds : sources)
    for (const auto& pair : ds.pairs)
      prompt_map[{ds.style.name, static_cast<int>(pair.task), pair.sample_id}] = &pair;
  PromptResolver resolve = [&prompt_map](const std::string& domain, TaskId task,
                                         uint64_t sample_id) -> const SamplePair& {
    auto it = prompt_map.find({domain, static_cast<int>(task), sample_id});
    if (it == prompt_map.end())
      throw_data("prompt bank references unknown sample " + std::to_string(sample_id) +
                 " in domain " + domain);
    return *it->second;
  };

  if (self_check) {
    int checked = 0;
    for (const auto& pair : target.pairs) {
      if (chamfer_distance(pair.target, pair.target) != 0.0)
        throw_numeric("self-check failed: CD(target,target) != 0");
      if (++checked >= 8) break;
    }
    console << "self-check: CD(target,target) = 0 for " << checked
            << " target pairs\n";
  }

  std::map<uint64_t, SeedArtifacts> artifacts;
  for (uint64_t seed : seeds_to_run(config, only_seed))
    artifacts.emplace(seed, load_seed_artifacts(config, seed));

  std::vector<EvalRow> rows;
  for (ShiftMode mode : modes) {
    for (TaskId task : config.benchmark.tasks) {
      std::vector<const SamplePair*> samples = target.task_pairs(task);
      if (samples.empty()) continue;
      for (uint64_t seed : seeds_to_run(config, only_seed)) {
        const SeedArtifacts& art = artifacts.at(seed);
        std::vector<double> cds(samples.size());
        parallel_for(static_cast<int>(samples.size()), [&](int begin, int end) {
          for (int i = begin; i < end; ++i) {
            InferOptions opts;
            opts.mode = mode;
            opts.lambda = config.lambda;
            opts.negate_distances = config.negate_distances;
            opts.seed = derive_seed(seed, {hash_string("shift"),
                                           samples[i]->sample_id});
            InferResult res = infer(samples[i]->input, task, art.params, art.hash,
                                    art.store, resolve, opts);
            cds[i] = chamfer_distance(res.prediction, samples[i]->target);
          }
        });
        double sum = 0.0;
        for (double c : cds) sum += c;
        EvalRow row;
        row.mode = to_string(mode);
        row.task = task;
        row.seed = seed;
        row.mean_cd = sum / static_cast<double>(cds.size());
        row.n_samples = static_cast<int>(cds.size());
        rows.push_back(row);
      }
    }
  }

  write_rows_csv(rows, csv_path);

  char buf[160];
  console << "mode                     task            seed  CD(x1e-3)\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-24s %-15s %-5llu %8.1f\n", r.mode.c_str(),
                  to_string(r.task), static_cast<unsigned long long>(r.seed),
                  r.mean_cd * 1e3);
    console << buf;
  }
  console << "\naggregate over seeds (CD x1e-3, mean +- std):\n";
  for (const auto& a : aggregate_rows(rows)) {
    std::snprintf(buf, sizeof(buf), "%-24s %-15s %8.1f +- %.1f\n", a.mode.c_str(),
                  to_string(a.task), a.mean * 1e3, a.std_dev * 1e3);
    console << buf;
  }
  return rows;
}

}  // namespace

std::vector<EvalRow> cmd_eval(const ExperimentConfig& config,
                              const std::vector<ShiftMode>& modes,
                              std::optional<uint64_t> only_seed, bool self_check,
                              std::ostream& console) {
  auto rows = run_eval(config, modes.empty() ? config.eval_modes : modes, only_seed,
                       self_check, console, config.results_path());
  append_log(config, "eval ok");
  return rows;
}

std::vector<EvalRow> cmd_ablate(const ExperimentConfig& config,
                                std::optional<uint64_t> only_seed,
                                std::ostream& console) {
  auto rows = run_eval(config, all_shift_modes(), only_seed, false, console,
                       config.ablation_path());
  // ranking by mean CD across tasks, lower is better
  std::map<std::string, std::pair<double, int>> totals;
  for (const auto& a : aggregate_rows(rows)) {
    totals[a.mode].first += a.mean;
    totals[a.mode].second += 1;
  }
  std::vector<std::pair<double, std::string>> ranked;
  for (const auto& [mode, t] : totals)
    ranked.emplace_back(t.first / std::max(1, t.second), mode);
  std::sort(ranked.begin(), ranked.end());
  console << "\nranking (mean CD x1e-3 across tasks):\n";
  char buf[120];
  for (size_t i = 0; i < ranked.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%2zu. %-24s %8.1f\n", i + 1,
                  ranked[i].second.c_str(), ranked[i].first * 1e3);
    console << buf;
  }
  append_log(config, "ablate ok");
  return rows;
}

void write_rows_csv(const std::vector<EvalRow>& rows,
                    const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw_data("cannot write " + path.string());
  out << "mode,task,seed,mean_cd,n_samples\n";
  for (const auto& r : rows)
    out << r.mode << ',' << to_string(r.task) << ',' << r.seed << ','
        << format_double(r.mean_cd) << ',' << r.n_samples << '\n';
}

std::vector<EvalRow> read_rows_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "mode,task,seed,mean_cd,n_samples")
    throw_data(path.string() + ": bad results CSV header");
  std::vector<EvalRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(f);
    if (fields.size() != 5)
      throw_data(path.string() + ":" + std::to_string(line_no) + ": bad row");
    EvalRow r;
    r.mode = fields[0];
    r.task = task_from_string(fields[1]);
    r.seed = std::stoull(fields[2]);
    r.mean_cd = std::strtod(fields[3].c_str(), nullptr);
    r.n_samples = std::stoi(fields[4]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace dgpic
