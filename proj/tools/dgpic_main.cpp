// dgpic command-line front end; talks to the library through the C API only.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "dgpic.h"

namespace {

struct ConfigHandle {
  dgpic_config* ptr = nullptr;
  ~ConfigHandle() { dgpic_config_close(ptr); }
};

int fail(dgpic_status status) {
  std::fprintf(stderr, "dgpic: error: %s\n", dgpic_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dgpic: multi-domain multi-task point-cloud benchmark"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dgpic_version());

  std::string config_path;
  std::string out_dir;
  std::string modes;
  long long seed = -1;
  bool force = false;
  bool self_check = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file")->required();
    cmd->add_option("--out", out_dir, "override the output directory");
    cmd->add_option("--seed", seed, "run a single seed instead of the config list");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the benchmark corpus");
  add_common(gen);
  gen->add_flag("--force", force, "overwrite an existing corpus");

  CLI::App* tr = app.add_subcommand("train", "train the unified model");
  add_common(tr);

  CLI::App* proto = app.add_subcommand("estimate-prototypes",
                                       "estimate source prototypes + prompt bank");
  add_common(proto);

  CLI::App* ev = app.add_subcommand("eval", "evaluate on the held-out target domain");
  add_common(ev);
  ev->add_option("--modes", modes, "comma-separated shift modes");
  ev->add_flag("--self-check", self_check, "run the CD(target,target)=0 sanity check");

  CLI::App* ab = app.add_subcommand("ablate", "evaluate every shift mode");
  add_common(ab);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ConfigHandle config;
  dgpic_status status = dgpic_config_open(config_path.c_str(), &config.ptr);
  if (status != DGPIC_OK) return fail(status);
  if (!out_dir.empty()) {
    status = dgpic_config_set(config.ptr, "output.dir", out_dir.c_str());
    if (status != DGPIC_OK) return fail(status);
  }

  if (gen->parsed()) status = dgpic_gen_data(config.ptr, force ? 1 : 0);
  else if (tr->parsed()) status = dgpic_train(config.ptr, seed);
  else if (proto->parsed()) status = dgpic_estimate_prototypes(config.ptr, seed);
  else if (ev->parsed())
    status = dgpic_eval(config.ptr, modes.empty() ? nullptr : modes.c_str(), seed,
                        self_check ? 1 : 0);
  else if (ab->parsed()) status = dgpic_ablate(config.ptr, seed);

  if (status != DGPIC_OK) return fail(status);
  return 0;
}
