#include "dgpic.h"

#include <cstring>
#include <iostream>
#include <string>

#include "core/pipeline.hpp"

using namespace dgpic;

struct dgpic_config {
  ExperimentConfig config;
};

namespace {

thread_local std::string g_last_error;

dgpic_status capture(const std::function<void()>& fn) {
  try {
    fn();
    g_last_error.clear();
    return DGPIC_OK;
  } catch (const DgpicError& e) {
    g_last_error = e.what();
    return static_cast<dgpic_status>(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DGPIC_DATA_ERROR;
  }
}

std::optional<uint64_t> seed_arg(long long seed) {
  if (seed < 0) return std::nullopt;
  return static_cast<uint64_t>(seed);
}

// section-qualified override, reusing the config parser's value handling
void apply_override(ExperimentConfig& config, const std::string& key,
                    const std::string& value) {
  size_t dot = key.find('.');
  if (dot == std::string::npos)
    throw_invalid_input("config key must be section-qualified: " + key);
  std::string text = config.to_text();
  // re-parse with the override appended to its section
  std::string section = key.substr(0, dot);
  std::string name = key.substr(dot + 1);
  std::string marker = "[" + section + "]";
  size_t at = text.find(marker);
  if (at == std::string::npos)
    throw_invalid_input("unknown config section: " + section);
  at += marker.size();
  text.insert(at, "\n" + name + " = " + value);
  config = ExperimentConfig::parse_string(text, "<override " + key + ">");
}

}  // namespace

extern "C" {

const char* dgpic_version(void) { return "1.0.0"; }

const char* dgpic_last_error(void) { return g_last_error.c_str(); }

dgpic_status dgpic_config_open(const char* path, dgpic_config** out) {
  return capture([&] {
    if (!path || !out) throw_contract("dgpic_config_open: NULL argument");
    auto* handle = new dgpic_config{ExperimentConfig::parse_file(path)};
    *out = handle;
  });
}

dgpic_status dgpic_config_set(dgpic_config* config, const char* key,
                              const char* value) {
  return capture([&] {
    if (!config || !key || !value)
      throw_contract("dgpic_config_set: NULL argument");
    apply_override(config->config, key, value);
  });
}

dgpic_status dgpic_config_format(const dgpic_config* config, char* buf,
                                 size_t buflen, size_t* needed) {
  return capture([&] {
    if (!config) throw_contract("dgpic_config_format: NULL config");
    std::string text = config->config.to_text();
    if (needed) *needed = text.size();
    if (buf && buflen > 0) {
      size_t n = std::min(buflen - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

void dgpic_config_close(dgpic_config* config) { delete config; }

dgpic_status dgpic_gen_data(const dgpic_config* config, int force) {
  return capture([&] {
    if (!config) throw_contract("dgpic_gen_data: NULL config");
    cmd_gen_data(config->config, force != 0);
  });
}

dgpic_status dgpic_train(const dgpic_config* config, long long seed) {
  return capture([&] {
    if (!config) throw_contract("dgpic_train: NULL config");
    cmd_train(config->config, seed_arg(seed));
  });
}

dgpic_status dgpic_estimate_prototypes(const dgpic_config* config, long long seed) {
  return capture([&] {
    if (!config) throw_contract("dgpic_estimate_prototypes: NULL config");
    cmd_estimate_prototypes(config->config, seed_arg(seed));
  });
}

dgpic_status dgpic_eval(const dgpic_config* config, const char* modes_csv,
                        long long seed, int self_check) {
  return capture([&] {
    if (!config) throw_contract("dgpic_eval: NULL config");
    std::vector<ShiftMode> modes;
    if (modes_csv && *modes_csv) {
      std::string csv(modes_csv);
      size_t pos = 0;
      while (pos != std::string::npos) {
        size_t comma = csv.find(',', pos);
        std::string item = csv.substr(
            pos, comma == std::string::npos ? comma : comma - pos);
        size_t a = item.find_first_not_of(" \t");
        size_t b = item.find_last_not_of(" \t");
        if (a != std::string::npos)
          modes.push_back(shift_mode_from_string(item.substr(a, b - a + 1)));
        pos = comma == std::string::npos ? comma : comma + 1;
      }
    }
    cmd_eval(config->config, modes, seed_arg(seed), self_check != 0, std::cout);
  });
}

dgpic_status dgpic_ablate(const dgpic_config* config, long long seed) {
  return capture([&] {
    if (!config) throw_contract("dgpic_ablate: NULL config");
    cmd_ablate(config->config, seed_arg(seed), std::cout);
  });
}

dgpic_status dgpic_chamfer(const double* a, size_t n_a, const double* b, size_t n_b,
                           double* out) {
  return capture([&] {
    if (!a || !b || !out) throw_contract("dgpic_chamfer: NULL argument");
    Eigen::Map<const Eigen::Matrix3Xd> ma(a, 3, static_cast<Eigen::Index>(n_a));
    Eigen::Map<const Eigen::Matrix3Xd> mb(b, 3, static_cast<Eigen::Index>(n_b));
    *out = chamfer_distance(Eigen::Matrix3Xd(ma), Eigen::Matrix3Xd(mb));
  });
}

}  // extern "C"
