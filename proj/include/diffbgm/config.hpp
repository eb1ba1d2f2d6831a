#pragma once

// Run configuration: flat key=value text file, every output-affecting
// hyperparameter explicit. '#' starts a comment; blank lines ignored.

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "diffbgm/checkpoint.hpp"
#include "diffbgm/core.hpp"
#include "diffbgm/denoiser.hpp"

namespace diffbgm {

struct RunConfig {
  ScheduleSpec schedule;
  NetDescriptor net;
  TrainConfig training;
  int hop_bars = 8;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string manifest;
  std::string checkpoint;
  std::string out_dir;
  std::uint64_t init_seed = 1;
};

inline std::map<std::string, std::string> parse_kv(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key=value");
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline RunConfig parse_run_config(std::istream& in) {
  auto kv = parse_kv(in);
  RunConfig c;
  auto take = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto geti = [&](const char* key, int& dst) {
    if (auto v = take(key)) dst = std::stoi(*v);
  };
  auto getd = [&](const char* key, double& dst) {
    if (auto v = take(key)) dst = std::stod(*v);
  };
  auto gets = [&](const char* key, std::string& dst) {
    if (auto v = take(key)) dst = *v;
  };

  gets("schedule", c.schedule.kind);
  geti("diffusion_steps", c.schedule.N);
  getd("beta_start", c.schedule.beta_start);
  getd("beta_end", c.schedule.beta_end);
  geti("channels", c.net.channels);
  c.net.d_model = c.net.channels;
  geti("d_model", c.net.d_model);
  geti("d_cond", c.net.d_cond);
  geti("d_key", c.net.d_key);
  geti("k", c.net.k);
  geti("t0", c.net.t0);
  geti("d1", c.net.d1);
  geti("d2", c.net.d2);
  geti("temb", c.net.temb);
  geti("roll_steps", c.net.roll_steps);
  geti("roll_pitches", c.net.roll_pitches);
  getd("learning_rate", c.training.lr);
  geti("train_steps", c.training.steps);
  if (auto v = take("conditional")) c.training.conditional = *v != "0";
  geti("hop_bars", c.hop_bars);
  gets("manifest", c.manifest);
  gets("checkpoint", c.checkpoint);
  gets("out_dir", c.out_dir);
  if (auto v = take("seed")) {
    c.seed = std::stoull(*v);
    c.seed_set = true;
  }
  if (auto v = take("init_seed")) c.init_seed = std::stoull(*v);
  if (!kv.empty()) throw ConfigError("unknown config key: " + kv.begin()->first);
  if (!c.seed_set) throw ConfigError("config: seed is mandatory");
  c.training.seed = c.seed;
  c.net.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  return parse_run_config(f);
}

}  // namespace diffbgm
