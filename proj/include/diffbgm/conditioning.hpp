#pragma once

// Condition-feature ingestion: manifest records, paired Fv/Fl tensors,
// sequence resampling, and synthetic feature generators for tests.

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffbgm/core.hpp"
#include "diffbgm/tensorfile.hpp"

namespace diffbgm {

struct ConditionFeatures {
  Tensor fv;  // T x d1 per-frame dynamic features
  Tensor fl;  // T x d2 per-segment caption features
  std::string source_id;

  std::size_t frames() const { return fv.dims[0]; }
};

struct ManifestEntry {
  std::string id;
  std::string midi_path;
  std::string fv_path;
  std::string fl_path;
};

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One JSON object per line; unknown fields ignored.
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ManifestError("cannot open manifest " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    for (const char* key : {"id", "midi_path", "fv_path", "fl_path"})
      if (!j.contains(key))
        throw ManifestError(path + ":" + std::to_string(lineno) +
                            ": missing field " + key);
    out.push_back({j["id"].get<std::string>(), j["midi_path"].get<std::string>(),
                   j["fv_path"].get<std::string>(), j["fl_path"].get<std::string>()});
  }
  return out;
}

inline void write_manifest(const std::vector<ManifestEntry>& entries,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ManifestError("cannot open " + path + " for writing");
  for (const auto& e : entries) {
    nlohmann::json j{{"id", e.id},
                     {"midi_path", e.midi_path},
                     {"fv_path", e.fv_path},
                     {"fl_path", e.fl_path}};
    f << j.dump() << "\n";
  }
}

inline ConditionFeatures load_condition(const ManifestEntry& entry) {
  ConditionFeatures c;
  c.fv = read_tensor(entry.fv_path);
  c.fl = read_tensor(entry.fl_path);
  c.source_id = entry.id;
  if (c.fv.rank() != 2 || c.fl.rank() != 2)
    throw ManifestError("condition tensors for " + entry.id + " must be rank 2");
  if (c.fv.dims[0] != c.fl.dims[0])
    throw ManifestError("frame-count mismatch for " + entry.id + ": Fv has " +
                        std::to_string(c.fv.dims[0]) + " frames, Fl has " +
                        std::to_string(c.fl.dims[0]));
  if (!all_finite(c.fv) || !all_finite(c.fl))
    throw ManifestError("non-finite condition values for " + entry.id);
  return c;
}

// Linear interpolation along the sequence axis, [0,T-1] mapped onto [0,L-1].
inline Tensor resample_sequence(const Tensor& f, std::size_t L) {
  std::size_t T = f.dims[0], d = f.dims[1];
  if (L == T) return f;
  Tensor out({L, d});
  for (std::size_t i = 0; i < L; ++i) {
    double src = (L == 1 || T == 1)
                     ? 0.0
                     : static_cast<double>(i) * (T - 1) / (L - 1);
    std::size_t lo = static_cast<std::size_t>(src);
    std::size_t hi = std::min(lo + 1, T - 1);
    double w = src - static_cast<double>(lo);
    for (std::size_t j = 0; j < d; ++j)
      out.at(i, j) = (1.0 - w) * f.at(lo, j) + w * f.at(hi, j);
  }
  return out;
}

// Test doubles for the frozen upstream encoders.
//   random  - seeded standard Gaussians
//   blocky  - piecewise-constant over blocks of block_size frames
//   planted - every row one-hot at a seed-determined index
inline ConditionFeatures synth_condition(std::size_t T, std::size_t d1,
                                         std::size_t d2, std::uint64_t seed,
                                         const std::string& profile,
                                         std::size_t block_size = 8) {
  ConditionFeatures c;
  c.fv = Tensor({T, d1});
  c.fl = Tensor({T, d2});
  c.source_id = "synth-" + profile + "-" + std::to_string(seed);
  Rng rng(derive_seed(seed, 0x5e));
  if (profile == "random") {
    for (double& x : c.fv.v) x = rng.normal();
    for (double& x : c.fl.v) x = rng.normal();
  } else if (profile == "blocky") {
    for (std::size_t t = 0; t < T; ++t) {
      Rng row(derive_seed(seed, 0xb0 + t / block_size));
      for (std::size_t j = 0; j < d1; ++j) c.fv.at(t, j) = row.normal();
      for (std::size_t j = 0; j < d2; ++j) c.fl.at(t, j) = row.normal();
    }
  } else if (profile == "planted") {
    for (std::size_t t = 0; t < T; ++t) {
      c.fv.at(t, derive_seed(seed, 0xf1) % d1) = 1.0;
      c.fl.at(t, derive_seed(seed, 0xf2) % d2) = 1.0;
    }
  } else {
    throw ConfigError("unknown condition profile: " + profile);
  }
  return c;
}

}  // namespace diffbgm
