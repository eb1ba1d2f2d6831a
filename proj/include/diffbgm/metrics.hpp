#pragma once

// Objective evaluation: pitch-class histogram entropy, grooving pattern
// similarity, structureness, scale consistency, diversity, and retrieval
// precision, plus the deterministic 32-dim music-feature extractor they
// share.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffbgm/core.hpp"
#include "diffbgm/pianoroll.hpp"

namespace diffbgm {

inline constexpr int kBarsPerSegment = 8;

namespace metric_detail {

inline std::array<double, 12> pitch_class_onsets(const PianoRoll& r) {
  std::array<double, 12> h{};
  for (int t = 0; t < kRollSteps; ++t)
    for (int p = 0; p < kRollPitches; ++p)
      if (r.onset(t, p) == 1.0) h[p % 12] += 1.0;
  return h;
}

inline std::array<double, 12> bar_pitch_class_onsets(const PianoRoll& r,
                                                     int bar) {
  std::array<double, 12> h{};
  for (int s = 0; s < kStepsPerBar; ++s)
    for (int p = 0; p < kRollPitches; ++p)
      if (r.onset(bar * kStepsPerBar + s, p) == 1.0) h[p % 12] += 1.0;
  return h;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace metric_detail

// Shannon entropy (base 2) of the onset pitch-class histogram. Empty -> 0.
inline double pche(const PianoRoll& roll) {
  auto h = metric_detail::pitch_class_onsets(roll);
  double total = 0.0;
  for (double x : h) total += x;
  if (total == 0.0) return 0.0;
  double ent = 0.0;
  for (double x : h)
    if (x > 0.0) {
      double p = x / total;
      ent -= p * std::log2(p);
    }
  return ent;
}

// 16-dim binary onset pattern of one bar (any pitch).
inline std::array<double, 16> grooving_pattern(const PianoRoll& roll,
                                               int bar_index) {
  std::array<double, 16> g{};
  for (int s = 0; s < kStepsPerBar; ++s)
    for (int p = 0; p < kRollPitches; ++p)
      if (roll.onset(bar_index * kStepsPerBar + s, p) == 1.0) {
        g[s] = 1.0;
        break;
      }
  return g;
}

// Mean pairwise (1 - hamming/16) over non-empty bars; absent with fewer than
// two non-empty bars. A bar is non-empty when it has any activity (onset or
// sustain); its pattern still reflects onsets only, so a bar holding one long
// note contributes an all-zero pattern.
inline std::optional<double> gps(const PianoRoll& roll) {
  std::vector<std::array<double, 16>> bars;
  for (int b = 0; b < kBarsPerSegment; ++b) {
    bool active = false;
    for (int s = 0; s < kStepsPerBar && !active; ++s)
      for (int p = 0; p < kRollPitches; ++p)
        if (roll.onset(b * kStepsPerBar + s, p) == 1.0 ||
            roll.sustain(b * kStepsPerBar + s, p) == 1.0) {
          active = true;
          break;
        }
    if (active) bars.push_back(grooving_pattern(roll, b));
  }
  if (bars.size() < 2) return std::nullopt;
  double acc = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < bars.size(); ++a)
    for (std::size_t b = a + 1; b < bars.size(); ++b) {
      int ham = 0;
      for (int s = 0; s < 16; ++s)
        if (bars[a][s] != bars[b][s]) ++ham;
      acc += 1.0 - ham / 16.0;
      ++pairs;
    }
  return acc / pairs;
}

// Lag-similarity structureness: per-bar feature = grooving pattern + bar
// pitch-class histogram; SI = max over lags of the mean cosine similarity
// between bars b and b+lag. Zero-feature bars are excluded.
inline std::optional<double> si(const PianoRoll& roll, int lag_min = 1,
                                int lag_max = 4) {
  std::vector<std::vector<double>> feats(kBarsPerSegment);
  for (int b = 0; b < kBarsPerSegment; ++b) {
    auto g = grooving_pattern(roll, b);
    auto h = metric_detail::bar_pitch_class_onsets(roll, b);
    feats[b].assign(g.begin(), g.end());
    feats[b].insert(feats[b].end(), h.begin(), h.end());
  }
  auto nonzero = [](const std::vector<double>& f) {
    return std::any_of(f.begin(), f.end(), [](double x) { return x != 0.0; });
  };
  std::optional<double> best;
  for (int lag = lag_min; lag <= lag_max; ++lag) {
    double acc = 0.0;
    int n = 0;
    for (int b = 0; b + lag < kBarsPerSegment; ++b) {
      if (!nonzero(feats[b]) || !nonzero(feats[b + lag])) continue;
      acc += metric_detail::cosine(feats[b], feats[b + lag]);
      ++n;
    }
    if (n > 0) {
      double mean = acc / n;
      if (!best || mean > *best) best = mean;
    }
  }
  return best;
}

// Best fraction of onsets inside one of the 24 major/minor scales; absent for
// empty rolls.
inline std::optional<double> sc(const PianoRoll& roll) {
  auto h = metric_detail::pitch_class_onsets(roll);
  double total = 0.0;
  for (double x : h) total += x;
  if (total == 0.0) return std::nullopt;
  static constexpr std::array<int, 7> kMajor{0, 2, 4, 5, 7, 9, 11};
  static constexpr std::array<int, 7> kMinor{0, 2, 3, 5, 7, 8, 10};
  double best = 0.0;
  for (int root = 0; root < 12; ++root)
    for (const auto& scale : {kMajor, kMinor}) {
      double in = 0.0;
      for (int iv : scale) in += h[(root + iv) % 12];
      best = std::max(best, in / total);
    }
  return best;
}

// 32-dim descriptor: L1-normalized onset pitch-class histogram (12), mean
// grooving pattern over bars (16), note-density summary normalized by 64 (4:
// notes/bar mean, std, min, max).
struct MusicFeatureVector {
  std::array<double, 32> v{};

  double distance(const MusicFeatureVector& o) const {
    double acc = 0.0;
    for (int i = 0; i < 32; ++i) {
      double d = v[i] - o.v[i];
      acc += d * d;
    }
    return std::sqrt(acc);
  }
};

inline MusicFeatureVector extract_feature(const PianoRoll& roll) {
  MusicFeatureVector f;
  auto h = metric_detail::pitch_class_onsets(roll);
  double total = 0.0;
  for (double x : h) total += x;
  if (total > 0.0)
    for (int i = 0; i < 12; ++i) f.v[i] = h[i] / total;
  for (int b = 0; b < kBarsPerSegment; ++b) {
    auto g = grooving_pattern(roll, b);
    for (int s = 0; s < 16; ++s) f.v[12 + s] += g[s] / kBarsPerSegment;
  }
  std::array<double, kBarsPerSegment> density{};
  for (int b = 0; b < kBarsPerSegment; ++b)
    for (int s = 0; s < kStepsPerBar; ++s)
      for (int p = 0; p < kRollPitches; ++p)
        if (roll.onset(b * kStepsPerBar + s, p) == 1.0) density[b] += 1.0;
  double mean = 0.0;
  for (double d : density) mean += d / kBarsPerSegment;
  double var = 0.0;
  for (double d : density) var += (d - mean) * (d - mean) / kBarsPerSegment;
  double mn = *std::min_element(density.begin(), density.end());
  double mx = *std::max_element(density.begin(), density.end());
  if (total > 0.0) {
    f.v[28] = mean / 64.0;
    f.v[29] = std::sqrt(var) / 64.0;
    f.v[30] = mn / 64.0;
    f.v[31] = mx / 64.0;
  }
  return f;
}

// Eq.-11 style diversity: mean Euclidean distance over index-aligned pairs.
inline double diversity(const std::vector<MusicFeatureVector>& set_a,
                        const std::vector<MusicFeatureVector>& set_b) {
  if (set_a.size() != set_b.size() || set_a.empty())
    throw ConfigError("diversity: sets must be non-empty and equal-sized");
  double acc = 0.0;
  for (std::size_t i = 0; i < set_a.size(); ++i)
    acc += set_a[i].distance(set_b[i]);
  return acc / static_cast<double>(set_a.size());
}

// Seeded split of a generated pool into two equal halves for diversity;
// absent when fewer than 2 items.
inline std::optional<double> diversity_split(
    const std::vector<MusicFeatureVector>& pool, std::uint64_t seed) {
  if (pool.size() < 2) return std::nullopt;
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(seed, 0xd1));
  for (std::size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.below(i + 1)]);
  std::size_t half = pool.size() / 2;
  std::vector<MusicFeatureVector> a, b;
  for (std::size_t i = 0; i < half; ++i) {
    a.push_back(pool[idx[i]]);
    b.push_back(pool[idx[half + i]]);
  }
  return diversity(a, b);
}

struct RetrievalConfig {
  std::size_t M = 64;
  std::vector<std::size_t> ks{5, 10, 20};
  std::uint64_t seed = 0;
};

struct RetrievalQuery {
  MusicFeatureVector feature;
  std::string ground_truth_id;
};

// Per query: candidate set = ground truth + (M-1) seeded random distractors
// from the pool, ranked by ascending distance (ties broken by id). Success
// iff the ground truth ranks in the top K.
inline std::map<std::size_t, double> retrieval_precision(
    const std::vector<RetrievalQuery>& generated,
    const std::map<std::string, MusicFeatureVector>& pool,
    const RetrievalConfig& cfg) {
  if (generated.empty()) throw ConfigError("retrieval: no queries");
  std::vector<std::string> ids;
  ids.reserve(pool.size());
  for (const auto& [id, vec] : pool) ids.push_back(id);

  std::map<std::size_t, double> hits;
  for (std::size_t k : cfg.ks) hits[k] = 0.0;

  for (std::size_t qi = 0; qi < generated.size(); ++qi) {
    const auto& q = generated[qi];
    auto gt = pool.find(q.ground_truth_id);
    if (gt == pool.end())
      throw ConfigError("retrieval: ground truth " + q.ground_truth_id +
                        " missing from pool");
    // sample M-1 distinct distractor ids
    std::vector<std::string> cand{q.ground_truth_id};
    std::vector<std::string> others;
    for (const auto& id : ids)
      if (id != q.ground_truth_id) others.push_back(id);
    Rng rng(derive_seed(cfg.seed, 0x9e70 + qi));
    std::size_t want = std::min(cfg.M - 1, others.size());
    for (std::size_t i = 0; i < want; ++i) {
      std::size_t j = i + rng.below(others.size() - i);
      std::swap(others[i], others[j]);
      cand.push_back(others[i]);
    }
    std::vector<std::pair<double, const std::string*>> ranked;
    for (const auto& id : cand)
      ranked.push_back({q.feature.distance(pool.at(id)), &id});
    std::sort(ranked.begin(), ranked.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return *a.second < *b.second;
              });
    std::size_t rank = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (*ranked[i].second == q.ground_truth_id) {
        rank = i + 1;
        break;
      }
    for (std::size_t k : cfg.ks)
      if (rank <= k) hits[k] += 1.0;
  }
  for (auto& [k, v] : hits) v /= static_cast<double>(generated.size());
  return hits;
}

}  // namespace diffbgm
