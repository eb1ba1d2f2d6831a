#pragma once

// Piano-roll codec: note events <-> 2-channel binary onset/sustain tensors,
// 8-bar segmenting, and the +-1 scaling used by the diffusion state.
//
// Conventions: channel 0 marks only the onset step, channel 1 marks
// continuation steps (mutually exclusive). A new onset at (t,p) terminates any
// sounding note at p. Decoded notes get velocity 80.

#include <cassert>
#include <optional>
#include <string>
#include <vector>

#include "diffbgm/core.hpp"
#include "diffbgm/midi.hpp"

namespace diffbgm {

using midi::NoteEvent;

inline constexpr int kRollSteps = 128;    // T0: 8 bars * 16 steps
inline constexpr int kRollPitches = 128;  // P
inline constexpr int kStepsPerBar = 16;
inline constexpr int kDefaultVelocity = 80;

struct PianoRoll {
  // data[channel][t][p], channel 0 = onset, 1 = sustain
  Tensor data{{2, kRollSteps, kRollPitches}};

  double onset(int t, int p) const { return data.at(0, t, p); }
  double sustain(int t, int p) const { return data.at(1, t, p); }

  bool operator==(const PianoRoll& o) const { return data.v == o.data.v; }
};

struct Segment {
  PianoRoll roll;
  std::string source_id;
  int bar_offset = 0;
};

inline bool roll_is_valid(const PianoRoll& r) {
  for (int t = 0; t < kRollSteps; ++t)
    for (int p = 0; p < kRollPitches; ++p) {
      double on = r.onset(t, p), su = r.sustain(t, p);
      if ((on != 0.0 && on != 1.0) || (su != 0.0 && su != 1.0)) return false;
      if (on == 1.0 && su == 1.0) return false;
      if (su == 1.0) {
        // needs an onset or sustain directly before it
        if (t == 0) return false;
        if (r.onset(t - 1, p) != 1.0 && r.sustain(t - 1, p) != 1.0) return false;
      }
    }
  return true;
}

// Rasterizes events into the window [start_step, start_step+128). Notes
// entering the window mid-flight mark sustain only; a later same-pitch onset
// truncates the earlier note.
inline PianoRoll events_to_roll(const std::vector<NoteEvent>& events,
                                int start_step) {
  assert(start_step >= 0);
  PianoRoll r;
  // Resolve same-pitch overlaps per pitch: a later onset truncates the
  // sounding note; identical onsets collapse, keeping the longer note.
  std::vector<std::vector<std::pair<int, int>>> by_pitch(kRollPitches);
  for (const auto& e : events)
    by_pitch[e.pitch].push_back({e.onset_step, e.onset_step + e.duration_steps});
  for (int p = 0; p < kRollPitches; ++p) {
    auto& notes = by_pitch[p];
    std::sort(notes.begin(), notes.end());
    for (std::size_t i = 0; i < notes.size(); ++i) {
      auto [lo, hi] = notes[i];
      if (i + 1 < notes.size()) {
        if (notes[i + 1].first == lo) continue;  // superseded by longer twin
        hi = std::min(hi, notes[i + 1].first);
      }
      for (int s = std::max(lo, start_step);
           s < std::min(hi, start_step + kRollSteps); ++s) {
        int t = s - start_step;
        r.data.at(s == lo ? 0 : 1, t, p) = 1.0;
      }
    }
  }
  return r;
}

struct DecodeResult {
  std::vector<NoteEvent> events;
  int repairs = 0;  // orphan sustains promoted to onsets
};

// Generalized inverse codec over a 2 x T x 128 tensor (T = 128 for one
// segment). Orphan sustains are promoted to onsets and counted.
inline DecodeResult tensor_to_events(const Tensor& data) {
  assert(data.rank() == 3 && data.dims[0] == 2 && data.dims[2] == kRollPitches);
  int T = static_cast<int>(data.dims[1]);
  DecodeResult out;
  for (int p = 0; p < kRollPitches; ++p) {
    int open_at = -1;
    for (int t = 0; t <= T; ++t) {
      bool on = t < T && data.at(0, t, p) != 0.0;
      bool su = t < T && data.at(1, t, p) != 0.0;
      if (open_at >= 0 && !su) {
        out.events.push_back({p, open_at, t - open_at, kDefaultVelocity});
        open_at = -1;
      }
      if (on) {
        if (open_at >= 0) {  // back-to-back onset closes the previous note
          out.events.push_back({p, open_at, t - open_at, kDefaultVelocity});
        }
        open_at = t;
      } else if (su && open_at < 0) {
        open_at = t;  // orphan sustain, promote to onset
        ++out.repairs;
      }
    }
  }
  std::sort(out.events.begin(), out.events.end(),
            [](const NoteEvent& a, const NoteEvent& b) {
              return std::tie(a.onset_step, a.pitch) < std::tie(b.onset_step, b.pitch);
            });
  return out;
}

inline DecodeResult roll_to_events(const PianoRoll& roll) {
  return tensor_to_events(roll.data);
}

// Cuts 8-bar windows every hop_bars bars. The final partial window is
// zero-padded; windows never start at or past the end of the music.
inline std::vector<Segment> segment_corpus(const std::vector<NoteEvent>& events,
                                           int hop_bars,
                                           const std::string& source_id = "") {
  assert(hop_bars >= 1);
  std::vector<Segment> out;
  if (events.empty()) return out;
  int total_steps = 0;
  for (const auto& e : events)
    total_steps = std::max(total_steps, e.onset_step + e.duration_steps);
  int hop_steps = hop_bars * kStepsPerBar;
  for (int start = 0; start < total_steps; start += hop_steps) {
    Segment s;
    s.roll = events_to_roll(events, start);
    s.source_id = source_id;
    s.bar_offset = start / kStepsPerBar;
    out.push_back(std::move(s));
  }
  return out;
}

// {0,1} -> {-1,+1} scaling for Gaussian diffusion.
inline Tensor scale_roll(const PianoRoll& roll) {
  Tensor t = roll.data;
  for (double& x : t.v) x = x * 2.0 - 1.0;
  return t;
}

// Threshold at 0 back to binary, then repair orphan sustains so the result is
// a valid PianoRoll.
inline PianoRoll unscale_roll(const Tensor& t) {
  assert(t.dims == (std::vector<std::size_t>{2, kRollSteps, kRollPitches}));
  Tensor bin = t;
  for (double& x : bin.v) x = x > 0.0 ? 1.0 : 0.0;
  // onset wins where both channels fire
  for (std::size_t i = 0; i < static_cast<std::size_t>(kRollSteps) * kRollPitches; ++i)
    if (bin.v[i] == 1.0) bin.v[bin.size() / 2 + i] = 0.0;
  DecodeResult d = tensor_to_events(bin);
  return events_to_roll(d.events, 0);
}

}  // namespace diffbgm
