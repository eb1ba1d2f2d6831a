#pragma once

// Standard MIDI File (format 0/1) reader and writer, quantizing note times to
// 1/4-beat steps. Writer emits format 0, 480 ticks per beat, tempo 120 BPM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffbgm::midi {

struct NoteEvent {
  int pitch = 0;           // MIDI pitch in [0,127]
  int onset_step = 0;      // 1 step = 1/4 beat
  int duration_steps = 1;  // >= 1
  int velocity = 80;       // [1,127]

  bool operator==(const NoteEvent&) const = default;
};

struct TempoChange {
  long tick = 0;
  int microseconds_per_beat = 500000;
};

struct ParseResult {
  std::vector<NoteEvent> events;
  std::vector<TempoChange> tempo_map;
  int dangling_notes_closed = 0;  // note-ons closed at track end
};

struct MidiError : std::runtime_error {
  std::size_t offset;
  MidiError(std::size_t off, const std::string& msg)
      : std::runtime_error("midi parse error at byte " + std::to_string(off) +
                           ": " + msg),
        offset(off) {}
};

namespace detail {

struct Cursor {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  std::uint8_t u8() {
    if (pos >= n) throw MidiError(pos, "unexpected end of file");
    return p[pos++];
  }
  std::uint32_t u16() {
    std::uint32_t a = u8(), b = u8();
    return (a << 8) | b;
  }
  std::uint32_t u32() {
    std::uint32_t x = u16();
    return (x << 16) | u16();
  }
  std::uint32_t varlen() {
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      x = (x << 7) | (b & 0x7f);
      if (!(b & 0x80)) return x;
    }
    throw MidiError(pos, "variable-length quantity too long");
  }
  void skip(std::size_t k) {
    if (pos + k > n) throw MidiError(pos, "chunk overruns file");
    pos += k;
  }
};

inline int quantize_tick(long tick, int division) {
  // 1 step = 1/4 beat; division = ticks per beat. Ties round up.
  double steps = static_cast<double>(tick) * 4.0 / division;
  return static_cast<int>(std::floor(steps + 0.5));
}

}  // namespace detail

// Parses a format-0 or format-1 SMF. All tracks are merged into one event
// list; times are quantized to the nearest 1/4-beat step (ties up). Any time
// signature other than 4/4 is rejected. A note-on with no matching note-off
// is closed at track end and counted in dangling_notes_closed.
inline ParseResult parse_midi(const std::vector<std::uint8_t>& bytes) {
  detail::Cursor c{bytes.data(), bytes.size()};
  if (c.u32() != 0x4d546864u) throw MidiError(0, "missing MThd magic");
  std::uint32_t hlen = c.u32();
  if (hlen < 6) throw MidiError(4, "header chunk too short");
  std::uint32_t format = c.u16();
  std::uint32_t ntracks = c.u16();
  std::uint32_t division = c.u16();
  c.skip(hlen - 6);
  if (format > 1)
    throw MidiError(8, "unsupported SMF format " + std::to_string(format));
  if (division & 0x8000) throw MidiError(12, "SMPTE time division unsupported");
  if (division == 0) throw MidiError(12, "zero time division");

  ParseResult out;
  for (std::uint32_t tr = 0; tr < ntracks; ++tr) {
    std::size_t chunk_start = c.pos;
    if (c.u32() != 0x4d54726bu) throw MidiError(chunk_start, "missing MTrk magic");
    std::uint32_t tlen = c.u32();
    std::size_t track_end = c.pos + tlen;
    if (track_end > c.n) throw MidiError(chunk_start + 4, "track length overruns file");

    long tick = 0;
    std::uint8_t running = 0;
    // sounding note-ons: (channel, pitch) -> (start tick, velocity)
    std::map<std::pair<int, int>, std::pair<long, int>> open;

    auto close_note = [&](int ch, int pitch, long end_tick) {
      auto it = open.find({ch, pitch});
      if (it == open.end()) return false;
      int on = detail::quantize_tick(it->second.first, static_cast<int>(division));
      int off = detail::quantize_tick(end_tick, static_cast<int>(division));
      int dur = std::max(1, off - on);
      out.events.push_back({pitch, on, dur, it->second.second});
      open.erase(it);
      return true;
    };

    while (c.pos < track_end) {
      tick += c.varlen();
      std::uint8_t status = c.u8();
      if (status < 0x80) {
        if (running == 0) throw MidiError(c.pos - 1, "data byte without running status");
        --c.pos;
        status = running;
      }
      if (status == 0xff) {
        std::uint8_t type = c.u8();
        std::uint32_t len = c.varlen();
        std::size_t body = c.pos;
        if (type == 0x51 && len == 3) {
          int uspb = (c.u8() << 16) | (c.u8() << 8) | c.u8();
          out.tempo_map.push_back({tick, uspb});
        } else if (type == 0x58 && len >= 2) {
          int nn = c.u8();
          int dd = c.u8();
          if (nn != 4 || dd != 2)
            throw MidiError(body, "time signature " + std::to_string(nn) + "/" +
                                      std::to_string(1 << dd) +
                                      " unsupported (4/4 only)");
        }
        c.pos = body;
        c.skip(len);
        running = 0;
      } else if (status == 0xf0 || status == 0xf7) {
        c.skip(c.varlen());
        running = 0;
      } else {
        running = status;
        int kind = status >> 4;
        int ch = status & 0x0f;
        int d1 = c.u8();
        int d2 = (kind == 0xc || kind == 0xd) ? 0 : c.u8();
        if (kind == 0x9 && d2 > 0) {
          close_note(ch, d1, tick);  // same-pitch retrigger
          open[{ch, d1}] = {tick, d2};
        } else if (kind == 0x8 || (kind == 0x9 && d2 == 0)) {
          close_note(ch, d1, tick);
        }
      }
    }
    if (c.pos != track_end)
      throw MidiError(c.pos, "event overruns declared track length");
    for (auto& [key, val] : open) {
      int on = detail::quantize_tick(val.first, static_cast<int>(division));
      int off = detail::quantize_tick(tick, static_cast<int>(division));
      out.events.push_back({key.second, on, std::max(1, off - on), val.second});
      ++out.dangling_notes_closed;
    }
    open.clear();
  }
  std::sort(out.events.begin(), out.events.end(),
            [](const NoteEvent& a, const NoteEvent& b) {
              return std::tie(a.onset_step, a.pitch, a.duration_steps) <
                     std::tie(b.onset_step, b.pitch, b.duration_steps);
            });
  return out;
}

// Serializes events as a single-track format-0 file: 480 ticks/beat,
// tempo 120 BPM, 4/4.
inline std::vector<std::uint8_t> write_midi(const std::vector<NoteEvent>& events) {
  constexpr int kTicksPerBeat = 480;
  constexpr int kTicksPerStep = kTicksPerBeat / 4;

  struct Msg {
    long tick;
    int order;  // note-offs before note-ons at the same tick
    std::uint8_t status, d1, d2;
  };
  std::vector<Msg> msgs;
  for (const auto& e : events) {
    long on = static_cast<long>(e.onset_step) * kTicksPerStep;
    long off = on + static_cast<long>(e.duration_steps) * kTicksPerStep;
    msgs.push_back({on, 1, 0x90, static_cast<std::uint8_t>(e.pitch),
                    static_cast<std::uint8_t>(std::clamp(e.velocity, 1, 127))});
    msgs.push_back({off, 0, 0x80, static_cast<std::uint8_t>(e.pitch), 0});
  }
  std::sort(msgs.begin(), msgs.end(), [](const Msg& a, const Msg& b) {
    return std::tie(a.tick, a.order, a.d1) < std::tie(b.tick, b.order, b.d1);
  });

  std::vector<std::uint8_t> track;
  auto put_varlen = [&](long v) {
    std::uint8_t buf[4];
    int k = 0;
    do {
      buf[k++] = v & 0x7f;
      v >>= 7;
    } while (v > 0);
    while (k > 1) track.push_back(buf[--k] | 0x80);
    track.push_back(buf[0]);
  };
  // tempo 120 BPM
  put_varlen(0);
  for (std::uint8_t b : {0xff, 0x51, 0x03, 0x07, 0xa1, 0x20}) track.push_back(b);
  // 4/4
  put_varlen(0);
  for (std::uint8_t b : {0xff, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08}) track.push_back(b);
  long prev = 0;
  for (const auto& m : msgs) {
    put_varlen(m.tick - prev);
    prev = m.tick;
    track.push_back(m.status);
    track.push_back(m.d1);
    track.push_back(m.d2);
  }
  put_varlen(0);
  for (std::uint8_t b : {0xff, 0x2f, 0x00}) track.push_back(b);

  std::vector<std::uint8_t> out;
  auto put32 = [&](std::uint32_t x) {
    out.push_back(x >> 24);
    out.push_back((x >> 16) & 0xff);
    out.push_back((x >> 8) & 0xff);
    out.push_back(x & 0xff);
  };
  auto put16 = [&](std::uint32_t x) {
    out.push_back((x >> 8) & 0xff);
    out.push_back(x & 0xff);
  };
  put32(0x4d546864u);
  put32(6);
  put16(0);
  put16(1);
  put16(kTicksPerBeat);
  put32(0x4d54726bu);
  put32(static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

}  // namespace diffbgm::midi
