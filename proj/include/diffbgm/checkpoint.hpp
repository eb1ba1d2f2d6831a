#pragma once

// Versioned checkpoint container: JSON descriptor (architecture + schedule)
// followed by the flat parameter vector embedded as a DBGM tensor blob.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffbgm/denoiser.hpp"
#include "diffbgm/diffusion.hpp"
#include "diffbgm/tensorfile.hpp"

namespace diffbgm {

struct ScheduleSpec {
  std::string kind = "linear";
  int N = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  NoiseSchedule build() const { return make_schedule(kind, N, beta_start, beta_end); }
};

struct Checkpoint {
  ScheduleSpec schedule;
  NetDescriptor descriptor;
  std::vector<double> params;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace ckpt_detail {
inline constexpr char kMagic[4] = {'D', 'B', 'G', 'C'};
inline constexpr std::uint32_t kVersion = 1;
}  // namespace ckpt_detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  nlohmann::json j{
      {"schedule",
       {{"kind", ck.schedule.kind},
        {"N", ck.schedule.N},
        {"beta_start", ck.schedule.beta_start},
        {"beta_end", ck.schedule.beta_end}}},
      {"net",
       {{"levels", ck.descriptor.levels},
        {"channels", ck.descriptor.channels},
        {"d_model", ck.descriptor.d_model},
        {"d_cond", ck.descriptor.d_cond},
        {"d_key", ck.descriptor.d_key},
        {"k", ck.descriptor.k},
        {"t0", ck.descriptor.t0},
        {"d1", ck.descriptor.d1},
        {"d2", ck.descriptor.d2},
        {"temb", ck.descriptor.temb},
        {"roll_steps", ck.descriptor.roll_steps},
        {"roll_pitches", ck.descriptor.roll_pitches}}}};
  std::string header = j.dump();

  std::vector<std::uint8_t> out(ckpt_detail::kMagic, ckpt_detail::kMagic + 4);
  tf_detail::put_u32(out, ckpt_detail::kVersion);
  tf_detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  Tensor flat({ck.params.size()});
  flat.v = ck.params;
  auto blob = serialize_tensor(flat);
  out.insert(out.end(), blob.begin(), blob.end());
  write_file_bytes(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), ckpt_detail::kMagic, 4) != 0)
    throw CheckpointError(path + ": bad checkpoint magic");
  std::size_t pos = 4;
  std::uint32_t version = tf_detail::get_u32(bytes, pos);
  if (version != ckpt_detail::kVersion)
    throw CheckpointError(path + ": unsupported checkpoint version " +
                          std::to_string(version));
  std::uint32_t hlen = tf_detail::get_u32(bytes, pos);
  if (pos + hlen > bytes.size())
    throw CheckpointError(path + ": truncated descriptor");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin() + pos, bytes.begin() + pos + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": descriptor parse: " + e.what());
  }
  pos += hlen;

  Checkpoint ck;
  const auto& s = j.at("schedule");
  ck.schedule = {s.at("kind"), s.at("N"), s.at("beta_start"), s.at("beta_end")};
  const auto& n = j.at("net");
  ck.descriptor.levels = n.at("levels");
  ck.descriptor.channels = n.at("channels");
  ck.descriptor.d_model = n.at("d_model");
  ck.descriptor.d_cond = n.at("d_cond");
  ck.descriptor.d_key = n.at("d_key");
  ck.descriptor.k = n.at("k");
  ck.descriptor.t0 = n.at("t0");
  ck.descriptor.d1 = n.at("d1");
  ck.descriptor.d2 = n.at("d2");
  ck.descriptor.temb = n.at("temb");
  ck.descriptor.roll_steps = n.at("roll_steps");
  ck.descriptor.roll_pitches = n.at("roll_pitches");

  std::vector<std::uint8_t> blob(bytes.begin() + pos, bytes.end());
  Tensor flat;
  try {
    flat = deserialize_tensor(blob);
  } catch (const TensorFileError& e) {
    throw CheckpointError(path + ": parameter blob: " + e.what());
  }
  if (flat.rank() != 1)
    throw CheckpointError(path + ": parameter blob must be rank 1");
  ck.params = flat.v;
  return ck;
}

inline Checkpoint checkpoint_of(const DenoiserNet& net, const ScheduleSpec& sched) {
  return {sched, net.descriptor(), net.flat_params()};
}

inline DenoiserNet net_from_checkpoint(const Checkpoint& ck) {
  DenoiserNet net(ck.descriptor, 0);
  net.set_flat_params(ck.params);
  return net;
}

}  // namespace diffbgm
