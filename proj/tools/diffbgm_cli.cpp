// diffbgm command line: encode/decode between MIDI and roll tensors, train,
// generate, and evaluate runs driven by a key=value config file.
//
// Exit codes: 0 ok, 2 input error, 3 training divergence, 4 evaluation input
// error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "diffbgm/engine.hpp"

namespace fs = std::filesystem;
using namespace diffbgm;

namespace {

int cmd_encode(const std::string& midi_path, const std::string& out_path) {
  auto parsed = midi::parse_midi(read_file_bytes(midi_path));
  auto segments = segment_corpus(parsed.events, 8, midi_path);
  std::size_t n = std::max<std::size_t>(1, segments.size());
  Tensor out({2, n * kRollSteps, kRollPitches});
  for (std::size_t s = 0; s < segments.size(); ++s)
    for (int t = 0; t < kRollSteps; ++t)
      for (int p = 0; p < kRollPitches; ++p) {
        out.at(0, s * kRollSteps + t, p) = segments[s].roll.onset(t, p);
        out.at(1, s * kRollSteps + t, p) = segments[s].roll.sustain(t, p);
      }
  write_tensor(out, out_path);
  return 0;
}

int cmd_decode(const std::string& tensor_path, const std::string& out_midi) {
  Tensor t = read_tensor(tensor_path);
  if (t.rank() != 3 || t.dims[0] != 2 || t.dims[2] != kRollPitches)
    throw ConfigError("decode expects a 2 x T x 128 tensor");
  for (double& x : t.v) x = x > 0.0 ? 1.0 : 0.0;
  auto dec = tensor_to_events(t);
  write_file_bytes(out_midi, midi::write_midi(dec.events));
  if (dec.repairs > 0)
    std::cerr << "decode: repaired " << dec.repairs << " orphan sustain(s)\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  if (cfg.checkpoint.empty()) throw ConfigError("config: checkpoint path required");
  fs::path ckpt(cfg.checkpoint);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  std::string log_path = cfg.checkpoint + ".loss.log";
  std::ofstream log(log_path);
  if (!log) throw ConfigError("cannot open " + log_path + " for writing");
  TrainRunResult res = run_train(cfg, log);
  save_checkpoint(res.checkpoint, cfg.checkpoint);
  if (res.inner.diverged) {
    std::cerr << "training diverged at step " << res.inner.loss_trace.size() - 1
              << " (checkpoint holds the last finite state)\n";
    return 3;
  }
  return 0;
}

int cmd_generate(const std::string& checkpoint_path,
                 const std::string& manifest_path, std::uint64_t seed,
                 const std::string& out_dir, unsigned threads) {
  Checkpoint ck = load_checkpoint(checkpoint_path);
  auto entries = read_manifest(manifest_path);
  GenerateOutcome out = run_generate(ck, entries, seed, out_dir, threads);
  std::cout << "generated " << out.written.size() << " of " << entries.size()
            << " item(s)\n";
  for (const auto& [id, msg] : out.failures)
    std::cerr << "failed " << id << ": " << msg << "\n";
  return 0;
}

int cmd_evaluate(const std::string& generated_dir,
                 const std::string& manifest_path, std::uint64_t seed,
                 const std::string& out_dir, std::size_t pool_m) {
  auto entries = read_manifest(manifest_path);
  std::vector<std::pair<std::string, PianoRoll>> generated;
  for (const auto& e : entries) {
    fs::path p = fs::path(generated_dir) / (e.id + ".mid");
    if (!fs::exists(p)) continue;
    auto parsed = midi::parse_midi(read_file_bytes(p.string()));
    generated.push_back({e.id, events_to_roll(parsed.events, 0)});
  }
  if (generated.empty()) {
    std::cerr << "no decodable generated files in " << generated_dir << "\n";
    return 4;
  }
  std::map<std::string, MusicFeatureVector> pool;
  for (const auto& e : entries) {
    auto parsed = midi::parse_midi(read_file_bytes(e.midi_path));
    pool[e.id] = extract_feature(events_to_roll(parsed.events, 0));
  }
  RetrievalConfig rcfg;
  rcfg.M = pool_m;
  rcfg.seed = seed;
  EvaluationReport rep = evaluate_corpus(generated, pool, seed, rcfg);
  fs::create_directories(out_dir);
  write_report(rep, out_dir + "/report.txt", out_dir + "/report.json");
  for (const auto& r : rep.records)
    std::cout << r.name << " = " << r.value << " (n=" << r.count << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diff-BGM style symbolic background-music engine"};
  app.require_subcommand(1);

  std::string midi_path, tensor_path, out_path, config_path, checkpoint_path,
      manifest_path, generated_dir, out_dir;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::size_t pool_m = 64;

  auto* enc = app.add_subcommand("encode", "MIDI file -> roll tensor");
  enc->add_option("midi", midi_path)->required();
  enc->add_option("--out", out_path)->required();

  auto* dec = app.add_subcommand("decode", "roll tensor -> MIDI file");
  dec->add_option("tensor", tensor_path)->required();
  dec->add_option("--out", out_path)->required();

  auto* tr = app.add_subcommand("train", "train a denoiser from a config file");
  tr->add_option("--config", config_path)->required();

  auto* gen = app.add_subcommand("generate", "sample one MIDI per manifest item");
  gen->add_option("--checkpoint", checkpoint_path)->required();
  gen->add_option("--manifest", manifest_path)->required();
  gen->add_option("--seed", seed)->required();
  gen->add_option("--out", out_dir)->required();
  gen->add_option("--threads", threads);

  auto* ev = app.add_subcommand("evaluate", "objective metrics for generated MIDI");
  ev->add_option("--generated", generated_dir)->required();
  ev->add_option("--manifest", manifest_path)->required();
  ev->add_option("--seed", seed);
  ev->add_option("--out", out_dir)->required();
  ev->add_option("--pool-size", pool_m);

  CLI11_PARSE(app, argc, argv);

  try {
    if (enc->parsed()) return cmd_encode(midi_path, out_path);
    if (dec->parsed()) return cmd_decode(tensor_path, out_path);
    if (tr->parsed()) return cmd_train(config_path);
    if (gen->parsed())
      return cmd_generate(checkpoint_path, manifest_path, seed, out_dir, threads);
    if (ev->parsed())
      return cmd_evaluate(generated_dir, manifest_path, seed, out_dir, pool_m);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
