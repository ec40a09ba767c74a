#pragma once

// Run configuration: one master seed plus every module's settings, read from
// plain-text files of `key = value` lines under `[section]` headers.
//
//   [run]          seed, out_dir, gamma, pretrain_fraction
//   [world]        WorldConfig fields
//   [skipgram]     SkipGramConfig fields (aux_weights as a comma list)
//   [transformer]  TransformerConfig fields
//   [speed]        SpeedTaskConfig fields
//   [heads]        HeadConfig fields
//
// Component seeds are never read from the file: each is the master seed XOR
// the FNV-1a hash of the component tag ("world", "split", "skipgram",
// "transformer", "downstream").

#include <cstdint>
#include <filesystem>
#include <string>

#include "dyroad/downstream.hpp"
#include "dyroad/skipgram.hpp"
#include "dyroad/transformer.hpp"
#include "dyroad/worldgen.hpp"

namespace dyroad {

struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path out_dir = "run";
  double gamma = 1.0;               // structural weight in the transport graphs
  double pretrain_fraction = 0.8;   // the rest feeds the route tasks, split 4:1
  WorldConfig world;
  SkipGramConfig skipgram;
  TransformerConfig transformer;
  DownstreamConfig tasks;

  // Copy with component seeds derived from `seed` and shared fields aligned
  // (time frames, model width). Validates the result.
  RunConfig resolved() const;
  void validate() const;
  // FNV-1a of the canonical dump, hex.
  std::string digest() const;
};

RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& file);
// Canonical text; parses back to an equal configuration.
std::string dump_run_config(const RunConfig& cfg);

// DYROAD_SEED, when set, replaces the master seed.
void apply_environment(RunConfig& cfg);

}  // namespace dyroad
