#pragma once

// End-to-end runs: world -> transport graphs -> skip-gram -> Transformer ->
// downstream tasks, with the ablation switches of each variant.

#include <string_view>
#include <vector>

#include "dyroad/config.hpp"
#include "dyroad/downstream.hpp"
#include "dyroad/dyngraph.hpp"

namespace dyroad {

enum class Variant { Full, G, S, T, ST };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::Full, Variant::G, Variant::S, Variant::T,
                                           Variant::ST};

struct VariantSwitches {
  bool transition_counts = true;  // false: structure-only transport graphs
  bool skipgram_time = true;
  bool transformer_time = true;
};
VariantSwitches switches(Variant v);

struct Dataset {
  World world;
  Corpus pretrain;  // transport graphs, skip-gram walks and Transformer pre-training
  Corpus tasks;     // travel time and destination prediction
};

Dataset build_dataset(const RunConfig& cfg);

TransportGraphSet variant_graphs(const Dataset& data, const RunConfig& cfg, Variant v);
SkipGramResult run_skipgram(const Dataset& data, const RunConfig& cfg, Variant v);
TrajectoryModel run_pretrain(const Dataset& data, const EmbeddingSet& es, const RunConfig& cfg,
                             Variant v, PretrainResult* trace = nullptr);

struct TaskSelection {
  bool speed = true;
  bool travel_time = true;
  bool destination = true;

  bool needs_model() const { return travel_time || destination; }
};

// `model` may be null when only speed inference is selected.
std::vector<TaskReport> evaluate(const Dataset& data, const EmbeddingSet& es,
                                 const TrajectoryModel* model, const RunConfig& cfg, Variant v,
                                 TaskSelection tasks);

// Trains the variant end to end and evaluates the selected tasks.
std::vector<TaskReport> run_ablation(Variant v, const Dataset& data, const RunConfig& cfg,
                                     TaskSelection tasks = {});

}  // namespace dyroad
