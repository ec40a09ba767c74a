#include "dyroad/pipeline.hpp"

#include "dyroad/error.hpp"

namespace dyroad {

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::G: return "G";
    case Variant::S: return "S";
    case Variant::T: return "T";
    case Variant::ST: return "ST";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw Error("unknown variant '" + std::string(name) + "' (expected full, G, S, T or ST)");
}

VariantSwitches switches(Variant v) {
  VariantSwitches s;
  s.transition_counts = v != Variant::G;
  s.skipgram_time = v != Variant::S && v != Variant::ST;
  s.transformer_time = v != Variant::T && v != Variant::ST;
  return s;
}

Dataset build_dataset(const RunConfig& cfg) {
  Dataset d;
  d.world = generate_world(cfg.world);
  Corpus corpus = generate_corpus(d.world, cfg.world);
  auto parts = split_corpus(corpus, {cfg.pretrain_fraction, 1.0 - cfg.pretrain_fraction},
                            derive_seed(cfg.seed, "split"));
  d.pretrain = std::move(parts[0]);
  d.tasks = std::move(parts[1]);
  return d;
}

TransportGraphSet variant_graphs(const Dataset& data, const RunConfig& cfg, Variant v) {
  TimeFrames frames{cfg.world.frames_per_day, cfg.world.frame_seconds()};
  if (switches(v).transition_counts)
    return build_transport_graphs(data.world.network, data.pretrain, frames, cfg.gamma);
  if (!(cfg.gamma > 0.0)) throw Error("variant G needs gamma > 0: structure-only graphs would be empty");
  return build_transport_graphs(data.world.network, Corpus{}, frames, cfg.gamma);
}

SkipGramResult run_skipgram(const Dataset& data, const RunConfig& cfg, Variant v) {
  SkipGramConfig sc = cfg.skipgram;
  sc.dynamic = switches(v).skipgram_time;
  const auto& net = data.world.network;
  auto tg = variant_graphs(data, cfg, v);
  return train_skipgram(net, tg, binarize(net, net.schema()), sc);
}

TrajectoryModel run_pretrain(const Dataset& data, const EmbeddingSet& es, const RunConfig& cfg,
                             Variant v, PretrainResult* trace) {
  TransformerConfig tc = cfg.transformer;
  tc.dynamic = switches(v).transformer_time;
  auto model = init_model(es.segment_count(), tc, es.target.values());
  auto result = pretrain(model, data.world.network, data.pretrain);
  if (trace != nullptr) *trace = std::move(result);
  return model;
}

std::vector<TaskReport> evaluate(const Dataset& data, const EmbeddingSet& es,
                                 const TrajectoryModel* model, const RunConfig& cfg, Variant v,
                                 TaskSelection tasks) {
  if (tasks.needs_model() && model == nullptr)
    throw Error("route tasks need a pre-trained model");
  std::vector<TaskReport> out;
  if (tasks.speed) out.push_back(eval_speed(es, data.world.truth, cfg.tasks));
  if (tasks.travel_time) out.push_back(eval_travel_time(*model, data.tasks, cfg.tasks));
  if (tasks.destination) out.push_back(eval_destination(*model, data.tasks, cfg.tasks));
  const std::string digest = cfg.digest();
  for (auto& r : out) {
    r.variant = std::string(variant_name(v));
    r.config_digest = digest;
    r.seeds = {cfg.seed};
  }
  return out;
}

std::vector<TaskReport> run_ablation(Variant v, const Dataset& data, const RunConfig& cfg,
                                     TaskSelection tasks) {
  auto sg = run_skipgram(data, cfg, v);
  if (!tasks.needs_model()) return evaluate(data, sg.embeddings, nullptr, cfg, v, tasks);
  auto model = run_pretrain(data, sg.embeddings, cfg, v);
  return evaluate(data, sg.embeddings, &model, cfg, v, tasks);
}

}  // namespace dyroad
