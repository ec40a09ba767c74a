#pragma once

// Per-time-frame transportation graphs: edge weight w_ij^t = gamma * e_ij +
// count^t(i -> j), where count^t tallies consecutive route pairs whose
// departure timestamp falls in frame t. Random walks over these graphs feed
// the skip-gram trainer.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dyroad/roadnet.hpp"
#include "dyroad/worldgen.hpp"

namespace dyroad {

struct TimeFrames {
  std::size_t frames = 24;
  double frame_seconds = 3600.0;
};

struct WeightedEdge {
  SegmentId dst = 0;
  bool structural = false;
  std::size_t count = 0;
  double weight = 0.0;
};

class TransportGraphSet {
 public:
  TransportGraphSet(std::size_t frames, std::size_t segments, double gamma);

  std::size_t frames() const { return out_.size(); }
  std::size_t segment_count() const { return segments_; }
  double gamma() const { return gamma_; }

  // Outgoing weighted edges of `v` in frame `t`, sorted by destination.
  const std::vector<WeightedEdge>& out_edges(std::size_t t, SegmentId v) const {
    return out_[t][v];
  }
  // 0 when the pair is absent.
  double weight(std::size_t t, SegmentId from, SegmentId to) const;
  std::size_t edge_count(std::size_t t) const;
  double out_weight(std::size_t t, SegmentId v) const;
  // Sum over frames and sources of incoming weight; a visit-frequency proxy.
  std::vector<double> in_weight_totals() const;

  friend TransportGraphSet build_transport_graphs(const RoadNetwork&, const Corpus&,
                                                  const TimeFrames&, double);

 private:
  std::size_t segments_;
  double gamma_;
  std::vector<std::vector<std::vector<WeightedEdge>>> out_;  // [t][v]
};

TransportGraphSet build_transport_graphs(const RoadNetwork& net, const Corpus& corpus,
                                         const TimeFrames& frames, double gamma);

struct Walk {
  std::vector<SegmentId> nodes;
  std::size_t frame = 0;
};

struct WalkBatch {
  std::vector<Walk> walks;
};

// walks_per_node walks from every segment in every frame; a walk stops early
// at a node with no outgoing weight.
WalkBatch sample_walks(const TransportGraphSet& tg, std::size_t walks_per_node,
                       std::size_t walk_length, std::uint64_t seed);

struct ContextPair {
  SegmentId target;
  SegmentId context;
  std::size_t frame;
  bool operator==(const ContextPair&) const = default;
};

std::vector<ContextPair> context_pairs(const WalkBatch& walks, std::size_t window);

// `t<TAB>src<TAB>dst<TAB>weight` per stored edge.
void dump_transport_graphs(const TransportGraphSet& tg, const std::filesystem::path& file);

}  // namespace dyroad
