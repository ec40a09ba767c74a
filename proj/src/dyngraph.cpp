#include "dyroad/dyngraph.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "dyroad/error.hpp"
#include "dyroad/random.hpp"
#include "dyroad/temporal.hpp"

namespace dyroad {

TransportGraphSet::TransportGraphSet(std::size_t frames, std::size_t segments, double gamma)
    : segments_(segments),
      gamma_(gamma),
      out_(frames, std::vector<std::vector<WeightedEdge>>(segments)) {}

double TransportGraphSet::weight(std::size_t t, SegmentId from, SegmentId to) const {
  const auto& edges = out_.at(t).at(from);
  auto it = std::lower_bound(edges.begin(), edges.end(), to,
                             [](const WeightedEdge& e, SegmentId d) { return e.dst < d; });
  return (it != edges.end() && it->dst == to) ? it->weight : 0.0;
}

std::size_t TransportGraphSet::edge_count(std::size_t t) const {
  std::size_t n = 0;
  for (const auto& edges : out_.at(t)) n += edges.size();
  return n;
}

double TransportGraphSet::out_weight(std::size_t t, SegmentId v) const {
  double s = 0.0;
  for (const auto& e : out_.at(t).at(v)) s += e.weight;
  return s;
}

std::vector<double> TransportGraphSet::in_weight_totals() const {
  std::vector<double> totals(segments_, 0.0);
  for (const auto& frame : out_)
    for (const auto& edges : frame)
      for (const auto& e : edges) totals[e.dst] += e.weight;
  return totals;
}

TransportGraphSet build_transport_graphs(const RoadNetwork& net, const Corpus& corpus,
                                         const TimeFrames& frames, double gamma) {
  if (frames.frames == 0) throw Error("transport graphs: frame count must be positive");
  if (!(frames.frame_seconds > 0.0)) throw Error("transport graphs: frame length must be positive");
  if (!(gamma >= 0.0)) throw Error("transport graphs: gamma must be non-negative");
  const std::size_t n = net.segment_count();

  std::vector<std::map<std::pair<SegmentId, SegmentId>, std::size_t>> counts(frames.frames);
  for (const auto& route : corpus) {
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
      SegmentId a = route.segments[i];
      SegmentId b = route.segments[i + 1];
      if (a >= n || b >= n) throw Error("transport graphs: route references unknown segment");
      std::size_t t = frame_of(route.timestamps[i], frames.frames, frames.frame_seconds);
      ++counts[t][{a, b}];
    }
  }

  TransportGraphSet tg(frames.frames, n, gamma);
  for (std::size_t t = 0; t < frames.frames; ++t) {
    std::map<std::pair<SegmentId, SegmentId>, WeightedEdge> merged;
    if (gamma > 0.0)
      for (auto [a, b] : net.edges()) merged[{a, b}] = WeightedEdge{b, true, 0, 0.0};
    for (const auto& [key, c] : counts[t]) {
      auto& e = merged[key];
      e.dst = key.second;
      e.structural = net.has_edge(key.first, key.second);
      e.count = c;
    }
    for (auto& [key, e] : merged) {
      e.weight = gamma * (e.structural ? 1.0 : 0.0) + static_cast<double>(e.count);
      if (e.weight > 0.0) tg.out_[t][key.first].push_back(e);
    }
  }
  return tg;
}

WalkBatch sample_walks(const TransportGraphSet& tg, std::size_t walks_per_node,
                       std::size_t walk_length, std::uint64_t seed) {
  if (walk_length < 2) throw Error("sample_walks: walk_length must be >= 2");
  const std::size_t n = tg.segment_count();
  Rng rng(seed);
  WalkBatch batch;
  batch.walks.reserve(tg.frames() * n * walks_per_node);

  std::vector<std::vector<double>> cumulative(n);
  std::vector<SegmentId> order(n);
  for (std::size_t t = 0; t < tg.frames(); ++t) {
    for (SegmentId v = 0; v < n; ++v) {
      const auto& edges = tg.out_edges(t, v);
      cumulative[v].resize(edges.size());
      double acc = 0.0;
      for (std::size_t k = 0; k < edges.size(); ++k) cumulative[v][k] = (acc += edges[k].weight);
    }
    for (std::size_t r = 0; r < walks_per_node; ++r) {
      for (SegmentId v = 0; v < n; ++v) order[v] = v;
      std::shuffle(order.begin(), order.end(), rng);
      for (SegmentId start : order) {
        Walk walk;
        walk.frame = t;
        walk.nodes.reserve(walk_length);
        walk.nodes.push_back(start);
        SegmentId cur = start;
        while (walk.nodes.size() < walk_length) {
          const auto& cum = cumulative[cur];
          if (cum.empty()) break;
          std::uniform_real_distribution<double> u(0.0, cum.back());
          double x = u(rng);
          std::size_t k = static_cast<std::size_t>(
              std::upper_bound(cum.begin(), cum.end(), x) - cum.begin());
          if (k >= cum.size()) k = cum.size() - 1;
          cur = tg.out_edges(t, cur)[k].dst;
          walk.nodes.push_back(cur);
        }
        batch.walks.push_back(std::move(walk));
      }
    }
  }
  return batch;
}

std::vector<ContextPair> context_pairs(const WalkBatch& walks, std::size_t window) {
  if (window == 0) throw Error("context_pairs: window must be >= 1");
  std::vector<ContextPair> pairs;
  for (const auto& walk : walks.walks) {
    const auto& s = walk.nodes;
    for (std::size_t i = 0; i < s.size(); ++i) {
      std::size_t lo = i >= window ? i - window : 0;
      std::size_t hi = std::min(s.size() - 1, i + window);
      for (std::size_t j = lo; j <= hi; ++j)
        if (j != i) pairs.push_back({s[i], s[j], walk.frame});
    }
  }
  return pairs;
}

void dump_transport_graphs(const TransportGraphSet& tg, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out.precision(17);
  for (std::size_t t = 0; t < tg.frames(); ++t)
    for (SegmentId v = 0; v < tg.segment_count(); ++v)
      for (const auto& e : tg.out_edges(t, v))
        out << t << '\t' << v << '\t' << e.dst << '\t' << e.weight << '\n';
}

}  // namespace dyroad
