#pragma once

// Synthetic dynamic city: a 4-connected directed grid of road segments whose
// speeds and turning behaviour follow a daily cycle, plus a time-stamped
// trajectory corpus sampled from it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dyroad/roadnet.hpp"

namespace dyroad {

struct WorldConfig {
  std::size_t grid_width = 6;
  std::size_t grid_height = 6;
  std::size_t frames_per_day = 24;
  std::size_t n_trajectories = 20000;
  std::size_t min_route_length = 5;
  std::size_t max_route_length = 30;
  // 0 disables every time-of-day effect.
  double regime_strength = 0.6;
  std::uint64_t seed = 7;

  double day_seconds = 86400.0;
  std::size_t days = 30;
  double segment_length = 400.0;  // metres
  double arterial_speed = 15.0;   // metres per second
  double local_speed = 8.0;
  double noise_sigma = 0.1;       // lognormal travel-time noise
  double flow_preference = 1.5;   // log-weight bonus for the segment's preferred heading
  double center_bias = 2.0;       // log-weight per unit change of distance to centre

  double frame_seconds() const { return day_seconds / static_cast<double>(frames_per_day); }
  // `max_sequence_length` is the encoder's limit on route length.
  void validate(std::size_t max_sequence_length) const;
};

struct GroundTruth {
  std::size_t frames = 0;
  double segment_length = 0.0;
  // [segment][frame]
  std::vector<std::vector<double>> speed;
  std::vector<std::vector<double>> travel_time;
  // [frame][segment] -> probabilities aligned with RoadNetwork::neighbors(segment)
  std::vector<std::vector<std::vector<double>>> transition;
};

struct Route {
  std::vector<SegmentId> segments;
  std::vector<double> timestamps;  // seconds since corpus epoch, entry time per segment

  std::size_t size() const { return segments.size(); }
  bool operator==(const Route&) const = default;
};

using Corpus = std::vector<Route>;

struct World {
  RoadNetwork network;
  GroundTruth truth;
};

FeatureSchema grid_schema();
SegmentId grid_segment(const WorldConfig& cfg, std::size_t x, std::size_t y);
bool is_arterial_row(std::size_t y);

World generate_world(const WorldConfig& cfg);
Corpus generate_corpus(const World& world, const WorldConfig& cfg);

// Shuffled, disjoint, exhaustive partition. `ratios` must sum to 1.
std::vector<Corpus> split_corpus(const Corpus& corpus, const std::vector<double>& ratios,
                                 std::uint64_t seed);

// Throws with the first violated route invariant.
void validate_route(const RoadNetwork& net, const Route& route);

void save_corpus(const Corpus& corpus, const std::string& header,
                 const std::filesystem::path& file);
Corpus load_corpus(const std::filesystem::path& file);

void save_truth(const GroundTruth& truth, const std::filesystem::path& file);
GroundTruth load_truth(const std::filesystem::path& file);

}  // namespace dyroad
