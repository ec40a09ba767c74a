#pragma once

// Evaluation protocols: road speed inference, travel time estimation and
// destination prediction, scored against worldgen ground truth.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dyroad/skipgram.hpp"
#include "dyroad/transformer.hpp"
#include "dyroad/worldgen.hpp"

namespace dyroad {

struct ErrorMetrics {
  double mae = 0.0;
  double rmse = 0.0;
};

ErrorMetrics metric_suite(std::span<const double> preds, std::span<const double> truths);
// `scores` is [rows, classes] row-major. A row counts when fewer than N classes
// outrank its true class; equal scores rank the lower id first.
double top_n_accuracy(std::span<const double> scores, std::size_t classes,
                      std::span<const std::size_t> truth, std::size_t n);
std::size_t rank_of(std::span<const double> row, std::size_t truth);

struct TaskReport {
  std::string task;
  std::string variant;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::uint64_t> seeds;
  std::string config_digest;

  double metric(const std::string& name) const;
};

void write_reports_csv(const std::vector<TaskReport>& reports, std::ostream& out);
void print_reports(const std::vector<TaskReport>& reports, std::ostream& out);

struct SpeedTaskConfig {
  double mask_fraction = 0.2;
  std::size_t folds = 5;
  std::size_t hidden = 64;
  std::size_t epochs = 200;
  double lr = 5e-3;
  std::size_t batch = 64;
  double val_fraction = 0.1;
  std::size_t patience = 20;
};

struct HeadConfig {
  std::size_t epochs = 100;
  double lr = 1e-2;
  std::size_t batch = 128;
  double train_fraction = 0.8;
};

struct DownstreamConfig {
  SpeedTaskConfig speed;
  HeadConfig heads;
  std::uint64_t seed = 1;
};

// [fold][frame] -> masked segments; round(mask_fraction * segments) per frame,
// disjoint across the folds of a frame.
std::vector<std::vector<std::vector<SegmentId>>> speed_fold_masks(std::size_t segments,
                                                                  std::size_t frames,
                                                                  std::size_t folds,
                                                                  double mask_fraction,
                                                                  std::uint64_t seed);

TaskReport eval_speed(const EmbeddingSet& es, const GroundTruth& truth, const DownstreamConfig& cfg);

// Inputs for travel time: trajectory embedding without timestamps, followed by
// the start-frame row e_t when the model integrates time.
std::vector<double> travel_time_features(const TrajectoryModel& model, const Route& route);
std::vector<std::vector<double>> travel_time_features(const TrajectoryModel& model,
                                                      std::span<const Route> routes);

TaskReport eval_travel_time(const TrajectoryModel& model, const Corpus& routes,
                            const DownstreamConfig& cfg);

// First ceil(n / 2) segments with their timestamps.
Route destination_prefix(const Route& route);
TaskReport eval_destination(const TrajectoryModel& model, const Corpus& routes,
                            const DownstreamConfig& cfg);

}  // namespace dyroad
