#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace dyroad {

using SegmentId = std::size_t;

// Categorical traffic-context feature declarations.
struct FeatureSchema {
  std::vector<std::string> names;
  std::vector<std::size_t> cardinalities;

  std::size_t feature_count() const { return names.size(); }
  // Width of the concatenated one-hot label vector.
  std::size_t total_categories() const;
  // Offset of feature `n`'s block inside the label vector.
  std::size_t block_offset(std::size_t n) const;
  void validate() const;

  bool operator==(const FeatureSchema&) const = default;
};

// Directed graph whose vertices are road segments. Immutable once built.
class RoadNetwork {
 public:
  RoadNetwork() = default;
  // Validates ids, self-loops, duplicates and feature arity.
  RoadNetwork(std::size_t segment_count, const std::vector<std::pair<SegmentId, SegmentId>>& edges,
              FeatureSchema schema, std::vector<std::vector<std::size_t>> features);

  std::size_t segment_count() const { return out_edges_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  const std::vector<SegmentId>& neighbors(SegmentId v) const;
  bool has_edge(SegmentId from, SegmentId to) const;
  const FeatureSchema& schema() const { return schema_; }
  const std::vector<std::size_t>& features(SegmentId v) const;
  std::vector<std::pair<SegmentId, SegmentId>> edges() const;

  bool operator==(const RoadNetwork&) const = default;

 private:
  std::vector<std::vector<SegmentId>> out_edges_;
  std::size_t edge_count_ = 0;
  FeatureSchema schema_;
  std::vector<std::vector<std::size_t>> features_;
};

// Row-major [segment_count x schema.total_categories()] 0/1 labels.
struct BinarizedContext {
  std::size_t segment_count = 0;
  std::size_t width = 0;
  std::vector<double> labels;

  double at(SegmentId v, std::size_t j) const { return labels[v * width + j]; }
};

BinarizedContext binarize(const RoadNetwork& net, const FeatureSchema& schema);

FeatureSchema load_schema(const std::filesystem::path& schema_file);
RoadNetwork load_network(const std::filesystem::path& edge_file,
                         const std::filesystem::path& feature_file, const FeatureSchema& schema);

void save_schema(const FeatureSchema& schema, const std::filesystem::path& schema_file);
void save_network(const RoadNetwork& net, const std::filesystem::path& edge_file,
                  const std::filesystem::path& feature_file);

}  // namespace dyroad
