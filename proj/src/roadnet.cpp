#include "dyroad/roadnet.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "dyroad/error.hpp"

namespace dyroad {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::size_t parse_index(const std::string& tok, const std::filesystem::path& file,
                        std::size_t line_no) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError(file.string() + ":" + std::to_string(line_no) +
                     ": expected non-negative integer, got '" + tok + "'");
  return value;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

bool skippable(const std::string& line) {
  return line.empty() || line.front() == '#';
}

}  // namespace

std::size_t FeatureSchema::total_categories() const {
  return std::accumulate(cardinalities.begin(), cardinalities.end(), std::size_t{0});
}

std::size_t FeatureSchema::block_offset(std::size_t n) const {
  return std::accumulate(cardinalities.begin(), cardinalities.begin() + n, std::size_t{0});
}

void FeatureSchema::validate() const {
  if (names.size() != cardinalities.size())
    throw Error("feature schema: names and cardinalities differ in length");
  if (names.empty()) throw Error("feature schema: at least one feature required");
  for (std::size_t n = 0; n < names.size(); ++n)
    if (cardinalities[n] < 2)
      throw Error("feature schema: feature '" + names[n] + "' has cardinality " +
                  std::to_string(cardinalities[n]) + " (< 2)");
}

RoadNetwork::RoadNetwork(std::size_t segment_count,
                         const std::vector<std::pair<SegmentId, SegmentId>>& edges,
                         FeatureSchema schema, std::vector<std::vector<std::size_t>> features)
    : out_edges_(segment_count), schema_(std::move(schema)), features_(std::move(features)) {
  if (segment_count == 0) throw Error("road network: no segments");
  if (features_.size() != segment_count)
    throw Error("road network: " + std::to_string(features_.size()) + " feature rows for " +
                std::to_string(segment_count) + " segments");
  for (SegmentId v = 0; v < segment_count; ++v)
    if (features_[v].size() != schema_.feature_count())
      throw Error("road network: segment " + std::to_string(v) + " has " +
                  std::to_string(features_[v].size()) + " features, schema declares " +
                  std::to_string(schema_.feature_count()));
  std::set<std::pair<SegmentId, SegmentId>> seen;
  for (auto [a, b] : edges) {
    if (a >= segment_count || b >= segment_count)
      throw Error("road network: edge " + std::to_string(a) + "->" + std::to_string(b) +
                  " references segment " + std::to_string(a >= segment_count ? a : b) +
                  " outside [0," + std::to_string(segment_count) + ")");
    if (a == b) throw Error("road network: self-loop on segment " + std::to_string(a));
    if (!seen.insert({a, b}).second)
      throw Error("road network: duplicate edge " + std::to_string(a) + "->" +
                  std::to_string(b));
    out_edges_[a].push_back(b);
  }
  edge_count_ = edges.size();
}

const std::vector<SegmentId>& RoadNetwork::neighbors(SegmentId v) const {
  if (v >= out_edges_.size())
    throw Error("neighbors: invalid segment id " + std::to_string(v));
  return out_edges_[v];
}

bool RoadNetwork::has_edge(SegmentId from, SegmentId to) const {
  if (from >= out_edges_.size()) return false;
  const auto& n = out_edges_[from];
  return std::find(n.begin(), n.end(), to) != n.end();
}

const std::vector<std::size_t>& RoadNetwork::features(SegmentId v) const {
  if (v >= features_.size()) throw Error("features: invalid segment id " + std::to_string(v));
  return features_[v];
}

std::vector<std::pair<SegmentId, SegmentId>> RoadNetwork::edges() const {
  std::vector<std::pair<SegmentId, SegmentId>> out;
  out.reserve(edge_count_);
  for (SegmentId v = 0; v < out_edges_.size(); ++v)
    for (SegmentId u : out_edges_[v]) out.emplace_back(v, u);
  return out;
}

BinarizedContext binarize(const RoadNetwork& net, const FeatureSchema& schema) {
  if (net.schema().feature_count() != schema.feature_count())
    throw Error("binarize: network carries " + std::to_string(net.schema().feature_count()) +
                " features, schema declares " + std::to_string(schema.feature_count()));
  BinarizedContext ctx;
  ctx.segment_count = net.segment_count();
  ctx.width = schema.total_categories();
  ctx.labels.assign(ctx.segment_count * ctx.width, 0.0);
  for (SegmentId v = 0; v < net.segment_count(); ++v) {
    const auto& cats = net.features(v);
    std::size_t offset = 0;
    for (std::size_t n = 0; n < schema.feature_count(); ++n) {
      if (cats[n] >= schema.cardinalities[n])
        throw Error("binarize: segment " + std::to_string(v) + " feature '" + schema.names[n] +
                    "' category " + std::to_string(cats[n]) + " outside cardinality " +
                    std::to_string(schema.cardinalities[n]));
      ctx.labels[v * ctx.width + offset + cats[n]] = 1.0;
      offset += schema.cardinalities[n];
    }
  }
  return ctx;
}

FeatureSchema load_schema(const std::filesystem::path& schema_file) {
  auto in = open_in(schema_file);
  FeatureSchema schema;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (skippable(line)) continue;
    auto tok = split_tabs(line);
    if (tok.size() != 2)
      throw ParseError(schema_file.string() + ":" + std::to_string(line_no) +
                       ": expected 'name<TAB>cardinality'");
    schema.names.push_back(tok[0]);
    schema.cardinalities.push_back(parse_index(tok[1], schema_file, line_no));
  }
  schema.validate();
  return schema;
}

RoadNetwork load_network(const std::filesystem::path& edge_file,
                         const std::filesystem::path& feature_file, const FeatureSchema& schema) {
  schema.validate();

  auto fin = open_in(feature_file);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> rows;
  while (std::getline(fin, line)) {
    ++line_no;
    line = strip_cr(line);
    if (skippable(line)) continue;
    auto tok = split_tabs(line);
    if (!header_seen) {
      header_seen = true;
      if (tok.size() != schema.feature_count() + 1 || tok[0] != "segment_id")
        throw ParseError(feature_file.string() + ":" + std::to_string(line_no) +
                         ": header must be 'segment_id' followed by the schema feature names");
      for (std::size_t n = 0; n < schema.feature_count(); ++n)
        if (tok[n + 1] != schema.names[n])
          throw ParseError(feature_file.string() + ":" + std::to_string(line_no) +
                           ": column '" + tok[n + 1] + "' does not match schema feature '" +
                           schema.names[n] + "'");
      continue;
    }
    if (tok.size() != schema.feature_count() + 1)
      throw ParseError(feature_file.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(schema.feature_count() + 1) + " columns, got " +
                       std::to_string(tok.size()));
    std::vector<std::size_t> cats;
    for (std::size_t n = 0; n < schema.feature_count(); ++n) {
      std::size_t c = parse_index(tok[n + 1], feature_file, line_no);
      if (c >= schema.cardinalities[n])
        throw ParseError(feature_file.string() + ":" + std::to_string(line_no) + ": category " +
                         std::to_string(c) + " of '" + schema.names[n] +
                         "' outside cardinality " + std::to_string(schema.cardinalities[n]));
      cats.push_back(c);
    }
    rows.emplace_back(parse_index(tok[0], feature_file, line_no), std::move(cats));
  }
  if (rows.empty()) throw ParseError(feature_file.string() + ": no segment rows");
  const std::size_t n = rows.size();
  std::vector<std::vector<std::size_t>> features(n);
  std::vector<bool> filled(n, false);
  for (auto& [id, cats] : rows) {
    if (id >= n)
      throw ParseError(feature_file.string() + ": segment id " + std::to_string(id) +
                       " outside dense range [0," + std::to_string(n) + ")");
    if (filled[id])
      throw ParseError(feature_file.string() + ": segment id " + std::to_string(id) +
                       " listed twice");
    filled[id] = true;
    features[id] = std::move(cats);
  }

  auto ein = open_in(edge_file);
  std::vector<std::pair<SegmentId, SegmentId>> edges;
  std::set<std::pair<SegmentId, SegmentId>> seen;
  line_no = 0;
  while (std::getline(ein, line)) {
    ++line_no;
    line = strip_cr(line);
    if (skippable(line)) continue;
    auto tok = split_tabs(line);
    auto where = edge_file.string() + ":" + std::to_string(line_no);
    if (tok.size() != 2) throw ParseError(where + ": expected 'src<TAB>dst'");
    SegmentId a = parse_index(tok[0], edge_file, line_no);
    SegmentId b = parse_index(tok[1], edge_file, line_no);
    for (SegmentId id : {a, b})
      if (id >= n)
        throw ParseError(where + ": segment id " + std::to_string(id) + " not declared (" +
                         std::to_string(n) + " segments)");
    if (a == b) throw ParseError(where + ": self-loop on segment " + std::to_string(a));
    if (!seen.insert({a, b}).second)
      throw ParseError(where + ": duplicate edge " + std::to_string(a) + "->" +
                       std::to_string(b));
    edges.emplace_back(a, b);
  }
  return RoadNetwork(n, edges, schema, std::move(features));
}

void save_schema(const FeatureSchema& schema, const std::filesystem::path& schema_file) {
  std::ofstream out(schema_file);
  if (!out) throw Error("cannot write " + schema_file.string());
  for (std::size_t n = 0; n < schema.feature_count(); ++n)
    out << schema.names[n] << '\t' << schema.cardinalities[n] << '\n';
}

void save_network(const RoadNetwork& net, const std::filesystem::path& edge_file,
                  const std::filesystem::path& feature_file) {
  std::ofstream eout(edge_file);
  if (!eout) throw Error("cannot write " + edge_file.string());
  eout << "# src\tdst\n";
  for (auto [a, b] : net.edges()) eout << a << '\t' << b << '\n';

  std::ofstream fout(feature_file);
  if (!fout) throw Error("cannot write " + feature_file.string());
  fout << "segment_id";
  for (const auto& name : net.schema().names) fout << '\t' << name;
  fout << '\n';
  for (SegmentId v = 0; v < net.segment_count(); ++v) {
    fout << v;
    for (std::size_t c : net.features(v)) fout << '\t' << c;
    fout << '\n';
  }
}

}  // namespace dyroad
