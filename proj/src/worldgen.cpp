#include "dyroad/worldgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dyroad/error.hpp"
#include "dyroad/random.hpp"
#include "dyroad/temporal.hpp"

namespace dyroad {
namespace {

constexpr std::size_t kRoadTypeArterial = 0;
constexpr std::size_t kRoadTypeLocal = 1;

struct Cell {
  std::size_t x, y;
};

Cell cell_of(const WorldConfig& cfg, SegmentId v) { return {v % cfg.grid_width, v / cfg.grid_width}; }

double center_distance(const WorldConfig& cfg, SegmentId v) {
  Cell c = cell_of(cfg, v);
  double cx = (static_cast<double>(cfg.grid_width) - 1.0) / 2.0;
  double cy = (static_cast<double>(cfg.grid_height) - 1.0) / 2.0;
  return std::abs(static_cast<double>(c.x) - cx) + std::abs(static_cast<double>(c.y) - cy);
}

// Heading each segment's traffic prefers: arterial rows run east or west in
// alternation, local columns run south or north by column parity.
bool is_preferred(const WorldConfig& cfg, SegmentId from, SegmentId to) {
  Cell a = cell_of(cfg, from);
  Cell b = cell_of(cfg, to);
  if (is_arterial_row(a.y)) {
    bool east = (a.y / 3) % 2 == 0;
    return b.y == a.y && (east ? b.x == a.x + 1 : b.x + 1 == a.x);
  }
  bool south = a.x % 2 == 0;
  return b.x == a.x && (south ? b.y == a.y + 1 : b.y + 1 == a.y);
}

// Positive in the first half of the day (inbound), negative in the second.
double inbound_signal(std::size_t frame, std::size_t frames) {
  return std::sin(2.0 * std::numbers::pi * static_cast<double>(frame) /
                  static_cast<double>(frames));
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc()) throw Error("cannot format value");
  return std::string(buf, ptr);
}

double parse_double(std::string_view tok, const std::filesystem::path& file, std::size_t line_no) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError(file.string() + ":" + std::to_string(line_no) + ": bad number '" +
                     std::string(tok) + "'");
  return v;
}

std::size_t parse_size(std::string_view tok, const std::filesystem::path& file,
                       std::size_t line_no) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
    throw ParseError(file.string() + ":" + std::to_string(line_no) + ": bad integer '" +
                     std::string(tok) + "'");
  return v;
}

Route sample_route(const World& world, const WorldConfig& cfg, SegmentId start, Rng& rng) {
  const auto& net = world.network;
  const auto& truth = world.truth;
  std::uniform_int_distribution<std::size_t> len_dist(cfg.min_route_length, cfg.max_route_length);
  std::uniform_int_distribution<std::size_t> day_dist(0, cfg.days - 1);
  std::uniform_int_distribution<std::size_t> frame_dist(0, cfg.frames_per_day - 1);
  std::uniform_real_distribution<double> offset(0.0, cfg.frame_seconds());
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma);

  const std::size_t length = len_dist(rng);
  double t = static_cast<double>(day_dist(rng)) * cfg.day_seconds +
             static_cast<double>(frame_dist(rng)) * cfg.frame_seconds() + offset(rng);
  Route route;
  SegmentId v = start;
  for (std::size_t i = 0; i < length; ++i) {
    route.segments.push_back(v);
    route.timestamps.push_back(t);
    if (i + 1 == length) break;
    std::size_t f = frame_of(t, cfg.frames_per_day, cfg.frame_seconds());
    const auto& probs = truth.transition[f][v];
    std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
    SegmentId next = net.neighbors(v)[pick(rng)];
    t += truth.travel_time[v][f] * std::exp(noise(rng));
    v = next;
  }
  return route;
}

}  // namespace

bool is_arterial_row(std::size_t y) { return y % 3 == 1; }

SegmentId grid_segment(const WorldConfig& cfg, std::size_t x, std::size_t y) {
  return y * cfg.grid_width + x;
}

FeatureSchema grid_schema() { return FeatureSchema{{"road_type", "lanes"}, {2, 3}}; }

void WorldConfig::validate(std::size_t max_sequence_length) const {
  if (grid_width == 0 || grid_height == 0) throw Error("world: grid dimensions must be positive");
  if (grid_width * grid_height < 2) throw Error("world: grid needs at least two segments");
  if (frames_per_day == 0) throw Error("world: frames_per_day must be positive");
  if (n_trajectories == 0) throw Error("world: n_trajectories must be positive");
  if (min_route_length < 3) throw Error("world: minimum route length must be >= 3");
  if (max_route_length < min_route_length)
    throw Error("world: maximum route length below minimum");
  if (max_route_length > max_sequence_length)
    throw Error("world: maximum route length " + std::to_string(max_route_length) +
                " exceeds encoder limit " + std::to_string(max_sequence_length));
  if (!(regime_strength >= 0.0 && regime_strength <= 1.0))
    throw Error("world: regime_strength must lie in [0, 1]");
  if (!(day_seconds > 0.0) || days == 0) throw Error("world: day length and day count must be positive");
  if (!(segment_length > 0.0) || !(arterial_speed > 0.0) || !(local_speed > 0.0))
    throw Error("world: lengths and speeds must be positive");
  if (!(noise_sigma >= 0.0)) throw Error("world: noise_sigma must be non-negative");
}

World generate_world(const WorldConfig& cfg) {
  const std::size_t w = cfg.grid_width;
  const std::size_t h = cfg.grid_height;
  const std::size_t n = w * h;
  std::vector<std::pair<SegmentId, SegmentId>> edges;
  std::vector<std::vector<std::size_t>> features(n);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      SegmentId v = grid_segment(cfg, x, y);
      if (x + 1 < w) edges.emplace_back(v, grid_segment(cfg, x + 1, y));
      if (x > 0) edges.emplace_back(v, grid_segment(cfg, x - 1, y));
      if (y + 1 < h) edges.emplace_back(v, grid_segment(cfg, x, y + 1));
      if (y > 0) edges.emplace_back(v, grid_segment(cfg, x, y - 1));
      bool arterial = is_arterial_row(y);
      std::size_t lanes = arterial ? 2 : (x / 3) % 2;
      features[v] = {arterial ? kRoadTypeArterial : kRoadTypeLocal, lanes};
    }
  }
  World world{RoadNetwork(n, edges, grid_schema(), std::move(features)), GroundTruth{}};

  GroundTruth& truth = world.truth;
  const std::size_t frames = cfg.frames_per_day;
  truth.frames = frames;
  truth.segment_length = cfg.segment_length;
  truth.speed.assign(n, std::vector<double>(frames));
  truth.travel_time.assign(n, std::vector<double>(frames));
  const double span = std::max<double>(1.0, static_cast<double>(w + h) - 2.0);
  for (SegmentId v = 0; v < n; ++v) {
    Cell c = cell_of(cfg, v);
    double base = is_arterial_row(c.y) ? cfg.arterial_speed : cfg.local_speed;
    double phase = 0.5 * std::numbers::pi * static_cast<double>(c.x + c.y) / span;
    for (std::size_t f = 0; f < frames; ++f) {
      double angle = 2.0 * std::numbers::pi * static_cast<double>(f) / static_cast<double>(frames);
      // floor keeps speeds positive at full modulation
      double factor = std::max(0.05, 1.0 + cfg.regime_strength * std::sin(angle + phase));
      truth.speed[v][f] = base * factor;
      truth.travel_time[v][f] = cfg.segment_length / truth.speed[v][f];
    }
  }

  truth.transition.assign(frames, std::vector<std::vector<double>>(n));
  for (std::size_t f = 0; f < frames; ++f) {
    double inbound = cfg.regime_strength * cfg.center_bias * inbound_signal(f, frames);
    for (SegmentId v = 0; v < n; ++v) {
      const auto& nbrs = world.network.neighbors(v);
      std::vector<double> logits(nbrs.size());
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        double closer = center_distance(cfg, v) - center_distance(cfg, nbrs[k]);
        logits[k] = (is_preferred(cfg, v, nbrs[k]) ? cfg.flow_preference : 0.0) + inbound * closer;
      }
      double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (double& l : logits) l /= z;
      truth.transition[f][v] = std::move(logits);
    }
  }
  return world;
}

Corpus generate_corpus(const World& world, const WorldConfig& cfg) {
  const std::size_t n = world.network.segment_count();
  Rng rng(derive_seed(cfg.seed, "corpus"));
  std::uniform_int_distribution<SegmentId> start_dist(0, n - 1);
  Corpus corpus;
  corpus.reserve(cfg.n_trajectories);
  for (std::size_t r = 0; r < cfg.n_trajectories; ++r)
    corpus.push_back(sample_route(world, cfg, start_dist(rng), rng));

  // Re-seed trailing routes from uncovered segments until every segment is visited.
  std::vector<bool> covered(n, false);
  for (const auto& route : corpus)
    for (SegmentId v : route.segments) covered[v] = true;
  std::size_t replace = corpus.size();
  for (SegmentId v = 0; v < n; ++v) {
    if (covered[v]) continue;
    if (replace == 0)
      throw Error("corpus: segment " + std::to_string(v) +
                  " is never visited; increase n_trajectories");
    Route& slot = corpus[--replace];
    slot = sample_route(world, cfg, v, rng);
    for (SegmentId u : slot.segments) covered[u] = true;
  }
  if (!std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }))
    throw Error("corpus: coverage retry budget exhausted; increase n_trajectories");
  return corpus;
}

std::vector<Corpus> split_corpus(const Corpus& corpus, const std::vector<double>& ratios,
                                 std::uint64_t seed) {
  if (ratios.empty()) throw Error("split: no ratios");
  double total = std::accumulate(ratios.begin(), ratios.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw Error("split: ratios must sum to 1");
  for (double r : ratios)
    if (r < 0.0) throw Error("split: negative ratio");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Corpus> parts(ratios.size());
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t p = 0; p < ratios.size(); ++p) {
    cum += ratios[p];
    std::size_t end = p + 1 == ratios.size()
                          ? corpus.size()
                          : static_cast<std::size_t>(std::llround(cum * static_cast<double>(corpus.size())));
    if (end <= begin)
      throw Error("split: partition " + std::to_string(p) + " would be empty");
    for (std::size_t i = begin; i < end; ++i) parts[p].push_back(corpus[order[i]]);
    begin = end;
  }
  return parts;
}

void validate_route(const RoadNetwork& net, const Route& route) {
  if (route.segments.size() != route.timestamps.size())
    throw Error("route: segment and timestamp counts differ");
  if (route.segments.empty()) throw Error("route: empty");
  for (std::size_t i = 0; i < route.size(); ++i) {
    if (route.segments[i] >= net.segment_count())
      throw Error("route: unknown segment " + std::to_string(route.segments[i]));
    if (i == 0) continue;
    if (!net.has_edge(route.segments[i - 1], route.segments[i]))
      throw Error("route: " + std::to_string(route.segments[i - 1]) + "->" +
                  std::to_string(route.segments[i]) + " is not a network edge");
    if (!(route.timestamps[i] > route.timestamps[i - 1]))
      throw Error("route: timestamps not strictly increasing at position " + std::to_string(i));
  }
}

void save_corpus(const Corpus& corpus, const std::string& header,
                 const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  std::istringstream hs(header);
  for (std::string line; std::getline(hs, line);) out << "# " << line << '\n';
  for (const auto& route : corpus) {
    for (std::size_t i = 0; i < route.size(); ++i) {
      if (i) out << ',';
      out << route.segments[i] << ':' << format_double(route.timestamps[i]);
    }
    out << '\n';
  }
}

Corpus load_corpus(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    Route route;
    std::string_view rest(line);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      std::string_view item = rest.substr(0, comma);
      auto colon = item.find(':');
      if (colon == std::string_view::npos)
        throw ParseError(file.string() + ":" + std::to_string(line_no) +
                         ": expected 'segment:timestamp'");
      route.segments.push_back(parse_size(item.substr(0, colon), file, line_no));
      route.timestamps.push_back(parse_double(item.substr(colon + 1), file, line_no));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    corpus.push_back(std::move(route));
  }
  return corpus;
}

void save_truth(const GroundTruth& truth, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "# segment_length\t" << format_double(truth.segment_length) << '\n';
  out << "segment\tframe\tspeed\ttravel_time\n";
  for (std::size_t v = 0; v < truth.speed.size(); ++v)
    for (std::size_t f = 0; f < truth.frames; ++f)
      out << v << '\t' << f << '\t' << format_double(truth.speed[v][f]) << '\t'
          << format_double(truth.travel_time[v][f]) << '\n';
}

GroundTruth load_truth(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open " + file.string());
  GroundTruth truth;
  std::string line;
  std::size_t line_no = 0;
  struct Row {
    std::size_t v, f;
    double speed, tt;
  };
  std::vector<Row> rows;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# segment_length\t", 0) == 0) {
      truth.segment_length = parse_double(std::string_view(line).substr(17), file, line_no);
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string a, b, c, d;
    if (!std::getline(ls, a, '\t') || !std::getline(ls, b, '\t') || !std::getline(ls, c, '\t') ||
        !std::getline(ls, d, '\t'))
      throw ParseError(file.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
    rows.push_back({parse_size(a, file, line_no), parse_size(b, file, line_no),
                    parse_double(c, file, line_no), parse_double(d, file, line_no)});
  }
  std::size_t n = 0;
  for (const auto& r : rows) {
    n = std::max(n, r.v + 1);
    truth.frames = std::max(truth.frames, r.f + 1);
  }
  if (rows.size() != n * truth.frames)
    throw ParseError(file.string() + ": table is not a complete segment x frame grid");
  truth.speed.assign(n, std::vector<double>(truth.frames, 0.0));
  truth.travel_time.assign(n, std::vector<double>(truth.frames, 0.0));
  for (const auto& r : rows) {
    truth.speed[r.v][r.f] = r.speed;
    truth.travel_time[r.v][r.f] = r.tt;
  }
  return truth;
}

}  // namespace dyroad
