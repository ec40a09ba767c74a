#include "dyroad/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dyroad/error.hpp"
#include "dyroad/random.hpp"

namespace dyroad {
namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& v, const std::string& where) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ParseError(where + ": '" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError(where + ": '" + v + "' is not a boolean");
}

std::vector<double> parse_list(const std::string& v, const std::string& where) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<double>(item, where));
  }
  return out;
}

std::string fmt(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, ptr);
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

template <class T>
Field size_field(T RunConfig::*section, std::size_t T::*member) {
  return {[=](RunConfig& c, const std::string& v, const std::string& w) {
            (c.*section).*member = parse_number<std::size_t>(v, w);
          },
          [=](const RunConfig& c) { return std::to_string((c.*section).*member); }};
}

template <class T>
Field real_field(T RunConfig::*section, double T::*member) {
  return {[=](RunConfig& c, const std::string& v, const std::string& w) {
            (c.*section).*member = parse_number<double>(v, w);
          },
          [=](const RunConfig& c) { return fmt((c.*section).*member); }};
}

template <class T>
Field bool_field(T RunConfig::*section, bool T::*member) {
  return {[=](RunConfig& c, const std::string& v, const std::string& w) {
            (c.*section).*member = parse_bool(v, w);
          },
          [=](const RunConfig& c) { return std::string((c.*section).*member ? "true" : "false"); }};
}

// Ordered for the canonical dump.
const std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>>& schema() {
  static const auto table = [] {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, Field>>>> t;
    t.push_back({"run",
                 {{"seed",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.seed = parse_number<std::uint64_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.seed); }}},
                  {"out_dir",
                   {[](RunConfig& c, const std::string& v, const std::string&) { c.out_dir = v; },
                    [](const RunConfig& c) { return c.out_dir.string(); }}},
                  {"gamma",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.gamma = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.gamma); }}},
                  {"pretrain_fraction",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.pretrain_fraction = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.pretrain_fraction); }}}}});
    auto W = &RunConfig::world;
    t.push_back({"world",
                 {{"grid_width", size_field(W, &WorldConfig::grid_width)},
                  {"grid_height", size_field(W, &WorldConfig::grid_height)},
                  {"frames_per_day", size_field(W, &WorldConfig::frames_per_day)},
                  {"n_trajectories", size_field(W, &WorldConfig::n_trajectories)},
                  {"min_route_length", size_field(W, &WorldConfig::min_route_length)},
                  {"max_route_length", size_field(W, &WorldConfig::max_route_length)},
                  {"regime_strength", real_field(W, &WorldConfig::regime_strength)},
                  {"day_seconds", real_field(W, &WorldConfig::day_seconds)},
                  {"days", size_field(W, &WorldConfig::days)},
                  {"segment_length", real_field(W, &WorldConfig::segment_length)},
                  {"arterial_speed", real_field(W, &WorldConfig::arterial_speed)},
                  {"local_speed", real_field(W, &WorldConfig::local_speed)},
                  {"noise_sigma", real_field(W, &WorldConfig::noise_sigma)},
                  {"flow_preference", real_field(W, &WorldConfig::flow_preference)},
                  {"center_bias", real_field(W, &WorldConfig::center_bias)}}});
    auto S = &RunConfig::skipgram;
    t.push_back({"skipgram",
                 {{"dim", size_field(S, &SkipGramConfig::dim)},
                  {"negatives", size_field(S, &SkipGramConfig::negatives)},
                  {"aux_weights",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.skipgram.aux_weights = parse_list(v, w);
                    },
                    [](const RunConfig& c) {
                      std::string s;
                      for (std::size_t i = 0; i < c.skipgram.aux_weights.size(); ++i)
                        s += (i ? "," : "") + fmt(c.skipgram.aux_weights[i]);
                      return s;
                    }}},
                  {"epochs", size_field(S, &SkipGramConfig::epochs)},
                  {"lr", real_field(S, &SkipGramConfig::lr)},
                  {"min_lr_fraction", real_field(S, &SkipGramConfig::min_lr_fraction)},
                  {"dynamic", bool_field(S, &SkipGramConfig::dynamic)},
                  {"sigma", real_field(S, &SkipGramConfig::sigma)},
                  {"walks_per_node", size_field(S, &SkipGramConfig::walks_per_node)},
                  {"walk_length", size_field(S, &SkipGramConfig::walk_length)},
                  {"window", size_field(S, &SkipGramConfig::window)},
                  {"batch_positions", size_field(S, &SkipGramConfig::batch_positions)}}});
    auto T = &RunConfig::transformer;
    t.push_back({"transformer",
                 {{"layers", size_field(T, &TransformerConfig::layers)},
                  {"heads", size_field(T, &TransformerConfig::heads)},
                  {"d_model", size_field(T, &TransformerConfig::d_model)},
                  {"d_ff", size_field(T, &TransformerConfig::d_ff)},
                  {"max_len", size_field(T, &TransformerConfig::max_len)},
                  {"mask_ratio", real_field(T, &TransformerConfig::mask_ratio)},
                  {"disc_weight", real_field(T, &TransformerConfig::disc_weight)},
                  {"dropout", real_field(T, &TransformerConfig::dropout)},
                  {"embed_init_std", real_field(T, &TransformerConfig::embed_init_std)},
                  {"lr", real_field(T, &TransformerConfig::lr)},
                  {"beta1", real_field(T, &TransformerConfig::beta1)},
                  {"beta2", real_field(T, &TransformerConfig::beta2)},
                  {"adam_eps", real_field(T, &TransformerConfig::adam_eps)},
                  {"batch_size", size_field(T, &TransformerConfig::batch_size)},
                  {"epochs", size_field(T, &TransformerConfig::epochs)},
                  {"dynamic", bool_field(T, &TransformerConfig::dynamic)},
                  {"sigma", real_field(T, &TransformerConfig::sigma)}}});
    t.push_back({"speed",
                 {{"mask_fraction",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.mask_fraction = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.tasks.speed.mask_fraction); }}},
                  {"folds",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.folds = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.speed.folds); }}},
                  {"hidden",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.hidden = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.speed.hidden); }}},
                  {"epochs",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.epochs = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.speed.epochs); }}},
                  {"lr",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.lr = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.tasks.speed.lr); }}},
                  {"batch",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.batch = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.speed.batch); }}},
                  {"val_fraction",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.val_fraction = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.tasks.speed.val_fraction); }}},
                  {"patience",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.speed.patience = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.speed.patience); }}}}});
    t.push_back({"heads",
                 {{"epochs",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.heads.epochs = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.heads.epochs); }}},
                  {"lr",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.heads.lr = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.tasks.heads.lr); }}},
                  {"batch",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.heads.batch = parse_number<std::size_t>(v, w);
                    },
                    [](const RunConfig& c) { return std::to_string(c.tasks.heads.batch); }}},
                  {"train_fraction",
                   {[](RunConfig& c, const std::string& v, const std::string& w) {
                      c.tasks.heads.train_fraction = parse_number<double>(v, w);
                    },
                    [](const RunConfig& c) { return fmt(c.tasks.heads.train_fraction); }}}}});
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& [name, fields] : schema()) {
    if (name != section) continue;
    for (const auto& [k, f] : fields)
      if (k == key) return &f;
  }
  return nullptr;
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  bool d_ff_set = false;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = origin + ":" + std::to_string(lineno);
    auto hash = line.find_first_of("#;");
    std::string s = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError(where + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      bool known = false;
      for (const auto& [name, fields] : schema()) known |= name == section;
      if (!known) throw ParseError(where + ": unknown section [" + section + "]");
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (section.empty()) throw ParseError(where + ": key '" + key + "' outside any section");
    const Field* f = find_field(section, key);
    if (f == nullptr) throw ParseError(where + ": unknown key '" + key + "' in [" + section + "]");
    f->set(cfg, value, where);
    if (section == "transformer" && key == "d_ff") d_ff_set = true;
  }
  if (!d_ff_set) cfg.transformer.d_ff = 4 * cfg.transformer.d_model;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), file.string());
}

std::string dump_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [section, fields] : schema()) {
    out += "[" + section + "]\n";
    for (const auto& [key, f] : fields) out += key + " = " + f.get(cfg) + "\n";
    out += "\n";
  }
  return out;
}

void apply_environment(RunConfig& cfg) {
  if (const char* env = std::getenv("DYROAD_SEED"); env != nullptr && *env != '\0')
    cfg.seed = parse_number<std::uint64_t>(env, "DYROAD_SEED");
}

void RunConfig::validate() const {
  if (!(gamma >= 0.0)) throw Error("config: gamma must be non-negative");
  if (!(pretrain_fraction > 0.0 && pretrain_fraction < 1.0))
    throw Error("config: pretrain_fraction must be in (0, 1)");
  if (skipgram.dim != transformer.d_model)
    throw Error("config: transformer.d_model (" + std::to_string(transformer.d_model) +
                ") must equal skipgram.dim (" + std::to_string(skipgram.dim) + ")");
  world.validate(transformer.max_len);
  skipgram.validate();
  transformer.validate();
  const auto& sp = tasks.speed;
  if (!(sp.mask_fraction > 0.0 && sp.mask_fraction < 1.0) || sp.folds == 0 || sp.hidden == 0 ||
      sp.batch == 0 || !(sp.lr > 0.0) || !(sp.val_fraction >= 0.0 && sp.val_fraction < 1.0))
    throw Error("config: invalid [speed] settings");
  const auto& h = tasks.heads;
  if (h.batch == 0 || !(h.lr > 0.0) || !(h.train_fraction > 0.0 && h.train_fraction < 1.0))
    throw Error("config: invalid [heads] settings");
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.world.seed = derive_seed(seed, "world");
  r.skipgram.seed = derive_seed(seed, "skipgram");
  r.transformer.seed = derive_seed(seed, "transformer");
  r.tasks.seed = derive_seed(seed, "downstream");
  r.transformer.frames_per_day = world.frames_per_day;
  r.transformer.frame_seconds = world.frame_seconds();
  r.validate();
  return r;
}

std::string RunConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(stable_hash(dump_run_config(*this))));
  return buf;
}

}  // namespace dyroad
