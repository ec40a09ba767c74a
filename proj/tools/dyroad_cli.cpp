// dyroad: generate a synthetic city, train segment and trajectory encoders,
// and run the evaluation tasks.
//
// Exit status: 0 ok, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "dyroad/config.hpp"
#include "dyroad/error.hpp"
#include "dyroad/persist.hpp"
#include "dyroad/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dyroad;

namespace {

struct WorldFiles {
  fs::path dir;
  fs::path schema() const { return dir / "schema.tsv"; }
  fs::path edges() const { return dir / "edges.tsv"; }
  fs::path features() const { return dir / "features.tsv"; }
  fs::path truth() const { return dir / "truth.tsv"; }
  fs::path pretrain() const { return dir / "pretrain_routes.txt"; }
  fs::path tasks() const { return dir / "task_routes.txt"; }
};

void require(const fs::path& file, const std::string& producer) {
  if (!fs::exists(file))
    throw Error("missing " + file.string() + "; run `dyroad " + producer + "` first");
}

Dataset load_dataset(const WorldFiles& w) {
  for (const auto& f : {w.schema(), w.edges(), w.features(), w.truth(), w.pretrain(), w.tasks()})
    require(f, "gen-world");
  Dataset d{World{load_network(w.edges(), w.features(), load_schema(w.schema())), load_truth(w.truth())},
            load_corpus(w.pretrain()), load_corpus(w.tasks())};
  return d;
}

void write_reports(const std::vector<TaskReport>& reports, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  write_reports_csv(reports, out);
  print_reports(reports, std::cout);
}

struct Common {
  std::string config_file;
  std::string out_dir;
  std::string variant = "full";

  RunConfig load() const {
    RunConfig cfg = config_file.empty() ? RunConfig{} : load_run_config(config_file);
    if (config_file.empty()) cfg.transformer.d_ff = 4 * cfg.transformer.d_model;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    apply_environment(cfg);
    return cfg.resolved();
  }
  fs::path variant_dir(const RunConfig& cfg) const { return cfg.out_dir / variant; }
};

int cmd_gen_world(const Common& c) {
  auto cfg = c.load();
  auto data = build_dataset(cfg);
  WorldFiles w{cfg.out_dir / "world"};
  fs::create_directories(w.dir);
  const auto& net = data.world.network;
  save_schema(net.schema(), w.schema());
  save_network(net, w.edges(), w.features());
  save_truth(data.world.truth, w.truth());
  save_corpus(data.pretrain, "pre-training routes", w.pretrain());
  save_corpus(data.tasks, "task routes", w.tasks());
  std::ofstream(cfg.out_dir / "config.ini") << dump_run_config(cfg);
  std::cout << "world: " << net.segment_count() << " segments, " << net.edge_count() << " edges, "
            << data.pretrain.size() << " + " << data.tasks.size() << " routes -> " << w.dir << '\n';
  return 0;
}

int cmd_train_skipgram(const Common& c, bool dump_graphs) {
  auto cfg = c.load();
  Variant v = parse_variant(c.variant);
  auto data = load_dataset(WorldFiles{cfg.out_dir / "world"});
  fs::path dir = c.variant_dir(cfg);
  fs::create_directories(dir);
  if (dump_graphs) dump_transport_graphs(variant_graphs(data, cfg, v), dir / "transport_graphs.tsv");
  auto result = run_skipgram(data, cfg, v);
  save_embeddings(result.embeddings, dir / "embeddings.bin");
  write_loss_trace(result.trace, dir / "skipgram_loss.csv");
  const auto& last = result.trace.back();
  std::cout << "skip-gram (" << c.variant << "): final loss " << last.total << " -> "
            << (dir / "embeddings.bin") << '\n';
  return 0;
}

int cmd_pretrain(const Common& c) {
  auto cfg = c.load();
  Variant v = parse_variant(c.variant);
  auto data = load_dataset(WorldFiles{cfg.out_dir / "world"});
  fs::path dir = c.variant_dir(cfg);
  require(dir / "embeddings.bin", "train-skipgram --variant " + c.variant);
  auto emb = load_embeddings(dir / "embeddings.bin");
  PretrainResult trace;
  auto model = run_pretrain(data, emb.embeddings, cfg, v, &trace);
  save_checkpoint(model, dir / "checkpoint.bin");
  write_pretrain_trace(trace.trace, dir / "pretrain_loss.csv");
  // Re-export with the learned frame table so e_t travels with the embeddings.
  if (model.cfg.dynamic) save_embeddings(emb.embeddings, dir / "embeddings_with_frames.bin", model.frame.table());
  const auto& last = trace.trace.back();
  std::cout << "pre-training (" << c.variant << "): recovery " << last.recovery << ", discrimination "
            << last.discrimination << " -> " << (dir / "checkpoint.bin") << '\n';
  return 0;
}

TaskSelection parse_tasks(const std::string& task) {
  TaskSelection t{false, false, false};
  if (task == "all") return TaskSelection{};
  if (task == "speed") t.speed = true;
  else if (task == "travel_time") t.travel_time = true;
  else if (task == "destination") t.destination = true;
  else throw CLI::ValidationError("--task", "expected speed, travel_time, destination or all");
  return t;
}

int cmd_eval(const Common& c, const std::string& task) {
  auto tasks = parse_tasks(task);
  auto cfg = c.load();
  Variant v = parse_variant(c.variant);
  auto data = load_dataset(WorldFiles{cfg.out_dir / "world"});
  fs::path dir = c.variant_dir(cfg);
  require(dir / "embeddings.bin", "train-skipgram --variant " + c.variant);
  auto emb = load_embeddings(dir / "embeddings.bin");
  std::optional<TrajectoryModel> model;
  if (tasks.needs_model()) {
    require(dir / "checkpoint.bin", "pretrain --variant " + c.variant);
    model = load_checkpoint(dir / "checkpoint.bin");
  }
  auto reports = evaluate(data, emb.embeddings, model ? &*model : nullptr, cfg, v, tasks);
  write_reports(reports, dir / ("report_" + task + ".csv"));
  return 0;
}

int cmd_ablation(const Common& c, const std::string& task) {
  auto tasks = parse_tasks(task);
  auto cfg = c.load();
  WorldFiles w{cfg.out_dir / "world"};
  auto data = load_dataset(w);
  std::vector<TaskReport> all;
  for (Variant v : kAllVariants) {
    std::cerr << "variant " << variant_name(v) << "...\n";
    auto reports = run_ablation(v, data, cfg, tasks);
    all.insert(all.end(), reports.begin(), reports.end());
  }
  write_reports(all, cfg.out_dir / "ablation.csv");
  return 0;
}

int cmd_inspect(const std::string& file, std::size_t segment, std::size_t k) {
  auto emb = load_embeddings(file);
  const auto& f = emb.embeddings.target;
  const std::size_t n = f.dim(0), d = f.dim(1);
  if (segment >= n) throw Error("segment " + std::to_string(segment) + " not in table of " + std::to_string(n));
  auto row = [&](std::size_t v) { return f.values().subspan(v * d, d); };
  auto norm = [&](std::size_t v) {
    auto r = row(v);
    return std::sqrt(std::inner_product(r.begin(), r.end(), r.begin(), 0.0));
  };
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t v = 0; v < n; ++v) {
    auto a = row(segment), b = row(v);
    double denom = norm(segment) * norm(v);
    double cos = denom > 0.0 ? std::inner_product(a.begin(), a.end(), b.begin(), 0.0) / denom : 0.0;
    sims.push_back({-cos, v});
  }
  std::sort(sims.begin(), sims.end());
  for (std::size_t i = 0; i < std::min(k, n); ++i)
    std::cout << sims[i].second << '\t' << -sims[i].first << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-aware road segment and trajectory representations on a synthetic city"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool with_variant) {
    sub->add_option("-c,--config", common.config_file, "key=value config file")->check(CLI::ExistingFile);
    sub->add_option("-o,--out", common.out_dir, "run directory (overrides [run] out_dir)");
    if (with_variant)
      sub->add_option("--variant", common.variant, "full, G, S, T or ST")
          ->check(CLI::IsMember({"full", "G", "S", "T", "ST"}));
  };

  auto* gen = app.add_subcommand("gen-world", "generate the grid city, ground truth and route corpus");
  add_common(gen, false);
  auto* sg = app.add_subcommand("train-skipgram", "train segment embeddings");
  add_common(sg, true);
  bool dump_graphs = false;
  sg->add_flag("--dump-graphs", dump_graphs, "also write the per-frame transport graphs");
  auto* pt = app.add_subcommand("pretrain", "pre-train the trajectory encoder");
  add_common(pt, true);
  auto* ev = app.add_subcommand("eval", "run evaluation tasks");
  add_common(ev, true);
  std::string task = "all";
  ev->add_option("--task", task, "speed, travel_time, destination or all")
      ->check(CLI::IsMember({"speed", "travel_time", "destination", "all"}));
  auto* ab = app.add_subcommand("ablation", "train and evaluate every variant");
  add_common(ab, false);
  ab->add_option("--task", task, "speed, travel_time, destination or all")
      ->check(CLI::IsMember({"speed", "travel_time", "destination", "all"}));
  auto* in = app.add_subcommand("inspect", "nearest segments by cosine similarity");
  std::string emb_file;
  std::size_t segment = 0, k = 5;
  in->add_option("--embeddings", emb_file, "embedding file")->required()->check(CLI::ExistingFile);
  in->add_option("--segment", segment, "query segment")->required();
  in->add_option("-k", k, "neighbours to list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_world(common);
    if (*sg) return cmd_train_skipgram(common, dump_graphs);
    if (*pt) return cmd_pretrain(common);
    if (*ev) return cmd_eval(common, task);
    if (*ab) return cmd_ablation(common, task);
    if (*in) return cmd_inspect(emb_file, segment, k);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "dyroad: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "dyroad: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
