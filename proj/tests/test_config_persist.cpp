#include <gtest/gtest.h>

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <sys/wait.h>
#include <string>

#include "dyroad/config.hpp"
#include "dyroad/error.hpp"
#include "dyroad/persist.hpp"
#include "dyroad/pipeline.hpp"
#include "dyroad/random.hpp"
#include "tempdir.hpp"

using namespace dyroad;
using dyroad::testkit::read_bytes;
using dyroad::testkit::TempDir;

namespace {

const char* kTinyConfig = R"([run]
seed = 5
gamma = 1
[world]
grid_width = 3
grid_height = 3
n_trajectories = 400
min_route_length = 5
max_route_length = 12
[skipgram]
dim = 8
epochs = 2
walks_per_node = 2
walk_length = 8
window = 2
[transformer]
d_model = 8
heads = 2
epochs = 1
batch_size = 16
[speed]
folds = 4
epochs = 5
[heads]
epochs = 3
)";

RunConfig tiny_run() { return parse_run_config(kTinyConfig).resolved(); }

// Plain FNV-1a 64, written out independently of the library.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string parse_error_of(const std::string& text) {
  try {
    parse_run_config(text, "run.ini");
  } catch (const ParseError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfigParse, ReadsSectionsCommentsAndLists) {
  auto cfg = parse_run_config(R"(
# comment
[run]
seed = 99   ; trailing comment
gamma = 0.5
[skipgram]
aux_weights = 0.7, 2.5
dynamic = no
[transformer]
d_model = 64
)");
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.gamma, 0.5);
  EXPECT_EQ(cfg.skipgram.aux_weights, (std::vector<double>{0.7, 2.5}));
  EXPECT_FALSE(cfg.skipgram.dynamic);
  EXPECT_EQ(cfg.transformer.d_model, 64u);
  EXPECT_EQ(cfg.transformer.d_ff, 256u);
}

TEST(RunConfigParse, ExplicitFfnWidthIsKept) {
  auto cfg = parse_run_config("[transformer]\nd_model = 64\nd_ff = 100\n");
  EXPECT_EQ(cfg.transformer.d_ff, 100u);
}

TEST(RunConfigParse, ErrorsNameFileAndLine) {
  EXPECT_NE(parse_error_of("[run]\nseed = 1\nbogus = 2\n").find("run.ini:3"), std::string::npos);
  EXPECT_NE(parse_error_of("[nowhere]\n").find("run.ini:1"), std::string::npos);
  EXPECT_NE(parse_error_of("seed = 1\n").find("outside any section"), std::string::npos);
  EXPECT_NE(parse_error_of("[run\n").find("malformed"), std::string::npos);
  EXPECT_NE(parse_error_of("[run]\n\nseed = x1\n").find("run.ini:3"), std::string::npos);
  EXPECT_NE(parse_error_of("[skipgram]\ndynamic = maybe\n").find("boolean"), std::string::npos);
  EXPECT_NE(parse_error_of("[world]\ngrid_width\n").find("key = value"), std::string::npos);
}

TEST(RunConfigParse, DumpParsesBackToTheSameConfig) {
  auto cfg = parse_run_config(kTinyConfig);
  cfg.skipgram.aux_weights = {0.25, 3.0};
  cfg.world.regime_strength = 0.1 + 0.2;  // not exactly representable in short decimal
  auto text = dump_run_config(cfg);
  auto back = parse_run_config(text);
  EXPECT_EQ(dump_run_config(back), text);
  EXPECT_EQ(back.world.regime_strength, cfg.world.regime_strength);
  EXPECT_EQ(back.digest(), cfg.digest());
}

TEST(RunConfigParse, LoadReportsMissingFile) {
  TempDir dir;
  EXPECT_THROW(load_run_config(dir / "absent.ini"), Error);
  auto file = dir.write("a.ini", "[run]\nseed = 3\n[world]\nbad = 1\n");
  try {
    load_run_config(file);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(file.string() + ":4"), std::string::npos);
  }
}

TEST(RunConfigResolve, ComponentSeedsAreMasterXorTagHash) {
  RunConfig cfg;
  cfg.seed = 12345;
  auto r = cfg.resolved();
  EXPECT_EQ(r.world.seed, 12345u ^ fnv1a("world"));
  EXPECT_EQ(r.skipgram.seed, 12345u ^ fnv1a("skipgram"));
  EXPECT_EQ(r.transformer.seed, 12345u ^ fnv1a("transformer"));
  EXPECT_EQ(r.tasks.seed, 12345u ^ fnv1a("downstream"));
  EXPECT_EQ(stable_hash("split"), fnv1a("split"));
}

TEST(RunConfigResolve, AlignsFramesAndRejectsWidthMismatch) {
  RunConfig cfg;
  cfg.world.frames_per_day = 12;
  auto r = cfg.resolved();
  EXPECT_EQ(r.transformer.frames_per_day, 12u);
  EXPECT_EQ(r.transformer.frame_seconds, 7200.0);
  cfg.skipgram.dim = 64;
  EXPECT_THROW(cfg.resolved(), Error);
  RunConfig bad;
  bad.pretrain_fraction = 1.0;
  EXPECT_THROW(bad.resolved(), Error);
}

TEST(RunConfigResolve, DigestTracksContent) {
  RunConfig a, b;
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.digest().size(), 16u);
  b.seed = a.seed + 1;
  EXPECT_NE(a.digest(), b.digest());
}

TEST(RunConfigEnvironment, SeedOverride) {
  RunConfig cfg;
  cfg.seed = 1;
  ::unsetenv("DYROAD_SEED");
  apply_environment(cfg);
  EXPECT_EQ(cfg.seed, 1u);
  ::setenv("DYROAD_SEED", "777", 1);
  apply_environment(cfg);
  EXPECT_EQ(cfg.seed, 777u);
  ::setenv("DYROAD_SEED", "seven", 1);
  EXPECT_THROW(apply_environment(cfg), ParseError);
  ::unsetenv("DYROAD_SEED");
}

class PersistTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new RunConfig(tiny_run());
    data_ = new Dataset(build_dataset(*cfg_));
    sg_ = new SkipGramResult(run_skipgram(*data_, *cfg_, Variant::Full));
    model_ = new TrajectoryModel(run_pretrain(*data_, sg_->embeddings, *cfg_, Variant::Full));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete sg_;
    delete data_;
    delete cfg_;
  }
  static RunConfig* cfg_;
  static Dataset* data_;
  static SkipGramResult* sg_;
  static TrajectoryModel* model_;
};
RunConfig* PersistTest::cfg_ = nullptr;
Dataset* PersistTest::data_ = nullptr;
SkipGramResult* PersistTest::sg_ = nullptr;
TrajectoryModel* PersistTest::model_ = nullptr;

TEST_F(PersistTest, EmbeddingRoundTripIsBitExact) {
  TempDir dir;
  const auto& es = sg_->embeddings;
  save_embeddings(es, dir / "e.bin", model_->frame.table());
  auto back = load_embeddings(dir / "e.bin");
  EXPECT_EQ(back.embeddings.dim, es.dim);
  EXPECT_EQ(back.embeddings.dynamic, es.dynamic);
  EXPECT_EQ(back.embeddings.cardinalities, es.cardinalities);
  EXPECT_TRUE(same_bits(back.embeddings.target.values(), es.target.values()));
  EXPECT_TRUE(same_bits(back.embeddings.context.values(), es.context.values()));
  EXPECT_TRUE(same_bits(back.embeddings.feature.values(), es.feature.values()));
  EXPECT_TRUE(same_bits(back.embeddings.time.frequencies().values(), es.time.frequencies().values()));
  EXPECT_TRUE(same_bits(back.frames.values(), model_->frame.table().values()));

  save_embeddings(back.embeddings, dir / "again.bin", back.frames);
  EXPECT_EQ(read_bytes(dir / "e.bin"), read_bytes(dir / "again.bin"));
}

TEST_F(PersistTest, EmbeddingFileWithoutFrames) {
  TempDir dir;
  save_embeddings(sg_->embeddings, dir / "e.bin");
  auto back = load_embeddings(dir / "e.bin");
  EXPECT_FALSE(back.frames.defined());
  EXPECT_EQ(read_bytes(dir / "e.bin").substr(0, 8), "DYTOAST1");
}

TEST_F(PersistTest, CheckpointRoundTripIsBitExact) {
  TempDir dir;
  save_checkpoint(*model_, dir / "c.bin");
  auto back = load_checkpoint(dir / "c.bin");
  auto a = model_->parameters();
  auto b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].shape(), b[i].shape()) << i;
    EXPECT_TRUE(same_bits(a[i].values(), b[i].values())) << i;
  }
  EXPECT_EQ(back.time_scale, model_->time_scale);
  EXPECT_EQ(back.cfg.dynamic, model_->cfg.dynamic);
  EXPECT_EQ(back.vocab.segments, model_->vocab.segments);

  std::span<const Route> routes(data_->tasks.data(), 5);
  auto ea = trajectory_embeddings(*model_, routes, true);
  auto eb = trajectory_embeddings(back, routes, true);
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_TRUE(same_bits(ea[i], eb[i]));

  save_checkpoint(back, dir / "again.bin");
  EXPECT_EQ(read_bytes(dir / "c.bin"), read_bytes(dir / "again.bin"));
}

TEST_F(PersistTest, CorruptFilesAreRejected) {
  TempDir dir;
  save_embeddings(sg_->embeddings, dir / "e.bin");
  save_checkpoint(*model_, dir / "c.bin");
  for (const char* name : {"e.bin", "c.bin"}) {
    const std::string bytes = read_bytes(dir / name);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    dir.write("m.bin", bad_magic);
    dir.write("t.bin", bytes.substr(0, bytes.size() - 3));
    dir.write("x.bin", bytes + "junk");
    auto load = [&](const std::string& f) {
      if (std::string(name) == "e.bin") {
        load_embeddings(dir / f);
      } else {
        load_checkpoint(dir / f);
      }
    };
    EXPECT_THROW(load("m.bin"), ParseError) << name;
    EXPECT_THROW(load("t.bin"), ParseError) << name;
    EXPECT_THROW(load("x.bin"), ParseError) << name;
  }
  EXPECT_THROW(load_embeddings(dir / "absent.bin"), Error);
}

TEST(Variants, NamesAndSwitches) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_name(v)), v);
  EXPECT_THROW(parse_variant("X"), Error);
  auto full = switches(Variant::Full);
  EXPECT_TRUE(full.transition_counts && full.skipgram_time && full.transformer_time);
  auto g = switches(Variant::G);
  EXPECT_FALSE(g.transition_counts);
  EXPECT_TRUE(g.skipgram_time && g.transformer_time);
  EXPECT_FALSE(switches(Variant::S).skipgram_time);
  EXPECT_TRUE(switches(Variant::S).transformer_time);
  EXPECT_FALSE(switches(Variant::T).transformer_time);
  EXPECT_TRUE(switches(Variant::T).skipgram_time);
  auto st = switches(Variant::ST);
  EXPECT_TRUE(st.transition_counts);
  EXPECT_FALSE(st.skipgram_time || st.transformer_time);
}

TEST_F(PersistTest, VariantGraphsStructureOnlyForG) {
  auto full = variant_graphs(*data_, *cfg_, Variant::Full);
  auto g = variant_graphs(*data_, *cfg_, Variant::G);
  const auto& net = data_->world.network;
  double extra = 0.0;
  for (std::size_t t = 0; t < g.frames(); ++t)
    for (SegmentId a = 0; a < net.segment_count(); ++a)
      for (SegmentId b : net.neighbors(a)) {
        EXPECT_EQ(g.weight(t, a, b), cfg_->gamma);
        extra += full.weight(t, a, b) - cfg_->gamma;
      }
  EXPECT_GT(extra, 0.0);
  RunConfig zero = *cfg_;
  zero.gamma = 0.0;
  EXPECT_THROW(variant_graphs(*data_, zero, Variant::G), Error);
}

TEST_F(PersistTest, VariantSTNeverTouchesTemporalParameters) {
  auto sg = run_skipgram(*data_, *cfg_, Variant::ST);
  EXPECT_FALSE(sg.embeddings.dynamic);
  auto fresh = init_embeddings(data_->world.network.segment_count(), data_->world.network.schema(),
                               [&] {
                                 SkipGramConfig c = cfg_->skipgram;
                                 c.dynamic = false;
                                 return c;
                               }());
  EXPECT_TRUE(same_bits(sg.embeddings.time.frequencies().values(), fresh.time.frequencies().values()));

  auto model = run_pretrain(*data_, sg.embeddings, *cfg_, Variant::ST);
  EXPECT_FALSE(model.cfg.dynamic);
  auto init = init_model(sg.embeddings.segment_count(), model.cfg, sg.embeddings.target.values());
  EXPECT_TRUE(same_bits(model.time.frequencies().values(), init.time.frequencies().values()));
  EXPECT_TRUE(same_bits(model.frame.table().values(), init.frame.table().values()));

  // One explicit backward pass: w_t and e_t receive exactly zero gradient.
  Rng rng(3);
  std::vector<MaskedRoute> masked;
  for (std::size_t i = 0; i < 8; ++i) masked.push_back(mask_route(data_->pretrain[i], 0.4, rng));
  for (auto p : model.parameters()) p.zero_grad();
  auto loss = recovery_loss(model, encode_masked(model, masked), ForwardOptions{});
  ad::backward(loss);
  for (const auto* t : {&model.time.frequencies(), &model.frame.table()}) {
    if (!t->has_grad()) continue;
    for (double g : t->grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST_F(PersistTest, VariantGStillUsesTemporalEncoding) {
  auto sg = run_skipgram(*data_, *cfg_, Variant::G);
  EXPECT_TRUE(sg.embeddings.dynamic);
  auto a = segment_embedding(sg.embeddings, 0, 3.0);
  auto b = segment_embedding(sg.embeddings, 0, std::nullopt);
  auto psi = sg.embeddings.time.encode_value(3.0);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k] - b[k], psi[k], 1e-12);
}

TEST_F(PersistTest, EvaluateStampsReportsAndNeedsModel) {
  TaskSelection speed_only{true, false, false};
  auto reports = evaluate(*data_, sg_->embeddings, nullptr, *cfg_, Variant::S, speed_only);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].variant, "S");
  EXPECT_EQ(reports[0].config_digest, cfg_->digest());
  EXPECT_EQ(reports[0].seeds, (std::vector<std::uint64_t>{cfg_->seed}));
  EXPECT_THROW(evaluate(*data_, sg_->embeddings, nullptr, *cfg_, Variant::Full, TaskSelection{}),
               Error);
}

TEST(Determinism, SameConfigGivesByteIdenticalArtefacts) {
  TempDir dir;
  auto cfg = tiny_run();
  std::string bytes[2], reports[2];
  for (int run = 0; run < 2; ++run) {
    auto data = build_dataset(cfg);
    auto sg = run_skipgram(data, cfg, Variant::Full);
    auto file = dir / ("e" + std::to_string(run) + ".bin");
    save_embeddings(sg.embeddings, file);
    bytes[run] = read_bytes(file);
    std::ostringstream csv;
    write_reports_csv(evaluate(data, sg.embeddings, nullptr, cfg, Variant::Full, {true, false, false}),
                      csv);
    reports[run] = csv.str();
  }
  EXPECT_EQ(bytes[0], bytes[1]);
  EXPECT_EQ(reports[0], reports[1]);
}

// ---- command-line tool ----

namespace {

struct Run {
  int status;
  std::string output;
};

Run run_cli(const TempDir& dir, const std::string& args) {
  auto log = dir / "cli.log";
  std::string cmd = std::string(DYROAD_CLI) + " " + args + " > " + log.string() + " 2>&1";
  int raw = std::system(cmd.c_str());
  int status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return {status, read_bytes(log)};
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  TempDir dir;
  EXPECT_EQ(run_cli(dir, "").status, 1);
  EXPECT_EQ(run_cli(dir, "no-such-command").status, 1);
  EXPECT_EQ(run_cli(dir, "gen-world --config " + (dir / "absent.ini").string()).status, 1);
  EXPECT_EQ(run_cli(dir, "--help").status, 0);
}

TEST(Cli, EndToEndOnATinyWorld) {
  TempDir dir;
  auto ini = dir.write("tiny.ini", kTinyConfig);
  const std::string common = "--config " + ini.string() + " --out " + (dir / "run").string();

  auto early = run_cli(dir, "pretrain " + common);
  EXPECT_EQ(early.status, 2);
  EXPECT_NE(early.output.find("run `dyroad gen-world` first"), std::string::npos) << early.output;

  ASSERT_EQ(run_cli(dir, "gen-world " + common).status, 0);
  auto missing = run_cli(dir, "pretrain " + common);
  EXPECT_EQ(missing.status, 2);
  EXPECT_NE(missing.output.find("train-skipgram"), std::string::npos) << missing.output;

  ASSERT_EQ(run_cli(dir, "train-skipgram " + common).status, 0);
  auto emb = dir / "run" / "full" / "embeddings.bin";
  const std::string first = read_bytes(emb);
  ASSERT_EQ(run_cli(dir, "train-skipgram " + common).status, 0);
  EXPECT_EQ(read_bytes(emb), first);

  auto bad_cfg = dir.write("bad.ini", "[run]\nseed = 1\n[world]\nnope = 2\n");
  auto parse = run_cli(dir, "gen-world --config " + bad_cfg.string() + " --out " + (dir / "x").string());
  EXPECT_EQ(parse.status, 2);
  EXPECT_NE(parse.output.find("bad.ini:4"), std::string::npos) << parse.output;

  auto speed = run_cli(dir, "eval --task speed " + common);
  EXPECT_EQ(speed.status, 0) << speed.output;
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "full" / "report_speed.csv"));
  EXPECT_EQ(run_cli(dir, "eval --task bogus " + common).status, 1);

  auto self = run_cli(dir, "inspect --embeddings " + emb.string() + " --segment 4 -k 1");
  EXPECT_EQ(self.status, 0);
  EXPECT_EQ(self.output.substr(0, self.output.find('\t')), "4");
  EXPECT_EQ(run_cli(dir, "inspect --embeddings " + emb.string() + " --segment 999").status, 2);
}
