#include "dyroad/persist.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dyroad/error.hpp"

namespace dyroad {
namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& file) : path_(file), out_(file, std::ios::binary) {
    if (!out_) throw Error("cannot write " + file.string());
    out_.write(kMagic, sizeof kMagic);
  }

  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  void size(std::size_t v) {
    if (v > 0xffffffffu) throw Error(path_.string() + ": header value too large");
    u32(static_cast<std::uint32_t>(v));
  }
  void f64(double x) {
    auto v = std::bit_cast<std::uint64_t>(x);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void blob(std::span<const double> xs) {
    for (double x : xs) f64(x);
  }
  void finish() {
    out_.flush();
    if (!out_) throw Error("write failed: " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& file) : path_(file), in_(file, std::ios::binary) {
    if (!in_) throw Error("cannot read " + file.string());
    char magic[8];
    in_.read(magic, 8);
    if (!in_ || std::memcmp(magic, kMagic, 8) != 0)
      throw ParseError(file.string() + ": not a DYTOAST1 file");
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::vector<double> blob(std::size_t n) {
    std::vector<double> out(n);
    for (double& x : out) x = f64();
    return out;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof())
      throw ParseError(path_.string() + ": trailing bytes after last table");
  }

 private:
  void read(unsigned char* b, std::size_t n) {
    in_.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
    if (!in_) throw ParseError(path_.string() + ": truncated file");
  }

  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void save_embeddings(const EmbeddingSet& es, const std::filesystem::path& file,
                     const ad::Tensor& frame_table) {
  if (frame_table.defined() && (frame_table.rank() != 2 || frame_table.dim(1) != es.dim))
    throw ShapeError("save_embeddings: frame table " + ad::shape_str(frame_table.shape()) +
                     " does not match dim " + std::to_string(es.dim));
  Writer w(file);
  w.u32(kEmbeddingFormatVersion);
  w.size(es.segment_count());
  w.size(es.dim);
  w.size(es.cardinalities.size());
  for (auto c : es.cardinalities) w.size(c);
  w.u32(es.dynamic ? 1 : 0);
  w.size(es.time.dim() / 2);
  w.size(frame_table.defined() ? frame_table.dim(0) : 0);
  w.blob(es.target.values());
  w.blob(es.context.values());
  if (es.feature.defined()) w.blob(es.feature.values());
  if (es.time.dim() > 0) w.blob(es.time.frequencies().values());
  if (frame_table.defined()) w.blob(frame_table.values());
  w.finish();
}

EmbeddingFile load_embeddings(const std::filesystem::path& file) {
  Reader r(file);
  auto version = r.u32();
  if (version != kEmbeddingFormatVersion)
    throw ParseError(file.string() + ": unsupported embedding format version " + std::to_string(version));
  EmbeddingFile out;
  EmbeddingSet& es = out.embeddings;
  const std::size_t segments = r.u32();
  es.dim = r.u32();
  const std::size_t features = r.u32();
  for (std::size_t i = 0; i < features; ++i) es.cardinalities.push_back(r.u32());
  es.dynamic = r.u32() != 0;
  const std::size_t freqs = r.u32();
  const std::size_t frame_rows = r.u32();
  if (segments == 0 || es.dim == 0) throw ParseError(file.string() + ": empty embedding table");
  es.target = ad::Tensor::parameter({segments, es.dim}, r.blob(segments * es.dim));
  es.context = ad::Tensor::parameter({segments, es.context_width()}, r.blob(segments * es.context_width()));
  if (es.categories() > 0)
    es.feature = ad::Tensor::parameter({es.categories(), es.dim}, r.blob(es.categories() * es.dim));
  if (freqs > 0) es.time = TemporalEncoder(r.blob(freqs));
  if (frame_rows > 0) out.frames = ad::Tensor::parameter({frame_rows, es.dim}, r.blob(frame_rows * es.dim));
  r.expect_end();
  return out;
}

void save_checkpoint(const TrajectoryModel& model, const std::filesystem::path& file) {
  const auto& c = model.cfg;
  Writer w(file);
  for (std::size_t v : {c.layers, c.heads, c.d_model, c.d_ff, c.max_len, model.vocab.size()}) w.size(v);
  w.blob(std::vector<double>{c.dynamic ? 1.0 : 0.0, model.time_scale,
                             static_cast<double>(c.frames_per_day), c.frame_seconds, c.sigma,
                             c.mask_ratio, c.disc_weight, c.dropout});
  for (const auto& p : model.parameters()) w.blob(p.values());
  w.finish();
}

TrajectoryModel load_checkpoint(const std::filesystem::path& file) {
  Reader r(file);
  TransformerConfig cfg;
  cfg.layers = r.u32();
  cfg.heads = r.u32();
  cfg.d_model = r.u32();
  cfg.d_ff = r.u32();
  cfg.max_len = r.u32();
  const std::size_t vocab = r.u32();
  if (vocab < 4) throw ParseError(file.string() + ": vocabulary too small");
  auto meta = r.blob(8);
  cfg.dynamic = meta[0] != 0.0;
  cfg.frames_per_day = static_cast<std::size_t>(meta[2]);
  cfg.frame_seconds = meta[3];
  cfg.sigma = meta[4];
  cfg.mask_ratio = meta[5];
  cfg.disc_weight = meta[6];
  cfg.dropout = meta[7];
  TrajectoryModel model = init_model(vocab - 3, cfg);
  model.time_scale = meta[1];
  for (auto& p : model.parameters()) {
    auto values = r.blob(p.size());
    std::copy(values.begin(), values.end(), p.mutable_values().begin());
  }
  r.expect_end();
  return model;
}

}  // namespace dyroad
