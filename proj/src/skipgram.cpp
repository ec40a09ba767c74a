#include "dyroad/skipgram.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dyroad/error.hpp"
#include "dyroad/random.hpp"

namespace dyroad {
namespace {

std::vector<double> uniform_init(std::size_t n, double half_width, Rng& rng) {
  std::uniform_real_distribution<double> u(-half_width, half_width);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

ad::Tensor log_sigmoid_clamped(const ad::Tensor& x) {
  return ad::log(ad::clamp(ad::sigmoid(x), kProbClamp, 1.0 - kProbClamp));
}

// -sum(Y log p + (1 - Y) log(1 - p)) with p clamped away from {0, 1}.
ad::Tensor bce_sum(const ad::Tensor& probs, const ad::Tensor& labels) {
  auto p = ad::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  auto one_minus_p = ad::add(ad::scale(p, -1.0), ad::Tensor::scalar(1.0));
  auto one_minus_y = ad::add(ad::scale(labels, -1.0), ad::Tensor::scalar(1.0));
  auto ll = ad::add(ad::mul(labels, ad::log(p)), ad::mul(one_minus_y, ad::log(one_minus_p)));
  return ad::scale(ad::sum(ll), -1.0);
}

ad::Tensor label_block(const BinarizedContext& labels, std::span<const SegmentId> targets,
                       std::size_t offset, std::size_t width) {
  std::vector<double> y(targets.size() * width);
  for (std::size_t r = 0; r < targets.size(); ++r)
    for (std::size_t j = 0; j < width; ++j) y[r * width + j] = labels.at(targets[r], offset + j);
  return ad::Tensor::constant({targets.size(), width}, std::move(y));
}

struct Forward {
  ad::Tensor probs;     // xi rows [P, C]; undefined without features
  ad::Tensor enhanced;  // f~ rows [P, d + C]
};

Forward forward_targets(const EmbeddingSet& es, std::span<const SegmentId> targets,
                        std::span<const double> frames) {
  auto base = ad::embedding_lookup(es.target, targets);
  auto structural = base;
  if (es.dynamic) {
    if (frames.size() != targets.size())
      throw Error("skip-gram: dynamic mode needs one frame per target");
    structural = ad::add(base, es.time.encode(frames));
  }
  Forward fw;
  if (es.categories() > 0) {
    fw.probs = ad::sigmoid(ad::matmul_nt(base, es.feature));
    fw.enhanced = ad::concat({structural, fw.probs});
  } else {
    fw.enhanced = structural;
  }
  return fw;
}

}  // namespace

void SkipGramConfig::validate() const {
  if (dim == 0 || dim % 2 != 0) throw Error("skip-gram: dim must be even and positive");
  if (negatives == 0) throw Error("skip-gram: negatives must be >= 1");
  if (!(lr > 0.0)) throw Error("skip-gram: lr must be positive");
  if (walk_length < 2) throw Error("skip-gram: walk_length must be >= 2");
  if (window == 0) throw Error("skip-gram: window must be >= 1");
  if (batch_positions == 0) throw Error("skip-gram: batch_positions must be >= 1");
  if (!(sigma > 0.0)) throw Error("skip-gram: sigma must be positive");
}

std::size_t EmbeddingSet::categories() const {
  return std::accumulate(cardinalities.begin(), cardinalities.end(), std::size_t{0});
}

std::size_t EmbeddingSet::block_offset(std::size_t n) const {
  return std::accumulate(cardinalities.begin(), cardinalities.begin() + n, std::size_t{0});
}

EmbeddingSet init_embeddings(std::size_t segments, const FeatureSchema& schema,
                             const SkipGramConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "skipgram.init"));
  EmbeddingSet es;
  es.dim = cfg.dim;
  es.cardinalities = schema.cardinalities;
  es.dynamic = cfg.dynamic;
  const double half = 0.5 / static_cast<double>(cfg.dim);
  es.target = ad::Tensor::parameter({segments, cfg.dim}, uniform_init(segments * cfg.dim, half, rng));
  es.context = ad::Tensor::zeros({segments, es.context_width()}, true);
  if (es.categories() > 0)
    es.feature = ad::Tensor::parameter({es.categories(), cfg.dim},
                                       uniform_init(es.categories() * cfg.dim, half, rng));
  Rng time_rng(derive_seed(cfg.seed, "skipgram.time"));
  es.time = TemporalEncoder(cfg.dim, cfg.sigma, time_rng);
  return es;
}

EmbeddingSet clone(const EmbeddingSet& es) {
  auto copy = [](const ad::Tensor& t) {
    if (!t.defined()) return t;
    return ad::Tensor::parameter(t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  };
  EmbeddingSet out = es;
  out.target = copy(es.target);
  out.context = copy(es.context);
  out.feature = copy(es.feature);
  const auto& w = es.time.frequencies();
  out.time = TemporalEncoder(std::vector<double>(w.values().begin(), w.values().end()));
  return out;
}

NegativeSampler::NegativeSampler(std::span<const double> counts, std::uint64_t seed) : rng_(seed) {
  double acc = 0.0;
  cumulative_.reserve(counts.size());
  for (double c : counts) {
    if (c < 0.0 || !std::isfinite(c)) throw Error("negative sampler: counts must be non-negative");
    acc += std::pow(c, 0.75);
    cumulative_.push_back(acc);
  }
  if (!(acc > 0.0)) throw Error("negative sampler: all counts are zero");
}

SegmentId NegativeSampler::draw() {
  std::uniform_real_distribution<double> u(0.0, cumulative_.back());
  double x = u(rng_);
  auto k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), x) -
                                    cumulative_.begin());
  return std::min(k, cumulative_.size() - 1);
}

std::vector<SegmentId> NegativeSampler::sample(std::size_t k) {
  std::vector<SegmentId> out(k);
  for (auto& v : out) v = draw();
  return out;
}

double NegativeSampler::probability(SegmentId v) const {
  double prev = v == 0 ? 0.0 : cumulative_[v - 1];
  return (cumulative_[v] - prev) / cumulative_.back();
}

std::vector<double> predict_context(const EmbeddingSet& es, SegmentId v) {
  if (v >= es.segment_count()) throw Error("predict_context: invalid segment " + std::to_string(v));
  const std::size_t c = es.categories();
  std::vector<double> xi(c);
  auto f = es.target.values().subspan(v * es.dim, es.dim);
  auto g = es.feature.defined() ? es.feature.values() : std::span<const double>{};
  for (std::size_t j = 0; j < c; ++j) {
    double dot = 0.0;
    for (std::size_t k = 0; k < es.dim; ++k) dot += f[k] * g[j * es.dim + k];
    xi[j] = 1.0 / (1.0 + std::exp(-dot));
  }
  return xi;
}

ad::Tensor aux_loss(const EmbeddingSet& es, std::span<const SegmentId> targets,
                    const BinarizedContext& labels, std::size_t n) {
  if (n >= es.cardinalities.size()) throw Error("aux_loss: feature index out of range");
  auto probs = ad::sigmoid(ad::matmul_nt(ad::embedding_lookup(es.target, targets), es.feature));
  std::size_t off = es.block_offset(n);
  std::size_t width = es.cardinalities[n];
  return bce_sum(ad::slice(probs, off, off + width), label_block(labels, targets, off, width));
}

ad::Tensor aux_loss(const EmbeddingSet& es, SegmentId v, const BinarizedContext& labels,
                    std::size_t n) {
  const SegmentId one[1] = {v};
  return aux_loss(es, std::span<const SegmentId>(one), labels, n);
}

BatchLoss batch_loss(const EmbeddingSet& es, const PositionBatch& batch,
                     const BinarizedContext* labels, const SkipGramConfig& cfg) {
  const std::size_t rows = batch.targets.size();
  const std::size_t segs = es.segment_count();
  if (rows == 0) throw Error("skip-gram: empty batch");
  if (batch.positive_counts.size() != rows * segs || batch.negative_counts.size() != rows * segs)
    throw ShapeError("skip-gram: count matrices must be [rows, segments]");

  Forward fw = forward_targets(es, batch.targets, batch.frames);
  auto scores = ad::matmul_nt(fw.enhanced, es.context);  // [rows, segments]
  auto pos = ad::Tensor::constant({rows, segs}, batch.positive_counts);
  auto neg = ad::Tensor::constant({rows, segs}, batch.negative_counts);
  auto ll = ad::add(ad::mul(pos, log_sigmoid_clamped(scores)),
                    ad::mul(neg, log_sigmoid_clamped(ad::scale(scores, -1.0))));
  BatchLoss out;
  out.pair = ad::scale(ad::sum(ll), -1.0);
  out.total = out.pair;
  if (labels != nullptr && es.categories() > 0) {
    for (std::size_t n = 0; n < es.cardinalities.size(); ++n) {
      std::size_t off = es.block_offset(n);
      std::size_t width = es.cardinalities[n];
      auto aux = bce_sum(ad::slice(fw.probs, off, off + width),
                         label_block(*labels, batch.targets, off, width));
      out.aux.push_back(aux);
      double delta = cfg.aux_weight(n);
      if (delta != 0.0) out.total = ad::add(out.total, ad::scale(aux, delta));
    }
  }
  return out;
}

ad::Tensor pair_loss(const EmbeddingSet& es, SegmentId target, SegmentId context,
                     std::span<const SegmentId> negatives, std::optional<std::size_t> frame) {
  if (es.dynamic != frame.has_value())
    throw Error("pair_loss: a frame is required exactly in dynamic mode");
  const std::size_t segs = es.segment_count();
  if (target >= segs || context >= segs) throw Error("pair_loss: invalid segment id");
  PositionBatch b;
  b.targets = {target};
  if (frame) b.frames = {static_cast<double>(*frame)};
  b.positive_counts.assign(segs, 0.0);
  b.negative_counts.assign(segs, 0.0);
  b.positive_counts[context] += 1.0;
  for (SegmentId v : negatives) {
    if (v >= segs) throw Error("pair_loss: invalid negative id");
    b.negative_counts[v] += 1.0;
  }
  return batch_loss(es, b, nullptr, SkipGramConfig{}).pair;
}

SkipGramResult train_skipgram(const RoadNetwork& net, const TransportGraphSet& tg,
                              const BinarizedContext& ctx, const SkipGramConfig& cfg,
                              std::span<const double> noise_counts) {
  cfg.validate();
  const std::size_t segs = net.segment_count();
  if (tg.segment_count() != segs) throw Error("skip-gram: transport graphs do not match network");
  const bool use_labels = net.schema().feature_count() > 0;
  if (use_labels && (ctx.segment_count != segs || ctx.width != net.schema().total_categories()))
    throw Error("skip-gram: binarized context does not match network");

  SkipGramResult result{init_embeddings(segs, net.schema(), cfg), {}};
  EmbeddingSet& es = result.embeddings;

  std::vector<double> counts(noise_counts.begin(), noise_counts.end());
  if (counts.empty()) counts = tg.in_weight_totals();
  if (counts.size() != segs) throw Error("skip-gram: noise counts do not match network");
  NegativeSampler sampler(counts, derive_seed(cfg.seed, "skipgram.negatives"));

  std::vector<ad::Tensor> params{es.target, es.context};
  if (es.feature.defined()) params.push_back(es.feature);
  if (es.dynamic) params.push_back(es.time.frequencies());

  const std::size_t walks_per_epoch = tg.frames() * segs * cfg.walks_per_node;
  const double est_positions = static_cast<double>(walks_per_epoch * cfg.walk_length);
  const double total_steps =
      std::max(1.0, std::ceil(est_positions / static_cast<double>(cfg.batch_positions)) *
                        static_cast<double>(cfg.epochs));
  std::size_t step = 0;

  PositionBatch batch;
  auto flush = [&](double& pair_acc, double& aux_acc) {
    if (batch.targets.empty()) return;
    BatchLoss loss = batch_loss(es, batch, use_labels ? &ctx : nullptr, cfg);
    double total = loss.total.item();
    if (!std::isfinite(total))
      throw DivergenceError("skip-gram: non-finite loss at step " + std::to_string(step));
    pair_acc += loss.pair.item();
    for (std::size_t n = 0; n < loss.aux.size(); ++n) aux_acc += cfg.aux_weight(n) * loss.aux[n].item();
    ad::backward(loss.total);
    double lr = cfg.lr * std::max(cfg.min_lr_fraction, 1.0 - static_cast<double>(step) / total_steps);
    ad::sgd_step(params, lr);
    ++step;
    batch.targets.clear();
    batch.frames.clear();
    batch.positive_counts.clear();
    batch.negative_counts.clear();
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    WalkBatch walks = sample_walks(tg, cfg.walks_per_node, cfg.walk_length,
                                   derive_seed(cfg.seed, "skipgram.walks", epoch));
    double pair_acc = 0.0;
    double aux_acc = 0.0;
    std::size_t positions = 0;
    for (const Walk& walk : walks.walks) {
      const auto& s = walk.nodes;
      for (std::size_t i = 0; i < s.size(); ++i) {
        std::size_t row = batch.targets.size();
        batch.targets.push_back(s[i]);
        batch.frames.push_back(static_cast<double>(walk.frame));
        batch.positive_counts.resize((row + 1) * segs, 0.0);
        batch.negative_counts.resize((row + 1) * segs, 0.0);
        std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
        std::size_t hi = std::min(s.size() - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          batch.positive_counts[row * segs + s[j]] += 1.0;
          for (std::size_t k = 0; k < cfg.negatives; ++k) {
            SegmentId neg = sampler.draw();
            for (int attempt = 0; neg == s[j] && attempt < 64; ++attempt) neg = sampler.draw();
            batch.negative_counts[row * segs + neg] += 1.0;
          }
        }
        ++positions;
        if (batch.targets.size() == cfg.batch_positions) flush(pair_acc, aux_acc);
      }
    }
    flush(pair_acc, aux_acc);
    double denom = std::max<double>(1.0, static_cast<double>(positions));
    result.trace.push_back({epoch, pair_acc / denom, aux_acc / denom, (pair_acc + aux_acc) / denom});
  }
  return result;
}

std::vector<double> segment_embedding(const EmbeddingSet& es, SegmentId v,
                                      std::optional<double> frame) {
  if (v >= es.segment_count()) throw Error("segment_embedding: invalid segment " + std::to_string(v));
  auto row = es.target.values().subspan(v * es.dim, es.dim);
  std::vector<double> out(row.begin(), row.end());
  if (es.dynamic && frame) {
    auto psi = es.time.encode_value(*frame);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += psi[k];
  }
  return out;
}

void write_loss_trace(const std::vector<SkipGramEpoch>& trace, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out.precision(17);
  out << "epoch,loss_pair,loss_aux,total\n";
  for (const auto& e : trace)
    out << e.epoch << ',' << e.loss_pair << ',' << e.loss_aux << ',' << e.total << '\n';
}

}  // namespace dyroad
