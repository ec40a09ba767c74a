#include "dyroad/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dyroad/error.hpp"

namespace dyroad {
namespace {

std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

ad::Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (double& x : v) x = dist(rng);
  return ad::Tensor::parameter({fan_in, fan_out}, std::move(v));
}

ad::Tensor maybe_dropout(const ad::Tensor& x, const ForwardOptions& opt) {
  if (!opt.training || opt.dropout <= 0.0) return x;
  if (opt.rng == nullptr) throw Error("transformer: training forward pass needs an rng");
  return ad::dropout(x, opt.dropout, *opt.rng);
}

std::vector<ad::Tensor> trainable(const TrajectoryModel& model) {
  std::vector<ad::Tensor> out;
  for (auto& p : model.parameters()) {
    bool temporal = p.node_ptr() == model.time.frequencies().node_ptr() ||
                    p.node_ptr() == model.frame.table().node_ptr();
    if (temporal && !model.cfg.dynamic) continue;
    out.push_back(p);
  }
  return out;
}

// Routes grouped into similar-length batches, batch order shuffled.
std::vector<std::vector<std::size_t>> bucketed_batches(const Corpus& corpus, std::size_t batch,
                                                       Rng& rng) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t chunk = batch * 32;
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += chunk) {
    std::size_t end = std::min(order.size(), begin + chunk);
    std::stable_sort(order.begin() + begin, order.begin() + end, [&](std::size_t a, std::size_t b) {
      return corpus[a].size() < corpus[b].size();
    });
    for (std::size_t i = begin; i < end; i += batch)
      batches.emplace_back(order.begin() + i, order.begin() + std::min(end, i + batch));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

}  // namespace

void TransformerConfig::validate() const {
  if (layers == 0) throw Error("transformer: layers must be >= 1");
  if (heads == 0 || d_model % heads != 0)
    throw Error("transformer: d_model " + std::to_string(d_model) + " not divisible by heads " +
                std::to_string(heads));
  if (d_model % 2 != 0) throw Error("transformer: d_model must be even");
  if (d_ff == 0 || max_len == 0) throw Error("transformer: d_ff and max_len must be positive");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw Error("transformer: mask_ratio must be in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("transformer: dropout must be in [0, 1)");
  if (!(lr > 0.0)) throw Error("transformer: lr must be positive");
  if (!(embed_init_std > 0.0)) throw Error("transformer: embed_init_std must be positive");
  if (batch_size == 0) throw Error("transformer: batch_size must be positive");
  if (frames_per_day == 0 || !(frame_seconds > 0.0))
    throw Error("transformer: frame layout must be positive");
}

std::vector<ad::Tensor> TrajectoryModel::parameters() const {
  std::vector<ad::Tensor> out{tokens, positions, time.frequencies(), frame.table()};
  for (const auto& l : layers) {
    for (const auto* t : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ln1_gain, &l.ln1_bias, &l.w1, &l.b1,
                          &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias})
      out.push_back(*t);
  }
  out.insert(out.end(), {recovery_w, recovery_b, disc_w, disc_b});
  return out;
}

TrajectoryModel init_model(std::size_t segments, const TransformerConfig& cfg,
                           std::span<const double> segment_init) {
  cfg.validate();
  if (segments == 0) throw Error("transformer: empty vocabulary");
  const std::size_t d = cfg.d_model;
  Rng rng(derive_seed(cfg.seed, "transformer.init"));
  TrajectoryModel m;
  m.cfg = cfg;
  m.vocab.segments = segments;

  auto tok = normal_values(m.vocab.size() * d, cfg.embed_init_std, rng);
  if (!segment_init.empty()) {
    if (segment_init.size() != segments * d)
      throw ShapeError("transformer: segment init has " + std::to_string(segment_init.size()) +
                       " values, expected " + std::to_string(segments * d));
    // One global factor brings the table to the init scale and keeps its geometry.
    double sq = 0.0;
    for (double v : segment_init) sq += v * v;
    const double rms = std::sqrt(sq / static_cast<double>(segment_init.size()));
    const double k = rms > 0.0 ? cfg.embed_init_std / rms : 0.0;
    std::transform(segment_init.begin(), segment_init.end(), tok.begin(),
                   [k](double v) { return k * v; });
  }
  std::fill_n(tok.begin() + m.vocab.pad() * d, d, 0.0);
  m.tokens = ad::Tensor::parameter({m.vocab.size(), d}, std::move(tok));
  m.positions = ad::Tensor::parameter({cfg.max_len + 1, d}, normal_values((cfg.max_len + 1) * d, cfg.embed_init_std, rng));
  m.time = TemporalEncoder(d, cfg.sigma, rng);
  m.frame = FrameEmbedding(cfg.frames_per_day, d, rng, 0.02);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    EncoderLayerParams l;
    l.wq = xavier(d, d, rng);
    l.wk = xavier(d, d, rng);
    l.wv = xavier(d, d, rng);
    l.wo = xavier(d, d, rng);
    l.ln1_gain = ad::Tensor::parameter({d}, std::vector<double>(d, 1.0));
    l.ln1_bias = ad::Tensor::zeros({d}, true);
    l.w1 = xavier(d, cfg.d_ff, rng);
    l.b1 = ad::Tensor::zeros({cfg.d_ff}, true);
    l.w2 = xavier(cfg.d_ff, d, rng);
    l.b2 = ad::Tensor::zeros({d}, true);
    l.ln2_gain = ad::Tensor::parameter({d}, std::vector<double>(d, 1.0));
    l.ln2_bias = ad::Tensor::zeros({d}, true);
    m.layers.push_back(std::move(l));
  }
  m.recovery_w = xavier(d, segments, rng);
  m.recovery_b = ad::Tensor::zeros({segments}, true);
  m.disc_w = xavier(d, 1, rng);
  m.disc_b = ad::Tensor::zeros({1}, true);
  return m;
}

std::size_t mask_span_length(std::size_t n, double ratio) {
  auto m = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  return std::clamp<std::size_t>(m, 1, n);
}

MaskedRoute mask_route(const Route& route, double ratio, Rng& rng) {
  const std::size_t n = route.size();
  if (n < 3) throw Error("mask_route: route of length " + std::to_string(n) + " is too short");
  MaskedRoute out;
  out.route = route;
  out.span_length = mask_span_length(n, ratio);
  std::uniform_int_distribution<std::size_t> start(0, n - out.span_length);
  out.span_start = start(rng);
  out.targets.assign(route.segments.begin() + out.span_start,
                     route.segments.begin() + out.span_start + out.span_length);
  return out;
}

EncodedBatch encode_batch(const TrajectoryModel& model, std::span<const Route> routes,
                          bool include_timestamps) {
  if (routes.empty()) throw Error("encode_batch: no routes");
  std::size_t longest = 0;
  for (const auto& r : routes) {
    if (r.size() == 0) throw Error("encode_batch: empty route");
    if (r.size() != r.timestamps.size()) throw Error("encode_batch: route timestamps missing");
    if (r.size() > model.cfg.max_len)
      throw Error("encode_batch: route of length " + std::to_string(r.size()) +
                  " exceeds max_len " + std::to_string(model.cfg.max_len));
    longest = std::max(longest, r.size());
  }
  EncodedBatch b;
  b.batch = routes.size();
  b.length = longest + 1;
  const std::size_t cells = b.batch * b.length;
  b.tokens.assign(cells, model.vocab.pad());
  b.times.assign(cells, 0.0);
  b.valid.assign(cells, 0.0);
  b.start_frames.resize(b.batch);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const Route& r = routes[i];
    const std::size_t row = i * b.length;
    b.tokens[row] = model.vocab.summary();
    b.valid[row] = 1.0;
    b.start_frames[i] = frame_of(r.timestamps[0], model.cfg.frames_per_day, model.cfg.frame_seconds);
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (r.segments[k] >= model.vocab.segments)
        throw Error("encode_batch: unknown segment " + std::to_string(r.segments[k]));
      b.tokens[row + 1 + k] = r.segments[k];
      b.valid[row + 1 + k] = 1.0;
      if (include_timestamps)
        b.times[row + 1 + k] = (r.timestamps[k] - r.timestamps[0]) / model.time_scale;
    }
  }
  return b;
}

EncodedBatch encode_masked(const TrajectoryModel& model, std::span<const MaskedRoute> routes) {
  std::vector<Route> plain;
  plain.reserve(routes.size());
  for (const auto& m : routes) plain.push_back(m.route);
  EncodedBatch b = encode_batch(model, plain, true);
  for (std::size_t i = 0; i < routes.size(); ++i) {
    const auto& m = routes[i];
    for (std::size_t k = 0; k < m.span_length; ++k) {
      std::size_t row = i * b.length + 1 + m.span_start + k;
      b.tokens[row] = model.vocab.mask();
      b.label_rows.push_back(row);
      b.label_targets.push_back(m.targets[k]);
    }
  }
  return b;
}

ad::Tensor embed_inputs(const TrajectoryModel& model, const EncodedBatch& batch, bool dynamic) {
  const std::size_t d = model.cfg.d_model;
  const std::size_t cells = batch.batch * batch.length;
  std::vector<std::size_t> pos(cells);
  std::vector<std::size_t> frames(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    pos[i] = i % batch.length;
    frames[i] = batch.start_frames[i / batch.length];
  }
  auto x = ad::add(ad::embedding_lookup(model.tokens, batch.tokens),
                   ad::embedding_lookup(model.positions, pos));
  if (dynamic) {
    x = ad::add(x, model.time.encode(batch.times));
    x = ad::add(x, model.frame.lookup(frames));
  }
  std::vector<double> keep(cells * d);
  for (std::size_t i = 0; i < cells; ++i) std::fill_n(keep.begin() + i * d, d, batch.valid[i]);
  x = ad::mul(x, ad::Tensor::constant({cells, d}, std::move(keep)));
  return ad::reshape(x, {batch.batch, batch.length, d});
}

ad::Tensor key_padding_mask(const EncodedBatch& batch, std::size_t heads) {
  const std::size_t L = batch.length;
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> m(batch.batch * heads * L * L, 0.0);
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      double* blk = m.data() + (b * heads + h) * L * L;
      for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j)
          if (batch.valid[b * L + j] == 0.0) blk[i * L + j] = ninf;
    }
  return ad::Tensor::constant({batch.batch * heads, L, L}, std::move(m));
}

ad::Tensor attention(const ad::Tensor& q, const ad::Tensor& k, const ad::Tensor& v,
                     const ad::Tensor& mask, ad::Tensor* weights) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(2) != k.dim(2) ||
      k.dim(1) != v.dim(1) || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0))
    throw ShapeError("attention: incompatible Q " + ad::shape_str(q.shape()) + ", K " +
                     ad::shape_str(k.shape()) + ", V " + ad::shape_str(v.shape()));
  auto scores = ad::scale(ad::matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(q.dim(2))));
  if (mask.defined()) scores = ad::add(scores, mask);
  auto w = ad::softmax(scores);
  if (weights != nullptr) *weights = w;
  return ad::matmul(w, v);
}

ad::Tensor multi_head(const ad::Tensor& x, const EncoderLayerParams& p, std::size_t heads,
                      const ad::Tensor& mask) {
  if (x.rank() != 3) throw ShapeError("multi_head: expected [batch, length, d], got " + ad::shape_str(x.shape()));
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0 || p.wq.shape() != ad::Shape{d, d} ||
      p.wk.shape() != ad::Shape{d, d} || p.wv.shape() != ad::Shape{d, d} || p.wo.dim(0) != d)
    throw ShapeError("multi_head: projection shapes do not match input " + ad::shape_str(x.shape()));
  const std::size_t dk = d / heads;
  auto split = [&](const ad::Tensor& t) {
    return ad::reshape(ad::permute(ad::reshape(t, {B, L, heads, dk}), {0, 2, 1, 3}),
                       {B * heads, L, dk});
  };
  auto q = split(ad::matmul(x, p.wq));
  auto k = split(ad::matmul(x, p.wk));
  auto v = split(ad::matmul(x, p.wv));
  auto o = attention(q, k, v, mask);
  auto merged = ad::reshape(ad::permute(ad::reshape(o, {B, heads, L, dk}), {0, 2, 1, 3}), {B, L, d});
  return ad::matmul(merged, p.wo);
}

ad::Tensor encoder_layer(const ad::Tensor& x, const EncoderLayerParams& p, std::size_t heads,
                         const ad::Tensor& mask, const ForwardOptions& opt) {
  auto z = ad::layer_norm(ad::add(x, maybe_dropout(multi_head(x, p, heads, mask), opt)),
                          p.ln1_gain, p.ln1_bias);
  auto ff = ad::add(ad::matmul(ad::relu(ad::add(ad::matmul(z, p.w1), p.b1)), p.w2), p.b2);
  return ad::layer_norm(ad::add(z, maybe_dropout(ff, opt)), p.ln2_gain, p.ln2_bias);
}

ad::Tensor encode(const TrajectoryModel& model, const EncodedBatch& batch,
                  const ForwardOptions& opt) {
  ForwardOptions o = opt;
  o.dropout = model.cfg.dropout;
  auto x = maybe_dropout(embed_inputs(model, batch, model.cfg.dynamic), o);
  auto mask = key_padding_mask(batch, model.cfg.heads);
  for (const auto& layer : model.layers) x = encoder_layer(x, layer, model.cfg.heads, mask, o);
  return x;
}

ad::Tensor recovery_logits(const TrajectoryModel& model, const ad::Tensor& hidden,
                           const EncodedBatch& batch) {
  if (batch.label_rows.empty()) throw Error("recovery_logits: batch has no masked positions");
  const std::size_t d = model.cfg.d_model;
  auto flat = ad::reshape(hidden, {batch.batch * batch.length, d});
  auto rows = ad::embedding_lookup(flat, batch.label_rows);
  return ad::add(ad::matmul(rows, model.recovery_w), model.recovery_b);
}

ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size() || targets.empty())
    throw ShapeError("cross_entropy: logits " + ad::shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> onehot(n * k, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= k) throw Error("cross_entropy: target " + std::to_string(targets[i]) + " out of range");
    onehot[i * k + targets[i]] = 1.0;
  }
  auto picked = ad::sum(ad::mul(ad::log_softmax(logits), ad::Tensor::constant({n, k}, std::move(onehot))));
  return ad::scale(picked, -1.0 / static_cast<double>(n));
}

ad::Tensor binary_cross_entropy(const ad::Tensor& logits, std::span<const double> labels) {
  const std::size_t n = labels.size();
  if (n == 0 || logits.size() != n)
    throw ShapeError("binary_cross_entropy: logits " + ad::shape_str(logits.shape()) + " vs " +
                     std::to_string(n) + " labels");
  // log_softmax([0, z]) = [log sigmoid(-z), log sigmoid(z)]
  auto z = ad::reshape(logits, {n, 1});
  auto lsm = ad::log_softmax(ad::concat({ad::Tensor::zeros({n, 1}), z}));
  std::vector<double> w(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    w[2 * i] = 1.0 - labels[i];
    w[2 * i + 1] = labels[i];
  }
  auto s = ad::sum(ad::mul(lsm, ad::Tensor::constant({n, 2}, std::move(w))));
  return ad::scale(s, -1.0 / static_cast<double>(n));
}

ad::Tensor recovery_loss(const TrajectoryModel& model, const EncodedBatch& batch,
                         const ForwardOptions& opt) {
  auto hidden = encode(model, batch, opt);
  return cross_entropy(recovery_logits(model, hidden, batch), batch.label_targets);
}

ad::Tensor discrimination_logits(const TrajectoryModel& model, const ad::Tensor& hidden,
                                 const EncodedBatch& batch) {
  const std::size_t d = model.cfg.d_model;
  std::vector<std::size_t> rows(batch.batch);
  for (std::size_t i = 0; i < batch.batch; ++i) rows[i] = i * batch.length;
  auto summary = ad::embedding_lookup(ad::reshape(hidden, {batch.batch * batch.length, d}), rows);
  return ad::add(ad::matmul(summary, model.disc_w), model.disc_b);
}

ad::Tensor discrimination_loss(const TrajectoryModel& model, std::span<const Route> real,
                               std::span<const Route> fake, const ForwardOptions& opt) {
  if (real.empty() || fake.empty())
    throw Error("discrimination_loss: needs both real and fake routes");
  std::vector<Route> all(real.begin(), real.end());
  all.insert(all.end(), fake.begin(), fake.end());
  std::vector<double> labels(all.size(), 0.0);
  std::fill_n(labels.begin(), real.size(), 1.0);
  auto batch = encode_batch(model, all, true);
  auto hidden = encode(model, batch, opt);
  return binary_cross_entropy(discrimination_logits(model, hidden, batch), labels);
}

JointLoss joint_loss(const TrajectoryModel& model, std::span<const MaskedRoute> masked,
                     std::span<const Route> real, std::span<const Route> fake,
                     const ForwardOptions& opt) {
  JointLoss out;
  out.recovery = recovery_loss(model, encode_masked(model, masked), opt);
  out.discrimination = discrimination_loss(model, real, fake, opt);
  out.total = ad::add(out.recovery, ad::scale(out.discrimination, model.cfg.disc_weight));
  return out;
}

GapModel::GapModel(const Corpus& corpus) {
  for (const auto& r : corpus)
    for (std::size_t i = 1; i < r.timestamps.size(); ++i)
      gaps_.push_back(r.timestamps[i] - r.timestamps[i - 1]);
  if (gaps_.empty()) throw Error("GapModel: corpus has no consecutive timestamps");
  std::sort(gaps_.begin(), gaps_.end());
}

double GapModel::sample(Rng& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, gaps_.size() - 1);
  return gaps_[pick(rng)];
}

double GapModel::median() const {
  const std::size_t n = gaps_.size();
  return n % 2 == 1 ? gaps_[n / 2] : 0.5 * (gaps_[n / 2 - 1] + gaps_[n / 2]);
}

Route make_fake_route(const RoadNetwork& net, std::size_t length, double start_time,
                      const GapModel& gaps, Rng& rng) {
  if (length == 0) throw Error("make_fake_route: length must be positive");
  std::uniform_int_distribution<std::size_t> any(0, net.segment_count() - 1);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Route r;
    r.segments.push_back(any(rng));
    while (r.segments.size() < length) {
      const auto& nb = net.neighbors(r.segments.back());
      if (nb.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
      r.segments.push_back(nb[pick(rng)]);
    }
    if (r.segments.size() < length) continue;
    double t = start_time;
    for (std::size_t i = 0; i < length; ++i) {
      r.timestamps.push_back(t);
      t += gaps.sample(rng);
    }
    return r;
  }
  throw Error("make_fake_route: no walk of length " + std::to_string(length) + " found");
}

PretrainResult pretrain(TrajectoryModel& model, const RoadNetwork& net, const Corpus& corpus) {
  const auto& cfg = model.cfg;
  cfg.validate();
  if (corpus.empty()) throw Error("pretrain: empty corpus");
  GapModel gaps(corpus);
  model.time_scale = std::max(gaps.median(), 1e-9);

  ad::Adam opt(trainable(model), ad::AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps});
  Rng rng(derive_seed(cfg.seed, "transformer.train"));
  ForwardOptions fwd{true, cfg.dropout, &rng};

  PretrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double rec_sum = 0.0, disc_sum = 0.0;
    std::size_t rec_steps = 0, disc_steps = 0;
    auto batches = bucketed_batches(corpus, cfg.batch_size, rng);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      ad::Tensor loss;
      double value = 0.0;
      if (step % 2 == 0) {
        std::vector<MaskedRoute> masked;
        for (std::size_t i : batches[step])
          if (corpus[i].size() >= 3) masked.push_back(mask_route(corpus[i], cfg.mask_ratio, rng));
        if (masked.empty()) continue;
        loss = recovery_loss(model, encode_masked(model, masked), fwd);
        value = loss.item();
        rec_sum += value;
        ++rec_steps;
      } else {
        std::vector<Route> real, fake;
        for (std::size_t i : batches[step]) {
          real.push_back(corpus[i]);
          fake.push_back(make_fake_route(net, corpus[i].size(), corpus[i].timestamps[0], gaps, rng));
        }
        auto disc = discrimination_loss(model, real, fake, fwd);
        value = disc.item();
        loss = ad::scale(disc, cfg.disc_weight);
        disc_sum += value;
        ++disc_steps;
      }
      if (!std::isfinite(value))
        throw DivergenceError("pretrain: non-finite loss at epoch " + std::to_string(epoch + 1));
      ad::backward(loss);
      opt.step();
    }
    PretrainEpoch e{epoch + 1, rec_steps ? rec_sum / rec_steps : 0.0,
                    disc_steps ? disc_sum / disc_steps : 0.0, 0.0};
    e.total = e.recovery + cfg.disc_weight * e.discrimination;
    result.trace.push_back(e);
  }
  return result;
}

std::vector<std::vector<double>> trajectory_embeddings(const TrajectoryModel& model,
                                                       std::span<const Route> routes,
                                                       bool include_timestamps) {
  const std::size_t d = model.cfg.d_model;
  std::vector<std::vector<double>> out;
  out.reserve(routes.size());
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < routes.size(); begin += kChunk) {
    auto part = routes.subspan(begin, std::min(kChunk, routes.size() - begin));
    auto batch = encode_batch(model, part, include_timestamps);
    auto hidden = encode(model, batch, ForwardOptions{});
    auto v = hidden.values();
    for (std::size_t i = 0; i < batch.batch; ++i) {
      const double* row = v.data() + i * batch.length * d;
      out.emplace_back(row, row + d);
    }
  }
  return out;
}

std::vector<double> trajectory_embedding(const TrajectoryModel& model, const Route& route,
                                         bool include_timestamps) {
  return trajectory_embeddings(model, std::span<const Route>(&route, 1), include_timestamps).front();
}

namespace {

struct HeldOutRecovery {
  std::size_t correct = 0;
  std::size_t total = 0;
  double loss_sum = 0.0;
};

HeldOutRecovery evaluate_recovery(const TrajectoryModel& model, const Corpus& routes,
                                  std::uint64_t seed) {
  Rng rng(derive_seed(seed, "transformer.heldout.mask"));
  std::vector<MaskedRoute> masked;
  for (const auto& r : routes)
    if (r.size() >= 3) masked.push_back(mask_route(r, model.cfg.mask_ratio, rng));
  if (masked.empty()) throw Error("recovery evaluation: no route of length >= 3");
  HeldOutRecovery out;
  const std::size_t V = model.vocab.segments;
  constexpr std::size_t kChunk = 64;
  for (std::size_t begin = 0; begin < masked.size(); begin += kChunk) {
    std::span<const MaskedRoute> part(masked.data() + begin, std::min(kChunk, masked.size() - begin));
    auto batch = encode_masked(model, part);
    auto logits = recovery_logits(model, encode(model, batch, ForwardOptions{}), batch);
    auto ce = cross_entropy(logits, batch.label_targets);
    out.loss_sum += ce.item() * static_cast<double>(batch.label_targets.size());
    auto v = logits.values();
    for (std::size_t i = 0; i < batch.label_targets.size(); ++i)
      if (argmax_row(v.subspan(i * V, V)) == batch.label_targets[i]) ++out.correct;
    out.total += batch.label_targets.size();
  }
  return out;
}

}  // namespace

double recovery_accuracy(const TrajectoryModel& model, const Corpus& routes, std::uint64_t seed) {
  auto r = evaluate_recovery(model, routes, seed);
  return static_cast<double>(r.correct) / static_cast<double>(r.total);
}

double recovery_loss_value(const TrajectoryModel& model, const Corpus& routes, std::uint64_t seed) {
  auto r = evaluate_recovery(model, routes, seed);
  return r.loss_sum / static_cast<double>(r.total);
}

double discrimination_accuracy(const TrajectoryModel& model, const RoadNetwork& net,
                               const Corpus& routes, const GapModel& gaps, std::uint64_t seed) {
  if (routes.empty()) throw Error("discrimination_accuracy: no routes");
  Rng rng(derive_seed(seed, "transformer.heldout.fake"));
  std::size_t correct = 0, total = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < routes.size(); begin += kChunk) {
    std::vector<Route> all;
    std::size_t n = std::min(kChunk, routes.size() - begin);
    for (std::size_t i = 0; i < n; ++i) all.push_back(routes[begin + i]);
    for (std::size_t i = 0; i < n; ++i) {
      const Route& r = routes[begin + i];
      all.push_back(make_fake_route(net, r.size(), r.timestamps[0], gaps, rng));
    }
    auto batch = encode_batch(model, all, true);
    auto logits = discrimination_logits(model, encode(model, batch, ForwardOptions{}), batch);
    for (std::size_t i = 0; i < all.size(); ++i) {
      bool says_real = logits.at(i) > 0.0;
      if (says_real == (i < n)) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

void write_pretrain_trace(const std::vector<PretrainEpoch>& trace,
                          const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "epoch,recovery,discrimination,total\n";
  out.precision(10);
  for (const auto& e : trace)
    out << e.epoch << ',' << e.recovery << ',' << e.discrimination << ',' << e.total << '\n';
}

}  // namespace dyroad
