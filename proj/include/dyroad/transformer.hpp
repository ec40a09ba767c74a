#pragma once

// Post-norm Transformer encoder over routes, pre-trained with contiguous-span
// route recovery and real-vs-random-walk trajectory discrimination.
//
// Sequence layout: [SUMMARY, r_1, ..., r_n, PAD, ...]. The SUMMARY output is
// the trajectory representation and feeds the discrimination head.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "dyroad/autodiff.hpp"
#include "dyroad/random.hpp"
#include "dyroad/roadnet.hpp"
#include "dyroad/skipgram.hpp"
#include "dyroad/temporal.hpp"
#include "dyroad/worldgen.hpp"

namespace dyroad {

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t max_len = 64;  // route segments, excluding SUMMARY
  double mask_ratio = 0.4;
  double disc_weight = 1.0;
  double dropout = 0.0;
  double embed_init_std = 1.0;  // token and position tables
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  bool dynamic = true;
  double sigma = 1.0;
  std::size_t frames_per_day = 24;
  double frame_seconds = 3600.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Vocabulary {
  std::size_t segments = 0;

  std::size_t summary() const { return segments; }
  std::size_t mask() const { return segments + 1; }
  std::size_t pad() const { return segments + 2; }
  std::size_t size() const { return segments + 3; }
};

struct EncoderLayerParams {
  ad::Tensor wq, wk, wv, wo;  // [d, d]; head i owns columns [i*d/h, (i+1)*d/h)
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor w1, b1, w2, b2;
  ad::Tensor ln2_gain, ln2_bias;
};

struct TrajectoryModel {
  TransformerConfig cfg;
  Vocabulary vocab;
  double time_scale = 1.0;  // seconds mapped to one unit of psi input

  ad::Tensor tokens;      // [vocab, d]
  ad::Tensor positions;   // [max_len + 1, d]
  TemporalEncoder time;   // continuous timestamps
  FrameEmbedding frame;   // start-of-trip frame
  std::vector<EncoderLayerParams> layers;
  ad::Tensor recovery_w, recovery_b;  // [d, segments], [segments]
  ad::Tensor disc_w, disc_b;          // [d, 1], [1]

  // Fixed declaration order; checkpoints store blobs in this order.
  std::vector<ad::Tensor> parameters() const;
};

// `segment_init` ([segments, d] row-major) seeds the token table when given.
TrajectoryModel init_model(std::size_t segments, const TransformerConfig& cfg,
                           std::span<const double> segment_init = {});

struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;               // padded sequence length, SUMMARY included
  std::vector<std::size_t> tokens;      // [batch * length]
  std::vector<double> times;            // scaled offsets from trip start
  std::vector<std::size_t> start_frames;
  std::vector<double> valid;            // 1 for real tokens, 0 for PAD
  // Recovery labels: flat row indices into [batch * length] and their targets.
  std::vector<std::size_t> label_rows;
  std::vector<std::size_t> label_targets;
};

struct MaskedRoute {
  Route route;
  std::size_t span_start = 0;
  std::size_t span_length = 0;
  std::vector<SegmentId> targets;  // original ids under the span
};

std::size_t mask_span_length(std::size_t n, double ratio);
MaskedRoute mask_route(const Route& route, double ratio, Rng& rng);

// With include_timestamps == false every psi(t_i) sees the trip start.
EncodedBatch encode_batch(const TrajectoryModel& model, std::span<const Route> routes,
                          bool include_timestamps = true);
EncodedBatch encode_masked(const TrajectoryModel& model, std::span<const MaskedRoute> routes);

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;  // encode() fills this from the model config
  Rng* rng = nullptr;    // required when training with dropout
};

ad::Tensor embed_inputs(const TrajectoryModel& model, const EncodedBatch& batch, bool dynamic);

// Constant additive mask [batch * heads, L, L]: -inf on PAD keys.
ad::Tensor key_padding_mask(const EncodedBatch& batch, std::size_t heads);
// softmax(Q K^T / sqrt(d_k) + mask) V for Q, K, V of shape [N, L, d_k].
ad::Tensor attention(const ad::Tensor& q, const ad::Tensor& k, const ad::Tensor& v,
                     const ad::Tensor& mask, ad::Tensor* weights = nullptr);
ad::Tensor multi_head(const ad::Tensor& x, const EncoderLayerParams& p, std::size_t heads,
                      const ad::Tensor& mask);
ad::Tensor encoder_layer(const ad::Tensor& x, const EncoderLayerParams& p, std::size_t heads,
                         const ad::Tensor& mask, const ForwardOptions& opt);

// Encoder output [batch, L, d].
ad::Tensor encode(const TrajectoryModel& model, const EncodedBatch& batch,
                  const ForwardOptions& opt);

// Logits over segments for each labelled row, [labels, segments].
ad::Tensor recovery_logits(const TrajectoryModel& model, const ad::Tensor& hidden,
                           const EncodedBatch& batch);
ad::Tensor recovery_loss(const TrajectoryModel& model, const EncodedBatch& batch,
                         const ForwardOptions& opt);
// Mean token-level cross entropy of `logits` rows against `targets`.
ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> targets);
// Mean binary cross entropy; logits [n, 1] or [n].
ad::Tensor binary_cross_entropy(const ad::Tensor& logits, std::span<const double> labels);

// SUMMARY-position logit per sequence, [batch, 1].
ad::Tensor discrimination_logits(const TrajectoryModel& model, const ad::Tensor& hidden,
                                 const EncodedBatch& batch);
ad::Tensor discrimination_loss(const TrajectoryModel& model, std::span<const Route> real,
                               std::span<const Route> fake, const ForwardOptions& opt);

struct JointLoss {
  ad::Tensor recovery;
  ad::Tensor discrimination;
  ad::Tensor total;  // recovery + disc_weight * discrimination
};
JointLoss joint_loss(const TrajectoryModel& model, std::span<const MaskedRoute> masked,
                     std::span<const Route> real, std::span<const Route> fake,
                     const ForwardOptions& opt);

// Empirical distribution of consecutive timestamp gaps.
class GapModel {
 public:
  explicit GapModel(const Corpus& corpus);
  double sample(Rng& rng) const;
  double median() const;
  const std::vector<double>& sorted() const { return gaps_; }

 private:
  std::vector<double> gaps_;
};

// Uniform random walk over the static network with empirical gaps.
Route make_fake_route(const RoadNetwork& net, std::size_t length, double start_time,
                      const GapModel& gaps, Rng& rng);

struct PretrainEpoch {
  std::size_t epoch;
  double recovery;
  double discrimination;
  double total;
};

struct PretrainResult {
  std::vector<PretrainEpoch> trace;
};

PretrainResult pretrain(TrajectoryModel& model, const RoadNetwork& net, const Corpus& corpus);

std::vector<double> trajectory_embedding(const TrajectoryModel& model, const Route& route,
                                         bool include_timestamps);
// Batched form; row i belongs to routes[i].
std::vector<std::vector<double>> trajectory_embeddings(const TrajectoryModel& model,
                                                       std::span<const Route> routes,
                                                       bool include_timestamps);

// Held-out diagnostics.
double recovery_accuracy(const TrajectoryModel& model, const Corpus& routes, std::uint64_t seed);
double discrimination_accuracy(const TrajectoryModel& model, const RoadNetwork& net,
                               const Corpus& routes, const GapModel& gaps, std::uint64_t seed);
double recovery_loss_value(const TrajectoryModel& model, const Corpus& routes, std::uint64_t seed);

void write_pretrain_trace(const std::vector<PretrainEpoch>& trace,
                          const std::filesystem::path& file);

}  // namespace dyroad
