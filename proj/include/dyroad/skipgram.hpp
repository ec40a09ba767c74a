#pragma once

// Traffic-context enhanced skip-gram with negative sampling.
//
// For target v the enhanced embedding is
//   f~(v, t) = [ f(v) (+ psi(t) when dynamic) || xi(v) ],
//   xi(v)    = sigmoid(f(v) . g(c_nj)) over every feature category,
// scored against context rows h~ of width d + sum|c_n|. The total objective is
// the negative-sampling loss plus delta_n-weighted binary cross entropy of xi
// against each feature's one-hot labels.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dyroad/autodiff.hpp"
#include "dyroad/dyngraph.hpp"
#include "dyroad/roadnet.hpp"
#include "dyroad/temporal.hpp"

namespace dyroad {

inline constexpr double kProbClamp = 1e-7;

struct SkipGramConfig {
  std::size_t dim = 128;
  std::size_t negatives = 5;
  std::vector<double> aux_weights;  // per feature; missing entries default to 1
  std::size_t epochs = 30;
  double lr = 0.025;
  double min_lr_fraction = 1e-4;
  bool dynamic = true;
  double sigma = 1.0;
  std::size_t walks_per_node = 10;
  std::size_t walk_length = 20;
  std::size_t window = 5;
  std::size_t batch_positions = 32;
  std::uint64_t seed = 1;

  double aux_weight(std::size_t n) const { return n < aux_weights.size() ? aux_weights[n] : 1.0; }
  void validate() const;
};

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<std::size_t> cardinalities;  // feature blocks of the label vector
  bool dynamic = false;
  ad::Tensor target;   // f   [segments, dim]
  ad::Tensor context;  // h~  [segments, dim + categories]
  ad::Tensor feature;  // g   [categories, dim]; undefined without features
  TemporalEncoder time;

  std::size_t segment_count() const { return target.dim(0); }
  std::size_t categories() const;
  std::size_t context_width() const { return dim + categories(); }
  std::size_t block_offset(std::size_t n) const;
};

EmbeddingSet init_embeddings(std::size_t segments, const FeatureSchema& schema,
                             const SkipGramConfig& cfg);

// Unigram^(3/4) noise distribution.
class NegativeSampler {
 public:
  NegativeSampler(std::span<const double> counts, std::uint64_t seed);

  SegmentId draw();
  std::vector<SegmentId> sample(std::size_t k);
  double probability(SegmentId v) const;

 private:
  std::vector<double> cumulative_;
  Rng rng_;
};

// xi(v) as plain values.
std::vector<double> predict_context(const EmbeddingSet& es, SegmentId v);

// Sum over `targets` of the feature-n binary cross entropy.
ad::Tensor aux_loss(const EmbeddingSet& es, std::span<const SegmentId> targets,
                    const BinarizedContext& labels, std::size_t n);
ad::Tensor aux_loss(const EmbeddingSet& es, SegmentId v, const BinarizedContext& labels,
                    std::size_t n);

// Negative-sampling loss of one (target, context) pair. `frame` must be set
// exactly when the embedding set is dynamic.
ad::Tensor pair_loss(const EmbeddingSet& es, SegmentId target, SegmentId context,
                     std::span<const SegmentId> negatives, std::optional<std::size_t> frame);

// One optimisation batch: rows are target positions, columns segments. Each
// positive (resp. negative) pair contributes counts[row][segment] copies of
// its log-sigmoid term.
struct PositionBatch {
  std::vector<SegmentId> targets;
  std::vector<double> frames;            // only read in dynamic mode
  std::vector<double> positive_counts;   // [rows, segments]
  std::vector<double> negative_counts;   // [rows, segments]
};

struct BatchLoss {
  ad::Tensor pair;
  std::vector<ad::Tensor> aux;  // unweighted, one per feature
  ad::Tensor total;             // pair + sum_n delta_n aux_n
};

BatchLoss batch_loss(const EmbeddingSet& es, const PositionBatch& batch,
                     const BinarizedContext* labels, const SkipGramConfig& cfg);

struct SkipGramEpoch {
  std::size_t epoch;
  double loss_pair;  // per target position
  double loss_aux;   // delta-weighted, per target position
  double total;
};

struct SkipGramResult {
  EmbeddingSet embeddings;
  std::vector<SkipGramEpoch> trace;
};

// Noise distribution counts default to the incoming transport weight of each
// segment when `noise_counts` is empty.
SkipGramResult train_skipgram(const RoadNetwork& net, const TransportGraphSet& tg,
                              const BinarizedContext& ctx, const SkipGramConfig& cfg,
                              std::span<const double> noise_counts = {});

// u_v, or u_v + psi(frame) in dynamic mode when a frame is given.
std::vector<double> segment_embedding(const EmbeddingSet& es, SegmentId v,
                                      std::optional<double> frame);

void write_loss_trace(const std::vector<SkipGramEpoch>& trace, const std::filesystem::path& file);

// Independent copy of every parameter table.
EmbeddingSet clone(const EmbeddingSet& es);

}  // namespace dyroad
