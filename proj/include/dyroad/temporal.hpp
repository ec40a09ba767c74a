#pragma once

// Learnable trigonometric time encoding
//   psi(t) = [cos(w * t) || sin(w * t)]
// whose inner product psi(a) . psi(b) = sum_k cos(w_k (a - b)) depends only on
// the time difference. With w ~ N(0, 1/sigma^2) the normalised inner product
// starts out as a Gaussian kernel of bandwidth sigma.

#include <cstddef>
#include <span>
#include <vector>

#include "dyroad/autodiff.hpp"
#include "dyroad/random.hpp"

namespace dyroad {

class TemporalEncoder {
 public:
  TemporalEncoder() = default;
  TemporalEncoder(std::size_t dim, double sigma, Rng& rng);
  // Adopts explicit frequencies; dim = 2 * frequencies.size().
  explicit TemporalEncoder(std::vector<double> frequencies);

  std::size_t dim() const { return freqs_.defined() ? 2 * freqs_.size() : 0; }
  const ad::Tensor& frequencies() const { return freqs_; }
  ad::Tensor& frequencies() { return freqs_; }

  // Rows psi(t) for each t, shape [times.size(), dim]. Differentiable in w.
  ad::Tensor encode(std::span<const double> times) const;
  // Plain evaluation, no graph.
  std::vector<double> encode_value(double t) const;
  double kernel(double ti, double tj) const;
  // sum_k cos(w_k (ti - tj)); equal to kernel() by the angle-difference identity.
  double kernel_by_difference(double ti, double tj) const;

 private:
  ad::Tensor freqs_;  // [dim / 2], learnable
};

// One learnable row per time frame.
class FrameEmbedding {
 public:
  FrameEmbedding() = default;
  FrameEmbedding(std::size_t frames, std::size_t dim, Rng& rng, double init_scale);

  std::size_t frames() const { return table_.defined() ? table_.dim(0) : 0; }
  const ad::Tensor& table() const { return table_; }
  ad::Tensor& table() { return table_; }
  ad::Tensor lookup(std::span<const std::size_t> frames) const;

 private:
  ad::Tensor table_;
};

std::size_t frame_of(double timestamp, std::size_t frames_per_day, double frame_seconds);

}  // namespace dyroad
