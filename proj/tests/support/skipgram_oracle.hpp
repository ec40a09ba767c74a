#pragma once

// Scalar-loop reference values for the skip-gram objective. Plain arrays,
// explicit concatenation, no autodiff.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "dyroad/skipgram.hpp"

namespace dyroad::testkit {

inline double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clamp_prob(double p) { return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp); }

inline std::vector<double> row_of(const ad::Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(1);
  return {t.values().begin() + static_cast<std::ptrdiff_t>(r * w),
          t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * w)};
}

inline double dot_ref(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> xi_ref(const EmbeddingSet& es, SegmentId v) {
  std::vector<double> xi;
  auto f = row_of(es.target, v);
  for (std::size_t j = 0; j < es.categories(); ++j) xi.push_back(sigmoid_ref(dot_ref(f, row_of(es.feature, j))));
  return xi;
}

inline std::vector<double> enhanced_ref(const EmbeddingSet& es, SegmentId v,
                                        std::optional<double> frame) {
  auto u = row_of(es.target, v);
  if (es.dynamic && frame) {
    auto w = es.time.frequencies().values();
    const std::size_t half = w.size();
    for (std::size_t k = 0; k < half; ++k) {
      u[k] += std::cos(w[k] * *frame);
      u[k + half] += std::sin(w[k] * *frame);
    }
  }
  for (double x : xi_ref(es, v)) u.push_back(x);
  return u;
}

inline double pair_loss_ref(const EmbeddingSet& es, SegmentId target, SegmentId context,
                            const std::vector<SegmentId>& negatives, std::optional<double> frame) {
  auto f = enhanced_ref(es, target, frame);
  double loss = -std::log(clamp_prob(sigmoid_ref(dot_ref(f, row_of(es.context, context)))));
  for (SegmentId n : negatives)
    loss -= std::log(clamp_prob(sigmoid_ref(-dot_ref(f, row_of(es.context, n)))));
  return loss;
}

inline double aux_loss_ref(const EmbeddingSet& es, SegmentId v, const BinarizedContext& labels,
                           std::size_t n) {
  auto xi = xi_ref(es, v);
  std::size_t off = 0;
  for (std::size_t m = 0; m < n; ++m) off += es.cardinalities[m];
  double loss = 0.0;
  for (std::size_t j = off; j < off + es.cardinalities[n]; ++j) {
    double p = clamp_prob(xi[j]);
    double y = labels.at(v, j);
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return loss;
}

// Fills every table with values in [-scale, scale].
inline void randomize(EmbeddingSet& es, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* t : {&es.target, &es.context, &es.feature})
    if (t->defined())
      for (double& x : t->mutable_values()) x = u(rng);
  for (double& x : es.time.frequencies().mutable_values()) x = u(rng);
}

}  // namespace dyroad::testkit
