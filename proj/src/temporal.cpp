#include "dyroad/temporal.hpp"

#include <cmath>

#include "dyroad/error.hpp"

namespace dyroad {

TemporalEncoder::TemporalEncoder(std::size_t dim, double sigma, Rng& rng) {
  if (dim == 0 || dim % 2 != 0)
    throw Error("temporal encoder: dimension must be even and positive, got " +
                std::to_string(dim));
  if (!(sigma > 0.0)) throw Error("temporal encoder: sigma must be positive");
  std::normal_distribution<double> normal(0.0, 1.0 / sigma);
  std::vector<double> w(dim / 2);
  for (double& wk : w) wk = normal(rng);
  freqs_ = ad::Tensor::parameter({dim / 2}, std::move(w));
}

TemporalEncoder::TemporalEncoder(std::vector<double> frequencies) {
  if (frequencies.empty()) throw Error("temporal encoder: no frequencies");
  std::size_t n = frequencies.size();
  freqs_ = ad::Tensor::parameter({n}, std::move(frequencies));
}

ad::Tensor TemporalEncoder::encode(std::span<const double> times) const {
  const std::size_t n = times.size();
  auto t = ad::Tensor::constant({n, 1}, std::vector<double>(times.begin(), times.end()));
  auto phase = ad::matmul(t, ad::reshape(freqs_, {1, freqs_.size()}));
  return ad::concat({ad::cos(phase), ad::sin(phase)});
}

std::vector<double> TemporalEncoder::encode_value(double t) const {
  const std::size_t half = freqs_.size();
  std::vector<double> out(2 * half);
  auto w = freqs_.values();
  for (std::size_t k = 0; k < half; ++k) {
    out[k] = std::cos(w[k] * t);
    out[k + half] = std::sin(w[k] * t);
  }
  return out;
}

double TemporalEncoder::kernel(double ti, double tj) const {
  auto a = encode_value(ti);
  auto b = encode_value(tj);
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
  return dot;
}

double TemporalEncoder::kernel_by_difference(double ti, double tj) const {
  double s = 0.0;
  for (double wk : freqs_.values()) s += std::cos(wk * (ti - tj));
  return s;
}

FrameEmbedding::FrameEmbedding(std::size_t frames, std::size_t dim, Rng& rng,
                               double init_scale) {
  if (frames == 0 || dim == 0) throw Error("frame embedding: empty table");
  std::normal_distribution<double> normal(0.0, init_scale);
  std::vector<double> v(frames * dim);
  for (double& x : v) x = normal(rng);
  table_ = ad::Tensor::parameter({frames, dim}, std::move(v));
}

ad::Tensor FrameEmbedding::lookup(std::span<const std::size_t> frames) const {
  return ad::embedding_lookup(table_, frames);
}

std::size_t frame_of(double timestamp, std::size_t frames_per_day, double frame_seconds) {
  const double day = frame_seconds * static_cast<double>(frames_per_day);
  double in_day = std::fmod(timestamp, day);
  if (in_day < 0.0) in_day += day;
  auto f = static_cast<std::size_t>(std::floor(in_day / frame_seconds));
  return f < frames_per_day ? f : frames_per_day - 1;
}

}  // namespace dyroad
