#pragma once

// Scalar-loop reference forward pass of the trajectory encoder and its losses.
// Shares nothing with the tensor implementation beyond parameter storage.

#include <cmath>
#include <vector>

#include "dyroad/transformer.hpp"

namespace dyroad::testkit {

using Mat = std::vector<std::vector<double>>;

inline Mat rows_of(const ad::Tensor& t) {
  const std::size_t c = t.dim(t.rank() - 1);
  const std::size_t r = t.size() / c;
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.at(i * c + j);
  return m;
}

inline std::vector<double> vec_of(const ad::Tensor& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

inline Mat matmul_ref(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b.front().size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b.front().size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline std::vector<double> layer_norm_ref(const std::vector<double>& x, const std::vector<double>& g,
                                          const std::vector<double>& b, double eps = 1e-5) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + eps) * g[i] + b[i];
  return out;
}

// Multi-head self attention over one sequence; `valid[j] == false` hides key j.
inline Mat attention_ref(const Mat& x, const EncoderLayerParams& p, std::size_t heads,
                         const std::vector<bool>& valid) {
  const std::size_t L = x.size(), d = x.front().size(), dk = d / heads;
  Mat q = matmul_ref(x, rows_of(p.wq)), k = matmul_ref(x, rows_of(p.wk)), v = matmul_ref(x, rows_of(p.wv));
  Mat concat(L, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> s(L, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < L; ++j) {
        if (!valid[j]) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i][h * dk + c] * k[j][h * dk + c];
        s[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        s[j] = valid[j] ? std::exp(s[j] - mx) : 0.0;
        z += s[j];
      }
      for (std::size_t j = 0; j < L; ++j)
        for (std::size_t c = 0; c < dk; ++c) concat[i][h * dk + c] += s[j] / z * v[j][h * dk + c];
    }
  return matmul_ref(concat, rows_of(p.wo));
}

inline Mat encoder_layer_ref(const Mat& x, const EncoderLayerParams& p, std::size_t heads,
                             const std::vector<bool>& valid) {
  Mat a = attention_ref(x, p, heads, valid);
  Mat z(x.size());
  auto g1 = vec_of(p.ln1_gain), b1n = vec_of(p.ln1_bias), g2 = vec_of(p.ln2_gain), b2n = vec_of(p.ln2_bias);
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> s(x[i].size());
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = x[i][c] + a[i][c];
    z[i] = layer_norm_ref(s, g1, b1n);
  }
  Mat h = matmul_ref(z, rows_of(p.w1));
  auto b1 = vec_of(p.b1), b2 = vec_of(p.b2);
  for (auto& row : h)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + b1[c]);
  Mat f = matmul_ref(h, rows_of(p.w2));
  Mat out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> s(x[i].size());
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = z[i][c] + f[i][c] + b2[c];
    out[i] = layer_norm_ref(s, g2, b2n);
  }
  return out;
}

// Hidden states per sequence, [batch][L][d].
inline std::vector<Mat> encode_ref(const TrajectoryModel& m, const EncodedBatch& b) {
  const std::size_t d = m.cfg.d_model;
  Mat tok = rows_of(m.tokens), pos = rows_of(m.positions), frame = rows_of(m.frame.table());
  auto w = vec_of(m.time.frequencies());
  std::vector<Mat> out;
  for (std::size_t s = 0; s < b.batch; ++s) {
    Mat x(b.length, std::vector<double>(d, 0.0));
    std::vector<bool> valid(b.length);
    for (std::size_t i = 0; i < b.length; ++i) {
      const std::size_t cell = s * b.length + i;
      valid[i] = b.valid[cell] != 0.0;
      if (!valid[i]) continue;
      for (std::size_t c = 0; c < d; ++c) x[i][c] = tok[b.tokens[cell]][c] + pos[i][c];
      if (m.cfg.dynamic) {
        for (std::size_t k = 0; k < w.size(); ++k) {
          x[i][k] += std::cos(w[k] * b.times[cell]);
          x[i][w.size() + k] += std::sin(w[k] * b.times[cell]);
        }
        for (std::size_t c = 0; c < d; ++c) x[i][c] += frame[b.start_frames[s]][c];
      }
    }
    for (const auto& layer : m.layers) x = encoder_layer_ref(x, layer, m.cfg.heads, valid);
    out.push_back(std::move(x));
  }
  return out;
}

inline double recovery_loss_ref(const TrajectoryModel& m, const EncodedBatch& b) {
  auto hidden = encode_ref(m, b);
  Mat w = rows_of(m.recovery_w);
  auto bias = vec_of(m.recovery_b);
  double total = 0.0;
  for (std::size_t r = 0; r < b.label_rows.size(); ++r) {
    const auto& h = hidden[b.label_rows[r] / b.length][b.label_rows[r] % b.length];
    std::vector<double> logits(bias);
    for (std::size_t c = 0; c < h.size(); ++c)
      for (std::size_t j = 0; j < logits.size(); ++j) logits[j] += h[c] * w[c][j];
    double mx = -1e300;
    for (double l : logits) mx = std::max(mx, l);
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total += -(logits[b.label_targets[r]] - mx - std::log(z));
  }
  return total / static_cast<double>(b.label_rows.size());
}

inline double bce_ref(double logit, double label) {
  double p = 1.0 / (1.0 + std::exp(-logit));
  return -(label * std::log(p) + (1.0 - label) * std::log(1.0 - p));
}

inline double discrimination_loss_ref(const TrajectoryModel& m, const EncodedBatch& b,
                                      const std::vector<double>& labels) {
  auto hidden = encode_ref(m, b);
  auto w = vec_of(m.disc_w);
  double total = 0.0;
  for (std::size_t s = 0; s < b.batch; ++s) {
    double z = m.disc_b.at(0);
    for (std::size_t c = 0; c < w.size(); ++c) z += hidden[s][0][c] * w[c];
    total += bce_ref(z, labels[s]);
  }
  return total / static_cast<double>(b.batch);
}

}  // namespace dyroad::testkit
