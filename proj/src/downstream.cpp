#include "dyroad/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>

#include "dyroad/error.hpp"

namespace dyroad {
namespace {

using Matrix = std::vector<std::vector<double>>;

struct Standardizer {
  std::vector<double> mean, inv_std;

  static Standardizer fit(const Matrix& rows, std::span<const std::size_t> idx) {
    const std::size_t d = rows.front().size();
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += rows[i][j];
    for (double& m : s.mean) m /= static_cast<double>(idx.size());
    for (std::size_t i : idx)
      for (std::size_t j = 0; j < d; ++j) {
        double c = rows[i][j] - s.mean[j];
        s.inv_std[j] += c * c;
      }
    for (double& v : s.inv_std) {
      double sd = std::sqrt(v / static_cast<double>(idx.size()));
      v = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
    return s;
  }

  ad::Tensor batch(const Matrix& rows, std::span<const std::size_t> idx) const {
    const std::size_t d = mean.size();
    std::vector<double> out(idx.size() * d);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j)
        out[r * d + j] = (rows[idx[r]][j] - mean[j]) * inv_std[j];
    return ad::Tensor::constant({idx.size(), d}, std::move(out));
  }
};

// Affine layers with ReLU between them.
struct DenseNet {
  std::vector<ad::Tensor> weights, biases;

  DenseNet(const std::vector<std::size_t>& widths, Rng& rng) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      double limit = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
      std::uniform_real_distribution<double> u(-limit, limit);
      std::vector<double> w(widths[l] * widths[l + 1]);
      for (double& x : w) x = u(rng);
      weights.push_back(ad::Tensor::parameter({widths[l], widths[l + 1]}, std::move(w)));
      biases.push_back(ad::Tensor::zeros({widths[l + 1]}, true));
    }
  }

  ad::Tensor forward(const ad::Tensor& x) const {
    ad::Tensor h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      h = ad::add(ad::matmul(h, weights[l]), biases[l]);
      if (l + 1 < weights.size()) h = ad::relu(h);
    }
    return h;
  }

  std::vector<ad::Tensor> parameters() const {
    std::vector<ad::Tensor> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l]);
      out.push_back(biases[l]);
    }
    return out;
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> s;
    for (const auto& p : parameters()) s.emplace_back(p.values().begin(), p.values().end());
    return s;
  }

  void restore(const std::vector<std::vector<double>>& s) {
    auto params = parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
      std::copy(s[i].begin(), s[i].end(), params[i].mutable_values().begin());
  }
};

ad::Tensor mse(const ad::Tensor& pred, std::span<const double> target) {
  auto y = ad::Tensor::constant(pred.shape(), std::vector<double>(target.begin(), target.end()));
  auto diff = ad::sub(pred, y);
  return ad::mean(ad::mul(diff, diff));
}

std::vector<double> gather(std::span<const double> values, std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(values[i]);
  return out;
}

std::vector<std::size_t> gather_ids(std::span<const std::size_t> values,
                                    std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(values[i]);
  return out;
}

// Regression on standardized inputs and targets; returns predictions for
// `test` in target units. With a non-empty `val` the best validation epoch wins.
std::vector<double> fit_regressor(const Matrix& x, std::span<const double> y,
                                  std::span<const std::size_t> train, std::span<const std::size_t> val,
                                  std::span<const std::size_t> test,
                                  const std::vector<std::size_t>& hidden, std::size_t epochs,
                                  double lr, std::size_t batch, std::size_t patience, Rng& rng) {
  auto scaler = Standardizer::fit(x, train);
  double y_mean = 0.0, y_var = 0.0;
  for (std::size_t i : train) y_mean += y[i];
  y_mean /= static_cast<double>(train.size());
  for (std::size_t i : train) y_var += (y[i] - y_mean) * (y[i] - y_mean);
  double y_sd = std::sqrt(y_var / static_cast<double>(train.size()));
  if (y_sd < 1e-12) y_sd = 1.0;
  auto z = [&](std::span<const std::size_t> idx) {
    std::vector<double> out;
    for (std::size_t i : idx) out.push_back((y[i] - y_mean) / y_sd);
    return out;
  };

  std::vector<std::size_t> widths{x.front().size()};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  DenseNet net(widths, rng);
  ad::Adam opt(net.parameters(), ad::AdamConfig{lr});

  ad::Tensor val_x;
  std::vector<double> val_y;
  if (!val.empty()) {
    val_x = scaler.batch(x, val);
    val_y = z(val);
  }
  double best = std::numeric_limits<double>::infinity();
  auto best_params = net.snapshot();
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.begin(), train.end());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      std::span<const std::size_t> idx(order.data() + b, std::min(batch, order.size() - b));
      auto loss = mse(net.forward(scaler.batch(x, idx)), z(idx));
      if (!std::isfinite(loss.item())) throw DivergenceError("regressor: non-finite loss");
      ad::backward(loss);
      opt.step();
    }
    if (val.empty()) continue;
    double v = mse(net.forward(val_x), val_y).item();
    if (v < best) {
      best = v;
      best_params = net.snapshot();
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  if (!val.empty()) net.restore(best_params);

  auto out = net.forward(scaler.batch(x, test)).values();
  std::vector<double> preds(out.begin(), out.end());
  for (double& p : preds) p = p * y_sd + y_mean;
  return preds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n,
                                                                            double train_fraction,
                                                                            Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (cut == 0 || cut >= n)
    throw Error("task split: " + std::to_string(n) + " examples leave an empty partition");
  return {std::vector<std::size_t>(idx.begin(), idx.begin() + cut),
          std::vector<std::size_t>(idx.begin() + cut, idx.end())};
}

std::vector<double> route_features(std::vector<double> traj, const TrajectoryModel& model,
                                   const Route& route) {
  if (!model.cfg.dynamic) return traj;
  std::size_t f = frame_of(route.timestamps.front(), model.cfg.frames_per_day, model.cfg.frame_seconds);
  auto row = model.frame.table().values().subspan(f * model.cfg.d_model, model.cfg.d_model);
  traj.insert(traj.end(), row.begin(), row.end());
  return traj;
}

}  // namespace

ErrorMetrics metric_suite(std::span<const double> preds, std::span<const double> truths) {
  if (preds.empty()) throw Error("metric_suite: empty input");
  if (preds.size() != truths.size())
    throw Error("metric_suite: " + std::to_string(preds.size()) + " predictions vs " +
                std::to_string(truths.size()) + " truths");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double e = preds[i] - truths[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const auto n = static_cast<double>(preds.size());
  return {abs_sum / n, std::sqrt(sq_sum / n)};
}

std::size_t rank_of(std::span<const double> row, std::size_t truth) {
  if (truth >= row.size()) throw Error("rank_of: class " + std::to_string(truth) + " out of range");
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (row[j] > row[truth] || (row[j] == row[truth] && j < truth)) ++ahead;
  return ahead + 1;
}

double top_n_accuracy(std::span<const double> scores, std::size_t classes,
                      std::span<const std::size_t> truth, std::size_t n) {
  if (truth.empty() || classes == 0) throw Error("top_n_accuracy: empty input");
  if (scores.size() != truth.size() * classes)
    throw Error("top_n_accuracy: score matrix does not match " + std::to_string(truth.size()) + " rows");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (rank_of(scores.subspan(i * classes, classes), truth[i]) <= n) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double TaskReport::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw Error("report " + task + " has no metric " + name);
}

void write_reports_csv(const std::vector<TaskReport>& reports, std::ostream& out) {
  out << "task,variant,metric,value,seeds,config\n";
  for (const auto& r : reports)
    for (const auto& [name, value] : r.metrics) {
      out << r.task << ',' << r.variant << ',' << name << ',' << std::setprecision(17) << value << ',';
      for (std::size_t i = 0; i < r.seeds.size(); ++i) out << (i ? ";" : "") << r.seeds[i];
      out << ',' << r.config_digest << '\n';
    }
}

void print_reports(const std::vector<TaskReport>& reports, std::ostream& out) {
  out << std::left << std::setw(14) << "task" << std::setw(9) << "variant" << std::setw(8)
      << "metric" << "value\n";
  for (const auto& r : reports)
    for (const auto& [name, value] : r.metrics)
      out << std::setw(14) << r.task << std::setw(9) << r.variant << std::setw(8) << name
          << std::fixed << std::setprecision(4) << value << std::defaultfloat << '\n';
}

std::vector<std::vector<std::vector<SegmentId>>> speed_fold_masks(std::size_t segments,
                                                                  std::size_t frames,
                                                                  std::size_t folds,
                                                                  double mask_fraction,
                                                                  std::uint64_t seed) {
  if (folds == 0 || segments == 0 || frames == 0) throw Error("speed masks: empty layout");
  auto per_fold = static_cast<std::size_t>(std::llround(mask_fraction * static_cast<double>(segments)));
  if (per_fold == 0 || per_fold * folds > segments)
    throw Error("speed masks: " + std::to_string(folds) + " folds of " + std::to_string(per_fold) +
                " segments do not fit " + std::to_string(segments) + " segments");
  Rng rng(seed);
  std::vector<std::vector<std::vector<SegmentId>>> masks(folds, std::vector<std::vector<SegmentId>>(frames));
  std::vector<SegmentId> perm(segments);
  for (std::size_t f = 0; f < frames; ++f) {
    std::iota(perm.begin(), perm.end(), SegmentId{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < folds; ++k) {
      auto& m = masks[k][f];
      m.assign(perm.begin() + k * per_fold, perm.begin() + (k + 1) * per_fold);
      std::sort(m.begin(), m.end());
    }
  }
  return masks;
}

TaskReport eval_speed(const EmbeddingSet& es, const GroundTruth& truth, const DownstreamConfig& cfg) {
  const auto& sc = cfg.speed;
  const std::size_t segments = es.segment_count();
  const std::size_t frames = truth.frames;
  if (truth.speed.size() != segments) throw Error("eval_speed: ground truth does not match embeddings");

  Matrix x;
  std::vector<double> y;
  for (std::size_t v = 0; v < segments; ++v)
    for (std::size_t f = 0; f < frames; ++f) {
      x.push_back(segment_embedding(es, v, es.dynamic ? std::optional<double>(static_cast<double>(f))
                                                     : std::nullopt));
      y.push_back(truth.speed[v][f]);
    }
  auto cell = [frames](std::size_t v, std::size_t f) { return v * frames + f; };

  auto masks = speed_fold_masks(segments, frames, sc.folds, sc.mask_fraction,
                                derive_seed(cfg.seed, "speed.folds"));
  double mae = 0.0, rmse = 0.0;
  for (std::size_t k = 0; k < sc.folds; ++k) {
    std::vector<char> masked(segments * frames, 0);
    std::vector<std::size_t> test, rest;
    for (std::size_t f = 0; f < frames; ++f)
      for (SegmentId v : masks[k][f]) masked[cell(v, f)] = 1;
    for (std::size_t i = 0; i < masked.size(); ++i) (masked[i] ? test : rest).push_back(i);
    if (test.empty() || rest.size() < 2) throw Error("eval_speed: degenerate fold " + std::to_string(k));

    Rng rng(derive_seed(cfg.seed, "speed.regressor", k));
    std::shuffle(rest.begin(), rest.end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(sc.val_fraction * static_cast<double>(rest.size())));
    n_val = std::min(n_val, rest.size() - 1);
    std::span<const std::size_t> val(rest.data(), n_val);
    std::span<const std::size_t> train(rest.data() + n_val, rest.size() - n_val);

    auto preds = fit_regressor(x, y, train, val, test, {sc.hidden}, sc.epochs, sc.lr, sc.batch,
                               sc.patience, rng);
    auto m = metric_suite(preds, gather(y, test));
    mae += m.mae;
    rmse += m.rmse;
  }
  TaskReport r;
  r.task = "speed";
  r.metrics = {{"MAE", mae / static_cast<double>(sc.folds)}, {"RMSE", rmse / static_cast<double>(sc.folds)}};
  r.seeds = {cfg.seed};
  return r;
}

std::vector<std::vector<double>> travel_time_features(const TrajectoryModel& model,
                                                      std::span<const Route> routes) {
  auto traj = trajectory_embeddings(model, routes, false);
  for (std::size_t i = 0; i < routes.size(); ++i)
    traj[i] = route_features(std::move(traj[i]), model, routes[i]);
  return traj;
}

std::vector<double> travel_time_features(const TrajectoryModel& model, const Route& route) {
  return travel_time_features(model, std::span<const Route>(&route, 1)).front();
}

TaskReport eval_travel_time(const TrajectoryModel& model, const Corpus& routes,
                            const DownstreamConfig& cfg) {
  Corpus usable;
  for (const auto& r : routes)
    if (r.size() >= 2) usable.push_back(r);
  if (usable.size() < 2) throw Error("eval_travel_time: fewer than two usable routes");
  Matrix x = travel_time_features(model, usable);
  std::vector<double> y;
  for (const auto& r : usable) y.push_back(r.timestamps.back() - r.timestamps.front());

  Rng rng(derive_seed(cfg.seed, "travel_time"));
  auto [train, test] = split_indices(usable.size(), cfg.heads.train_fraction, rng);
  auto preds = fit_regressor(x, y, train, {}, test, {}, cfg.heads.epochs, cfg.heads.lr,
                             cfg.heads.batch, 0, rng);
  auto m = metric_suite(preds, gather(y, test));
  TaskReport r;
  r.task = "travel_time";
  r.metrics = {{"MAE", m.mae}, {"RMSE", m.rmse}};
  r.seeds = {cfg.seed};
  return r;
}

Route destination_prefix(const Route& route) {
  const std::size_t keep = (route.size() + 1) / 2;
  Route p;
  p.segments.assign(route.segments.begin(), route.segments.begin() + keep);
  p.timestamps.assign(route.timestamps.begin(), route.timestamps.begin() + keep);
  return p;
}

TaskReport eval_destination(const TrajectoryModel& model, const Corpus& routes,
                            const DownstreamConfig& cfg) {
  Corpus prefixes;
  std::vector<std::size_t> dest;
  for (const auto& r : routes)
    if (r.size() >= 4) {
      prefixes.push_back(destination_prefix(r));
      dest.push_back(r.segments.back());
    }
  if (prefixes.size() < 2) throw Error("eval_destination: fewer than two usable routes");
  Matrix x = trajectory_embeddings(model, prefixes, true);
  const std::size_t classes = model.vocab.segments;

  Rng rng(derive_seed(cfg.seed, "destination"));
  auto [train, test] = split_indices(prefixes.size(), cfg.heads.train_fraction, rng);
  auto scaler = Standardizer::fit(x, train);
  DenseNet head({x.front().size(), classes}, rng);
  ad::Adam opt(head.parameters(), ad::AdamConfig{cfg.heads.lr});
  std::vector<std::size_t> order = train;
  for (std::size_t epoch = 0; epoch < cfg.heads.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.heads.batch) {
      std::span<const std::size_t> idx(order.data() + b, std::min(cfg.heads.batch, order.size() - b));
      auto loss = cross_entropy(head.forward(scaler.batch(x, idx)), gather_ids(dest, idx));
      if (!std::isfinite(loss.item())) throw DivergenceError("destination head: non-finite loss");
      ad::backward(loss);
      opt.step();
    }
  }
  auto scores = head.forward(scaler.batch(x, test));
  auto truth = gather_ids(dest, test);
  TaskReport r;
  r.task = "destination";
  r.metrics = {{"Acc@5", top_n_accuracy(scores.values(), classes, truth, 5)},
               {"Acc@10", top_n_accuracy(scores.values(), classes, truth, 10)}};
  r.seeds = {cfg.seed};
  return r;
}

}  // namespace dyroad
