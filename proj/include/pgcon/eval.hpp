#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgcon/common.hpp"
#include "pgcon/dataset.hpp"
#include "pgcon/nn.hpp"
#include "pgcon/parallel.hpp"
#include "pgcon/rng.hpp"
#include "pgcon/views.hpp"

namespace pgcon {

struct LabeledEmbeddingSet {
  std::vector<std::vector<double>> vectors;  // unit rows
  std::vector<int> labels;
  std::vector<std::int64_t> ids;

  std::size_t size() const { return vectors.size(); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Weighted kNN vote: the min(k, m) nearest train rows by cosine similarity
// vote with weight exp(s/tau); ties in similarity prefer the smaller row
// index, ties in class weight the smaller class id.
inline int weighted_knn(const LabeledEmbeddingSet& train, std::span<const double> query,
                        double tau = 0.1, int k = 290) {
  if (train.size() == 0) throw std::invalid_argument("weighted_knn: empty train set");
  require(tau > 0.0, "weighted_knn: tau must be > 0");
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), train.size());
  std::vector<std::pair<double, std::size_t>> scored(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    scored[i] = {dot(train.vectors[i], query), i};
  auto better = [](const std::pair<double, std::size_t>& a, const std::pair<double, std::size_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  };
  std::partial_sort(scored.begin(), scored.begin() + kk, scored.end(), better);
  int num_classes = 0;
  for (int l : train.labels) num_classes = std::max(num_classes, l + 1);
  require(num_classes >= 1, "weighted_knn: train set has no labels");
  std::vector<double> weight(num_classes, 0.0);
  for (std::size_t i = 0; i < kk; ++i)
    weight[train.labels[scored[i].second]] += std::exp(scored[i].first / tau);
  int best = 0;
  for (int c = 1; c < num_classes; ++c)
    if (weight[c] > weight[best]) best = c;
  return best;
}

// Mean ||u - v||^2 over positive pairs (alignment, alpha = 2). Lower = tighter.
inline double alignment(std::span<const std::pair<std::vector<double>, std::vector<double>>> pairs) {
  if (pairs.empty()) throw std::invalid_argument("alignment: need at least one pair");
  double acc = 0.0;
  for (const auto& [u, v] : pairs) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) d2 += (u[i] - v[i]) * (u[i] - v[i]);
    acc += d2;
  }
  return acc / static_cast<double>(pairs.size());
}

// log mean over unordered distinct pairs of exp(-2 ||u-v||^2) (uniformity,
// t = 2). Always <= 0; more negative = more spread.
inline double uniformity(std::span<const std::vector<double>> vectors) {
  if (vectors.size() < 2) throw std::invalid_argument("uniformity: need at least two vectors");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i)
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < vectors[i].size(); ++c) {
        const double d = vectors[i][c] - vectors[j][c];
        d2 += d * d;
      }
      acc += std::exp(-2.0 * d2);
      ++count;
    }
  return std::log(acc / static_cast<double>(count));
}

// Top-2 PCA projection via power iteration with deflation (tol 1e-9). Sign
// convention: the first nonzero loading of each component is positive.
inline std::vector<std::array<double, 2>> pca_2d(std::span<const std::vector<double>> vectors) {
  const std::size_t m = vectors.size();
  if (m < 2) throw std::invalid_argument("pca_2d: need at least two vectors");
  const std::size_t d = vectors[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors)
    for (std::size_t c = 0; c < d; ++c) mean[c] += v[c];
  for (double& x : mean) x /= static_cast<double>(m);

  std::vector<double> cov(d * d, 0.0);
  std::vector<double> centered(d);
  for (const auto& v : vectors) {
    for (std::size_t c = 0; c < d; ++c) centered[c] = v[c] - mean[c];
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = centered[i];
      if (xi == 0.0) continue;
      double* row = cov.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += xi * centered[j];
    }
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < d; ++i) scale = std::max(scale, cov[i * d + i]);
  if (!(scale > 0.0)) throw std::invalid_argument("pca_2d: zero-variance data");

  auto power_iterate = [&](const std::vector<double>& matrix) {
    Rng rng(0x9e3779b97f4a7c15ull);
    std::vector<double> v(d), next(d);
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      v[i] = rng.normal();
      norm += v[i] * v[i];
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    for (int iter = 0; iter < 20000; ++iter) {
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        const double* row = matrix.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
        next[i] = acc;
      }
      double nn = 0.0;
      for (double x : next) nn += x * x;
      nn = std::sqrt(nn);
      if (!(nn > 0.0)) break;  // deflated matrix annihilated the iterate
      double diff = 0.0, dotp = 0.0;
      for (std::size_t i = 0; i < d; ++i) dotp += v[i] * next[i] / nn;
      const double sign = dotp < 0.0 ? -1.0 : 1.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double nv = sign * next[i] / nn;
        diff += std::abs(nv - v[i]);
        v[i] = nv;
      }
      if (diff < 1e-9) break;
    }
    double lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      const double* row = matrix.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * v[j];
      lambda += v[i] * acc;
    }
    return std::make_pair(v, lambda);
  };

  auto [v1, l1] = power_iterate(cov);
  std::vector<double> deflated = cov;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) deflated[i * d + j] -= l1 * v1[i] * v1[j];
  auto [v2, l2] = power_iterate(deflated);
  if (!(l2 > scale * 1e-14)) {
    // data is (numerically) 1-D: pick a deterministic direction orthogonal
    // to v1; projections on it vanish anyway
    std::size_t axis = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs(v1[i]) < std::abs(v1[axis])) axis = i;
    std::fill(v2.begin(), v2.end(), 0.0);
    v2[axis] = 1.0;
    double proj = v1[axis];
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      v2[i] -= proj * v1[i];
      norm += v2[i] * v2[i];
    }
    norm = std::sqrt(norm);
    for (double& x : v2) x /= norm;
  }
  // orthogonalize v2 against v1 (deflation leaves ~1e-12 leakage)
  {
    double p = 0.0;
    for (std::size_t i = 0; i < d; ++i) p += v1[i] * v2[i];
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      v2[i] -= p * v1[i];
      norm += v2[i] * v2[i];
    }
    norm = std::sqrt(norm);
    require(norm > 0.0, "pca_2d: degenerate second component");
    for (double& x : v2) x /= norm;
  }
  for (auto* v : {&v1, &v2}) {
    for (std::size_t i = 0; i < d; ++i) {
      if (std::abs((*v)[i]) > 1e-12) {
        if ((*v)[i] < 0.0)
          for (double& x : *v) x = -x;
        break;
      }
    }
  }
  std::vector<std::array<double, 2>> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    double a = 0.0, b = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double x = vectors[r][c] - mean[c];
      a += x * v1[c];
      b += x * v2[c];
    }
    out[r] = {a, b};
  }
  return out;
}

// Same-class mutual nearest neighbors (by cosine), used as evaluation-time
// alignment pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> mutual_nn_pairs(
    const LabeledEmbeddingSet& set) {
  const std::size_t m = set.size();
  std::vector<std::ptrdiff_t> nn(m, -1);
  for (std::size_t i = 0; i < m; ++i) {
    double best = -2.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i || set.labels[j] != set.labels[i]) continue;
      const double s = dot(set.vectors[i], set.vectors[j]);
      if (s > best) {
        best = s;
        nn[i] = static_cast<std::ptrdiff_t>(j);
      }
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m; ++i) {
    const std::ptrdiff_t j = nn[i];
    if (j >= 0 && static_cast<std::size_t>(j) > i && nn[j] == static_cast<std::ptrdiff_t>(i))
      pairs.emplace_back(i, static_cast<std::size_t>(j));
  }
  return pairs;
}

// ---- linear probe -----------------------------------------------------

struct ProbeConfig {
  int epochs = 100;
  int batch_size = 64;
  double lr_max = 0.1;
  double lr_min = 1e-4;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

// Trains fc(d->d) -> ReLU -> fc(d->C) with softmax cross-entropy on frozen
// embeddings; returns the best validation top-1 accuracy.
inline double linear_probe(const LabeledEmbeddingSet& train, const LabeledEmbeddingSet& val,
                           const ProbeConfig& cfg = {}) {
  require(train.size() >= 1 && val.size() >= 1, "linear_probe: empty split");
  const std::size_t d = train.vectors[0].size();
  int C = 0;
  for (int l : train.labels) C = std::max(C, l + 1);
  for (int l : val.labels) C = std::max(C, l + 1);
  require(C >= 2, "linear_probe: need at least two classes");
  std::vector<bool> seen(C, false);
  for (int l : train.labels) seen[l] = true;
  for (int c = 0; c < C; ++c)
    if (!seen[c])
      throw std::invalid_argument("linear_probe: class " + std::to_string(c) +
                                  " absent from train split");

  Rng rng(derive_seed(cfg.seed, stream_tag("probe.init")));
  auto init_linear = [&](std::size_t out, std::size_t in) {
    LinearParams<double> lin{Tensor<double>({out, in}), Tensor<double>({out})};
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < lin.w.size(); ++i) lin.w[i] = rng.uniform(-limit, limit);
    return lin;
  };
  LinearParams<double> fc1 = init_linear(d, d);
  LinearParams<double> fc2 = init_linear(static_cast<std::size_t>(C), d);
  LinearParams<double> v1{Tensor<double>({d, d}), Tensor<double>({d})};
  LinearParams<double> v2{Tensor<double>({static_cast<std::size_t>(C), d}),
                          Tensor<double>({static_cast<std::size_t>(C)})};

  auto forward = [&](const std::vector<double>& x, std::vector<double>* hidden) {
    std::vector<double> h = nn::linear_forward(fc1, x);
    for (double& y : h) y = std::max(0.0, y);
    if (hidden) *hidden = h;
    return nn::linear_forward(fc2, h);
  };
  auto evaluate = [&](const LabeledEmbeddingSet& split) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const std::vector<double> logits = forward(split.vectors[i], nullptr);
      const std::size_t pred = static_cast<std::size_t>(
          std::max_element(logits.begin(), logits.end()) - logits.begin());
      correct += static_cast<int>(pred) == split.labels[i];
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
  };

  const std::size_t m = train.size();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  const long long total_steps =
      static_cast<long long>(cfg.epochs) *
      static_cast<long long>((m + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));
  long long step = 0;
  double best = evaluate(val);

  Tensor<double> gw1({d, d}), gb1({d});
  Tensor<double> gw2({static_cast<std::size_t>(C), d}), gb2({static_cast<std::size_t>(C)});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, stream_tag("probe.shuffle"),
                                static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t lo = 0; lo < m; lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(m, lo + static_cast<std::size_t>(cfg.batch_size));
      gw1.fill(0.0);
      gb1.fill(0.0);
      gw2.fill(0.0);
      gb2.fill(0.0);
      for (std::size_t bi = lo; bi < hi; ++bi) {
        const std::size_t idx = order[bi];
        std::vector<double> hidden;
        std::vector<double> logits = forward(train.vectors[idx], &hidden);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (double& l : logits) {
          l = std::exp(l - mx);
          denom += l;
        }
        std::vector<double> grad_logits(logits.size());
        const double inv_batch = 1.0 / static_cast<double>(hi - lo);
        for (std::size_t c = 0; c < logits.size(); ++c)
          grad_logits[c] = (logits[c] / denom - (static_cast<int>(c) == train.labels[idx])) * inv_batch;
        std::vector<double> grad_hidden =
            nn::linear_backward(fc2, hidden, grad_logits, gw2, gb2);
        for (std::size_t c = 0; c < d; ++c)
          if (!(hidden[c] > 0.0)) grad_hidden[c] = 0.0;
        nn::linear_backward(fc1, train.vectors[idx], grad_hidden, gw1, gb1);
      }
      const double lr =
          cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) *
                           (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                           static_cast<double>(total_steps)));
      auto update = [&](LinearParams<double>& p, LinearParams<double>& vel, const Tensor<double>& gw,
                        const Tensor<double>& gb) {
        for (std::size_t i = 0; i < p.w.size(); ++i) {
          vel.w[i] = cfg.momentum * vel.w[i] + gw[i];
          p.w[i] -= lr * vel.w[i];
        }
        for (std::size_t i = 0; i < p.b.size(); ++i) {
          vel.b[i] = cfg.momentum * vel.b[i] + gb[i];
          p.b[i] -= lr * vel.b[i];
        }
      };
      update(fc1, v1, gw1, gb1);
      update(fc2, v2, gw2, gb2);
      ++step;
    }
    best = std::max(best, evaluate(val));
  }
  return best;
}

// ---- zero-shot evaluation ----------------------------------------------

struct EvalReport {
  double top1 = 0.0;
  std::vector<double> precision, recall;
  std::vector<std::vector<int>> confusion;  // rows = true class
  double l_align = 0.0;
  double l_uniform = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["top1_accuracy"] = top1;
    j["precision"] = precision;
    j["recall"] = recall;
    j["confusion"] = confusion;
    j["alignment"] = l_align;
    j["uniformity"] = l_uniform;
    return j;
  }
};

// Embeds every image through the f-encoder on the deterministic prior view
// (argmax crop, identity transform).
inline LabeledEmbeddingSet embed_corpus(const ModelParams<double>& params, const Dataset& ds,
                                        const ViewConfig& views, int workers = 1) {
  LabeledEmbeddingSet set;
  set.vectors.resize(ds.size());
  set.labels = ds.labels;
  set.ids.resize(ds.size());
  parallel_for(ds.size(), workers, [&](std::size_t i) {
    const RgbImage view = deterministic_prior_view(ds.images[i], views);
    set.vectors[i] = encode_prior(view, params);
  });
  for (std::size_t i = 0; i < ds.size(); ++i) set.ids[i] = static_cast<std::int64_t>(i);
  return set;
}

inline EvalReport zero_shot_eval(const ModelParams<double>& params, const Dataset& train,
                                 const Dataset& test, const ViewConfig& views, double knn_tau = 0.1,
                                 int knn_k = 290, int workers = 1) {
  require(train.labeled() && test.labeled(), "zero_shot_eval: corpora must carry labels");
  const LabeledEmbeddingSet train_set = embed_corpus(params, train, views, workers);
  const LabeledEmbeddingSet test_set = embed_corpus(params, test, views, workers);

  int C = 0;
  for (int l : train.labels) C = std::max(C, l + 1);
  for (int l : test.labels) C = std::max(C, l + 1);

  EvalReport report;
  report.confusion.assign(C, std::vector<int>(C, 0));
  std::vector<int> predictions(test_set.size());
  parallel_for(test_set.size(), workers, [&](std::size_t i) {
    predictions[i] = weighted_knn(train_set, test_set.vectors[i], knn_tau, knn_k);
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    report.confusion[test_set.labels[i]][predictions[i]]++;
    correct += predictions[i] == test_set.labels[i];
  }
  report.top1 = static_cast<double>(correct) / static_cast<double>(test_set.size());
  report.precision.assign(C, 0.0);
  report.recall.assign(C, 0.0);
  for (int c = 0; c < C; ++c) {
    int col = 0, row = 0;
    for (int r = 0; r < C; ++r) {
      col += report.confusion[r][c];
      row += report.confusion[c][r];
    }
    report.precision[c] = col > 0 ? static_cast<double>(report.confusion[c][c]) / col : 0.0;
    report.recall[c] = row > 0 ? static_cast<double>(report.confusion[c][c]) / row : 0.0;
  }

  const auto pair_idx = mutual_nn_pairs(test_set);
  if (!pair_idx.empty()) {
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    pairs.reserve(pair_idx.size());
    for (const auto& [i, j] : pair_idx)
      pairs.emplace_back(test_set.vectors[i], test_set.vectors[j]);
    report.l_align = alignment(pairs);
  }
  if (test_set.size() >= 2) report.l_uniform = uniformity(test_set.vectors);
  return report;
}

}  // namespace pgcon
