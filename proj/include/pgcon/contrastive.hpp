#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pgcon/common.hpp"
#include "pgcon/rng.hpp"

namespace pgcon {

enum class LossMode { pgcon, wincon };

inline std::string to_string(LossMode m) { return m == LossMode::pgcon ? "pgcon" : "wincon"; }

// Temperature, term weights and negative count for the two objectives.
// allow_empty_win / allow_zero_k are explicit overrides for degenerate
// closed-form cases; normal validation rejects them.
struct LossConfig {
  double tau = 0.07;
  double alpha = 0.5;
  double beta = 0.5;
  int k = 200;
  LossMode mode = LossMode::pgcon;
  bool detach_win = false;
  bool allow_empty_win = false;
  bool allow_zero_k = false;

  void validate(std::size_t bank_rows) const {
    require(tau > 0.0, "LossConfig: tau must be > 0");
    require(alpha >= 0.0 && beta >= 0.0, "LossConfig: alpha/beta must be >= 0");
    require(k >= 1 || allow_zero_k, "LossConfig: k must be >= 1");
    require(k >= 0, "LossConfig: k must be >= 0");
    require(static_cast<std::size_t>(k) <= bank_rows - 1, "LossConfig: k must be <= n-1");
  }
};

// Per-instance EMA storage of prior-view embeddings; rows stay unit-norm.
// Rows are the global negatives and are never differentiated through.
template <typename T>
class MemoryBank {
 public:
  MemoryBank() = default;

  MemoryBank(std::size_t n, std::size_t dim, T momentum) : n_(n), dim_(dim), momentum_(momentum) {
    require(momentum > T(0) && momentum < T(1), "MemoryBank: momentum must be in (0,1)");
    rows_.assign(n * dim, T(0));
  }

  // Seeded start: unit vectors uniform on the sphere.
  static MemoryBank random_init(std::size_t n, std::size_t dim, T momentum, std::uint64_t seed) {
    MemoryBank bank(n, dim, momentum);
    Rng rng(derive_seed(seed, stream_tag("bank.init")));
    for (std::size_t i = 0; i < n; ++i) {
      T* row = bank.rows_.data() + i * dim;
      double norm2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double v = rng.normal();
        row[j] = static_cast<T>(v);
        norm2 += v * v;
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(norm2));
      for (std::size_t j = 0; j < dim; ++j) row[j] *= inv;
    }
    return bank;
  }

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  T momentum() const { return momentum_; }

  std::span<const T> row(std::size_t i) const {
    require(i < n_, "MemoryBank: index out of range");
    return {rows_.data() + i * dim_, dim_};
  }

  std::span<T> mutable_row(std::size_t i) {
    require(i < n_, "MemoryBank: index out of range");
    return {rows_.data() + i * dim_, dim_};
  }

  const std::vector<T>& raw() const { return rows_; }
  std::vector<T>& raw() { return rows_; }

  // R_i <- normalize(m*R_i + (1-m)*z); rows outside the batch are untouched.
  void update(std::span<const std::pair<std::size_t, std::vector<T>>> entries) {
    for (const auto& [idx, z] : entries) {
      if (idx >= n_) throw std::invalid_argument("bank_update: index out of range");
      require(z.size() == dim_, "bank_update: dimension mismatch");
      T* row = rows_.data() + idx * dim_;
      double norm2 = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) {
        const double v = momentum_ * row[j] + (T(1) - momentum_) * z[j];
        row[j] = static_cast<T>(v);
        norm2 += v * v;
      }
      if (!(norm2 > 1e-60)) throw NumericError("bank_update: EMA collapsed to zero");
      const T inv = static_cast<T>(1.0 / std::sqrt(norm2));
      for (std::size_t j = 0; j < dim_; ++j) row[j] *= inv;
    }
  }

 private:
  std::size_t n_ = 0;
  std::size_t dim_ = 0;
  T momentum_ = T(0.5);
  std::vector<T> rows_;
};

// Both arguments unit-norm, so the cosine is a plain dot product.
template <typename T>
T cosine_score(std::span<const T> u, std::span<const T> v) {
  require(u.size() == v.size(), "cosine_score: dimension mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

namespace detail {

// -log softmax(logits)[0], stabilized by subtracting the max logit.
template <typename T>
T softmax_xent_first(std::span<const T> logits) {
  T mx = logits[0];
  for (T l : logits) mx = std::max(mx, l);
  T sum = 0;
  for (T l : logits) sum += std::exp(l - mx);
  return -(logits[0] - mx) + std::log(sum);
}

}  // namespace detail

// InfoNCE with one positive and |negatives| negatives.
template <typename T>
T info_nce(std::span<const T> anchor, std::span<const T> positive,
           std::span<const std::span<const T>> negatives, double tau) {
  if (negatives.empty()) throw std::invalid_argument("info_nce: negatives must be non-empty");
  std::vector<T> logits;
  logits.reserve(negatives.size() + 1);
  logits.push_back(cosine_score(anchor, positive) / static_cast<T>(tau));
  for (const auto& neg : negatives)
    logits.push_back(cosine_score(anchor, neg) / static_cast<T>(tau));
  return detail::softmax_xent_first(std::span<const T>(logits));
}

// Uniform sample of k bank rows without replacement, excluding the anchor's
// own index. Returned rows are gradient constants.
inline std::vector<std::size_t> sample_negatives(std::size_t bank_size, std::size_t exclude, int k,
                                                 std::uint64_t seed) {
  require(exclude < bank_size, "sample_negatives: exclude out of range");
  if (static_cast<std::size_t>(k) > bank_size - 1)
    throw std::invalid_argument("sample_negatives: k exceeds n-1");
  std::vector<std::size_t> pool;
  pool.reserve(bank_size - 1);
  for (std::size_t i = 0; i < bank_size; ++i)
    if (i != exclude) pool.push_back(i);
  Rng rng(seed);
  // partial Fisher-Yates: the first k slots end up uniform without replacement
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(i, static_cast<std::int64_t>(pool.size()) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

template <typename T>
struct BatchItem {
  std::size_t index = 0;       // dataset instance id == bank row
  std::vector<T> z_p;          // unit-norm
  std::vector<T> z_d;          // unit-norm
};

template <typename T>
struct LossResult {
  T loss = 0;
  T term_p_mean = 0;
  T term_d_mean = 0;
  // gradients w.r.t. the (normalized) embeddings; empty unless requested
  std::vector<std::vector<T>> d_zp, d_zd, d_zwin;
  // diagnostics
  double mean_pos_sim = 0.0;
  double mean_neg_sim = 0.0;
  double mean_win_sim = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
inline constexpr std::uint64_t kNegP = stream_tag("neg.p");
inline constexpr std::uint64_t kNegD = stream_tag("neg.d");
}  // namespace detail

// Shared core of the two objectives. For each instance:
//   term_p = InfoNCE(z_p, R_i  | k sampled R_j [+ all batch z_win])
//   term_d = InfoNCE(z_p, z_d  | k sampled R_j [+ all batch z_win])
// loss = mean_i(alpha*term_p + beta*term_d). Bank rows are constants;
// z_win receives gradient unless cfg.detach_win.
template <typename T>
LossResult<T> contrastive_loss(std::span<const BatchItem<T>> batch,
                               std::span<const std::vector<T>> win_batch,
                               const MemoryBank<T>& bank, const LossConfig& cfg,
                               std::uint64_t seed, bool want_grads = false) {
  const std::size_t B = batch.size();
  require(B >= 1, "contrastive_loss: empty batch");
  cfg.validate(bank.size());
  require(bank.size() >= B + static_cast<std::size_t>(cfg.k),
          "contrastive_loss: bank must hold at least batch + k rows");
  const std::size_t dim = bank.dim();
  const double tau = cfg.tau;
  const std::size_t W = win_batch.size();

  LossResult<T> res;
  if (want_grads) {
    res.d_zp.assign(B, std::vector<T>(dim, T(0)));
    res.d_zd.assign(B, std::vector<T>(dim, T(0)));
    res.d_zwin.assign(W, std::vector<T>(dim, T(0)));
  }

  double pos_sim_acc = 0.0, neg_sim_acc = 0.0, win_sim_acc = 0.0;
  std::size_t neg_sim_count = 0;

  std::vector<T> logits;
  std::vector<double> probs;
  std::vector<std::size_t> negs;

  for (std::size_t bi = 0; bi < B; ++bi) {
    const BatchItem<T>& item = batch[bi];
    require(item.z_p.size() == dim && item.z_d.size() == dim,
            "contrastive_loss: embedding dimension mismatch");
    const std::span<const T> zp(item.z_p);

    for (int term = 0; term < 2; ++term) {
      const bool is_p = term == 0;
      const std::span<const T> positive =
          is_p ? bank.row(item.index) : std::span<const T>(item.z_d);
      negs = sample_negatives(bank.size(), item.index, cfg.k,
                              derive_seed(seed, is_p ? detail::kNegP : detail::kNegD,
                                          static_cast<std::uint64_t>(item.index)));

      logits.clear();
      logits.push_back(cosine_score(zp, positive) / static_cast<T>(tau));
      for (std::size_t j : negs) {
        const T s = cosine_score(zp, bank.row(j));
        logits.push_back(s / static_cast<T>(tau));
        neg_sim_acc += static_cast<double>(s);
        ++neg_sim_count;
      }
      for (std::size_t w = 0; w < W; ++w)
        logits.push_back(cosine_score(zp, std::span<const T>(win_batch[w])) / static_cast<T>(tau));
      require(logits.size() >= 2, "contrastive_loss: no negatives available");

      const T term_val = detail::softmax_xent_first(std::span<const T>(logits));
      const double weight = (is_p ? cfg.alpha : cfg.beta) / static_cast<double>(B);
      res.loss += static_cast<T>(weight) * term_val;
      if (is_p)
        res.term_p_mean += term_val / static_cast<T>(B);
      else
        res.term_d_mean += term_val / static_cast<T>(B);
      pos_sim_acc += static_cast<double>(logits[0]) * tau;

      if (want_grads && weight > 0.0) {
        // softmax probabilities over the logit list
        T mx = logits[0];
        for (T l : logits) mx = std::max(mx, l);
        double denom = 0.0;
        probs.assign(logits.size(), 0.0);
        for (std::size_t m = 0; m < logits.size(); ++m) {
          probs[m] = std::exp(static_cast<double>(logits[m] - mx));
          denom += probs[m];
        }
        for (double& p : probs) p /= denom;

        const double g0 = weight * (probs[0] - 1.0) / tau;  // positive slot
        auto& d_zp = res.d_zp[bi];
        for (std::size_t j = 0; j < dim; ++j)
          d_zp[j] += static_cast<T>(g0) * positive[j];
        if (!is_p) {
          auto& d_zd = res.d_zd[bi];
          for (std::size_t j = 0; j < dim; ++j)
            d_zd[j] += static_cast<T>(g0) * zp[j];
        }
        for (std::size_t m = 0; m < negs.size(); ++m) {
          const double g = weight * probs[m + 1] / tau;
          const auto row = bank.row(negs[m]);
          for (std::size_t j = 0; j < dim; ++j)
            d_zp[j] += static_cast<T>(g) * row[j];
        }
        for (std::size_t w = 0; w < W; ++w) {
          const double g = weight * probs[1 + negs.size() + w] / tau;
          const auto& zw = win_batch[w];
          for (std::size_t j = 0; j < dim; ++j)
            d_zp[j] += static_cast<T>(g) * zw[j];
          if (!cfg.detach_win) {
            auto& d_zw = res.d_zwin[w];
            for (std::size_t j = 0; j < dim; ++j)
              d_zw[j] += static_cast<T>(g) * zp[j];
          }
        }
      }
    }

    if (W > 0 && bi < W)
      win_sim_acc += static_cast<double>(cosine_score(zp, std::span<const T>(win_batch[bi])));
  }

  res.mean_pos_sim = pos_sim_acc / (2.0 * static_cast<double>(B));
  res.mean_neg_sim = neg_sim_count ? neg_sim_acc / static_cast<double>(neg_sim_count) : 0.0;
  if (W > 0) res.mean_win_sim = win_sim_acc / static_cast<double>(std::min(B, W));
  return res;
}

template <typename T>
LossResult<T> pgcon_loss(std::span<const BatchItem<T>> batch, const MemoryBank<T>& bank,
                         const LossConfig& cfg, std::uint64_t seed, bool want_grads = false) {
  require(cfg.mode == LossMode::pgcon, "pgcon_loss: config mode must be pgcon");
  return contrastive_loss(batch, std::span<const std::vector<T>>{}, bank, cfg, seed, want_grads);
}

template <typename T>
LossResult<T> wincon_loss(std::span<const BatchItem<T>> batch,
                          std::span<const std::vector<T>> win_batch, const MemoryBank<T>& bank,
                          const LossConfig& cfg, std::uint64_t seed, bool want_grads = false) {
  require(cfg.mode == LossMode::wincon, "wincon_loss: config mode must be wincon");
  if (win_batch.empty() && !cfg.allow_empty_win)
    throw std::invalid_argument("wincon_loss: WIN batch is required");
  if (!win_batch.empty())
    require(win_batch.size() == batch.size(), "wincon_loss: |win_batch| must equal batch size");
  return contrastive_loss(batch, win_batch, bank, cfg, seed, want_grads);
}

}  // namespace pgcon
