#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgcon/checkpoint.hpp"
#include "pgcon/contrastive.hpp"
#include "pgcon/dataset.hpp"
#include "pgcon/embedding_io.hpp"
#include "pgcon/nn.hpp"
#include "pgcon/parallel.hpp"
#include "pgcon/rng.hpp"
#include "pgcon/views.hpp"

namespace pgcon {

struct TrainConfig {
  int batch_size = 64;
  int epochs = 1;
  long long max_steps = -1;  // >0 caps the run and defines the schedule length
  double lr_max = 0.012;
  double lr_min = 1.2e-5;
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  double bank_momentum = 0.5;
  LossConfig loss;
  ViewConfig views;
  EncoderConfig model;
  long long snapshot_every = 0;    // steps between embedding snapshots (0 = off)
  long long checkpoint_every = 0;  // steps between periodic checkpoints (0 = final only)
  std::uint64_t seed = 0;
  int workers = 1;
  bool save_bank = true;
  int probe_size = 256;
  std::string out_dir;  // empty disables metrics/snapshot/checkpoint files

  void validate() const {
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(lr_max > lr_min && lr_min > 0.0, "TrainConfig: need lr_max > lr_min > 0");
    require(workers >= 1, "TrainConfig: workers must be >= 1");
    require(probe_size >= 1, "TrainConfig: probe_size must be >= 1");
  }
};

// Cosine annealing from lr_max (step 0) to lr_min (step = total_steps).
// Endpoints are returned exactly.
inline double cosine_lr(long long step, long long total_steps, double lr_max, double lr_min) {
  require(total_steps >= 1, "cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("cosine_lr: step out of [0, total_steps]");
  if (step == 0) return lr_max;
  if (step == total_steps) return lr_min;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

namespace detail {
inline constexpr std::uint64_t kModelStream = stream_tag("model");
inline constexpr std::uint64_t kShuffleStream = stream_tag("shuffle");
inline constexpr std::uint64_t kViewStream = stream_tag("views");
inline constexpr std::uint64_t kLossStream = stream_tag("loss");
inline constexpr std::uint64_t kProbeStream = stream_tag("probe");
inline constexpr std::uint64_t kSnapStream = stream_tag("snap");
}  // namespace detail

// Pretraining loop. All randomness is derived from (seed, purpose, epoch,
// instance/step counters), so runs are reproducible and resumable; gradient
// reduction is done in batch order, keeping results bit-identical for any
// worker count.
template <typename T>
class Trainer {
 public:
  Trainer(Dataset dataset, TrainConfig cfg) : ds_(std::move(dataset)), cfg_(std::move(cfg)) {
    cfg_.validate();
    if (ds_.size() == 0) throw std::invalid_argument("Trainer: dataset is empty");
    n_ = ds_.size();
    steps_per_epoch_ = (n_ + cfg_.batch_size - 1) / static_cast<std::size_t>(cfg_.batch_size);
    total_steps_ = cfg_.max_steps > 0
                       ? cfg_.max_steps
                       : static_cast<long long>(cfg_.epochs) * static_cast<long long>(steps_per_epoch_);
    params_ = init_model<T>(cfg_.model, derive_seed(cfg_.seed, detail::kModelStream));
    velocity_ = zeros_like(params_);
    grads_ = zeros_like(params_);
    bank_ = MemoryBank<T>::random_init(n_, static_cast<std::size_t>(cfg_.model.dim),
                                       static_cast<T>(cfg_.bank_momentum), cfg_.seed);
    if (!cfg_.views.random_prior)
      prior_centers_ = compute_prior_centers(ds_, cfg_.views.smooth_radius);

    Rng probe_rng(derive_seed(cfg_.seed, detail::kProbeStream));
    std::vector<std::size_t> ids(n_);
    for (std::size_t i = 0; i < n_; ++i) ids[i] = i;
    probe_rng.shuffle(ids);
    ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(cfg_.probe_size)));
    std::sort(ids.begin(), ids.end());
    probe_ids_ = std::move(ids);

    if (!cfg_.out_dir.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(cfg_.out_dir, ec);
      if (ec) throw IoError("cannot create out_dir: " + cfg_.out_dir);
    }
  }

  long long step_count() const { return step_; }
  long long total_steps() const { return total_steps_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  const std::vector<double>& loss_history() const { return loss_history_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  const MemoryBank<T>& bank() const { return bank_; }
  const Dataset& dataset() const { return ds_; }
  const TrainConfig& config() const { return cfg_; }

  // Instance visit order for one epoch (seeded, epoch-keyed).
  std::vector<std::size_t> epoch_order(long long epoch) const {
    std::vector<std::size_t> order(n_);
    for (std::size_t i = 0; i < n_; ++i) order[i] = i;
    Rng rng(derive_seed(cfg_.seed, detail::kShuffleStream, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
  }

  // One optimization step; returns false once the schedule is exhausted.
  bool step() {
    if (step_ >= total_steps_) return false;
    const long long epoch = step_ / static_cast<long long>(steps_per_epoch_);
    const long long pos = step_ % static_cast<long long>(steps_per_epoch_);
    if (pos == 0 || order_epoch_ != epoch) {
      order_ = epoch_order(epoch);
      order_epoch_ = epoch;
    }
    const std::size_t lo = static_cast<std::size_t>(pos) * cfg_.batch_size;
    const std::size_t hi = std::min(n_, lo + static_cast<std::size_t>(cfg_.batch_size));
    const std::size_t B = hi - lo;
    const bool use_win = cfg_.loss.mode == LossMode::wincon && cfg_.views.with_win;

    std::vector<ViewBundle> bundles(B);
    std::vector<PriorTrace<T>> p_traces(B);
    std::vector<JigsawTrace<T>> d_traces(B);
    std::vector<PriorTrace<T>> w_traces(use_win ? B : 0);
    std::vector<BatchItem<T>> batch(B);
    std::vector<std::vector<T>> win_batch(use_win ? B : 0);

    parallel_for(B, cfg_.workers, [&](std::size_t bi) {
      const std::size_t idx = order_[lo + bi];
      const std::uint64_t vseed = derive_seed(cfg_.seed, detail::kViewStream,
                                              static_cast<std::uint64_t>(epoch),
                                              static_cast<std::uint64_t>(idx));
      std::optional<PixelLoc> center;
      if (!cfg_.views.random_prior) center = prior_centers_[idx];
      ViewConfig vc = cfg_.views;
      vc.with_win = use_win;
      bundles[bi] = build_view_bundle(ds_.images[idx], vc, static_cast<std::int64_t>(idx), vseed,
                                      center);
      batch[bi].index = idx;
      batch[bi].z_p = encode_prior(bundles[bi].v_p, params_, &p_traces[bi]);
      batch[bi].z_d = encode_jigsaw(std::span<const RgbImage>(bundles[bi].v_d_tiles), params_,
                                    &d_traces[bi]);
      if (use_win)
        win_batch[bi] = encode_win(bundles[bi].v_win, params_, &w_traces[bi]);
    });

    const std::uint64_t loss_seed =
        derive_seed(cfg_.seed, detail::kLossStream, static_cast<std::uint64_t>(step_));
    LossResult<T> res;
    if (cfg_.loss.mode == LossMode::wincon)
      res = wincon_loss(std::span<const BatchItem<T>>(batch),
                        std::span<const std::vector<T>>(win_batch), bank_, cfg_.loss, loss_seed,
                        /*want_grads=*/true);
    else
      res = pgcon_loss(std::span<const BatchItem<T>>(batch), bank_, cfg_.loss, loss_seed,
                       /*want_grads=*/true);
    if (!std::isfinite(static_cast<double>(res.loss)))
      throw NumericError("training loss is not finite at step " + std::to_string(step_));

    if (sample_grads_.size() < B) {
      sample_grads_.reserve(B);
      while (sample_grads_.size() < B) sample_grads_.push_back(zeros_like(params_));
    }
    parallel_for(B, cfg_.workers, [&](std::size_t bi) {
      zero_grads(sample_grads_[bi]);
      backward_prior(p_traces[bi], params_, res.d_zp[bi], sample_grads_[bi]);
      backward_jigsaw(d_traces[bi], params_, res.d_zd[bi], sample_grads_[bi]);
      if (use_win && !cfg_.loss.detach_win)
        backward_prior(w_traces[bi], params_, res.d_zwin[bi], sample_grads_[bi]);
    });
    zero_grads(grads_);
    for (std::size_t bi = 0; bi < B; ++bi) accumulate_grads(grads_, sample_grads_[bi]);

    const double lr = cosine_lr(step_, total_steps_, cfg_.lr_max, cfg_.lr_min);
    sgd_step(params_, grads_, velocity_, lr, cfg_.sgd_momentum, cfg_.weight_decay);

    std::vector<std::pair<std::size_t, std::vector<T>>> entries;
    entries.reserve(B);
    for (std::size_t bi = 0; bi < B; ++bi) entries.emplace_back(batch[bi].index, batch[bi].z_p);
    bank_.update(std::span<const std::pair<std::size_t, std::vector<T>>>(entries));

    loss_history_.push_back(static_cast<double>(res.loss));
    write_metrics(res, lr);
    ++step_;
    return true;
  }

  // Steps through the remainder of the current epoch (or to the step cap).
  void train_epoch() {
    const long long epoch = step_ / static_cast<long long>(steps_per_epoch_);
    while (step_ < total_steps_ && step_ / static_cast<long long>(steps_per_epoch_) == epoch)
      if (!step()) break;
  }

  // Full run with snapshot/checkpoint cadence.
  void run() {
    maybe_snapshot();
    while (step_ < total_steps_) {
      step();
      if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0 && step_ < total_steps_ &&
          !cfg_.out_dir.empty())
        save_checkpoint(cfg_.out_dir + "/checkpoint_step" + std::to_string(step_) + ".pgcw");
      if (step_ < total_steps_) maybe_snapshot();
    }
    if (!cfg_.out_dir.empty()) {
      if (cfg_.snapshot_every > 0) write_snapshot();
      save_checkpoint(cfg_.out_dir + "/checkpoint_final.pgcw");
    }
  }

  // Embeddings of the fixed probe subset under fixed per-instance view seeds,
  // plus the matching bank rows, tagged with the current step.
  std::vector<EmbeddingRecord> probe_embeddings() {
    std::vector<EmbeddingRecord> records;
    const bool use_win = cfg_.loss.mode == LossMode::wincon && cfg_.views.with_win;
    std::vector<std::vector<EmbeddingRecord>> per_id(probe_ids_.size());
    parallel_for(probe_ids_.size(), cfg_.workers, [&](std::size_t pi) {
      const std::size_t idx = probe_ids_[pi];
      const std::uint64_t vseed =
          derive_seed(cfg_.seed, detail::kSnapStream, static_cast<std::uint64_t>(idx));
      std::optional<PixelLoc> center;
      if (!cfg_.views.random_prior) center = prior_centers_[idx];
      ViewConfig vc = cfg_.views;
      vc.with_win = use_win;
      ViewBundle bundle =
          build_view_bundle(ds_.images[idx], vc, static_cast<std::int64_t>(idx), vseed, center);
      const int label = ds_.labels[idx];
      auto add = [&](const char* role, const std::vector<T>& v) {
        EmbeddingRecord r;
        r.id = static_cast<std::int64_t>(idx);
        r.label = label;
        r.role = role;
        r.step = step_;
        r.v.assign(v.begin(), v.end());
        per_id[pi].push_back(std::move(r));
      };
      add("zp", encode_prior(bundle.v_p, params_));
      add("zd", encode_jigsaw(std::span<const RgbImage>(bundle.v_d_tiles), params_));
      if (use_win) add("win", encode_win(bundle.v_win, params_));
      const auto row = bank_.row(idx);
      add("bank", std::vector<T>(row.begin(), row.end()));
    });
    for (auto& group : per_id)
      for (auto& r : group) records.push_back(std::move(r));
    return records;
  }

  void write_snapshot() {
    if (cfg_.out_dir.empty()) return;
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(cfg_.out_dir) / "snapshots", ec);
    if (ec) throw IoError("cannot create snapshot directory");
    const std::string path =
        (fs::path(cfg_.out_dir) / "snapshots" / ("step_" + std::to_string(step_) + ".csv")).string();
    write_embedding_csv(path, probe_embeddings());
  }

  void save_checkpoint(const std::string& path) const {
    CkptMap map;
    params_.for_each_tensor([&](const std::string& name, const Tensor<T>& t) {
      map["model/" + name] = CkptTensor::from_values(t.data(), t.size(), extents_of(t));
    });
    velocity_.for_each_tensor([&](const std::string& name, const Tensor<T>& t) {
      map["opt/" + name] = CkptTensor::from_values(t.data(), t.size(), extents_of(t));
    });
    if (cfg_.save_bank) {
      map["bank/rows"] = CkptTensor::from_values(
          bank_.raw().data(), bank_.raw().size(),
          {static_cast<std::uint64_t>(bank_.size()), static_cast<std::uint64_t>(bank_.dim())});
      const T bm = bank_.momentum();
      map["bank/momentum"] = CkptTensor::from_values(&bm, 1, {1});
    }
    auto put_u64 = [&](const std::string& name, std::uint64_t v) {
      map[name] = CkptTensor::from_values(&v, 1, {1});
    };
    put_u64("trainer/step", static_cast<std::uint64_t>(step_));
    put_u64("trainer/root_seed", cfg_.seed);
    put_u64("cfg/dim", static_cast<std::uint64_t>(cfg_.model.dim));
    put_u64("cfg/c1", static_cast<std::uint64_t>(cfg_.model.c1));
    put_u64("cfg/c2", static_cast<std::uint64_t>(cfg_.model.c2));
    put_u64("cfg/c3", static_cast<std::uint64_t>(cfg_.model.c3));
    put_u64("cfg/share_trunk", cfg_.model.share_trunk ? 1 : 0);
    put_u64("cfg/crop_size", static_cast<std::uint64_t>(cfg_.views.crop_size));
    put_u64("cfg/view_size", static_cast<std::uint64_t>(cfg_.views.view_size));
    put_u64("cfg/tile_size", static_cast<std::uint64_t>(cfg_.views.tile_size));
    put_u64("cfg/smooth_radius", static_cast<std::uint64_t>(cfg_.views.smooth_radius));
    put_u64("cfg/n", static_cast<std::uint64_t>(n_));
    pgcon::save_checkpoint(path, map);
  }

  void load_checkpoint(const std::string& path) {
    CkptMap map = pgcon::load_checkpoint(path);
    auto get = [&](const std::string& name) -> const CkptTensor& {
      auto it = map.find(name);
      if (it == map.end()) throw IoError("checkpoint is missing tensor: " + name);
      return it->second;
    };
    auto get_u64 = [&](const std::string& name) {
      return get(name).template to_values<std::uint64_t>().at(0);
    };
    if (get_u64("cfg/dim") != static_cast<std::uint64_t>(cfg_.model.dim) ||
        get_u64("cfg/c1") != static_cast<std::uint64_t>(cfg_.model.c1) ||
        get_u64("cfg/c2") != static_cast<std::uint64_t>(cfg_.model.c2) ||
        get_u64("cfg/c3") != static_cast<std::uint64_t>(cfg_.model.c3) ||
        get_u64("cfg/n") != static_cast<std::uint64_t>(n_))
      throw IoError("checkpoint was produced under a different model/dataset configuration");
    if (get_u64("trainer/root_seed") != cfg_.seed)
      throw IoError("checkpoint root seed differs from the configured seed");

    params_.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
      const auto vals = get("model/" + name).template to_values<T>();
      require(vals.size() == t.size(), "checkpoint tensor size mismatch: " + name);
      std::copy(vals.begin(), vals.end(), t.data());
    });
    velocity_.for_each_tensor([&](const std::string& name, Tensor<T>& t) {
      const auto vals = get("opt/" + name).template to_values<T>();
      require(vals.size() == t.size(), "checkpoint tensor size mismatch: opt/" + name);
      std::copy(vals.begin(), vals.end(), t.data());
    });
    if (map.contains("bank/rows")) {
      const auto vals = map.at("bank/rows").template to_values<T>();
      require(vals.size() == bank_.raw().size(), "checkpoint bank size mismatch");
      std::copy(vals.begin(), vals.end(), bank_.raw().data());
    }
    step_ = static_cast<long long>(get_u64("trainer/step"));
    order_epoch_ = -1;  // force re-derivation of the epoch order
  }

 private:
  static std::vector<std::uint64_t> extents_of(const Tensor<T>& t) {
    return {t.shape().begin(), t.shape().end()};
  }

  void maybe_snapshot() {
    if (cfg_.out_dir.empty() || cfg_.snapshot_every <= 0) return;
    if (step_ % cfg_.snapshot_every == 0) write_snapshot();
  }

  void write_metrics(const LossResult<T>& res, double lr) {
    if (cfg_.out_dir.empty()) return;
    if (!metrics_.is_open()) {
      metrics_.open(cfg_.out_dir + "/metrics.jsonl", std::ios::app);
      if (!metrics_) throw IoError("cannot open metrics.jsonl under " + cfg_.out_dir);
    }
    nlohmann::json j;
    j["step"] = step_;
    j["loss"] = static_cast<double>(res.loss);
    j["term_p"] = static_cast<double>(res.term_p_mean);
    j["term_d"] = static_cast<double>(res.term_d_mean);
    j["lr"] = lr;
    j["mean_pos_sim"] = res.mean_pos_sim;
    j["mean_neg_sim"] = res.mean_neg_sim;
    if (std::isfinite(res.mean_win_sim))
      j["mean_win_sim"] = res.mean_win_sim;
    else
      j["mean_win_sim"] = nullptr;
    metrics_ << j.dump() << "\n";
  }

  Dataset ds_;
  TrainConfig cfg_;
  std::size_t n_ = 0;
  std::size_t steps_per_epoch_ = 0;
  long long total_steps_ = 0;
  long long step_ = 0;
  long long order_epoch_ = -1;
  std::vector<std::size_t> order_;
  std::vector<PixelLoc> prior_centers_;
  std::vector<std::size_t> probe_ids_;
  ModelParams<T> params_, velocity_, grads_;
  std::vector<ModelParams<T>> sample_grads_;
  MemoryBank<T> bank_;
  std::vector<double> loss_history_;
  std::ofstream metrics_;
};

// Reconstructs the f-encoder (and companions) from a checkpoint for
// evaluation, casting parameters to double.
struct LoadedModel {
  ModelParams<double> params;
  ViewConfig views;
};

inline LoadedModel load_model_for_eval(const std::string& path) {
  CkptMap map = load_checkpoint(path);
  auto get_u64 = [&](const std::string& name) {
    auto it = map.find(name);
    if (it == map.end()) throw IoError("checkpoint is missing tensor: " + name);
    return it->second.to_values<std::uint64_t>().at(0);
  };
  EncoderConfig mc;
  mc.dim = static_cast<int>(get_u64("cfg/dim"));
  mc.c1 = static_cast<int>(get_u64("cfg/c1"));
  mc.c2 = static_cast<int>(get_u64("cfg/c2"));
  mc.c3 = static_cast<int>(get_u64("cfg/c3"));
  mc.share_trunk = get_u64("cfg/share_trunk") != 0;
  LoadedModel out{make_model<double>(mc), ViewConfig{}};
  out.views.crop_size = static_cast<int>(get_u64("cfg/crop_size"));
  out.views.view_size = static_cast<int>(get_u64("cfg/view_size"));
  out.views.tile_size = static_cast<int>(get_u64("cfg/tile_size"));
  out.views.smooth_radius = static_cast<int>(get_u64("cfg/smooth_radius"));
  out.params.for_each_tensor([&](const std::string& name, Tensor<double>& t) {
    auto it = map.find("model/" + name);
    if (it == map.end()) throw IoError("checkpoint is missing tensor: model/" + name);
    std::vector<double> vals;
    if (it->second.dtype == CkptDType::f32) {
      const auto f = it->second.to_values<float>();
      vals.assign(f.begin(), f.end());
    } else {
      vals = it->second.to_values<double>();
    }
    require(vals.size() == t.size(), "checkpoint tensor size mismatch: " + name);
    std::copy(vals.begin(), vals.end(), t.data());
  });
  return out;
}

}  // namespace pgcon
