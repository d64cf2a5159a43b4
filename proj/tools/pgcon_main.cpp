// pgcon command-line interface: synth | pretrain | eval | analyze.
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 numerical failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pgcon/bundle_dump.hpp"
#include "pgcon/dataset.hpp"
#include "pgcon/embedding_io.hpp"
#include "pgcon/eval.hpp"
#include "pgcon/synthgen.hpp"
#include "pgcon/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct SynthOptions {
  std::string out;
  int n = 2000;
  std::uint64_t seed = 0;
  int size = 240;
  std::vector<double> class_mix = {0.25, 0.25, 0.25, 0.25};
  double radius_min = 12.0;
  double radius_max = 30.0;
  double margin = 15.0;
  bool hard = false;
  int max_distractors = 4;
  bool unlabeled = false;
};

struct PretrainOptions {
  std::string data;
  std::string out;
  std::string mode = "pgcon";
  std::string precision = "f32";
  std::string resume;
  pgcon::TrainConfig train;
};

struct EvalOptions {
  std::string checkpoint;
  std::string train_dir;
  std::string test_dir;
  std::string task = "knn";
  std::string out;
  double knn_tau = 0.1;
  int knn_k = 290;
  int probe_epochs = 100;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct AnalyzeOptions {
  std::vector<std::string> snapshots;
  std::string out;
};

void write_resolved_config(CLI::App* sub, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw pgcon::IoError("cannot create out_dir: " + out_dir);
  std::ofstream os(fs::path(out_dir) / "resolved_config.ini");
  if (!os) throw pgcon::IoError("cannot write resolved_config.ini under " + out_dir);
  os << sub->config_to_str(true, true);
}

void run_synth(CLI::App* sub, const SynthOptions& opt) {
  pgcon::SynthSpec spec;
  spec.image_size = opt.size;
  spec.n_images = opt.n;
  if (opt.class_mix.size() != 4)
    throw pgcon::ConfigError("class_mix must list exactly 4 proportions");
  std::copy(opt.class_mix.begin(), opt.class_mix.end(), spec.class_mix.begin());
  spec.anomaly_radius_min = opt.radius_min;
  spec.anomaly_radius_max = opt.radius_max;
  spec.a_star_margin = opt.hard ? 5.0 : opt.margin;
  spec.max_distractors = opt.max_distractors;
  spec.seed = opt.seed;
  spec.labeled = !opt.unlabeled;
  spec.validate();

  write_resolved_config(sub, opt.out);
  const auto records = pgcon::generate_dataset(spec);
  pgcon::write_dataset(opt.out, records, spec);

  std::array<int, 4> counts{};
  for (const auto& r : records) counts[r.label]++;
  std::cout << "wrote " << records.size() << " images under " << opt.out << "\n";
  for (int c = 0; c < 4; ++c) std::cout << "  class " << c << ": " << counts[c] << "\n";
}

template <typename T>
void run_pretrain_typed(const PretrainOptions& opt) {
  pgcon::Dataset ds = pgcon::load_dataset(opt.data);
  pgcon::TrainConfig cfg = opt.train;
  cfg.out_dir = opt.out;
  cfg.loss.mode = opt.mode == "wincon" ? pgcon::LossMode::wincon : pgcon::LossMode::pgcon;
  cfg.views.with_win = cfg.loss.mode == pgcon::LossMode::wincon;
  pgcon::Trainer<T> trainer(std::move(ds), cfg);
  if (!opt.resume.empty()) trainer.load_checkpoint(opt.resume);
  trainer.run();
  std::cout << "trained " << trainer.step_count() << " steps; final loss "
            << (trainer.loss_history().empty() ? 0.0 : trainer.loss_history().back()) << "\n"
            << "checkpoint: " << opt.out << "/checkpoint_final.pgcw\n";
}

void run_pretrain(CLI::App* sub, const PretrainOptions& opt) {
  write_resolved_config(sub, opt.out);
  if (opt.precision == "f64")
    run_pretrain_typed<double>(opt);
  else
    run_pretrain_typed<float>(opt);
}

void run_eval(CLI::App* sub, const EvalOptions& opt) {
  write_resolved_config(sub, opt.out);
  const pgcon::LoadedModel model = pgcon::load_model_for_eval(opt.checkpoint);
  const pgcon::Dataset train = pgcon::load_dataset(opt.train_dir);
  const pgcon::Dataset test = pgcon::load_dataset(opt.test_dir);

  nlohmann::json j;
  double top1 = 0.0;
  if (opt.task == "knn") {
    const pgcon::EvalReport report = pgcon::zero_shot_eval(model.params, train, test, model.views,
                                                           opt.knn_tau, opt.knn_k, opt.workers);
    j = report.to_json();
    j["task"] = "knn";
    top1 = report.top1;
  } else {
    const auto train_set = pgcon::embed_corpus(model.params, train, model.views, opt.workers);
    const auto test_set = pgcon::embed_corpus(model.params, test, model.views, opt.workers);
    pgcon::ProbeConfig pc;
    pc.epochs = opt.probe_epochs;
    pc.seed = opt.seed;
    top1 = pgcon::linear_probe(train_set, test_set, pc);
    j["task"] = "linear";
    j["top1_accuracy"] = top1;
    j["probe_epochs"] = opt.probe_epochs;
  }
  std::ofstream os(fs::path(opt.out) / "report.json");
  if (!os) throw pgcon::IoError("cannot write report.json under " + opt.out);
  os << j.dump(2) << "\n";
  std::printf("top1 %.4f\n", top1);
}

void run_analyze(const AnalyzeOptions& opt) {
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  if (ec) throw pgcon::IoError("cannot create out_dir: " + opt.out);

  struct Row {
    long long step = 0;
    std::size_t n_pairs = 0;
    double l_align = 0.0;
    double l_uniform = 0.0;
    double win_zp = std::numeric_limits<double>::quiet_NaN();
    double bank_zp = std::numeric_limits<double>::quiet_NaN();
  };
  std::vector<Row> rows;

  for (const std::string& file : opt.snapshots) {
    const auto records = pgcon::read_embedding_csv(file);
    if (records.empty()) throw pgcon::IoError("snapshot has no rows: " + file);
    std::map<std::int64_t, const pgcon::EmbeddingRecord*> zp, zd, win, bank;
    for (const auto& r : records) {
      if (r.role == "zp") zp[r.id] = &r;
      else if (r.role == "zd") zd[r.id] = &r;
      else if (r.role == "win") win[r.id] = &r;
      else if (r.role == "bank") bank[r.id] = &r;
    }
    Row row;
    row.step = records.front().step;

    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    for (const auto& [id, r] : zp) {
      auto it = zd.find(id);
      if (it != zd.end()) pairs.emplace_back(r->v, it->second->v);
    }
    row.n_pairs = pairs.size();
    if (!pairs.empty()) row.l_align = pgcon::alignment(pairs);
    std::vector<std::vector<double>> zp_vecs;
    for (const auto& [id, r] : zp) zp_vecs.push_back(r->v);
    if (zp_vecs.size() >= 2) row.l_uniform = pgcon::uniformity(zp_vecs);

    auto mean_cos_with_zp = [&](const std::map<std::int64_t, const pgcon::EmbeddingRecord*>& other) {
      double acc = 0.0;
      std::size_t count = 0;
      for (const auto& [id, r] : zp) {
        auto it = other.find(id);
        if (it == other.end()) continue;
        acc += pgcon::dot(r->v, it->second->v);
        ++count;
      }
      return count ? acc / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
    };
    if (!win.empty()) row.win_zp = mean_cos_with_zp(win);
    if (!bank.empty()) row.bank_zp = mean_cos_with_zp(bank);
    rows.push_back(row);

    // joint PCA over all roles, coordinates tagged per role
    std::vector<std::vector<double>> all;
    std::vector<std::pair<std::int64_t, std::string>> tags;
    for (const auto& r : records) {
      all.push_back(r.v);
      tags.emplace_back(r.id, r.role);
    }
    if (all.size() >= 2) {
      const auto coords = pgcon::pca_2d(all);
      std::ofstream os(fs::path(opt.out) / ("pca_step" + std::to_string(row.step) + ".csv"));
      if (!os) throw pgcon::IoError("cannot write PCA coordinates under " + opt.out);
      os << "id,role,x,y\n";
      char buf[64];
      for (std::size_t i = 0; i < coords.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%lld,%s,%.9g,%.9g", static_cast<long long>(tags[i].first),
                      tags[i].second.c_str(), coords[i][0], coords[i][1]);
        os << buf << "\n";
      }
    }
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.step < b.step; });
  std::ofstream os(fs::path(opt.out) / "summary.csv");
  if (!os) throw pgcon::IoError("cannot write summary.csv under " + opt.out);
  os << "step,pairs,l_align,l_uniform,win_zp_mean_cos,bank_zp_mean_cos\n";
  auto cell = [](double v) {
    if (!std::isfinite(v)) return std::string();
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  for (const Row& r : rows) {
    os << r.step << ',' << r.n_pairs << ',' << cell(r.l_align) << ',' << cell(r.l_uniform) << ','
       << cell(r.win_zp) << ',' << cell(r.bank_zp) << "\n";
    std::printf("step %lld  align %.4f  uniform %.4f  win-zp %s\n", r.step, r.l_align, r.l_uniform,
                cell(r.win_zp).empty() ? "-" : cell(r.win_zp).c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prior-guided contrastive pretraining (PGCon/WINCon) toolkit"};
  app.require_subcommand(1);

  SynthOptions synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled corpus");
  synth_cmd->set_config("--config");
  synth_cmd->allow_config_extras(CLI::config_extras_mode::error);
  synth_cmd->add_option("--out", synth.out, "output dataset directory")->required();
  synth_cmd->add_option("--n", synth.n, "number of images")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  synth_cmd->add_option("--class-mix", synth.class_mix, "proportions for classes 0..3")
      ->expected(4);
  synth_cmd->add_option("--radius-min", synth.radius_min, "anomaly radius lower bound")
      ->capture_default_str();
  synth_cmd->add_option("--radius-max", synth.radius_max, "anomaly radius upper bound")
      ->capture_default_str();
  synth_cmd->add_option("--margin", synth.margin, "required a* margin of anomalies")
      ->capture_default_str();
  synth_cmd->add_flag("--hard", synth.hard, "hard mode: lower the a* margin to 5");
  synth_cmd->add_option("--max-distractors", synth.max_distractors, "distractors per image")
      ->capture_default_str();
  synth_cmd->add_flag("--unlabeled", synth.unlabeled, "flat unlabeled layout");
  synth_cmd->callback([&] { run_synth(synth_cmd, synth); });

  PretrainOptions pre;
  CLI::App* pre_cmd = app.add_subcommand("pretrain", "contrastive pretraining");
  pre_cmd->set_config("--config");
  pre_cmd->allow_config_extras(CLI::config_extras_mode::error);
  pre_cmd->add_option("--data", pre.data, "dataset directory")->required();
  pre_cmd->add_option("--out", pre.out, "run output directory")->required();
  pre_cmd->add_option("--mode", pre.mode, "training objective")
      ->check(CLI::IsMember({"pgcon", "wincon"}))
      ->capture_default_str();
  pre_cmd->add_option("--epochs", pre.train.epochs, "epochs")->capture_default_str();
  pre_cmd->add_option("--steps", pre.train.max_steps,
                      "total step cap; also the schedule length when set")
      ->capture_default_str();
  pre_cmd->add_option("--batch", pre.train.batch_size, "batch size")->capture_default_str();
  pre_cmd->add_option("--seed", pre.train.seed, "root seed")->capture_default_str();
  pre_cmd->add_option("--workers", pre.train.workers, "worker threads")->capture_default_str();
  pre_cmd->add_option("--dim", pre.train.model.dim, "embedding dimension")->capture_default_str();
  pre_cmd->add_option("--c1", pre.train.model.c1, "trunk width 1")->capture_default_str();
  pre_cmd->add_option("--c2", pre.train.model.c2, "trunk width 2")->capture_default_str();
  pre_cmd->add_option("--c3", pre.train.model.c3, "trunk width 3")->capture_default_str();
  pre_cmd->add_flag("--share-trunk", pre.train.model.share_trunk,
                    "jigsaw path reuses the prior-path trunk");
  pre_cmd->add_option("--lr-max", pre.train.lr_max, "initial learning rate")->capture_default_str();
  pre_cmd->add_option("--lr-min", pre.train.lr_min, "final learning rate")->capture_default_str();
  pre_cmd->add_option("--sgd-momentum", pre.train.sgd_momentum, "SGD momentum")
      ->capture_default_str();
  pre_cmd->add_option("--weight-decay", pre.train.weight_decay, "weight decay")
      ->capture_default_str();
  pre_cmd->add_option("--bank-momentum", pre.train.bank_momentum, "memory bank EMA momentum")
      ->capture_default_str();
  pre_cmd->add_option("--tau", pre.train.loss.tau, "softmax temperature")->capture_default_str();
  pre_cmd->add_option("--alpha", pre.train.loss.alpha, "weight of the prior term")
      ->capture_default_str();
  pre_cmd->add_option("--beta", pre.train.loss.beta, "weight of the distorted term")
      ->capture_default_str();
  pre_cmd->add_option("--k", pre.train.loss.k, "negatives per loss term")->capture_default_str();
  pre_cmd->add_flag("--detach-win", pre.train.loss.detach_win,
                    "stop gradients through WIN embeddings");
  pre_cmd->add_option("--crop-size", pre.train.views.crop_size, "prior crop side")
      ->capture_default_str();
  pre_cmd->add_option("--view-size", pre.train.views.view_size, "network input side")
      ->capture_default_str();
  pre_cmd->add_option("--tile-size", pre.train.views.tile_size, "jigsaw tile side")
      ->capture_default_str();
  pre_cmd->add_option("--smooth-radius", pre.train.views.smooth_radius,
                      "a* box-filter radius (0 = raw argmax)")
      ->capture_default_str();
  pre_cmd->add_flag("--random-prior", pre.train.views.random_prior,
                    "ablation: random crop centers instead of the a* argmax");
  pre_cmd->add_option("--snapshot-every", pre.train.snapshot_every,
                      "steps between embedding snapshots (0 = off)")
      ->capture_default_str();
  pre_cmd->add_option("--checkpoint-every", pre.train.checkpoint_every,
                      "steps between periodic checkpoints (0 = final only)")
      ->capture_default_str();
  pre_cmd->add_option("--probe-size", pre.train.probe_size, "snapshot probe subset size")
      ->capture_default_str();
  bool no_save_bank = false;
  pre_cmd->add_flag("--no-save-bank", no_save_bank, "omit the memory bank from checkpoints");
  pre_cmd->add_option("--precision", pre.precision, "floating point width")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  pre_cmd->add_option("--resume", pre.resume, "checkpoint to resume from");
  pre_cmd->callback([&] {
    pre.train.save_bank = !no_save_bank;
    run_pretrain(pre_cmd, pre);
  });

  EvalOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "zero-shot kNN or linear probe evaluation");
  eval_cmd->set_config("--config");
  eval_cmd->allow_config_extras(CLI::config_extras_mode::error);
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "encoder checkpoint")->required();
  eval_cmd->add_option("--train", ev.train_dir, "labeled reference corpus")->required();
  eval_cmd->add_option("--test", ev.test_dir, "labeled query corpus")->required();
  eval_cmd->add_option("--task", ev.task, "evaluation task")
      ->check(CLI::IsMember({"knn", "linear"}))
      ->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "report output directory")->required();
  eval_cmd->add_option("--knn-tau", ev.knn_tau, "kNN vote temperature")->capture_default_str();
  eval_cmd->add_option("--knn-k", ev.knn_k, "kNN neighbor count (capped at train size)")
      ->capture_default_str();
  eval_cmd->add_option("--probe-epochs", ev.probe_epochs, "linear probe epochs")
      ->capture_default_str();
  eval_cmd->add_option("--seed", ev.seed, "probe seed")->capture_default_str();
  eval_cmd->add_option("--workers", ev.workers, "worker threads")->capture_default_str();
  eval_cmd->callback([&] { run_eval(eval_cmd, ev); });

  AnalyzeOptions an;
  CLI::App* an_cmd = app.add_subcommand("analyze", "alignment/uniformity and PCA over snapshots");
  an_cmd->add_option("snapshots", an.snapshots, "embedding snapshot CSV files")
      ->required()
      ->expected(-1);
  an_cmd->add_option("--out", an.out, "analysis output directory")->required();
  an_cmd->callback([&] { run_analyze(an); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const pgcon::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const pgcon::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 3;
  } catch (const pgcon::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
