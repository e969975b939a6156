// Copyright 2026 the tvfx authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: builds datasets, runs the training phases
// (including the mode-seeking hyperparameter grid), evaluates checkpoints,
// and renders plots. Every run resolves its configuration from profile
// defaults, an optional config file, and --set overrides, then writes the
// resolved document next to its outputs so results are reproducible from
// that file and the seed alone.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
// 4 missing prerequisite artifact, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tvfx/checkpoint.hpp"
#include "tvfx/common.hpp"
#include "tvfx/config.hpp"
#include "tvfx/dataset.hpp"
#include "tvfx/metric.hpp"
#include "tvfx/plot.hpp"
#include "tvfx/trainer.hpp"
#include "tvfx/wav.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

tvfx::cfg::ExperimentConfig resolve_config(
    const std::string& config_path, const std::vector<std::string>& sets) {
  tvfx::cfg::ExperimentConfig cfg =
      config_path.empty()
          ? tvfx::cfg::load_experiment(json::object(), sets)
          : tvfx::cfg::load_experiment_file(config_path, sets);
  cfg.validate();
  return cfg;
}

void write_resolved_config(const fs::path& dir,
                           const tvfx::cfg::ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  tvfx::check(out.good(), "cannot write " + (dir / "config.json").string());
  out << tvfx::cfg::experiment_to_json(cfg).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

int cmd_dataset(const tvfx::cfg::ExperimentConfig& cfg,
                const std::string& dir_flag) {
  const fs::path dir =
      dir_flag.empty() ? fs::path(cfg.out_dir) / "dataset" : fs::path(dir_flag);
  tvfx::data::build_dataset(
      dir, cfg.dataset, cfg.phaser, cfg.preset,
      tvfx::derive_seed(cfg.train.seed, "dataset-train"),
      tvfx::derive_seed(cfg.train.seed, "dataset-validation"));
  write_resolved_config(dir, cfg);

  const tvfx::data::DatasetView view(dir);
  const json report{{"dataset", dir.string()},
              {"sample_rate", view.sample_rate()},
              {"preset", view.preset()},
              {"train_takes", view.take_count(tvfx::data::Split::Train)},
              {"validation_takes",
               view.take_count(tvfx::data::Split::Validation)}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

tvfx::ckpt::Checkpoint load_required(const std::string& path,
                                     const char* what) {
  if (path.empty()) {
    throw tvfx::MissingArtifactError(std::string("train: ") + what);
  }
  return tvfx::ckpt::load_checkpoint(path);
}

json run_phase(const tvfx::cfg::ExperimentConfig& cfg, const fs::path& dataset,
               const fs::path& run_dir, const std::string& phase,
               const std::string& from, const std::string& resume) {
  const tvfx::data::DatasetView ds(dataset);
  write_resolved_config(run_dir, cfg);
  tvfx::train::Trainer trainer(cfg.generator, cfg.discriminator, cfg.spn,
                               cfg.train, ds, run_dir);

  tvfx::ckpt::Checkpoint best;
  if (!resume.empty()) {
    best = trainer.resume(tvfx::ckpt::load_checkpoint(resume));
  } else if (phase == tvfx::train::kPhaseAdversarial) {
    best = trainer.train_phase1();
  } else if (phase == tvfx::train::kPhaseSpnPretrain) {
    best = trainer.pretrain_spn(load_required(
        from, "spn-pretrain needs --from <adversarial checkpoint>"));
  } else if (phase == tvfx::train::kPhaseFinetune) {
    best = trainer.finetune(load_required(
        from, "finetune needs --from <pre-training or adversarial "
              "checkpoint>"));
  } else {
    throw tvfx::ConfigError("train: unknown phase " + phase);
  }

  const fs::path best_path = run_dir / "best.ck";
  tvfx::ckpt::save_checkpoint(best_path, best);
  return {{"phase", best.phase},
          {"best_iteration", best.iteration},
          {"best_checkpoint", best_path.string()},
          {"run_dir", run_dir.string()}};
}

int cmd_train(tvfx::cfg::ExperimentConfig cfg, const std::string& phase,
              const std::string& dataset_flag, const std::string& from,
              const std::string& resume, bool grid) {
  const fs::path dataset = dataset_flag.empty()
                               ? fs::path(cfg.out_dir) / "dataset"
                               : fs::path(dataset_flag);

  if (grid) {
    // Mode-seeking hyperparameter sweep over the adversarial phase; one
    // self-contained run directory (with its own resolved config) per
    // combination.
    tvfx::check_config(phase == tvfx::train::kPhaseAdversarial,
                       "train: --grid applies to the adversarial phase");
    tvfx::check_config(resume.empty(), "train: --grid cannot resume");
    json runs = json::array();
    for (double weight : {0.01, 0.1, 1.0}) {
      for (double epsilon : {0.001, 0.01, 0.1}) {
        tvfx::cfg::ExperimentConfig run_cfg = cfg;
        run_cfg.train.ms_enabled = true;
        run_cfg.train.ms_weight = weight;
        run_cfg.train.ms_epsilon = epsilon;
        run_cfg.validate();
        char leaf[64];
        std::snprintf(leaf, sizeof leaf, "ms%g_eps%g", weight, epsilon);
        const fs::path run_dir = fs::path(cfg.out_dir) / "grid" / leaf;
        runs.push_back(
            run_phase(run_cfg, dataset, run_dir, phase, from, ""));
      }
    }
    std::cout << json{{"grid", runs}}.dump(2) << "\n";
    return 0;
  }

  fs::path run_dir = fs::path(cfg.out_dir) / phase;
  if (!resume.empty()) {
    // Continue in the interrupted run's directory so earlier snapshots
    // referenced by the restored history remain reachable.
    run_dir = fs::path(resume).parent_path();
    tvfx::check_config(!run_dir.empty(),
                       "train: --resume needs a path inside the run directory");
  }
  std::cout << run_phase(cfg, dataset, run_dir, phase, from, resume).dump(2)
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_flag,
             const std::string& report_flag,
             const std::string& config_path,
             const std::vector<std::string>& sets) {
  const tvfx::ckpt::Checkpoint ck = tvfx::ckpt::load_checkpoint(ckpt_path);
  tvfx::train::Trainer::Restored models =
      tvfx::train::Trainer::restore_models(ck);

  // The dataset default follows the resolved config's output layout.
  fs::path dataset(dataset_flag);
  if (dataset.empty()) {
    const tvfx::cfg::ExperimentConfig cfg = resolve_config(config_path, sets);
    dataset = fs::path(cfg.out_dir) / "dataset";
  }
  const tvfx::data::DatasetView ds(dataset);

  const fs::path scratch =
      fs::temp_directory_path() /
      ("tvfx-eval-" + std::to_string(tvfx::derive_seed(
                          models.tcfg.seed, ckpt_path)));
  tvfx::train::Trainer trainer(models.gcfg, models.dcfg, models.scfg,
                               models.tcfg, ds, scratch);
  trainer.attach(ck);
  const tvfx::train::EvalReport r = trainer.evaluate();

  const json report{{"schema_version", 1},
                    {"checkpoint", ckpt_path},
                    {"phase", ck.phase},
                    {"iteration", ck.iteration},
                    {"wt_mrstft", r.wt_mrstft},
                    {"wt_windows", r.wt_windows},
                    {"l_mod", r.l_mod},
                    {"l_mod_p", r.l_mod_p},
                    {"l_mod_w", r.l_mod_w},
                    {"spn_states", r.spn_states}};
  std::cout << report.dump(2) << "\n";
  if (!report_flag.empty()) {
    std::ofstream out(report_flag);
    tvfx::check(out.good(), "eval: cannot write " + report_flag);
    out << report.dump(2) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderSource {
  tvfx::AudioBuffer reference;
  tvfx::AudioBuffer test;
  std::optional<tvfx::AudioBuffer> dry;
  tvfx::dsp::ChirpSpec chirp;
};

// Rendering needs chirp-aligned material; for wav pairs the chirp count is
// derived from the signal length, so shorter excerpts simply use fewer
// chirps.
RenderSource source_from_wavs(const std::string& ref_path,
                              const std::string& test_path, double chirp_f0,
                              double chirp_duration) {
  RenderSource src;
  src.reference = tvfx::io::read_wav(ref_path);
  src.test = tvfx::io::read_wav(test_path);
  tvfx::check_data(src.reference.sample_rate == src.test.sample_rate,
                   "render: wav sample rates disagree");
  tvfx::check_data(src.reference.size() == src.test.size(),
                   "render: wav lengths disagree");
  src.chirp.f0 = chirp_f0;
  src.chirp.f1 = src.reference.sample_rate / 2.0;
  src.chirp.chirp_duration = chirp_duration;
  const std::size_t chirp_len =
      tvfx::dsp::chirp_length(src.chirp, src.reference.sample_rate);
  src.chirp.n_repeats =
      static_cast<int>(src.reference.size() / std::max<std::size_t>(1, chirp_len));
  tvfx::check_data(src.chirp.n_repeats >= 2,
                   "render: need at least two whole chirps");
  return src;
}

RenderSource source_from_checkpoint(const std::string& ckpt_path,
                                    const fs::path& dataset) {
  const tvfx::ckpt::Checkpoint ck = tvfx::ckpt::load_checkpoint(ckpt_path);
  tvfx::train::Trainer::Restored models =
      tvfx::train::Trainer::restore_models(ck);
  const tvfx::data::DatasetView ds(dataset);
  const fs::path scratch =
      fs::temp_directory_path() /
      ("tvfx-render-" + std::to_string(tvfx::derive_seed(
                            models.tcfg.seed, ckpt_path)));
  tvfx::train::Trainer trainer(models.gcfg, models.dcfg, models.scfg,
                               models.tcfg, ds, scratch);
  trainer.attach(ck);
  tvfx::train::Trainer::ChirpRender cr = trainer.render_chirp_segment();
  RenderSource src;
  src.reference = std::move(cr.reference);
  src.test = std::move(cr.rendered);
  src.dry = std::move(cr.dry);
  src.chirp = cr.chirp;
  return src;
}

int cmd_render(const RenderSource& src, const fs::path& plot_dir,
               std::vector<std::string> views, const std::string& metrics) {
  fs::create_directories(plot_dir);
  if (views.empty()) {
    views = {"spectrogram", "freq-freq", "mod-spectrum"};
    if (!metrics.empty()) views.push_back("loss-curves");
  }

  const std::size_t chirp_len =
      tvfx::dsp::chirp_length(src.chirp, src.reference.sample_rate);
  json emitted = json::array();

  for (const std::string& view : views) {
    if (view == "spectrogram") {
      tvfx::plot::SpectrogramOptions opt;
      // Largest power-of-two window that keeps a few columns on screen.
      std::size_t w = 1024;
      while (w * 4 > src.reference.size() && w > 64) w /= 2;
      opt.window = w;
      opt.hop = std::max<std::size_t>(1, w / 4);
      const tvfx::plot::Image img = tvfx::plot::stack(
          tvfx::plot::spectrogram(src.reference, opt),
          tvfx::plot::spectrogram(src.test, opt));
      tvfx::plot::write_png(plot_dir / "spectrogram.png", img);
      emitted.push_back((plot_dir / "spectrogram.png").string());
    } else if (view == "freq-freq") {
      const Eigen::MatrixXd ff_ref = tvfx::metric::frequency_frequency(
          tvfx::metric::chirp_aligned_spectrogram(src.reference, chirp_len));
      const Eigen::MatrixXd ff_test = tvfx::metric::frequency_frequency(
          tvfx::metric::chirp_aligned_spectrogram(src.test, chirp_len));
      const double hi =
          std::max({ff_ref.maxCoeff(), ff_test.maxCoeff(), 1e-12});
      const tvfx::plot::Image img = tvfx::plot::stack(
          tvfx::plot::heatmap(ff_ref, 640, 240, 0.0, hi),
          tvfx::plot::heatmap(ff_test, 640, 240, 0.0, hi));
      tvfx::plot::write_png(plot_dir / "freq_freq.png", img);
      emitted.push_back((plot_dir / "freq_freq.png").string());
    } else if (view == "mod-spectrum") {
      const tvfx::metric::ModMetricResult m =
          tvfx::metric::mod_metric(src.reference, src.test, src.chirp);
      tvfx::plot::Series ref{"reference", m.ref_spectrum.freqs,
                             m.ref_spectrum.mags, tvfx::plot::series_color(0)};
      tvfx::plot::Series test{"test", m.test_spectrum.freqs,
                              m.test_spectrum.mags,
                              tvfx::plot::series_color(1)};
      const tvfx::plot::Image img = tvfx::plot::line_chart({ref, test});
      tvfx::plot::write_png(plot_dir / "mod_spectrum.png", img);
      emitted.push_back((plot_dir / "mod_spectrum.png").string());
    } else if (view == "loss-curves") {
      tvfx::check_config(!metrics.empty(),
                         "render: loss-curves needs --metrics <jsonl>");
      std::ifstream in(metrics);
      if (!in.good()) {
        throw tvfx::MissingArtifactError("render: cannot open " + metrics);
      }
      std::map<std::string, tvfx::plot::Series> curves;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        if (!rec.contains("iter")) continue;
        const double iter = rec.at("iter").get<double>();
        for (const char* key : {"d_loss", "g_adv", "g_spec", "g_ms",
                                "spn_mrstft", "l_mod", "wt_mrstft"}) {
          if (!rec.contains(key) || !rec.at(key).is_number()) continue;
          auto [it, fresh] = curves.try_emplace(key);
          if (fresh) {
            it->second.name = key;
            it->second.color = tvfx::plot::series_color(curves.size() - 1);
          }
          it->second.x.push_back(iter);
          it->second.y.push_back(rec.at(key).get<double>());
        }
      }
      tvfx::check_data(!curves.empty(),
                       "render: no loss records in " + metrics);
      std::vector<tvfx::plot::Series> series;
      series.reserve(curves.size());
      for (auto& [key, s] : curves) series.push_back(std::move(s));
      const tvfx::plot::Image img = tvfx::plot::line_chart(series);
      tvfx::plot::write_png(plot_dir / "loss_curves.png", img);
      emitted.push_back((plot_dir / "loss_curves.png").string());
    } else {
      throw tvfx::ConfigError("render: unknown view " + view);
    }
  }
  std::cout << json{{"plots", emitted}}.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box modeling of a time-varying audio effect"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_path, "experiment config file (JSON)");
  app.add_option("-s,--set", sets,
                 "override a config key, e.g. --set train.seed=7");

  auto* sc_dataset =
      app.add_subcommand("dataset", "build train/validation takes");
  std::string dataset_dir_flag;
  sc_dataset->add_option("--dir", dataset_dir_flag,
                         "dataset directory (default <out_dir>/dataset)");

  auto* sc_train = app.add_subcommand("train", "run a training phase");
  std::string phase = tvfx::train::kPhaseAdversarial;
  std::string train_dataset, from_ckpt, resume_ckpt;
  bool grid = false;
  sc_train->add_option("--phase", phase,
                       "adversarial | spn-pretrain | finetune");
  sc_train->add_option("--dataset", train_dataset,
                       "dataset directory (default <out_dir>/dataset)");
  sc_train->add_option("--from", from_ckpt,
                       "input checkpoint for spn-pretrain/finetune");
  sc_train->add_option("--resume", resume_ckpt,
                       "checkpoint to continue mid-phase");
  sc_train->add_flag("--grid", grid,
                     "expand the mode-seeking (weight, epsilon) grid");

  auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_dataset, eval_report;
  sc_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")
      ->required();
  sc_eval->add_option("--dataset", eval_dataset,
                      "dataset directory (default <out_dir>/dataset)");
  sc_eval->add_option("--report", eval_report, "also write the report here");

  auto* sc_render = app.add_subcommand("render", "render plot files");
  std::string render_ckpt, render_dataset, render_ref, render_test;
  std::string render_metrics, render_dir_flag;
  std::vector<std::string> render_views;
  double chirp_f0 = 20.0, chirp_duration = 1.0 / 33.0;
  sc_render->add_option("--checkpoint", render_ckpt,
                        "render this checkpoint's chirp segment");
  sc_render->add_option("--dataset", render_dataset,
                        "dataset directory (default <out_dir>/dataset)");
  sc_render->add_option("--ref", render_ref, "reference wav (wav-pair mode)");
  sc_render->add_option("--test", render_test, "test wav (wav-pair mode)");
  sc_render->add_option("--views", render_views,
                        "spectrogram, freq-freq, mod-spectrum, loss-curves");
  sc_render->add_option("--metrics", render_metrics,
                        "metrics JSONL for the loss-curves view");
  sc_render->add_option("--plots", render_dir_flag,
                        "plot directory (default <out_dir>/plots)");
  sc_render->add_option("--chirp-f0", chirp_f0,
                        "chirp start frequency, Hz (wav-pair mode)");
  sc_render->add_option("--chirp-duration", chirp_duration,
                        "seconds per chirp (wav-pair mode)");

  try {
    app.parse(argc, argv);

    if (sc_dataset->parsed()) {
      return cmd_dataset(resolve_config(config_path, sets), dataset_dir_flag);
    }
    if (sc_train->parsed()) {
      return cmd_train(resolve_config(config_path, sets), phase,
                       train_dataset, from_ckpt, resume_ckpt, grid);
    }
    if (sc_eval->parsed()) {
      return cmd_eval(eval_ckpt, eval_dataset, eval_report, config_path,
                      sets);
    }
    if (sc_render->parsed()) {
      fs::path plots(render_dir_flag);
      fs::path dataset(render_dataset);
      if (plots.empty() || (dataset.empty() && !render_ckpt.empty())) {
        const tvfx::cfg::ExperimentConfig cfg =
            resolve_config(config_path, sets);
        if (plots.empty()) plots = fs::path(cfg.out_dir) / "plots";
        if (dataset.empty()) dataset = fs::path(cfg.out_dir) / "dataset";
      }
      RenderSource src;
      if (!render_ckpt.empty()) {
        src = source_from_checkpoint(render_ckpt, dataset);
      } else if (!render_ref.empty() && !render_test.empty()) {
        src = source_from_wavs(render_ref, render_test, chirp_f0,
                               chirp_duration);
      } else {
        throw tvfx::ConfigError(
            "render: needs --checkpoint or a --ref/--test wav pair");
      }
      return cmd_render(src, plots, render_views, render_metrics);
    }
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags are configuration errors
  } catch (const tvfx::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tvfx::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const tvfx::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
