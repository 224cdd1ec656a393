// SPDX-License-Identifier: Apache-2.0
// Command-line front end: dataset generation, pre-training, probing,
// ablations, sweeps, visualisation and the gradient check suite.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "cigmae/data/dataset_io.hpp"
#include "cigmae/data/synth.hpp"
#include "cigmae/eval/ablation.hpp"
#include "cigmae/eval/analysis.hpp"
#include "cigmae/eval/gradient_suite.hpp"
#include "cigmae/eval/viz.hpp"

namespace fs = std::filesystem;
using namespace cigmae;

namespace {

constexpr int kOk = 0, kUsage = 1, kRuntime = 2;

/// Relative output paths land under $CIGMAE_OUT_DIR when it is set.
fs::path out_path(const fs::path& p) {
  if (p.is_absolute()) return p;
  const char* dir = std::getenv("CIGMAE_OUT_DIR");
  const fs::path base = dir && *dir ? fs::path(dir) : fs::current_path();
  return base / p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  io::write_file(p, text);
  std::cerr << "wrote " << p.string() << "\n";
}

struct DataOptions {
  std::string path;
  data::SynthConfig synth;
  std::uint64_t synth_seed = 1;

  void add(CLI::App* app) {
    app->add_option("--data", path, "Dataset file (.csi) or directory of .csi files; omit to use the synthetic set");
    add_synth(app);
  }
  void add_synth(CLI::App* app) {
    app->add_option("--classes", synth.classes, "Synthetic classes")->capture_default_str();
    app->add_option("--per-class", synth.per_class, "Synthetic samples per class")->capture_default_str();
    app->add_option("--antennas", synth.antennas, "Synthetic antennas")->capture_default_str();
    app->add_option("--subcarriers", synth.subcarriers, "Synthetic subcarriers")->capture_default_str();
    app->add_option("--timesteps", synth.timesteps, "Synthetic timesteps")->capture_default_str();
    app->add_option("--noise", synth.noise_std, "Synthetic background noise std")->capture_default_str();
    app->add_option("--activity", synth.activity_amplitude, "Synthetic activity amplitude")->capture_default_str();
    app->add_option("--band", synth.band_height, "Synthetic activity band height (subcarriers)")->capture_default_str();
    app->add_option("--burst", synth.burst_length, "Synthetic activity burst length (timesteps)")->capture_default_str();
    app->add_option("--synth-seed", synth_seed, "Synthetic generator seed")->capture_default_str();
  }
  data::Dataset load() const { return path.empty() ? data::synth_generate(synth, synth_seed) : data::read_dataset(path); }
};

struct ConfigOptions {
  std::string file;
  std::vector<std::string> overrides;
  bool reference = false;

  void add(CLI::App* app) {
    app->add_option("--config", file, "Config file of key = value lines (default: desk preset)");
    app->add_option("--set", overrides, "Override one key, key=value (repeatable)");
    app->add_flag("--reference", reference, "Start from the reference settings instead of the desk preset");
  }
  train::TrainConfig load() const {
    train::TrainConfig c = reference ? train::TrainConfig{} : train::TrainConfig::desk();
    if (!file.empty()) c = train::load_config(file, c);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

struct ProbeOptions {
  eval::ProbeConfig probe;
  double split_ratio = 0.5;
  void add(CLI::App* app) {
    app->add_option("--k", probe.k, "Labelled samples per class for the probe")->capture_default_str();
    app->add_option("--probe-epochs", probe.epochs, "Probe epochs")->capture_default_str();
    app->add_option("--probe-lr", probe.lr, "Probe learning rate")->capture_default_str();
    app->add_option("--probe-seed", probe.seed, "Probe seed (shot draw, init, shuffling)")->capture_default_str();
    app->add_flag("--standardize", probe.standardize, "z-score features before the probe");
    app->add_option("--split-ratio", split_ratio, "Stratified train fraction")->capture_default_str();
  }
};

void progress(const train::StepRecord& r, std::size_t steps_per_epoch) {
  if (r.batch + 1 == steps_per_epoch)
    std::cerr << "epoch " << r.epoch << "  step " << r.step << "  rec " << r.rec << "  bt " << r.bt << "  aim "
              << r.aim_amplitude + r.aim_phase << "\n";
}

std::string reports_csv(const std::vector<eval::EvalReport>& reports) {
  std::string s = eval::EvalReport::csv_header() + "\n";
  for (const auto& r : reports) s += r.csv_row() + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal masked autoencoder pre-training for WiFi CSI"};
  app.require_subcommand(1);
  app.fallthrough();

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic dataset");
  DataOptions synth_data;
  std::string synth_out = "synth.csi";
  synth_data.add_synth(synth);
  synth->add_option("--out", synth_out, "Output dataset file")->capture_default_str();

  // inspect ----------------------------------------------------------------
  auto* inspect = app.add_subcommand("inspect", "Print a dataset's manifest or a checkpoint's configuration");
  std::string inspect_data, inspect_ckpt;
  inspect->add_option("--data", inspect_data, "Dataset file or directory");
  inspect->add_option("--checkpoint", inspect_ckpt, "Checkpoint file");

  // pretrain ---------------------------------------------------------------
  auto* pretrain = app.add_subcommand("pretrain", "Run self-supervised pre-training");
  DataOptions pre_data;
  ConfigOptions pre_cfg;
  std::string pre_ckpt = "model.ckpt", pre_metrics = "metrics.csv", pre_resume;
  pre_data.add(pretrain);
  pre_cfg.add(pretrain);
  pretrain->add_option("--checkpoint", pre_ckpt, "Checkpoint written at the end")->capture_default_str();
  pretrain->add_option("--metrics", pre_metrics, "Per-step metrics CSV")->capture_default_str();
  pretrain->add_option("--resume", pre_resume, "Resume from this checkpoint");

  // probe ------------------------------------------------------------------
  auto* probe = app.add_subcommand("probe", "k-shot linear probe on frozen encoders");
  DataOptions probe_data;
  ProbeOptions probe_opts;
  std::string probe_ckpt, probe_report = "probe.txt";
  probe_data.add(probe);
  probe_opts.add(probe);
  probe->add_option("--checkpoint", probe_ckpt, "Pre-trained checkpoint")->required();
  probe->add_option("--report", probe_report, "Report file")->capture_default_str();

  // ablate -----------------------------------------------------------------
  auto* ablate = app.add_subcommand("ablate", "Pre-train and probe the five ablation variants");
  DataOptions abl_data;
  ConfigOptions abl_cfg;
  ProbeOptions abl_probe;
  std::vector<std::string> abl_variants;
  std::string abl_out = "ablation.csv";
  abl_data.add(ablate);
  abl_cfg.add(ablate);
  abl_probe.add(ablate);
  ablate->add_option("--variants", abl_variants, "Subset of variants (default: all five)")->delimiter(',');
  ablate->add_option("--out", abl_out, "Report CSV")->capture_default_str();

  // sweep ------------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Pre-train and probe over a grid of one hyperparameter");
  DataOptions sw_data;
  ConfigOptions sw_cfg;
  ProbeOptions sw_probe;
  std::string sw_param, sw_out = "sweep.csv";
  std::vector<std::string> sw_values;
  sw_data.add(sweep);
  sw_cfg.add(sweep);
  sw_probe.add(sweep);
  sweep->add_option("--param", sw_param, "mask-ratio, w-bt, d-policy or bt-width")->required();
  sweep->add_option("--values", sw_values, "Comma-separated values (default: the standard grid)")->delimiter(',');
  sweep->add_option("--out", sw_out, "Report CSV")->capture_default_str();

  // viz --------------------------------------------------------------------
  auto* viz = app.add_subcommand("viz", "Write error heatmaps, mask overlays or correlation matrices");
  DataOptions viz_data;
  std::string viz_kind, viz_ckpt, viz_stem;
  std::size_t viz_sample = 0, viz_crop = 64;
  std::string viz_modality = "amplitude";
  viz_data.add(viz);
  viz->add_option("--kind", viz_kind, "error-heatmap, mask-overlay or corr-matrix")->required();
  viz->add_option("--checkpoint", viz_ckpt, "Pre-trained checkpoint")->required();
  viz->add_option("--sample", viz_sample, "Sample index (heatmap, overlay)")->capture_default_str();
  viz->add_option("--modality", viz_modality, "amplitude or phase")->capture_default_str();
  viz->add_option("--crop", viz_crop, "Correlation image crop (0: CSV only)")->capture_default_str();
  viz->add_option("--out", viz_stem, "Output stem (default: the kind)");

  // grad-check -------------------------------------------------------------
  auto* gradcheck = app.add_subcommand("grad-check", "Finite-difference check of every primitive and loss");
  std::uint64_t gc_seed = 0;
  std::size_t gc_instances = 3;
  gradcheck->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gradcheck->add_option("--instances", gc_instances, "Random instances per case")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) {
      const auto ds = data::synth_generate(synth_data.synth, synth_data.synth_seed);
      const auto p = out_path(synth_out);
      ensure_parent(p);
      data::write_dataset(ds, p);
      std::cout << data::dump_manifest(ds.manifest);
      std::cerr << "wrote " << p.string() << "\n";
    } else if (*inspect) {
      if (inspect_data.empty() == inspect_ckpt.empty()) throw ConfigError("inspect: give exactly one of --data, --checkpoint");
      if (!inspect_data.empty()) std::cout << data::dump_manifest(data::read_dataset(inspect_data).manifest);
      else std::cout << train::Trainer<float>::checkpoint_config(io::read_file(inspect_ckpt)).to_text();
    } else if (*pretrain) {
      const auto cfg = pre_cfg.load();
      const auto ds = pre_data.load();
      train::Trainer<float> t(cfg, ds.manifest);
      if (!pre_resume.empty()) t.load_checkpoint(pre_resume);
      const auto spe = t.plan(ds).steps_per_epoch();
      t.run(ds, [&](const train::StepRecord& r) { progress(r, spe); });
      const auto ck = out_path(pre_ckpt);
      ensure_parent(ck);
      t.save_checkpoint(ck);
      std::cerr << "wrote " << ck.string() << "\n";
      write_text(out_path(pre_metrics), t.log().csv());
      const auto ep = t.log().epochs();
      if (!ep.empty())
        std::cout << "steps " << t.step_count() << "  first-epoch rec " << ep.front().rec << "  last-epoch rec " << ep.back().rec
                  << "\n";
    } else if (*probe) {
      const auto bytes = io::read_file(probe_ckpt);
      const auto cfg = train::Trainer<float>::checkpoint_config(bytes);
      const auto ds = probe_data.load();
      train::Trainer<float> t(cfg, ds.manifest);
      t.decode_checkpoint(bytes);
      const auto split = data::stratified_split(ds.all_labels(), probe_opts.split_ratio, cfg.seed);
      auto report = eval::probe_model(t.model(), ds, split, probe_opts.probe);
      report.variant = "checkpoint";
      report.config_hash = cfg.hash();
      std::cout << report.to_text();
      write_text(out_path(probe_report), report.to_text());
    } else if (*ablate) {
      eval::ExperimentConfig ec{abl_cfg.load(), abl_probe.probe, abl_probe.split_ratio};
      std::vector<eval::AblationVariant> variants;
      for (const auto& v : abl_variants) variants.push_back(eval::parse_variant(v));
      if (variants.empty()) variants.assign(eval::kAllVariants.begin(), eval::kAllVariants.end());
      const auto ds = abl_data.load();
      std::vector<eval::EvalReport> reports;
      for (auto v : variants) {
        std::cerr << "variant " << eval::to_string(v) << "\n";
        reports.push_back(eval::ablation_run<float>(ds, ec, v));
        std::cout << reports.back().to_text() << "\n";
      }
      write_text(out_path(abl_out), reports_csv(reports));
    } else if (*sweep) {
      eval::ExperimentConfig ec{sw_cfg.load(), sw_probe.probe, sw_probe.split_ratio};
      const auto values = sw_values.empty() ? eval::default_sweep_values(sw_param) : sw_values;
      const auto ds = sw_data.load();
      const auto reports = eval::sweep<float>(ds, ec, sw_param, values, [](const eval::EvalReport& r) { std::cout << r.to_text() << "\n"; });
      write_text(out_path(sw_out), reports_csv(reports));
    } else if (*viz) {
      const auto kind = eval::parse_viz_kind(viz_kind);
      const auto modality = viz_modality == "amplitude" ? data::Modality::amplitude
                            : viz_modality == "phase"   ? data::Modality::phase
                                                        : throw ConfigError("--modality expects amplitude or phase");
      const auto bytes = io::read_file(viz_ckpt);
      const auto cfg = train::Trainer<float>::checkpoint_config(bytes);
      const auto ds = viz_data.load();
      train::Trainer<float> t(cfg, ds.manifest);
      t.decode_checkpoint(bytes);
      if (viz_sample >= ds.size()) throw DataError("--sample " + std::to_string(viz_sample) + " outside the dataset");
      const fs::path stem = out_path(viz_stem.empty() ? viz_kind : viz_stem);
      ensure_parent(stem);
      const std::vector<std::size_t> one{viz_sample};
      std::vector<fs::path> files;
      if (kind == eval::VizKind::corr_matrix) {
        std::vector<std::size_t> all(ds.size());
        std::iota(all.begin(), all.end(), 0);
        files = eval::emit_corr_matrix(eval::cross_modal_correlation(t.model(), ds, all), stem, viz_crop);
      } else {
        if (modality == data::Modality::phase && !t.model().dual_stream()) throw ConfigError("model has no phase stream");
        const auto x = ds.gather<float>(one, modality);
        const auto part = t.sample_masks(x, modality, nullptr, t.step_count()).front();
        if (kind == eval::VizKind::mask_overlay) {
          std::vector<double> probs;
          if (t.model().policy_amplitude) {
            const auto p = t.visibility(x, modality);
            probs.assign(p.values().begin(), p.values().end());
          }
          files = eval::emit_mask_overlay(part, stem, probs.empty() ? nullptr : &probs);
        } else {
          NoGradGuard guard;
          const auto& stream = modality == data::Modality::amplitude ? t.model().amplitude : *t.model().phase;
          const auto& g = t.model().geometry;
          const auto x_hat = model::decode(model::encode(masking::apply_mask(x, part), stream.encoder, g), stream.decoder, g);
          files = eval::emit_error_heatmap(x_hat, x, stem);
        }
      }
      for (const auto& f : files) std::cerr << "wrote " << f.string() << "\n";
    } else if (*gradcheck) {
      const auto r = eval::run_gradient_suite(gc_seed, gc_instances);
      for (const auto& c : r.cases)
        std::cout << (c.passed() ? "ok    " : "FAIL  ") << c.name << "  max rel err " << c.worst << " over " << c.instances
                  << " instances\n";
      std::cout << r.cases.size() << " cases in " << r.seconds << " s\n";
      return r.passed() ? kOk : kRuntime;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
