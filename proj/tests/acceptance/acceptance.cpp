// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Pass criterion numbers as arguments to run a
// subset. Artifacts go to $CIGMAE_OUT_DIR (default ./acceptance_out).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cigmae/data/dataset_io.hpp"
#include "cigmae/data/synth.hpp"
#include "cigmae/eval/ablation.hpp"
#include "cigmae/eval/analysis.hpp"
#include "cigmae/eval/gradient_suite.hpp"
#include "cigmae/eval/viz.hpp"

namespace fs = std::filesystem;
using namespace cigmae;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 60;
constexpr double kMarginalTol = 0.02;
constexpr double kOracleTol = 1e-5;
constexpr double kRecRatioMax = 0.5;
constexpr double kProbeAccuracyMin = 90.0;
constexpr double kEndToEndBudgetSeconds = 15 * 60;
// Pilot (seed 0, 30 epochs): ratios of about 13.5 (amplitude) and 9.8 (phase).
constexpr double kVisibilityRatioMin = 1.5;
constexpr double kDiagonalMin = 0.8;
constexpr double kOffDiagonalMax = 0.2;

constexpr std::size_t kMainEpochs = 30;
// Paired and ablation runs use a shorter schedule so that the 3-seed grids
// (21 pre-training runs) fit a desk budget.
constexpr std::size_t kPairedEpochs = 10;
constexpr std::size_t kLossVariantEpochs = 5;
constexpr std::uint64_t kSeeds[] = {0, 1, 2};
constexpr std::uint64_t kDataSeed = 1;

fs::path out_dir() {
  const char* d = std::getenv("CIGMAE_OUT_DIR");
  fs::path p = d && *d ? fs::path(d) : fs::current_path() / "acceptance_out";
  fs::create_directories(p);
  return p;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

const data::Dataset& synthetic() {
  static const data::Dataset ds = data::synth_generate(data::SynthConfig{}, kDataSeed);
  return ds;
}

std::vector<std::size_t> all_indices(const data::Dataset& ds) {
  std::vector<std::size_t> v(ds.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

eval::ExperimentConfig desk_experiment(std::size_t epochs, std::uint64_t seed) {
  eval::ExperimentConfig e;
  e.train = train::TrainConfig::desk();
  e.train.epochs = epochs;
  e.train.seed = seed;
  e.probe.seed = seed;
  return e;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto r = eval::run_gradient_suite(0, 3, kGradTol);
  double worst = 0;
  std::string failed;
  for (const auto& c : r.cases) {
    worst = std::max(worst, c.worst);
    if (!c.passed()) failed += " " + c.name;
  }
  const bool ok = r.passed() && r.seconds < kGradBudgetSeconds;
  return {ok, std::to_string(r.cases.size()) + " cases x 3 instances, max rel err " + fmt(worst, 3) + " (tol " + fmt(kGradTol) +
                  "), " + fmt(r.seconds, 3) + " s" + (failed.empty() ? "" : ", failing:" + failed)};
}

Outcome decoupling() {
  const auto& ds = synthetic();
  auto cfg = train::TrainConfig::desk();
  cfg.grad_flow_check_every = 1;
  train::Trainer<float> t(cfg, ds.manifest);
  bool ok = true;
  std::ostringstream os;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto idx = t.batch_indices(ds, 0, s);
    t.step(ds.gather<float>(idx, data::Modality::amplitude), ds.gather<float>(idx, data::Modality::phase), 0, s);
    const auto& f = *t.last_grad_flow();
    ok &= f.aim_to_backbone == 0 && f.theta_to_policy == 0 && f.aim_to_policy > 0 && f.theta_to_backbone > 0;
    if (s == 2)
      os << "step " << f.step << ": nonzero grads L_AIM->backbone " << f.aim_to_backbone << ", L_AIM->policy " << f.aim_to_policy
         << ", rec+BT->policy " << f.theta_to_policy << ", rec+BT->backbone " << f.theta_to_backbone << " (3 live steps checked)";
  }
  return {ok, os.str()};
}

Outcome mask_mechanics() {
  const auto g = masking::PatchGrid::make(30, 200, {3, 5});
  bool ok = g.size() == 400 && masking::masked_count(g.size(), 0.95) == 380;
  Rng rng(3);
  std::vector<double> logits(400);
  std::size_t bad = 0;
  for (int d = 0; d < 1000; ++d) {
    for (auto& v : logits) v = rng.normal();
    const auto dist = masking::VisibilityDistribution::from_log([&] {
      std::vector<double> lp(logits);
      const double mx = *std::max_element(lp.begin(), lp.end());
      double z = 0;
      for (double v : lp) z += std::exp(v - mx);
      for (double& v : lp) v = v - mx - std::log(z);
      return lp;
    }());
    const auto p = masking::gumbel_topk_partition(dist, 0.95, g, rng);
    std::vector<int> seen(400, 0);
    for (auto i : p.masked) seen[i] += 1;
    for (auto i : p.visible) seen[i] += 2;
    std::size_t vis_px = 0;
    for (auto v : p.pixels) vis_px += v;
    const bool good = p.masked.size() == 380 && p.visible.size() == 20 && std::ranges::all_of(seen, [](int s) { return s == 1 || s == 2; }) &&
                      vis_px == 20 * 15;
    bad += !good;
  }
  ok &= bad == 0;
  const auto small = masking::PatchGrid::make(1, 4, {1, 1});
  const auto dist = masking::VisibilityDistribution::from_probs(std::vector<double>{0.4, 0.3, 0.2, 0.1});
  std::array<int, 4> hits{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) hits[masking::gumbel_topk_partition(dist, 0.75, small, rng).visible.at(0)]++;
  double dev = 0;
  const double p[] = {0.4, 0.3, 0.2, 0.1};
  for (int i = 0; i < 4; ++i) dev = std::max(dev, std::abs(double(hits[i]) / draws - p[i]));
  ok &= dev <= kMarginalTol;
  return {ok, "L=" + std::to_string(g.size()) + " |M|=380 |V|=20, " + std::to_string(1000 - bad) +
                  "/1000 draws disjoint and covering; top-1 marginal max deviation " + fmt(dev, 3) + " over 10000 draws (tol " +
                  fmt(kMarginalTol) + ")"};
}

Outcome loss_oracles() {
  using TD = Tensor<double>;
  const auto g = masking::PatchGrid::make(1, 4, {1, 1});
  const auto part = masking::make_partition(g, {0, 1});
  const double aim = masking::aim_loss(TD({4}, std::vector<double>(4, std::log(0.25))), part, {2.0, 4.0}).item();
  const std::vector<masking::MaskPartition> parts{masking::make_partition(masking::PatchGrid::make(2, 2, {1, 1}), {0, 3})};
  const double mae = model::masked_mae_loss(TD({1, 1, 2, 2}, {1, 0, 0, 4}), TD({1, 1, 2, 2}, {1, 2, 3, 4}),
                                            std::span<const masking::MaskPartition>(parts))
                         .item();
  const double bt0 = model::bt_loss(TD({2, 2}, 0.0)).item();
  const double bti = model::bt_loss(TD({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1})).item();
  const bool ok = std::abs(aim - 4.15888) <= kOracleTol && mae == 2.5 && bt0 == 2.0 && bti == 0.0;
  return {ok, "aim_loss " + fmt(aim, 8) + " (4.15888 +- 1e-5), masked MAE " + fmt(mae) + " (2.5 exact), bt_loss(0) " + fmt(bt0) +
                  ", bt_loss(I) " + fmt(bti)};
}

// Shared by criteria 5-7.
struct MainRun {
  eval::ExperimentResult<float> result;
  double seconds = 0;
};

const MainRun& main_run() {
  static const MainRun run = [] {
    MainRun m;
    const auto t0 = Clock::now();
    m.result = eval::run_experiment<float>(synthetic(), desk_experiment(kMainEpochs, 0), "full", true);
    m.seconds = seconds_since(t0);
    const auto dir = out_dir();
    io::write_file(dir / "main_metrics.csv", m.result.log.csv());
    io::write_file(dir / "main_epochs.csv", m.result.log.epoch_csv());
    io::write_file(dir / "main_report.txt", m.result.report.to_text());
    return m;
  }();
  return run;
}

Outcome synthetic_end_to_end() {
  const auto& m = main_run();
  const auto ep = m.result.log.epochs();
  const double ratio = ep.back().rec / ep.front().rec;
  const double acc = m.result.report.accuracy();
  const bool ok = ep.size() == kMainEpochs && ratio < kRecRatioMax && acc >= kProbeAccuracyMin && m.seconds < kEndToEndBudgetSeconds;
  return {ok, "L_rec epoch-1 mean " + fmt(ep.front().rec) + " -> epoch-" + std::to_string(ep.size()) + " " + fmt(ep.back().rec) +
                  " (ratio " + fmt(ratio, 3) + ", need < 0.5); 10-shot probe " + fmt(acc) + " % (need >= 90, chance 25); " +
                  fmt(m.seconds, 4) + " s (budget 900)"};
}

Outcome information_seeking() {
  const auto& m = main_run();
  const auto& ds = synthetic();
  const data::SynthConfig sc;
  const auto idx = all_indices(ds);
  const auto region = [&](int c) { return sc.region(std::size_t(c)); };
  const auto va = eval::visibility_contrast(*m.result.trainer, ds, idx, region, data::Modality::amplitude);
  const auto vp = eval::visibility_contrast(*m.result.trainer, ds, idx, region, data::Modality::phase);
  // One mask overlay for inspection.
  const std::vector<std::size_t> one{0};
  const auto x = ds.gather<float>(one, data::Modality::amplitude);
  const auto p = m.result.trainer->visibility(x, data::Modality::amplitude);
  const std::vector<double> probs(p.values().begin(), p.values().end());
  eval::emit_mask_overlay(m.result.trainer->sample_masks(x, data::Modality::amplitude).front(), out_dir() / "mask_overlay_sample0", &probs);
  const bool ok = va.ratio() >= kVisibilityRatioMin && vp.ratio() >= kVisibilityRatioMin;
  return {ok, "activity/background visibility: amplitude " + fmt(va.region_mean, 3) + "/" + fmt(va.background_mean, 3) + " = " +
                  fmt(va.ratio(), 3) + ", phase " + fmt(vp.region_mean, 3) + "/" + fmt(vp.background_mean, 3) + " = " + fmt(vp.ratio(), 3) +
                  " (need >= 1.5)"};
}

// Shared by criteria 7 and 8: one run per (seed, variant) at the shorter schedule.
struct PairedRuns {
  std::map<std::uint64_t, std::map<std::string, eval::EvalReport>> reports;
  std::map<std::uint64_t, double> diag_bt, diag_no_bt;
};

const PairedRuns& paired_runs() {
  static const PairedRuns runs = [] {
    PairedRuns r;
    const auto& ds = synthetic();
    const auto idx = all_indices(ds);
    std::string csv = eval::EvalReport::csv_header() + ",seed\n";
    for (auto seed : kSeeds) {
      const auto base = desk_experiment(kPairedEpochs, seed);
      for (auto v : eval::kAllVariants) {
        auto cfg = base;
        cfg.train = eval::apply_variant(base.train, v);
        const bool full = v == eval::AblationVariant::full;
        auto res = eval::run_experiment<float>(ds, cfg, eval::to_string(v), full);
        if (full) r.diag_bt[seed] = model::summarize_correlation(eval::cross_modal_correlation(res.trainer->model(), ds, idx)).diagonal_mean;
        r.reports[seed][eval::to_string(v)] = res.report;
        csv += res.report.csv_row() + "," + std::to_string(seed) + "\n";
      }
      auto cfg = base;
      cfg.train.w_bt = 0;
      auto res = eval::run_experiment<float>(ds, cfg, "w_bt=0", true);
      r.diag_no_bt[seed] = model::summarize_correlation(eval::cross_modal_correlation(res.trainer->model(), ds, idx)).diagonal_mean;
    }
    io::write_file(out_dir() / "ablation.csv", csv);
    return r;
  }();
  return runs;
}

Outcome bt_alignment() {
  const auto& m = main_run();
  const auto& ds = synthetic();
  const auto C = eval::cross_modal_correlation(m.result.trainer->model(), ds, all_indices(ds));
  eval::emit_corr_matrix(C, out_dir() / "corr_matrix");
  const auto s = model::summarize_correlation(C);
  bool ok = s.diagonal_mean >= kDiagonalMin && s.off_diagonal_abs_mean <= kOffDiagonalMax;
  const auto& p = paired_runs();
  std::string pairs;
  for (auto seed : kSeeds) {
    ok &= p.diag_no_bt.at(seed) < p.diag_bt.at(seed);
    pairs += (pairs.empty() ? "" : ", ") + std::string("seed ") + std::to_string(seed) + " " + fmt(p.diag_bt.at(seed), 3) + " vs " +
             fmt(p.diag_no_bt.at(seed), 3);
  }
  return {ok, "w_bt=0.2 after 30 epochs: diagonal " + fmt(s.diagonal_mean, 3) + " (need >= 0.8), mean |off-diagonal| " +
                  fmt(s.off_diagonal_abs_mean, 3) + " (need <= 0.2); paired diagonal w_bt=0.2 vs 0 at " + std::to_string(kPairedEpochs) +
                  " epochs: " + pairs};
}

Outcome ablation_harness() {
  const auto& p = paired_runs();
  bool well_formed = true;
  std::map<std::string, int> wins;
  std::ostringstream acc;
  for (auto seed : kSeeds) {
    const auto& rs = p.reports.at(seed);
    well_formed &= rs.size() == eval::kAllVariants.size();
    const double full = rs.at("full").accuracy();
    acc << (seed ? "; " : "") << "seed " << seed << ":";
    for (const auto& [name, r] : rs) {
      const auto& cm = r.metrics.confusion;
      std::size_t total = 0, trace = 0;
      for (std::size_t i = 0; i < cm.size(); ++i) {
        trace += cm[i][i];
        total += std::accumulate(cm[i].begin(), cm[i].end(), std::size_t(0));
      }
      well_formed &= total == r.test_count && r.accuracy() == 100.0 * double(trace) / double(total) && r.macro_f1() >= 0 &&
                     r.macro_f1() <= 100;
      acc << " " << name << " " << fmt(r.accuracy(), 4);
      if (name != "full") wins[name] += full >= r.accuracy();
    }
  }
  bool ordering = wins.size() == eval::kAllVariants.size() - 1;
  std::string tally;
  for (const auto& [name, w] : wins) {
    ordering &= w >= 2;
    tally += (tally.empty() ? "" : ", ") + name + " " + std::to_string(w) + "/3";
  }
  return {well_formed && ordering, "5 variants x 3 seeds at " + std::to_string(kPairedEpochs) + " epochs, reports " +
                                       (well_formed ? "well-formed" : "MALFORMED") + "; full >= variant in: " + tally + " (need 2/3); accuracy % " +
                                       acc.str()};
}

Outcome determinism_and_persistence() {
  const auto& ds = synthetic();
  auto cfg = train::TrainConfig::desk();
  cfg.epochs = 2;
  train::Trainer<float> a(cfg, ds.manifest), b(cfg, ds.manifest);
  a.run_until(ds, 20);
  b.run_until(ds, 20);
  const bool logs_equal = a.log().csv() == b.log().csv() && a.model().all_params().snapshot() == b.model().all_params().snapshot();

  train::Trainer<float> first(cfg, ds.manifest);
  first.run_until(ds, 10);
  const auto bytes = first.encode_checkpoint();
  io::write_file(out_dir() / "step10.ckpt", bytes);
  train::Trainer<float> resumed(cfg, ds.manifest);
  resumed.load_checkpoint(out_dir() / "step10.ckpt");
  resumed.run_until(ds, 20);
  bool resume_equal = resumed.model().all_params().snapshot() == a.model().all_params().snapshot() && resumed.log().size() == 10;
  for (std::size_t i = 0; resume_equal && i < 10; ++i) {
    const auto &x = resumed.log().records()[i], &y = a.log().records()[10 + i];
    resume_equal = x.step == y.step && x.total == y.total && x.rec == y.rec && x.bt == y.bt && x.mask_hash == y.mask_hash;
  }

  const auto path = out_dir() / "synthetic.csi";
  data::write_dataset(ds, path);
  const auto back = data::read_dataset(path);
  const bool data_equal = io::read_file(path) == data::encode_dataset(back) && back.amplitude == ds.amplitude && back.phase == ds.phase &&
                          back.labels == ds.labels;
  return {logs_equal && resume_equal && data_equal,
          std::string("two 20-step runs ") + (logs_equal ? "bitwise identical" : "DIFFER") + "; resume at step 10 for 10 steps " +
              (resume_equal ? "bitwise identical" : "DIFFERS") + "; dataset file round trip " + (data_equal ? "bit-exact" : "DIFFERS")};
}

Outcome loss_variants() {
  const auto& ds = synthetic();
  bool ok = true;
  std::string csv = "recon_loss,normalized_target,epoch,rec,bt,aim_amp,aim_phase,total\n", detail;
  for (auto kind : {model::ReconKind::mae, model::ReconKind::mse})
    for (bool norm : {false, true}) {
      auto cfg = train::TrainConfig::desk();
      cfg.epochs = kLossVariantEpochs;
      cfg.recon_loss = kind;
      cfg.normalized_target = norm;
      const std::string name = std::string(kind == model::ReconKind::mae ? "mae" : "mse") + (norm ? "+norm" : "");
      try {
        const auto t = train::pretrain_run<float>(ds, cfg);
        const auto ep = t.log().epochs();
        bool finite = true;
        for (const auto& r : t.log().records()) finite &= std::isfinite(r.total) && std::isfinite(r.rec);
        const bool fell = ep.back().rec <= ep.front().rec;
        ok &= finite && fell;
        for (const auto& e : ep)
          csv += std::string(kind == model::ReconKind::mae ? "mae" : "mse") + "," + (norm ? "true" : "false") + "," +
                 std::to_string(e.epoch) + "," + fmt(e.rec, 9) + "," + fmt(e.bt, 9) + "," + fmt(e.aim_amplitude, 9) + "," +
                 fmt(e.aim_phase, 9) + "," + fmt(e.total, 9) + "\n";
        detail += (detail.empty() ? "" : ", ") + name + " " + fmt(ep.front().rec, 3) + "->" + fmt(ep.back().rec, 3);
      } catch (const std::exception& e) {
        ok = false;
        detail += (detail.empty() ? "" : ", ") + name + " diverged (" + e.what() + ")";
      }
    }
  io::write_file(out_dir() / "loss_variants.csv", csv);
  return {ok, "L_rec epoch-1 -> epoch-" + std::to_string(kLossVariantEpochs) + ": " + detail + " (finite and non-increasing required)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"decoupled updates", decoupling},
      {"mask mechanics", mask_mechanics},
      {"hand-computed loss oracles", loss_oracles},
      {"synthetic end-to-end", synthetic_end_to_end},
      {"information-seeking masks", information_seeking},
      {"cross-modal alignment", bt_alignment},
      {"ablation harness", ablation_harness},
      {"determinism and persistence", determinism_and_persistence},
      {"loss-variant harness", loss_variants},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << n << "  " << criteria[i].first << ": " << o.detail << "  ["
              << fmt(seconds_since(t0), 4) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
