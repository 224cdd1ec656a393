// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include "cigmae/data/synth.hpp"
#include "cigmae/eval/ablation.hpp"
#include "cigmae/eval/analysis.hpp"
#include "cigmae/eval/viz.hpp"

namespace cigmae::eval {
namespace {

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, AllCorrect) {
  const std::vector<int> y{0, 1, 2, 2, 1};
  const auto m = evaluate_metrics(y, y);
  EXPECT_EQ(m.accuracy, 100.0);
  EXPECT_EQ(m.macro_f1, 100.0);
}

TEST(Metrics, BinaryAllFlipped) {
  const std::vector<int> y{0, 0, 1, 1}, p{1, 1, 0, 0};
  const auto m = evaluate_metrics(p, y);
  EXPECT_EQ(m.accuracy, 0.0);
  EXPECT_EQ(m.macro_f1, 0.0);
}

TEST(Metrics, HandWorkedExample) {
  // class 0: P = 1, R = 1/2 -> F1 = 2/3; class 1: P = 2/3, R = 1 -> F1 = 4/5
  const std::vector<int> y{0, 0, 1, 1}, p{0, 1, 1, 1};
  const auto m = evaluate_metrics(p, y);
  EXPECT_EQ(m.accuracy, 75.0);
  EXPECT_NEAR(m.macro_f1, 100.0 * (2.0 / 3.0 + 0.8) / 2.0, 1e-12);
  EXPECT_NEAR(m.macro_f1, 73.33, 0.005);
  EXPECT_EQ(m.confusion, (std::vector<std::vector<std::size_t>>{{1, 1}, {0, 2}}));
}

TEST(Metrics, ClassesWithoutSupportAreExcluded) {
  const std::vector<int> y{0, 0, 1, 1}, p{0, 2, 1, 1};
  const auto m = evaluate_metrics(p, y, 3);
  EXPECT_EQ(m.unsupported_classes, std::vector<int>{2});
  // class 0: P = 1, R = 1/2 -> 2/3; class 1: 1
  EXPECT_NEAR(m.macro_f1, 100.0 * (2.0 / 3.0 + 1.0) / 2.0, 1e-12);
  EXPECT_TRUE(std::isnan(m.per_class_f1[2]));
}

TEST(Metrics, AccuracyIsTraceOverTotal) {
  Rng rng(4);
  std::vector<int> y(97), p(97);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = int(rng.below(5)), p[i] = int(rng.below(5));
  const auto m = evaluate_metrics(p, y, 5);
  std::size_t tr = 0, tot = 0;
  for (std::size_t c = 0; c < 5; ++c) {
    tr += m.confusion[c][c];
    const auto row = std::accumulate(m.confusion[c].begin(), m.confusion[c].end(), std::size_t(0));
    EXPECT_EQ(row, std::size_t(std::count(y.begin(), y.end(), int(c))));
    tot += row;
  }
  EXPECT_EQ(m.accuracy, 100.0 * double(tr) / double(tot));
  EXPECT_GE(m.macro_f1, 0.0);
  EXPECT_LE(m.macro_f1, 100.0);
}

TEST(Metrics, Errors) {
  const std::vector<int> none;
  EXPECT_THROW(evaluate_metrics(none, none), DataError);
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(evaluate_metrics(a, b), DimensionError);
  const std::vector<int> big{3};
  EXPECT_THROW(evaluate_metrics(big, big, 2), DataError);
}

// ---------------------------------------------------------------------------
// Linear probe

std::pair<Tensor<float>, std::vector<int>> clusters(Rng& rng, std::size_t per_class, std::size_t classes, std::size_t D,
                                                    double margin, double noise) {
  std::vector<float> x;
  std::vector<int> y;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < D; ++j) x.push_back(float((j == c ? margin : 0.0) + rng.normal(0, noise)));
      y.push_back(int(c));
    }
  return {Tensor<float>(Shape{per_class * classes, D}, std::move(x)), y};
}

TEST(LinearProbe, SeparatedClustersAreLearnedExactly) {
  Rng rng(1);
  auto [xtr, ytr] = clusters(rng, 10, 2, 16, 5.0, 0.3);
  auto [xte, yte] = clusters(rng, 50, 2, 16, 5.0, 0.3);
  ProbeConfig cfg;
  cfg.epochs = 400;  // one step per epoch at this size
  const auto r = linear_probe(xtr, ytr, xte, yte, 2, cfg);
  cfg.standardize = true;
  EXPECT_EQ(linear_probe(xtr, ytr, xtr, ytr, 2, cfg).accuracy(), 100.0);
  EXPECT_EQ(r.accuracy(), 100.0);
  EXPECT_EQ(r.macro_f1(), 100.0);
  EXPECT_EQ(r.train_count, 20u);
  EXPECT_EQ(r.test_count, 100u);
}

TEST(LinearProbe, RandomFeaturesSitAtChance) {
  double sum = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    auto [xtr, ytr] = clusters(rng, 10, 4, 32, 0.0, 1.0);
    auto [xte, yte] = clusters(rng, 100, 4, 32, 0.0, 1.0);
    ProbeConfig cfg;
    cfg.seed = seed;
    sum += linear_probe(xtr, ytr, xte, yte, 4, cfg).accuracy();
  }
  EXPECT_NEAR(sum / 10.0, 25.0, 5.0);
}

TEST(LinearProbe, MissingTrainingClassIsAnError) {
  Rng rng(2);
  auto [x, y] = clusters(rng, 5, 2, 4, 3.0, 0.1);
  EXPECT_THROW(linear_probe(x, y, x, y, 3, ProbeConfig{}), DataError);
  ProbeConfig bad;
  bad.k = 0;
  EXPECT_THROW(linear_probe(x, y, x, y, 2, bad), ConfigError);
}

// ---------------------------------------------------------------------------
// Models on a tiny synthetic set

data::SynthConfig tiny_synth(std::size_t per_class, std::size_t timesteps = 20) {
  data::SynthConfig s;
  s.classes = 2;
  s.per_class = per_class;
  s.antennas = 1;
  s.subcarriers = 6;
  s.timesteps = timesteps;
  s.band_height = 3;
  s.burst_length = 10;
  return s;
}

train::TrainConfig tiny_config() {
  train::TrainConfig c;
  c.mask_ratio = 0.5;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.policy_lr = 1e-3;
  c.d_policy = 8;
  c.policy_heads = 2;
  c.policy_mlp_ratio = 2;
  c.d_latent = 8;
  c.channels = {4, 4, 4};
  c.bt_width = 8;
  return c;
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig e;
  e.train = tiny_config();
  e.probe.k = 3;
  e.probe.epochs = 20;
  return e;
}

TEST(Features, WidthFollowsStreamCount) {
  const auto ds = data::synth_generate(tiny_synth(4), 1);
  auto c = tiny_config();
  c.d_latent = 256;
  std::vector<std::size_t> idx{0, 1, 2};
  const auto dual = train::CigMaeModel<float>::init(c, ds.manifest);
  EXPECT_EQ(extract_features(dual, ds, idx).shape(), (Shape{3, 512}));
  c.single_stream = true;
  const auto single = train::CigMaeModel<float>::init(c, ds.manifest);
  EXPECT_EQ(extract_features(single, ds, idx).shape(), (Shape{3, 256}));
}

TEST(Features, ExtractionAndProbingLeaveEncodersBitwiseUnchanged) {
  const auto ds = data::synth_generate(tiny_synth(8), 1);
  const auto m = train::CigMaeModel<float>::init(tiny_config(), ds.manifest);
  const auto before = m.all_params().snapshot();
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto f = extract_features(m, ds, all, 5);
  for (float v : f.values()) ASSERT_TRUE(std::isfinite(v));
  const auto split = data::stratified_split(ds.all_labels(), 0.5, 0);
  ProbeConfig pc;
  pc.k = 2;
  pc.epochs = 5;
  probe_model(m, ds, split, pc);
  EXPECT_EQ(m.all_params().snapshot(), before);
  for (const auto& p : m.all_params()) EXPECT_FALSE(p.has_grad()) << p.name();
}

TEST(Features, BatchingDoesNotChangeValues) {
  const auto ds = data::synth_generate(tiny_synth(8), 1);
  const auto m = train::CigMaeModel<float>::init(tiny_config(), ds.manifest);
  std::vector<std::size_t> idx{3, 1, 4, 15, 9, 2};
  const auto a = extract_features(m, ds, idx, 64), b = extract_features(m, ds, idx, 4);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-5);
}

// ---------------------------------------------------------------------------
// Ablations

TEST(Ablation, FiveRowsWithFixedFlags) {
  EXPECT_EQ(kAllVariants.size(), 5u);
  struct Row {
    AblationVariant v;
    bool single, random, no_bt;
  };
  const Row rows[] = {{AblationVariant::full, false, false, false},
                      {AblationVariant::single_stream_amp, true, false, false},
                      {AblationVariant::dual_stream_mae, false, true, true},
                      {AblationVariant::no_bt, false, false, true},
                      {AblationVariant::no_aim, false, true, false}};
  train::TrainConfig dirty = tiny_config();
  dirty.single_stream = dirty.random_mask = dirty.no_bt = true;
  for (const auto& r : rows) {
    EXPECT_EQ(parse_variant(to_string(r.v)), r.v);
    const auto c = apply_variant(dirty, r.v);
    EXPECT_EQ(c.single_stream, r.single) << to_string(r.v);
    EXPECT_EQ(c.random_mask, r.random) << to_string(r.v);
    EXPECT_EQ(c.no_bt, r.no_bt) << to_string(r.v);
  }
  EXPECT_THROW(parse_variant("no-decoder"), ConfigError);
}

TEST(Ablation, NoAimNeverBuildsAPolicy) {
  const auto ds = data::synth_generate(tiny_synth(4), 1);
  const auto m = train::CigMaeModel<float>::init(apply_variant(tiny_config(), AblationVariant::no_aim), ds.manifest);
  EXPECT_FALSE(m.policy_amplitude);
  EXPECT_FALSE(m.policy_phase);
  EXPECT_TRUE(m.head_amplitude);
}

TEST(Ablation, AllVariantsProduceWellFormedReports) {
  const auto ds = data::synth_generate(tiny_synth(12), 5);
  for (auto v : kAllVariants) {
    const auto r = ablation_run<float>(ds, tiny_experiment(), v);
    EXPECT_EQ(r.variant, to_string(v));
    EXPECT_GE(r.accuracy(), 0.0);
    EXPECT_LE(r.accuracy(), 100.0);
    EXPECT_GE(r.macro_f1(), 0.0);
    EXPECT_LE(r.macro_f1(), 100.0);
    EXPECT_EQ(r.test_count, 12u);
    EXPECT_EQ(r.train_count, 6u);
    for (const auto& row : r.metrics.confusion) EXPECT_EQ(std::accumulate(row.begin(), row.end(), std::size_t(0)), 6u);
    EXPECT_NE(r.csv_row().find(to_string(v)), std::string::npos);
    EXPECT_NE(r.to_text().find("macro-F1"), std::string::npos);
  }
}

TEST(Ablation, ReportsAreDeterministic) {
  const auto ds = data::synth_generate(tiny_synth(12), 5);
  const auto a = ablation_run<float>(ds, tiny_experiment(), AblationVariant::full);
  const auto b = ablation_run<float>(ds, tiny_experiment(), AblationVariant::full);
  EXPECT_EQ(a.to_text(), b.to_text());
}

TEST(Sweep, OneReportPerValue) {
  const auto ds = data::synth_generate(tiny_synth(12, 40), 5);
  auto e = tiny_experiment();
  e.train.epochs = 1;
  e.probe.epochs = 5;
  std::size_t seen = 0;
  const auto reports = sweep<float>(ds, e, "mask-ratio", {"0.5", "0.75", "0.9", "0.95"}, [&](const EvalReport&) { ++seen; });
  ASSERT_EQ(reports.size(), 4u);
  EXPECT_EQ(seen, 4u);
  EXPECT_EQ(reports[3].variant, "mask_ratio=0.95");
  EXPECT_NE(reports[0].config_hash, reports[1].config_hash);
  EXPECT_THROW(sweep<float>(ds, e, "dropout", {"0.1"}), ConfigError);
  EXPECT_THROW(sweep<float>(ds, e, "mask-ratio", {"0.5", "1.5"}), ConfigError);
  EXPECT_EQ(default_sweep_values("mask-ratio").size(), 4u);
}

// ---------------------------------------------------------------------------
// Analysis and visualisation

TEST(Analysis, VisibilityContrastOfAnUntrainedPolicyIsNearOne) {
  const auto sc = tiny_synth(8, 40);
  const auto ds = data::synth_generate(sc, 2);
  auto c = tiny_config();
  c.mask_ratio = 0.75;
  train::Trainer<float> t(c, ds.manifest);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  const auto v = visibility_contrast(t, ds, all, [&](int k) { return sc.region(std::size_t(k)); }, data::Modality::amplitude);
  EXPECT_GT(v.region_mean, 0.0);
  EXPECT_GT(v.background_mean, 0.0);
  EXPECT_LT(std::abs(std::log(v.ratio())), 0.5);
}

TEST(Analysis, CorrelationNeedsHeads) {
  const auto ds = data::synth_generate(tiny_synth(4), 1);
  auto c = tiny_config();
  std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto m = train::CigMaeModel<float>::init(c, ds.manifest);
  EXPECT_EQ(cross_modal_correlation(m, ds, idx).shape(), (Shape{8, 8}));
  c.no_bt = true;
  EXPECT_THROW(cross_modal_correlation(train::CigMaeModel<float>::init(c, ds.manifest), ds, idx), ConfigError);
}

class VizTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "cigmae_viz_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(VizTest, PerfectReconstructionHeatmapIsAllZero) {
  Rng rng(1);
  std::vector<float> v(2 * 3 * 6 * 10);
  for (auto& x : v) x = float(rng.normal());
  Tensor<float> x(Shape{2, 3, 6, 10}, v);
  const auto files = emit_error_heatmap(x, x, dir / "heat");
  ASSERT_EQ(files.size(), 2u);
  const auto csv = io::read_file(files[0]);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  for (char ch : csv) EXPECT_TRUE(ch == '0' || ch == ',' || ch == '\n') << ch;
  const auto img = io::read_file(files[1]);
  const std::string header = "P5\n10 6\n255\n";
  ASSERT_EQ(img.size(), header.size() + 60);
  EXPECT_EQ(img.substr(0, header.size()), header);
  EXPECT_EQ(img.substr(header.size()), std::string(60, '\0'));
}

TEST_F(VizTest, MaskOverlayAnnotatesTheVisibleFraction) {
  const auto g = masking::PatchGrid::make(30, 200, {3, 5});
  Rng rng(3);
  const auto p = masking::random_partition(g, 0.95, rng);
  EXPECT_DOUBLE_EQ(visible_fraction(p), 0.05);
  std::vector<double> probs(g.size(), 1.0 / double(g.size()));
  const auto files = emit_mask_overlay(p, dir / "mask", &probs);
  const auto csv = io::read_file(files[0]);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "# visible_fraction 0.05 (20/400 patches)");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '1'), 20 * 15);  // 20 patches of 15 pixels
}

TEST_F(VizTest, IdentityCorrelationHasUnitDiagonal) {
  std::vector<float> id(16, 0.f);
  for (int i = 0; i < 4; ++i) id[i * 5] = 1.f;
  const auto files = emit_corr_matrix(Tensor<float>(Shape{4, 4}, id), dir / "corr", 64);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(io::read_file(files[0]), "1,0,0,0\n0,1,0,0\n0,0,1,0\n0,0,0,1\n");
  EXPECT_EQ(emit_corr_matrix(Tensor<float>(Shape{4, 4}, id), dir / "corr2", 0).size(), 1u);
}

TEST(Viz, UnknownKindIsRejected) {
  EXPECT_EQ(parse_viz_kind("mask-overlay"), VizKind::mask_overlay);
  EXPECT_THROW(parse_viz_kind("tsne"), ConfigError);
}

}  // namespace
}  // namespace cigmae::eval
