// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cigmae/core/optim.hpp"
#include "cigmae/data/csi.hpp"
#include "cigmae/data/split.hpp"
#include "cigmae/model/backbone.hpp"
#include "cigmae/train/trainer.hpp"

namespace cigmae::eval {

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double accuracy = 0;  ///< percent
  double macro_f1 = 0;  ///< percent, over classes with support
  double micro_f1 = 0;  ///< percent; equals accuracy for single-label data
  std::vector<std::vector<std::size_t>> confusion;  ///< [true][predicted]
  std::vector<double> per_class_f1;                 ///< NaN for classes without support
  std::vector<int> unsupported_classes;             ///< excluded from macro-F1
};

/// Accuracy, macro-F1 and the confusion matrix. `classes` = 0 infers the
/// class count from the largest label or prediction.
inline Metrics evaluate_metrics(std::span<const int> predictions, std::span<const int> labels, std::size_t classes = 0) {
  if (predictions.size() != labels.size())
    throw DimensionError("evaluate_metrics: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw DataError("evaluate_metrics: empty input");
  int top = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || predictions[i] < 0) throw DataError("evaluate_metrics: negative class id");
    top = std::max({top, labels[i], predictions[i]});
  }
  if (classes == 0) classes = std::size_t(top) + 1;
  if (std::size_t(top) >= classes) throw DataError("evaluate_metrics: class id " + std::to_string(top) + " out of range");

  Metrics m;
  m.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++m.confusion[labels[i]][predictions[i]];
  std::size_t correct = 0;
  for (std::size_t c = 0; c < classes; ++c) correct += m.confusion[c][c];
  m.accuracy = 100.0 * double(correct) / double(labels.size());
  m.micro_f1 = m.accuracy;

  double sum = 0;
  std::size_t counted = 0;
  m.per_class_f1.assign(classes, std::nan(""));
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t support = 0, predicted = 0;
    for (std::size_t k = 0; k < classes; ++k) support += m.confusion[c][k], predicted += m.confusion[k][c];
    if (support == 0) {
      m.unsupported_classes.push_back(int(c));
      continue;
    }
    const double tp = double(m.confusion[c][c]);
    const double f1 = tp == 0 ? 0.0 : 2.0 * tp / double(support + predicted);
    m.per_class_f1[c] = 100.0 * f1;
    sum += f1;
    ++counted;
  }
  m.macro_f1 = 100.0 * sum / double(counted);
  return m;
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
  std::string variant = "full";
  std::uint64_t config_hash = 0;
  std::size_t k = 0, train_count = 0, test_count = 0;
  Metrics metrics;

  double accuracy() const { return metrics.accuracy; }
  double macro_f1() const { return metrics.macro_f1; }

  static std::string csv_header() { return "variant,config_hash,k,train,test,accuracy,macro_f1,micro_f1"; }
  std::string csv_row() const {
    std::ostringstream os;
    os << variant << ',' << std::hex << config_hash << std::dec << ',' << k << ',' << train_count << ',' << test_count << ','
       << std::fixed << std::setprecision(4) << metrics.accuracy << ',' << metrics.macro_f1 << ',' << metrics.micro_f1;
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "variant      " << variant << "\n";
    os << "config hash  " << std::hex << config_hash << std::dec << "\n";
    os << "probe        " << k << "-shot, " << train_count << " train / " << test_count << " test\n";
    os << "accuracy     " << metrics.accuracy << " %\n";
    os << "macro-F1     " << metrics.macro_f1 << " %\n";
    if (!metrics.unsupported_classes.empty()) {
      os << "no support   ";
      for (int c : metrics.unsupported_classes) os << c << ' ';
      os << "(excluded from macro-F1)\n";
    }
    os << "confusion (rows = true class)\n";
    for (const auto& row : metrics.confusion) {
      os << "  ";
      for (std::size_t j = 0; j < row.size(); ++j) os << (j ? " " : "") << std::setw(5) << row[j];
      os << "\n";
    }
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Features and probe

/// [z^A | z^P] for each requested sample ([n, 2*latent]), or z^A alone for
/// single-stream models. Runs without building a graph.
template <class T>
Tensor<T> extract_features(const train::CigMaeModel<T>& model, const data::Dataset& ds, std::span<const std::size_t> indices,
                           std::size_t batch = 64) {
  NoGradGuard guard;
  const std::size_t d = model.geometry.latent, width = model.dual_stream() ? 2 * d : d;
  std::vector<T> out;
  out.reserve(indices.size() * width);
  for (std::size_t lo = 0; lo < indices.size(); lo += batch) {
    const auto part = indices.subspan(lo, std::min(batch, indices.size() - lo));
    Tensor<T> f = model::encode(ds.gather<T>(part, data::Modality::amplitude), model.amplitude.encoder, model.geometry);
    if (model.dual_stream())
      f = concat_features(f, model::encode(ds.gather<T>(part, data::Modality::phase), model.phase->encoder, model.geometry));
    out.insert(out.end(), f.values().begin(), f.values().end());
  }
  return Tensor<T>(Shape{indices.size(), width}, std::move(out));
}

struct ProbeConfig {
  std::size_t k = 10;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  /// z-score features with statistics of the probe's training set. Off by
  /// default: Adam moves every weight at a similar rate, so equalising
  /// feature scales hands uninformative dimensions as much say as the rest.
  bool standardize = false;

  void validate() const {
    if (k == 0) throw ConfigError("probe: k must be >= 1");
    if (epochs == 0 || batch_size == 0) throw ConfigError("probe: epochs and batch size must be >= 1");
    if (!(lr > 0)) throw ConfigError("probe: lr must be > 0");
  }
};

namespace detail {

template <class T>
std::vector<T> rows_of(const Tensor<T>& x, std::span<const std::size_t> idx) {
  const std::size_t D = x.dim(1);
  std::vector<T> out;
  out.reserve(idx.size() * D);
  for (auto i : idx) out.insert(out.end(), x.values().begin() + long(i * D), x.values().begin() + long((i + 1) * D));
  return out;
}

}  // namespace detail

/// Trains a softmax linear classifier on frozen features and scores it on
/// the test features.
template <class T>
EvalReport linear_probe(const Tensor<T>& train_x, std::span<const int> train_y, const Tensor<T>& test_x,
                        std::span<const int> test_y, std::size_t classes, const ProbeConfig& cfg) {
  cfg.validate();
  if (train_x.rank() != 2 || test_x.rank() != 2 || train_x.dim(1) != test_x.dim(1))
    throw DimensionError("linear_probe: feature shapes " + to_string(train_x.shape()) + " / " + to_string(test_x.shape()));
  if (train_x.dim(0) != train_y.size() || test_x.dim(0) != test_y.size())
    throw DimensionError("linear_probe: feature and label counts differ");
  std::vector<std::size_t> count(classes, 0);
  for (int y : train_y) {
    if (y < 0 || std::size_t(y) >= classes) throw DataError("linear_probe: label " + std::to_string(y) + " out of range");
    ++count[y];
  }
  for (std::size_t c = 0; c < classes; ++c)
    if (count[c] == 0) throw DataError("linear_probe: class " + std::to_string(c) + " absent from the training set");

  const std::size_t n = train_x.dim(0), D = train_x.dim(1);
  std::vector<T> mu(D, T(0)), inv(D, T(1));
  if (cfg.standardize) {
    for (std::size_t j = 0; j < D; ++j) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < n; ++i) m += train_x.at(i * D + j);
      m /= double(n);
      for (std::size_t i = 0; i < n; ++i) v += (train_x.at(i * D + j) - m) * (train_x.at(i * D + j) - m);
      mu[j] = T(m);
      inv[j] = T(1.0 / std::sqrt(v / double(n) + 1e-8));
    }
  }
  auto prepare = [&](const Tensor<T>& x) {
    std::vector<T> v(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mu[i % D]) * inv[i % D];
    return Tensor<T>(x.shape(), std::move(v));
  };
  const Tensor<T> xtr = prepare(train_x), xte = prepare(test_x);

  const Rng root = Rng(cfg.seed).fork("probe");
  Rng init = root.fork("init");
  auto head = model::ClassifierParams<T>::init(init, D, classes, "probe");
  AdamWConfig ac;
  ac.lr = cfg.lr;
  ac.beta2 = 0.999;
  ac.weight_decay = cfg.weight_decay;
  AdamW<T> opt(head.parameters(), ac);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto perm = root.fork("shuffle").fork(e).permutation(n);
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::span<const std::size_t> idx(perm.data() + lo, std::min(cfg.batch_size, n - lo));
      std::vector<int> y;
      for (auto i : idx) y.push_back(train_y[i]);
      Tensor<T> xb(Shape{idx.size(), D}, detail::rows_of(xtr, idx));
      opt.zero_grad();
      cross_entropy(model::classify(xb, head), std::span<const int>(y)).backward();
      opt.step();
    }
  }
  std::vector<int> pred;
  {
    NoGradGuard guard;
    pred = model::argmax_rows(model::classify(xte, head));
  }
  EvalReport r;
  r.k = cfg.k;
  r.train_count = n;
  r.test_count = test_y.size();
  r.metrics = evaluate_metrics(pred, test_y, classes);
  return r;
}

/// k-shot probe of a pre-trained model: k samples per class from
/// `split.train`, scored on all of `split.test`.
template <class T>
EvalReport probe_model(const train::CigMaeModel<T>& model, const data::Dataset& ds, const data::SplitSpec& split,
                       const ProbeConfig& cfg) {
  if (!ds.manifest.has_labels) throw DataError("probe: dataset has no labels");
  const auto labels = ds.all_labels();
  const std::size_t C = ds.manifest.classes;
  const auto shots = data::kshot_sample(labels, split.train, cfg.k, C, Rng(cfg.seed).fork("kshot").state().key);
  const auto ftr = extract_features(model, ds, shots);
  const auto fte = extract_features(model, ds, split.test);
  const auto ytr = ds.labels_of(shots), yte = ds.labels_of(split.test);
  return linear_probe(ftr, ytr, fte, yte, C, cfg);
}

}  // namespace cigmae::eval
