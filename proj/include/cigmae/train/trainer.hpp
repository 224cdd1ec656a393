// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cigmae/core/optim.hpp"
#include "cigmae/data/csi.hpp"
#include "cigmae/masking/aim.hpp"
#include "cigmae/masking/mask_io.hpp"
#include "cigmae/model/alignment.hpp"
#include "cigmae/train/config.hpp"

namespace cigmae::train {

/// Backbone (encoders, decoders, BT heads) plus the masking policies.
/// Optional members are never allocated when the variant does not use them.
template <class T>
struct CigMaeModel {
  model::BackboneConfig geometry;
  model::StreamParams<T> amplitude;
  std::optional<model::StreamParams<T>> phase;
  std::optional<masking::PolicyParams<T>> policy_amplitude, policy_phase;
  std::optional<model::ProjectionHeadParams<T>> head_amplitude, head_phase;

  static CigMaeModel init(const TrainConfig& cfg, const data::DatasetManifest& manifest) {
    cfg.validate();
    CigMaeModel m;
    m.geometry = cfg.backbone(manifest);
    // Each component draws from its own stream so variants share the
    // initial values of whatever they have in common.
    const Rng root = Rng(cfg.seed).fork("init");
    auto stream_rng = [&](const char* name) { return root.fork(name); };
    {
      Rng r = stream_rng("amplitude");
      m.amplitude = model::StreamParams<T>::init(r, m.geometry, "amp");
    }
    if (!cfg.single_stream) {
      Rng r = stream_rng("phase");
      m.phase = model::StreamParams<T>::init(r, m.geometry, "phase");
    }
    if (cfg.uses_policy()) {
      const std::size_t hidden = cfg.d_policy * cfg.policy_mlp_ratio;
      Rng ra = stream_rng("policy.amplitude");
      m.policy_amplitude =
          masking::PolicyParams<T>::init(ra, m.geometry.channels[0], cfg.d_policy, cfg.policy_heads, hidden, "policy.amp");
      if (!cfg.single_stream) {
        Rng rp = stream_rng("policy.phase");
        m.policy_phase =
            masking::PolicyParams<T>::init(rp, m.geometry.channels[0], cfg.d_policy, cfg.policy_heads, hidden, "policy.phase");
      }
    }
    if (cfg.uses_bt()) {
      Rng ra = stream_rng("bt.amplitude"), rp = stream_rng("bt.phase");
      m.head_amplitude = model::ProjectionHeadParams<T>::init(ra, cfg.d_latent, cfg.bt_width, "bt.amp");
      m.head_phase = model::ProjectionHeadParams<T>::init(rp, cfg.d_latent, cfg.bt_width, "bt.phase");
    }
    return m;
  }

  bool dual_stream() const { return phase.has_value(); }

  /// Theta: encoders, decoders and projection heads.
  ParameterSet<T> backbone_params() const {
    auto s = amplitude.parameters();
    if (phase) s.extend(phase->parameters());
    if (head_amplitude) s.extend(head_amplitude->parameters());
    if (head_phase) s.extend(head_phase->parameters());
    return s;
  }

  /// Psi: the per-modality masking policies.
  ParameterSet<T> policy_params() const {
    ParameterSet<T> s;
    if (policy_amplitude) s.extend(policy_amplitude->parameters());
    if (policy_phase) s.extend(policy_phase->parameters());
    return s;
  }

  ParameterSet<T> all_params() const {
    auto s = backbone_params();
    s.extend(policy_params());
    return s;
  }
};

// ---------------------------------------------------------------------------
// Metrics

/// Nonzero gradient entries seen on a checked step, per backward pass and
/// parameter group. Decoupling holds when both cross terms are zero.
struct GradFlowCounts {
  std::uint64_t step = 0;
  std::size_t aim_to_policy = 0, aim_to_backbone = 0;
  std::size_t theta_to_backbone = 0, theta_to_policy = 0;
};

struct StepRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t batch = 0;
  std::uint64_t batch_size = 0;
  double rec_amplitude = 0, rec_phase = 0, bt = 0, aim_amplitude = 0, aim_phase = 0;
  double rec = 0;    ///< combined reconstruction term
  double total = 0;  ///< w_rec rec + w_aim (aim_a + aim_p) + w_bt bt
  std::uint64_t mask_hash = 0;
  double wall_ms = 0;  ///< not part of equality or the default CSV
};

struct EpochSummary {
  std::uint64_t epoch = 0;
  std::size_t steps = 0;
  double rec_amplitude = 0, rec_phase = 0, bt = 0, aim_amplitude = 0, aim_phase = 0, rec = 0, total = 0;
};

/// Append-only, one record per optimizer step.
class MetricsLog {
 public:
  void append(const StepRecord& r) {
    if (!records_.empty() && r.step != records_.back().step + 1)
      throw ConfigError("metrics log: step " + std::to_string(r.step) + " does not follow " +
                        std::to_string(records_.back().step));
    records_.push_back(r);
  }
  const std::vector<StepRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  /// Per-epoch means of every loss column.
  std::vector<EpochSummary> epochs() const {
    std::vector<EpochSummary> out;
    for (const auto& r : records_) {
      if (out.empty() || out.back().epoch != r.epoch) out.push_back({r.epoch});
      auto& e = out.back();
      ++e.steps;
      e.rec_amplitude += r.rec_amplitude;
      e.rec_phase += r.rec_phase;
      e.bt += r.bt;
      e.aim_amplitude += r.aim_amplitude;
      e.aim_phase += r.aim_phase;
      e.rec += r.rec;
      e.total += r.total;
    }
    for (auto& e : out)
      for (double* v : {&e.rec_amplitude, &e.rec_phase, &e.bt, &e.aim_amplitude, &e.aim_phase, &e.rec, &e.total})
        *v /= double(e.steps);
    return out;
  }

  std::string csv(bool with_wall_time = false) const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "step,epoch,batch,batch_size,rec_amp,rec_phase,rec,bt,aim_amp,aim_phase,total,mask_hash";
    if (with_wall_time) os << ",wall_ms";
    os << '\n';
    for (const auto& r : records_) {
      os << r.step << ',' << r.epoch << ',' << r.batch << ',' << r.batch_size << ',' << r.rec_amplitude << ','
         << r.rec_phase << ',' << r.rec << ',' << r.bt << ',' << r.aim_amplitude << ',' << r.aim_phase << ',' << r.total
         << ',' << std::hex << r.mask_hash << std::dec;
      if (with_wall_time) os << ',' << r.wall_ms;
      os << '\n';
    }
    return os.str();
  }

  std::string epoch_csv() const {
    std::ostringstream os;
    os << std::setprecision(9) << "epoch,steps,rec_amp,rec_phase,rec,bt,aim_amp,aim_phase,total\n";
    for (const auto& e : epochs())
      os << e.epoch << ',' << e.steps << ',' << e.rec_amplitude << ',' << e.rec_phase << ',' << e.rec << ',' << e.bt << ','
         << e.aim_amplitude << ',' << e.aim_phase << ',' << e.total << '\n';
    return os.str();
  }

 private:
  std::vector<StepRecord> records_;
};

// ---------------------------------------------------------------------------
// Trainer

/// Batch schedule: ceil(n / B) batches per epoch, except that a lone
/// leftover sample is folded into the previous batch so every batch has >= 2.
struct BatchPlan {
  std::size_t samples = 0, batch_size = 0;

  std::size_t steps_per_epoch() const {
    std::size_t k = (samples + batch_size - 1) / batch_size;
    if (k > 1 && samples % batch_size == 1) --k;
    return k;
  }
  std::pair<std::size_t, std::size_t> range(std::size_t batch) const {
    const std::size_t k = steps_per_epoch();
    const std::size_t lo = batch * batch_size;
    const std::size_t hi = batch + 1 == k ? samples : std::min(samples, lo + batch_size);
    return {lo, hi};
  }
};

/// Everything produced by one step, before the optimizer updates.
template <class T>
struct StepOutputs {
  std::vector<masking::MaskPartition> parts_amplitude, parts_phase;
  Tensor<T> log_p_amplitude, log_p_phase;
};

template <class T>
class Trainer {
 public:
  Trainer(TrainConfig cfg, const data::DatasetManifest& manifest)
      : cfg_(std::move(cfg)),
        manifest_(manifest),
        model_(CigMaeModel<T>::init(cfg_, manifest)),
        grid_(model_.geometry.grid()),
        backbone_opt_(model_.backbone_params(), adam(cfg_.lr)),
        policy_opt_(model_.policy_params(), adam(cfg_.policy_lr)) {
    masking::check_ratio(grid_.size(), cfg_.mask_ratio);
  }

  const TrainConfig& config() const { return cfg_; }
  const CigMaeModel<T>& model() const { return model_; }
  const masking::PatchGrid& grid() const { return grid_; }
  std::uint64_t step_count() const { return step_; }
  /// Counts from the most recent step that ran the gradient-flow check.
  const std::optional<GradFlowCounts>& last_grad_flow() const { return last_flow_; }
  const MetricsLog& log() const { return log_; }
  const AdamW<T>& backbone_optimizer() const { return backbone_opt_; }
  const AdamW<T>& policy_optimizer() const { return policy_opt_; }

  /// Extends the schedule (e.g. after resuming with more epochs). Only
  /// `epochs` may differ from the original configuration.
  void set_epochs(std::size_t epochs) {
    TrainConfig c = cfg_;
    c.epochs = epochs;
    c.validate();
    cfg_ = c;
  }

  /// Mask partitions for one modality. The policy is evaluated on the
  /// unmasked input; the sampling key depends only on (seed, step, modality,
  /// sample) so a resumed run draws the same masks.
  std::vector<masking::MaskPartition> sample_masks(const Tensor<T>& x, data::Modality m, Tensor<T>* log_p_out = nullptr,
                                                   std::uint64_t step = ~0ULL) const {
    if (step == ~0ULL) step = step_;
    const std::size_t B = x.dim(0);
    const Rng base = Rng(cfg_.seed).fork("mask").fork(step).fork(static_cast<std::uint64_t>(m));
    std::vector<masking::MaskPartition> parts;
    parts.reserve(B);
    const auto* policy = policy_for(m);
    if (!policy) {
      for (std::size_t b = 0; b < B; ++b) {
        Rng r = base.fork(b);
        parts.push_back(masking::random_partition(grid_, cfg_.mask_ratio, r));
      }
      return parts;
    }
    const auto& enc = stream(m).encoder;
    Tensor<T> log_p = masking::policy_log_probs(masking::patch_tokens(x, enc.conv1_w, enc.conv1_b, grid_.patch, grid_, *policy), *policy);
    const auto dists = masking::distributions(log_p);
    for (std::size_t b = 0; b < B; ++b) {
      Rng r = base.fork(b);
      parts.push_back(masking::gumbel_topk_partition(dists[b], cfg_.mask_ratio, grid_, r));
    }
    if (log_p_out) *log_p_out = log_p;
    return parts;
  }

  /// Policy visibility probabilities [B, L] for x (no graph kept).
  Tensor<T> visibility(const Tensor<T>& x, data::Modality m) const {
    const auto* policy = policy_for(m);
    if (!policy) throw ConfigError("visibility: this variant has no masking policy");
    NoGradGuard guard;
    const auto& enc = stream(m).encoder;
    return exp(masking::policy_log_probs(masking::patch_tokens(x, enc.conv1_w, enc.conv1_b, grid_.patch, grid_, *policy), *policy));
  }

  /// One optimizer step on (amplitude, phase) batches [B, N, S, T]. The
  /// phase batch is ignored by single-stream models.
  StepRecord step(const Tensor<T>& x_amp, const Tensor<T>& x_phase, std::uint64_t epoch = 0, std::uint64_t batch = 0) {
    const auto t0 = std::chrono::steady_clock::now();
    if (x_amp.rank() != 4 || x_amp.dim(0) < 2)
      throw DataError("pretrain_step: need a [B,N,S,T] batch with B >= 2, got " + to_string(x_amp.shape()));
    if (model_.dual_stream() && x_phase.shape() != x_amp.shape())
      throw DataError("pretrain_step: amplitude " + to_string(x_amp.shape()) + " vs phase " + to_string(x_phase.shape()));

    StepRecord rec;
    rec.step = step_;
    rec.epoch = epoch;
    rec.batch = batch;
    rec.batch_size = x_amp.dim(0);
    const model::ReconLossOptions ropt{cfg_.recon_loss, cfg_.normalized_target};

    // Phase 1-3 per modality: masks, reconstruction, rewards.
    struct Branch {
      Tensor<T> rec_loss, aim;
      bool has_aim = false;
    };
    auto run_branch = [&](const Tensor<T>& x, data::Modality m, std::uint64_t& hash) {
      Branch br;
      Tensor<T> log_p;
      const auto parts = sample_masks(x, m, &log_p);
      hash = masking::mask_hash(std::span<const masking::MaskPartition>(parts), hash);
      const auto& s = stream(m);
      const Tensor<T> x_hat = model::decode(model::encode(masking::apply_mask(x, std::span<const masking::MaskPartition>(parts)), s.encoder, model_.geometry), s.decoder, model_.geometry);
      br.rec_loss = model::masked_reconstruction_loss(x_hat, x, std::span<const masking::MaskPartition>(parts), ropt);
      if (policy_for(m)) {
        const Tensor<T> target = cfg_.normalized_target ? model::normalize_patches(x.detach(), grid_) : x;
        const auto err = masking::abs_error(x_hat, target);
        const std::size_t per = err.size() / parts.size();
        std::vector<std::vector<double>> rewards;
        rewards.reserve(parts.size());
        for (std::size_t b = 0; b < parts.size(); ++b)
          rewards.push_back(masking::per_patch_error(std::span<const T>(err.data() + b * per, per), parts[b]));
        br.aim = masking::aim_loss(log_p, std::span<const masking::MaskPartition>(parts), rewards);
        br.has_aim = true;
      }
      return br;
    };

    std::uint64_t hash = 0xcbf29ce484222325ULL;
    const Branch amp = run_branch(x_amp, data::Modality::amplitude, hash);
    std::optional<Branch> pha;
    if (model_.dual_stream()) pha = run_branch(x_phase, data::Modality::phase, hash);
    rec.mask_hash = hash;

    // Phase 4: alignment on the unmasked inputs.
    Tensor<T> bt;
    if (model_.head_amplitude) {
      auto [pa, pp] = model::project_and_normalize(model::encode(x_amp, model_.amplitude.encoder, model_.geometry),
                                                   model::encode(x_phase, model_.phase->encoder, model_.geometry),
                                                   *model_.head_amplitude, *model_.head_phase);
      bt = model::bt_loss(model::cross_correlation(pa, pp), static_cast<T>(cfg_.bt_lambda));
    }

    rec.rec_amplitude = finite(amp.rec_loss, "L_rec^A");
    if (pha) rec.rec_phase = finite(pha->rec_loss, "L_rec^P");
    if (amp.has_aim) rec.aim_amplitude = finite(amp.aim, "L_AIM^A");
    if (pha && pha->has_aim) rec.aim_phase = finite(pha->aim, "L_AIM^P");
    if (bt.defined()) rec.bt = finite(bt, "L_BT");

    Tensor<T> rec_loss = amp.rec_loss;
    if (pha) {
      rec_loss = add(rec_loss, pha->rec_loss);
      if (cfg_.rec_reduction == RecReduction::mean) rec_loss = scale(rec_loss, T(0.5));
    }
    rec.rec = double(rec_loss.item());
    rec.total = cfg_.w_rec * rec.rec + cfg_.w_aim * (rec.aim_amplitude + rec.aim_phase) + cfg_.w_bt * rec.bt;

    const bool check = cfg_.grad_flow_check_every && step_ % cfg_.grad_flow_check_every == 0;
    GradFlowCounts flow;
    flow.step = step_;

    // Policy update from the AIM objective alone.
    if (amp.has_aim) {
      Tensor<T> aim = amp.aim;
      if (pha && pha->has_aim) aim = add(aim, pha->aim);
      backbone_opt_.zero_grad();
      policy_opt_.zero_grad();
      scale(aim, static_cast<T>(cfg_.w_aim)).backward();
      if (check) {
        flow.aim_to_policy = nonzero_grads(policy_opt_.params());
        flow.aim_to_backbone = nonzero_grads(backbone_opt_.params());
        require_zero_grads(backbone_opt_.params(), "L_AIM", "backbone");
      }
      policy_opt_.step();
    }

    // Backbone update from reconstruction and alignment.
    backbone_opt_.zero_grad();
    policy_opt_.zero_grad();
    Tensor<T> theta_loss = scale(rec_loss, static_cast<T>(cfg_.w_rec));
    if (bt.defined()) theta_loss = add(theta_loss, scale(bt, static_cast<T>(cfg_.w_bt)));
    theta_loss.backward();
    if (check) {
      flow.theta_to_backbone = nonzero_grads(backbone_opt_.params());
      flow.theta_to_policy = nonzero_grads(policy_opt_.params());
      require_zero_grads(policy_opt_.params(), "L_rec + w_bt L_BT", "policy");
      last_flow_ = flow;
    }
    backbone_opt_.step();

    ++step_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log_.append(rec);
    return rec;
  }

  BatchPlan plan(const data::Dataset& ds) const {
    if (ds.size() < 2) throw DataError("pretrain: dataset needs at least 2 samples, has " + std::to_string(ds.size()));
    return {ds.size(), cfg_.batch_size};
  }

  /// Sample indices of batch `batch` in `epoch` (seeded full-epoch shuffle).
  std::vector<std::size_t> batch_indices(const data::Dataset& ds, std::uint64_t epoch, std::size_t batch) const {
    const auto p = plan(ds);
    const auto perm = Rng(cfg_.seed).fork("shuffle").fork(epoch).permutation(ds.size());
    const auto [lo, hi] = p.range(batch);
    return {perm.begin() + long(lo), perm.begin() + long(hi)};
  }

  /// Runs until `target_step` optimizer steps have been taken in total.
  void run_until(const data::Dataset& ds, std::uint64_t target_step,
                 const std::function<void(const StepRecord&)>& on_step = {}) {
    check_manifest(ds.manifest);
    const std::size_t spe = plan(ds).steps_per_epoch();
    while (step_ < target_step) {
      const std::uint64_t epoch = step_ / spe;
      const std::size_t b = step_ % spe;
      const auto idx = batch_indices(ds, epoch, b);
      const auto xa = ds.gather<T>(idx, data::Modality::amplitude);
      const auto xp = model_.dual_stream() ? ds.gather<T>(idx, data::Modality::phase) : Tensor<T>{};
      const auto r = step(xa, xp, epoch, b);
      if (on_step) on_step(r);
    }
  }

  /// Runs (or continues) to the end of the configured epoch count.
  void run(const data::Dataset& ds, const std::function<void(const StepRecord&)>& on_step = {}) {
    run_until(ds, std::uint64_t(cfg_.epochs) * plan(ds).steps_per_epoch(), on_step);
  }

  // -------------------------------------------------------------------------
  // Checkpoints

  static constexpr std::string_view kMagic{"CIGMCKPT", 8};
  static constexpr std::uint32_t kVersion = 1;

  std::string encode_checkpoint() const {
    io::Writer w;
    w.put_bytes(kMagic);
    w.put(kVersion);
    w.put(io::dtype_tag<T>());
    w.put(cfg_.hash());
    w.put(step_);
    const auto rs = Rng(cfg_.seed).state();
    w.put(rs.key);
    w.put(rs.counter);
    w.put_string(cfg_.to_text());
    io::write_parameter_table(w, model_.all_params());
    io::write_optimizer_state(w, backbone_opt_.state());
    io::write_optimizer_state(w, policy_opt_.state());
    w.put(io::fnv1a(w.bytes()));
    return w.bytes();
  }

  void save_checkpoint(const std::filesystem::path& path) const { io::write_file(path, encode_checkpoint()); }

  /// Restores parameters, optimizer moments and the step counter. The file
  /// must come from a run with the same configuration (epochs aside). The
  /// metrics log is not stored; records continue from the restored step.
  void decode_checkpoint(std::string_view bytes) {
    io::Reader r = open_checkpoint(bytes);
    const auto h = r.get<std::uint64_t>();
    if (h != cfg_.hash()) {
      std::ostringstream os;
      os << "checkpoint: config hash " << std::hex << h << " does not match the current configuration " << cfg_.hash();
      throw FormatError(FormatError::Code::config_mismatch, os.str());
    }
    const auto step = r.get<std::uint64_t>();
    Rng::State rs;
    rs.key = r.get<std::uint64_t>();
    rs.counter = r.get<std::uint64_t>();
    if (!(rs == Rng(cfg_.seed).state())) throw FormatError(FormatError::Code::config_mismatch, "checkpoint: generator state differs");
    r.get_string();
    // Read into scratch copies first so a failure leaves this trainer intact.
    io::read_parameter_table(r, model_.all_params());
    auto bs = backbone_opt_.state(), ps = policy_opt_.state();
    io::read_optimizer_state(r, bs);
    io::read_optimizer_state(r, ps);
    if (r.remaining()) throw FormatError(FormatError::Code::integrity, "checkpoint: trailing bytes");
    backbone_opt_.state() = bs;
    policy_opt_.state() = ps;
    step_ = step;
    log_ = MetricsLog{};
    resumed_from_ = step;
  }

  void load_checkpoint(const std::filesystem::path& path) { decode_checkpoint(io::read_file(path)); }

  /// Configuration a checkpoint was written with (its epochs included).
  static TrainConfig checkpoint_config(std::string_view bytes) {
    io::Reader r = open_checkpoint(bytes);
    r.get<std::uint64_t>();  // hash
    r.get<std::uint64_t>();  // step
    r.get<std::uint64_t>();  // generator key
    r.get<std::uint64_t>();  // generator counter
    return parse_config(r.get_string());
  }

  /// Step at which the current log begins (0 unless resumed).
  std::uint64_t log_origin() const { return resumed_from_; }

 private:
  /// Validates magic, trailer, version and scalar type; returns a reader
  /// positioned at the config hash.
  static io::Reader open_checkpoint(std::string_view bytes) {
    if (bytes.size() < kMagic.size() + 8) throw FormatError(FormatError::Code::integrity, "checkpoint: file too short");
    if (bytes.substr(0, kMagic.size()) != kMagic) throw FormatError(FormatError::Code::bad_magic, "checkpoint: bad magic");
    io::Reader trailer(bytes.substr(bytes.size() - 8));
    if (trailer.get<std::uint64_t>() != io::fnv1a(bytes.substr(0, bytes.size() - 8)))
      throw FormatError(FormatError::Code::integrity, "checkpoint: checksum mismatch (truncated or corrupted file)");
    io::Reader r(bytes.substr(0, bytes.size() - 8));
    r.get_bytes(kMagic.size());
    if (const auto v = r.get<std::uint32_t>(); v != kVersion)
      throw FormatError(FormatError::Code::bad_version, "checkpoint: version " + std::to_string(v) + ", expected " + std::to_string(kVersion));
    if (r.get<std::uint8_t>() != io::dtype_tag<T>())
      throw FormatError(FormatError::Code::shape_mismatch, "checkpoint: different scalar type");
    return r;
  }

  static AdamWConfig adam_cfg(const TrainConfig& c, double lr) {
    AdamWConfig a;
    a.lr = lr;
    a.beta1 = c.beta1;
    a.beta2 = c.beta2;
    a.weight_decay = c.weight_decay;
    return a;
  }
  AdamWConfig adam(double lr) const { return adam_cfg(cfg_, lr); }

  const model::StreamParams<T>& stream(data::Modality m) const {
    if (m == data::Modality::amplitude) return model_.amplitude;
    if (!model_.phase) throw ConfigError("single-stream model has no phase stream");
    return *model_.phase;
  }
  const masking::PolicyParams<T>* policy_for(data::Modality m) const {
    const auto& p = m == data::Modality::amplitude ? model_.policy_amplitude : model_.policy_phase;
    return p ? &*p : nullptr;
  }

  double finite(const Tensor<T>& loss, const char* term) const {
    const double v = double(loss.item());
    if (!std::isfinite(v))
      throw NumericError("pretrain_step " + std::to_string(step_) + ": non-finite " + term + " (" + std::to_string(v) + ")");
    return v;
  }

  static std::size_t nonzero_grads(const ParameterSet<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params)
      if (p.has_grad())
        for (T v : p.grad()) n += v != T(0);
    return n;
  }

  static void require_zero_grads(const ParameterSet<T>& params, const char* loss, const char* group) {
    for (const auto& p : params) {
      const auto g = p.grad();
      for (T v : g)
        if (v != T(0)) throw NumericError(std::string("gradient flow: ") + loss + " reached " + group + " parameter '" + p.name() + "'");
    }
  }

  void check_manifest(const data::DatasetManifest& m) const {
    if (m.antennas != manifest_.antennas || m.subcarriers != manifest_.subcarriers || m.timesteps != manifest_.timesteps)
      throw DataError("pretrain: dataset shape differs from the model's");
  }

  TrainConfig cfg_;
  data::DatasetManifest manifest_;
  CigMaeModel<T> model_;
  masking::PatchGrid grid_;
  AdamW<T> backbone_opt_;
  AdamW<T> policy_opt_;
  std::uint64_t step_ = 0;
  std::uint64_t resumed_from_ = 0;
  std::optional<GradFlowCounts> last_flow_;
  MetricsLog log_;
};

/// Pre-trains from scratch for cfg.epochs and returns the trainer (frozen
/// encoders are read from trainer.model()).
template <class T = float>
Trainer<T> pretrain_run(const data::Dataset& ds, const TrainConfig& cfg,
                        const std::function<void(const StepRecord&)>& on_step = {}) {
  if (ds.size() == 0) throw DataError("pretrain: empty dataset");
  Trainer<T> t(cfg, ds.manifest);
  t.run(ds, on_step);
  return t;
}

}  // namespace cigmae::train
