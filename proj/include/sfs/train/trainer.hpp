#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sfs/embedder.hpp"
#include "sfs/errors.hpp"
#include "sfs/flow/extractor.hpp"
#include "sfs/losses.hpp"
#include "sfs/losses_graph.hpp"
#include "sfs/metrics.hpp"
#include "sfs/nn/adam.hpp"
#include "sfs/train/scheduler.hpp"

namespace sfs {

enum class Objective { adversarial, chamfer_cycle };

inline const char* to_string(Objective o) {
  return o == Objective::adversarial ? "adversarial" : "chamfer_cycle";
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "adversarial") return Objective::adversarial;
  if (s == "chamfer_cycle") return Objective::chamfer_cycle;
  throw ConfigError("unknown objective '" + s +
                    "' (expected adversarial|chamfer_cycle)");
}

struct TrainConfig {
  EmbedderConfig embedder{};
  FlowExtractorConfig extractor{};
  LossConfig loss{};
  Objective objective = Objective::adversarial;
  double lr_flow = 5e-4;
  double lr_embedder = 5e-5;
  nn::AdamConfig adam{};
  double plateau_factor = 0.75;
  int plateau_patience = 20;
  int batch_size = 4;
  int epochs = 10;
  int cloud_size = 256;  // training clouds are subsampled to this size
  // Phase ratio per round; 1:1 is the reference schedule, more embedder
  // phases strengthen the learned metric when the game turns unstable.
  int embedder_phases = 1;
  int extractor_phases = 1;
  // Embed a random half of the transformed cloud as the negative instead of
  // the full cloud. Anchors and positives are halves of frame 2, so the full
  // cloud differs from them in sampling density alone; matching sizes
  // removes that shortcut from the game. Off by default (reference wiring).
  bool negative_subsample = false;
  std::uint64_t seed = 0;

  void validate() const {
    embedder.validate();
    extractor.validate();
    loss.validate();
    if (!(lr_flow >= 0.0) || !(lr_embedder >= 0.0))
      throw ConfigError("train: learning rates must be nonnegative");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
      throw ConfigError("train: plateau_factor must be in (0, 1)");
    if (plateau_patience < 1)
      throw ConfigError("train: plateau_patience must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (cloud_size < 2) throw ConfigError("train: cloud_size must be >= 2");
    if (embedder_phases < 1 || extractor_phases < 1)
      throw ConfigError("train: phase counts must be >= 1");
  }

  std::string describe_architecture() const {
    std::string desc = std::string(to_string(objective)) + ";";
    if (objective == Objective::adversarial) desc += embedder.describe() + ";";
    desc += extractor.describe();
    return desc;
  }

  // Resolved key=value dump; experiment runners store it next to results.
  std::string dump() const {
    std::ostringstream os;
    os.precision(17);
    os << "objective = " << to_string(objective) << "\n"
       << "lr_flow = " << lr_flow << "\n"
       << "lr_embedder = " << lr_embedder << "\n"
       << "adam_beta1 = " << adam.beta1 << "\n"
       << "adam_beta2 = " << adam.beta2 << "\n"
       << "adam_eps = " << adam.eps << "\n"
       << "weight_decay = " << adam.weight_decay << "\n"
       << "plateau_factor = " << plateau_factor << "\n"
       << "plateau_patience = " << plateau_patience << "\n"
       << "batch_size = " << batch_size << "\n"
       << "epochs = " << epochs << "\n"
       << "cloud_size = " << cloud_size << "\n"
       << "embedder_phases = " << embedder_phases << "\n"
       << "extractor_phases = " << extractor_phases << "\n"
       << "negative_subsample = " << (negative_subsample ? 1 : 0) << "\n"
       << "seed = " << seed << "\n"
       << "margin = " << loss.margin << "\n"
       << "multiscale_factor = " << to_string(loss.factor) << "\n"
       << "cycle_terms = " << loss.cycle_terms.describe() << "\n"
       << "lambda_cc = " << loss.lambda_cc << "\n"
       << "cycle_epsilon = " << loss.epsilon << "\n"
       << "cycle_reduce = "
       << (loss.cycle_reduce == CycleReduce::mean ? "mean" : "sum") << "\n"
       << "cycle_stop_gradient = " << (loss.cycle_stop_gradient ? 1 : 0)
       << "\n"
       << "embedder_arch = " << embedder.describe() << "\n"
       << "extractor_arch = " << extractor.describe() << "\n";
    return os.str();
  }
};

struct RoundLog {
  int epoch = 0;
  long round = 0;
  double loss_g = 0.0;
  double loss_h = 0.0;
  std::vector<double> r_p_mean;  // per level, embedder phase
  std::vector<double> r_n_mean;  // per level, extractor phase
  double lr_flow = 0.0;
  double lr_embedder = 0.0;
  std::uint64_t batch_hash_phase_g = 0;
  std::uint64_t batch_hash_phase_h = 0;
  std::uint64_t embedder_hash_after_g = 0;
  std::uint64_t extractor_hash_after_g = 0;
  std::uint64_t embedder_hash_after_h = 0;
  std::uint64_t extractor_hash_after_h = 0;
};

struct EpochLog {
  int epoch = 0;
  double val_epe = 0.0;
  double lr_flow = 0.0;
  double lr_embedder = 0.0;
  bool improved = false;
  bool plateau_triggered = false;
};

struct TrainHistory {
  std::vector<RoundLog> rounds;
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_val_epe = std::numeric_limits<double>::infinity();
};

inline constexpr char kCheckpointMagic[8] = {'S', 'F', 'S', 'C',
                                             'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
inline void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
inline T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in)
    throw DataError(DataErrorCode::truncated_file, "checkpoint truncated");
  return value;
}

inline void write_int_vec(std::ostream& out, const std::vector<int>& v) {
  write_pod(out, static_cast<std::uint32_t>(v.size()));
  for (int x : v) write_pod(out, static_cast<std::int32_t>(x));
}

inline std::vector<int> read_int_vec(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  std::vector<int> v(n);
  for (auto& x : v) x = read_pod<std::int32_t>(in);
  return v;
}

}  // namespace detail

// Binary round trip of the full training configuration; checkpoints are
// self-describing so evaluation needs no side channel.
inline void write_train_config(std::ostream& out, const TrainConfig& cfg) {
  using detail::write_pod;
  write_pod(out, static_cast<std::uint32_t>(cfg.embedder.stages.size()));
  for (const auto& s : cfg.embedder.stages) {
    write_pod(out, static_cast<std::int32_t>(s.centroids));
    write_pod(out, s.radius);
    detail::write_int_vec(out, s.widths);
  }
  detail::write_int_vec(out, cfg.embedder.head_widths);
  write_pod(out, static_cast<std::int32_t>(cfg.extractor.k_local));
  detail::write_int_vec(out, cfg.extractor.local_widths);
  write_pod(out, static_cast<std::int32_t>(cfg.extractor.k_corr));
  detail::write_int_vec(out, cfg.extractor.corr_widths);
  detail::write_int_vec(out, cfg.extractor.refine_widths);
  write_pod(out, cfg.loss.margin);
  write_pod(out, static_cast<std::uint8_t>(cfg.loss.factor));
  write_pod(out, static_cast<std::uint8_t>(cfg.loss.cycle_terms.cosine));
  write_pod(out, static_cast<std::uint8_t>(cfg.loss.cycle_terms.mse));
  write_pod(out, static_cast<std::uint8_t>(cfg.loss.cycle_terms.l2));
  write_pod(out, cfg.loss.lambda_cc);
  write_pod(out, cfg.loss.epsilon);
  write_pod(out, static_cast<std::uint8_t>(cfg.loss.cycle_reduce));
  write_pod(out, static_cast<std::uint8_t>(cfg.loss.cycle_stop_gradient));
  write_pod(out, static_cast<std::uint8_t>(cfg.objective));
  write_pod(out, cfg.lr_flow);
  write_pod(out, cfg.lr_embedder);
  write_pod(out, cfg.adam.beta1);
  write_pod(out, cfg.adam.beta2);
  write_pod(out, cfg.adam.eps);
  write_pod(out, cfg.adam.weight_decay);
  write_pod(out, cfg.plateau_factor);
  write_pod(out, static_cast<std::int32_t>(cfg.plateau_patience));
  write_pod(out, static_cast<std::int32_t>(cfg.batch_size));
  write_pod(out, static_cast<std::int32_t>(cfg.epochs));
  write_pod(out, static_cast<std::int32_t>(cfg.cloud_size));
  write_pod(out, static_cast<std::int32_t>(cfg.embedder_phases));
  write_pod(out, static_cast<std::int32_t>(cfg.extractor_phases));
  write_pod(out, static_cast<std::uint8_t>(cfg.negative_subsample));
  write_pod(out, cfg.seed);
}

inline TrainConfig read_train_config(std::istream& in) {
  using detail::read_pod;
  TrainConfig cfg;
  cfg.embedder.stages.clear();
  const auto n_stages = read_pod<std::uint32_t>(in);
  for (std::uint32_t s = 0; s < n_stages; ++s) {
    EmbedderStage stage;
    stage.centroids = read_pod<std::int32_t>(in);
    stage.radius = read_pod<double>(in);
    stage.widths = detail::read_int_vec(in);
    cfg.embedder.stages.push_back(std::move(stage));
  }
  cfg.embedder.head_widths = detail::read_int_vec(in);
  cfg.extractor.k_local = read_pod<std::int32_t>(in);
  cfg.extractor.local_widths = detail::read_int_vec(in);
  cfg.extractor.k_corr = read_pod<std::int32_t>(in);
  cfg.extractor.corr_widths = detail::read_int_vec(in);
  cfg.extractor.refine_widths = detail::read_int_vec(in);
  cfg.loss.margin = read_pod<double>(in);
  cfg.loss.factor = static_cast<MultiscaleFactor>(read_pod<std::uint8_t>(in));
  cfg.loss.cycle_terms.cosine = read_pod<std::uint8_t>(in) != 0;
  cfg.loss.cycle_terms.mse = read_pod<std::uint8_t>(in) != 0;
  cfg.loss.cycle_terms.l2 = read_pod<std::uint8_t>(in) != 0;
  cfg.loss.lambda_cc = read_pod<double>(in);
  cfg.loss.epsilon = read_pod<double>(in);
  cfg.loss.cycle_reduce = static_cast<CycleReduce>(read_pod<std::uint8_t>(in));
  cfg.loss.cycle_stop_gradient = read_pod<std::uint8_t>(in) != 0;
  cfg.objective = static_cast<Objective>(read_pod<std::uint8_t>(in));
  cfg.lr_flow = read_pod<double>(in);
  cfg.lr_embedder = read_pod<double>(in);
  cfg.adam.beta1 = read_pod<double>(in);
  cfg.adam.beta2 = read_pod<double>(in);
  cfg.adam.eps = read_pod<double>(in);
  cfg.adam.weight_decay = read_pod<double>(in);
  cfg.plateau_factor = read_pod<double>(in);
  cfg.plateau_patience = read_pod<std::int32_t>(in);
  cfg.batch_size = read_pod<std::int32_t>(in);
  cfg.epochs = read_pod<std::int32_t>(in);
  cfg.cloud_size = read_pod<std::int32_t>(in);
  cfg.embedder_phases = read_pod<std::int32_t>(in);
  cfg.extractor_phases = read_pod<std::int32_t>(in);
  cfg.negative_subsample = read_pod<std::uint8_t>(in) != 0;
  cfg.seed = read_pod<std::uint64_t>(in);
  return cfg;
}

// Round-based optimization of the flow extractor, adversarially against the
// cloud embedder or with the chamfer+cycle objective. Owns all mutable
// training state; every stochastic choice derives from (seed, epoch, round),
// so runs are reproducible and resumable.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(cfg),
        extractor_(cfg.extractor, cfg.seed),
        scheduler_(cfg.plateau_factor, cfg.plateau_patience),
        lr_flow_(cfg.lr_flow),
        lr_embedder_(cfg.lr_embedder) {
    cfg_.validate();
    if (cfg_.objective == Objective::adversarial)
      embedder_.emplace(cfg_.embedder, cfg_.seed);
  }

  const TrainConfig& config() const { return cfg_; }
  ReferenceFlowExtractor& extractor() { return extractor_; }
  const ReferenceFlowExtractor& extractor() const { return extractor_; }
  bool has_embedder() const { return embedder_.has_value(); }
  CloudEmbedder& embedder() {
    if (!embedder_) throw TrainError("no embedder under this objective");
    return *embedder_;
  }
  double lr_flow() const { return lr_flow_; }
  double lr_embedder() const { return lr_embedder_; }
  int epoch() const { return epoch_; }
  long round() const { return round_; }
  double best_val_epe() const { return best_epe_; }

  // One optimization round on a batch: embedder phase then extractor phase
  // on the same data (or a single chamfer+cycle extractor step).
  RoundLog run_round(const std::vector<const ScenePair*>& batch) {
    if (batch.empty()) throw TrainError("round: empty batch");
    RoundLog log;
    log.epoch = epoch_;
    log.round = round_;
    log.lr_flow = lr_flow_;
    log.lr_embedder = lr_embedder_;
    if (cfg_.objective == Objective::adversarial) {
      for (int p = 0; p < cfg_.embedder_phases; ++p)
        embedder_phase(batch, log);
      for (int p = 0; p < cfg_.extractor_phases; ++p)
        extractor_phase(batch, log);
    } else {
      chamfer_phase(batch, log);
    }
    ++round_;
    return log;
  }

  // Validation EPE with frozen extractor parameters.
  double validation_epe(const std::vector<ScenePair>& val_set) const {
    if (val_set.empty()) throw TrainError("validation set is empty");
    double total = 0.0;
    for (const ScenePair& pair : val_set) {
      const FlowField pred = extractor_.predict(pair.frame1, pair.frame2);
      total += epe(pred, pair.gt_flow);
    }
    return total / static_cast<double>(val_set.size());
  }

  // Epochs of shuffled rounds with per-epoch validation, plateau scheduling
  // of both learning rates, and best-checkpoint retention. Resumes from the
  // current epoch counter when the trainer was restored from a checkpoint.
  TrainHistory train(const std::vector<ScenePair>& train_set,
                     const std::vector<ScenePair>& val_set) {
    if (train_set.empty() || val_set.empty())
      throw TrainError("train: datasets must be nonempty");
    TrainHistory history;
    bool first_round = true;
    for (int e = epoch_ + 1; e <= cfg_.epochs; ++e) {
      epoch_ = e;
      std::vector<int> order(train_set.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(cfg_.seed, {rng_tag::shuffle,
                                              static_cast<std::uint64_t>(e)}));
      shuffle_rng.shuffle(order);
      for (std::size_t at = 0; at < order.size();
           at += static_cast<std::size_t>(cfg_.batch_size)) {
        std::vector<const ScenePair*> batch;
        const std::size_t end = std::min(
            order.size(), at + static_cast<std::size_t>(cfg_.batch_size));
        for (std::size_t i = at; i < end; ++i)
          batch.push_back(&train_set[static_cast<std::size_t>(order[i])]);
        if (first_round) {
          first_round = false;
          try {
            history.rounds.push_back(run_round(batch));
          } catch (const Error& err) {
            throw TrainError(
                std::string("dataset/architecture incompatibility on the "
                            "first batch: ") +
                err.what());
          }
        } else {
          history.rounds.push_back(run_round(batch));
        }
      }
      const double val = validation_epe(val_set);
      const auto decision = scheduler_.observe(val);
      if (decision.improved) {
        best_epe_ = val;
        best_epoch_ = e;
        std::ostringstream blob;
        save_checkpoint(blob);
        best_blob_ = blob.str();
      }
      if (decision.triggered) {
        lr_flow_ *= cfg_.plateau_factor;
        lr_embedder_ *= cfg_.plateau_factor;
      }
      history.epochs.push_back(EpochLog{e, val, lr_flow_, lr_embedder_,
                                        decision.improved,
                                        decision.triggered});
    }
    history.best_epoch = best_epoch_;
    history.best_val_epe = best_epe_;
    return history;
  }

  // ---- checkpointing ----

  void save_checkpoint(std::ostream& out) const {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(out, kCheckpointVersion);
    write_train_config(out, cfg_);
    detail::write_pod(out,
                      static_cast<std::uint8_t>(embedder_.has_value() ? 1 : 0));
    extractor_.params().serialize(out);
    if (embedder_) embedder_->params().serialize(out);
    detail::write_pod(out, lr_flow_);
    detail::write_pod(out, lr_embedder_);
    detail::write_pod(out, best_epe_);
    detail::write_pod(out, static_cast<std::int32_t>(best_epoch_));
    detail::write_pod(out, scheduler_.best());
    detail::write_pod(out, static_cast<std::int32_t>(
                               scheduler_.epochs_since_improvement()));
    detail::write_pod(out, static_cast<std::int32_t>(epoch_));
    detail::write_pod(out, static_cast<std::int64_t>(round_));
    detail::write_pod(out, cfg_.seed);
    if (!out) throw IoError("checkpoint write failed");
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " +
                            path.string());
    save_checkpoint(out);
  }

  // Reconstructs the trainer with the configuration stored in the file.
  static Trainer load_checkpoint(std::istream& in) {
    return load_impl(in, nullptr);
  }

  // Resume path: uses the caller's configuration (e.g. with a raised epoch
  // budget) after verifying it matches the stored architecture and seed.
  static Trainer load_checkpoint(std::istream& in, const TrainConfig& cfg) {
    return load_impl(in, &cfg);
  }

  static Trainer load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    return load_checkpoint(in);
  }

  static Trainer load_checkpoint(const std::filesystem::path& path,
                                 const TrainConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    return load_checkpoint(in, cfg);
  }

  // Serialized state at the best validation EPE seen so far (empty until the
  // first validation pass).
  const std::string& best_checkpoint_blob() const { return best_blob_; }

  Trainer restored_best() const {
    if (best_blob_.empty()) throw TrainError("no best checkpoint retained");
    std::istringstream in(best_blob_);
    return load_checkpoint(in, cfg_);
  }

 private:
  static Trainer load_impl(std::istream& in, const TrainConfig* expected) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
      throw DataError(DataErrorCode::malformed, "not a checkpoint file");
    const auto version = detail::read_pod<std::uint32_t>(in);
    if (version != kCheckpointVersion)
      throw DataError(DataErrorCode::version_mismatch,
                      "checkpoint version " + std::to_string(version) +
                          " != supported " +
                          std::to_string(kCheckpointVersion));
    const TrainConfig stored = read_train_config(in);
    if (expected) {
      if (stored.describe_architecture() !=
          expected->describe_architecture())
        throw DataError(DataErrorCode::architecture_mismatch,
                        "checkpoint architecture '" +
                            stored.describe_architecture() +
                            "' does not match configured '" +
                            expected->describe_architecture() + "'");
      if (stored.seed != expected->seed)
        throw DataError(DataErrorCode::architecture_mismatch,
                        "checkpoint seed " + std::to_string(stored.seed) +
                            " does not match configured seed " +
                            std::to_string(expected->seed));
    }
    Trainer trainer(expected ? *expected : stored);
    const auto has_embedder = detail::read_pod<std::uint8_t>(in);
    if ((has_embedder != 0) != trainer.embedder_.has_value())
      throw DataError(DataErrorCode::architecture_mismatch,
                      "checkpoint embedder presence mismatch");
    trainer.extractor_.params().deserialize(in);
    if (trainer.embedder_) trainer.embedder_->params().deserialize(in);
    trainer.lr_flow_ = detail::read_pod<double>(in);
    trainer.lr_embedder_ = detail::read_pod<double>(in);
    trainer.best_epe_ = detail::read_pod<double>(in);
    trainer.best_epoch_ = detail::read_pod<std::int32_t>(in);
    const double sched_best = detail::read_pod<double>(in);
    const auto sched_stale = detail::read_pod<std::int32_t>(in);
    trainer.scheduler_.restore(sched_best, sched_stale);
    trainer.epoch_ = detail::read_pod<std::int32_t>(in);
    trainer.round_ = detail::read_pod<std::int64_t>(in);
    (void)detail::read_pod<std::uint64_t>(in);  // seed, kept for inspection
    return trainer;
  }

  static std::uint64_t hash_batch(const std::vector<const ScenePair*>& batch) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const double* data, Eigen::Index count) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(data);
      for (Eigen::Index i = 0;
           i < count * static_cast<Eigen::Index>(sizeof(double)); ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const ScenePair* pair : batch) {
      feed(pair->frame1.points.data(), pair->frame1.points.size());
      feed(pair->frame2.points.data(), pair->frame2.points.size());
      feed(pair->gt_flow.vectors.data(), pair->gt_flow.vectors.size());
    }
    return h;
  }

  std::uint64_t partition_seed(std::size_t pair_index) const {
    return derive_seed(cfg_.seed,
                       {rng_tag::partition,
                        static_cast<std::uint64_t>(epoch_),
                        static_cast<std::uint64_t>(round_),
                        static_cast<std::uint64_t>(pair_index)});
  }

  // Rows of the transformed cloud fed to the embedder as the negative;
  // identical in both phases of a round.
  std::vector<int> negative_rows(std::size_t pair_index, int n) const {
    Rng rng(derive_seed(cfg_.seed,
                        {rng_tag::negative,
                         static_cast<std::uint64_t>(epoch_),
                         static_cast<std::uint64_t>(round_),
                         static_cast<std::uint64_t>(pair_index)}));
    return rng.sample_indices(n, (n + 1) / 2);
  }

  static void check_finite(double value, const std::string& term, long round) {
    if (!std::isfinite(value))
      throw TrainError("non-finite " + term + " in round " +
                       std::to_string(round));
  }

  // Phase 1: extractor frozen, one optimizer step on the embedder. The
  // negative sample is the flow-transformed frame 1.
  void embedder_phase(const std::vector<const ScenePair*>& batch,
                      RoundLog& log) {
    log.batch_hash_phase_g = hash_batch(batch);
    const int levels = cfg_.embedder.level_count();
    log.r_p_mean.assign(static_cast<std::size_t>(levels), 0.0);
    log.r_n_mean.assign(static_cast<std::size_t>(levels), 0.0);

    ad::Tape tape;
    const auto evars = embedder_->bind(tape, true);
    ad::Var total;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      const ScenePair& pair = *batch[bi];
      const FlowField flow = extractor_.predict(pair.frame1, pair.frame2);
      const PointCloud ptilde = transform_cloud(pair.frame1, flow);
      const auto [anchor, positive] =
          partition_anchor_positive(pair.frame2, partition_seed(bi));
      const auto z_a = embedder_->build(tape, tape.constant(anchor.points),
                                        evars);
      const auto z_p = embedder_->build(tape, tape.constant(positive.points),
                                        evars);
      ad::Var negative = tape.constant(ptilde.points);
      if (cfg_.negative_subsample)
        negative = tape.gather_rows(negative,
                                    negative_rows(bi, ptilde.size()));
      const auto z_n = embedder_->build(tape, negative, evars);
      const auto r_p = level_distances(tape, z_a, z_p);
      const auto r_n = level_distances(tape, z_a, z_n);
      for (int l = 0; l < levels; ++l) {
        const double rp = tape.val(r_p[static_cast<std::size_t>(l)])(0, 0);
        const double rn = tape.val(r_n[static_cast<std::size_t>(l)])(0, 0);
        check_finite(rp, "r_p level " + std::to_string(l), round_);
        check_finite(rn, "r_n level " + std::to_string(l), round_);
        log.r_p_mean[static_cast<std::size_t>(l)] += rp;
        log.r_n_mean[static_cast<std::size_t>(l)] += rn;
      }
      const ad::Var lg = loss_embedder_graph(tape, r_p, r_n, cfg_.loss);
      total = total.valid() ? tape.add(total, lg) : lg;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (auto& v : log.r_p_mean) v *= inv_b;
    for (auto& v : log.r_n_mean) v *= inv_b;
    const ad::Var mean_loss = tape.scale(total, inv_b);
    log.loss_g = tape.val(mean_loss)(0, 0);
    check_finite(log.loss_g, "embedder loss (L_g)", round_);
    tape.backward(mean_loss);
    std::vector<ad::Mat> grads;
    grads.reserve(evars.size());
    for (ad::Var v : evars) grads.push_back(tape.grad(v));
    nn::adam_step(embedder_->params(), grads, lr_embedder_, cfg_.adam);

    log.embedder_hash_after_g = embedder_->params().content_hash();
    log.extractor_hash_after_g = extractor_.params().content_hash();
  }

  // Phase 2: embedder frozen, one optimizer step on the extractor, same
  // batch. The backward flow runs on (P~, frame1); gradients flow through P~
  // unless the stop-gradient ablation is on.
  void extractor_phase(const std::vector<const ScenePair*>& batch,
                       RoundLog& log) {
    log.batch_hash_phase_h = hash_batch(batch);
    const int levels = cfg_.embedder.level_count();
    std::vector<double> r_n_mean(static_cast<std::size_t>(levels), 0.0);

    ad::Tape tape;
    const auto xvars = extractor_.bind(tape, true);
    const auto evars = embedder_->bind(tape, false);
    ad::Var total;
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      const ScenePair& pair = *batch[bi];
      const ad::Var f1 = tape.constant(pair.frame1.points);
      const ad::Var f2 = tape.constant(pair.frame2.points);
      const ad::Var flow = extractor_.build(tape, f1, f2, xvars);
      const ad::Var ptilde = tape.add(f1, flow);
      const ad::Var bwd_input =
          cfg_.loss.cycle_stop_gradient ? tape.stop_gradient(ptilde) : ptilde;
      const ad::Var bflow = extractor_.build(tape, bwd_input, f1, xvars);
      const ad::Var cc = cycle_graph(tape, flow, bflow, cfg_.loss);
      check_finite(tape.val(cc)(0, 0), "cycle-consistency term", round_);

      const auto [anchor, positive] =
          partition_anchor_positive(pair.frame2, partition_seed(bi));
      const auto z_a = embedder_->build(tape, tape.constant(anchor.points),
                                        evars);
      ad::Var negative = ptilde;
      if (cfg_.negative_subsample)
        negative = tape.gather_rows(
            ptilde, negative_rows(bi, static_cast<int>(
                                          tape.val(ptilde).rows())));
      const auto z_n = embedder_->build(tape, negative, evars);
      const auto r_n = level_distances(tape, z_a, z_n);
      for (int l = 0; l < levels; ++l) {
        const double rn = tape.val(r_n[static_cast<std::size_t>(l)])(0, 0);
        check_finite(rn, "r_n level " + std::to_string(l), round_);
        r_n_mean[static_cast<std::size_t>(l)] += rn;
      }
      const ad::Var lh = loss_flow_extractor_graph(tape, r_n, cc, cfg_.loss);
      total = total.valid() ? tape.add(total, lh) : lh;
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (std::size_t l = 0; l < r_n_mean.size(); ++l)
      log.r_n_mean[l] = r_n_mean[l] * inv_b;  // extractor-phase distances
    const ad::Var mean_loss = tape.scale(total, inv_b);
    log.loss_h = tape.val(mean_loss)(0, 0);
    check_finite(log.loss_h, "flow-extractor loss (L_h)", round_);
    tape.backward(mean_loss);
    std::vector<ad::Mat> grads;
    grads.reserve(xvars.size());
    for (ad::Var v : xvars) grads.push_back(tape.grad(v));
    nn::adam_step(extractor_.params(), grads, lr_flow_, cfg_.adam);

    log.embedder_hash_after_h = embedder_->params().content_hash();
    log.extractor_hash_after_h = extractor_.params().content_hash();
  }

  // Baseline objective: chamfer(P~, frame2) + lambda * cycle; no embedder.
  void chamfer_phase(const std::vector<const ScenePair*>& batch,
                     RoundLog& log) {
    log.batch_hash_phase_h = hash_batch(batch);
    ad::Tape tape;
    const auto xvars = extractor_.bind(tape, true);
    ad::Var total;
    for (const ScenePair* pair : batch) {
      const ad::Var f1 = tape.constant(pair->frame1.points);
      const ad::Var f2 = tape.constant(pair->frame2.points);
      const ad::Var flow = extractor_.build(tape, f1, f2, xvars);
      const ad::Var ptilde = tape.add(f1, flow);
      const ad::Var bwd_input =
          cfg_.loss.cycle_stop_gradient ? tape.stop_gradient(ptilde) : ptilde;
      const ad::Var bflow = extractor_.build(tape, bwd_input, f1, xvars);
      const ad::Var cc = cycle_graph(tape, flow, bflow, cfg_.loss);
      check_finite(tape.val(cc)(0, 0), "cycle-consistency term", round_);
      const ad::Var cham = chamfer_graph(tape, ptilde, f2);
      check_finite(tape.val(cham)(0, 0), "chamfer term", round_);
      const ad::Var lh =
          tape.add(cham, tape.scale(cc, cfg_.loss.lambda_cc));
      total = total.valid() ? tape.add(total, lh) : lh;
    }
    const ad::Var mean_loss =
        tape.scale(total, 1.0 / static_cast<double>(batch.size()));
    log.loss_h = tape.val(mean_loss)(0, 0);
    check_finite(log.loss_h, "chamfer+cycle loss", round_);
    tape.backward(mean_loss);
    std::vector<ad::Mat> grads;
    grads.reserve(xvars.size());
    for (ad::Var v : xvars) grads.push_back(tape.grad(v));
    nn::adam_step(extractor_.params(), grads, lr_flow_, cfg_.adam);
    log.extractor_hash_after_h = extractor_.params().content_hash();
  }

  TrainConfig cfg_;
  ReferenceFlowExtractor extractor_;
  std::optional<CloudEmbedder> embedder_;
  PlateauScheduler scheduler_;
  double lr_flow_;
  double lr_embedder_;
  int epoch_ = 0;
  long round_ = 0;
  double best_epe_ = std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  std::string best_blob_;
};

// Fixed-size training clouds drawn from stored samples. Frame 1 and its flow
// always share indices; under correspondence frame 2 uses the same indices so
// the mechanism's row alignment survives, under re-sampling frame 2 is drawn
// independently.
inline ScenePair subsample_pair(const ScenePair& pair, int cloud_size,
                                std::uint64_t seed) {
  if (pair.frame1.size() < cloud_size || pair.frame2.size() < cloud_size)
    throw DataError(DataErrorCode::malformed,
                    "stored sample has fewer than " +
                        std::to_string(cloud_size) + " points");
  Rng rng1(derive_seed(seed, {rng_tag::subsample, 1}));
  const auto idx1 = rng1.sample_indices(pair.frame1.size(), cloud_size);
  ScenePair out;
  out.meta = pair.meta;
  out.frame1.points.resize(cloud_size, 3);
  out.gt_flow.vectors.resize(cloud_size, 3);
  for (int i = 0; i < cloud_size; ++i) {
    out.frame1.points.row(i) =
        pair.frame1.points.row(idx1[static_cast<std::size_t>(i)]);
    out.gt_flow.vectors.row(i) =
        pair.gt_flow.vectors.row(idx1[static_cast<std::size_t>(i)]);
  }
  out.frame2.points.resize(cloud_size, 3);
  if (pair.meta.mechanism == Mechanism::correspondence &&
      pair.frame2.size() == pair.frame1.size()) {
    for (int i = 0; i < cloud_size; ++i)
      out.frame2.points.row(i) =
          pair.frame2.points.row(idx1[static_cast<std::size_t>(i)]);
  } else {
    Rng rng2(derive_seed(seed, {rng_tag::subsample, 2}));
    const auto idx2 = rng2.sample_indices(pair.frame2.size(), cloud_size);
    for (int i = 0; i < cloud_size; ++i)
      out.frame2.points.row(i) =
          pair.frame2.points.row(idx2[static_cast<std::size_t>(i)]);
  }
  return out;
}

inline std::vector<ScenePair> subsample_dataset(
    const std::vector<ScenePair>& pairs, int cloud_size, std::uint64_t seed) {
  std::vector<ScenePair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    out.push_back(subsample_pair(
        pairs[i], cloud_size,
        derive_seed(seed, {rng_tag::subsample, i})));
  return out;
}

}  // namespace sfs
