#pragma once

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "sfs/ad/tape.hpp"
#include "sfs/errors.hpp"
#include "sfs/geom.hpp"
#include "sfs/nn/params.hpp"
#include "sfs/point_cloud.hpp"
#include "sfs/rng.hpp"

namespace sfs {

// Anything that can predict a flow field for frame 1 given both frames.
class FlowModel {
 public:
  virtual ~FlowModel() = default;
  virtual FlowField predict(const PointCloud& frame1,
                            const PointCloud& frame2) const = 0;
  virtual std::string describe() const = 0;
};

struct FlowExtractorConfig {
  int k_local = 8;                       // own-cloud neighborhood size
  std::vector<int> local_widths{24, 24};
  int k_corr = 12;                       // cross-cloud neighborhood size
  std::vector<int> corr_widths{48};
  std::vector<int> refine_widths{32, 32};

  void validate() const {
    if (k_local < 1 || k_corr < 1)
      throw ConfigError("extractor: neighborhood sizes must be >= 1");
    for (const auto* widths : {&local_widths, &corr_widths, &refine_widths}) {
      if (widths->empty()) throw ConfigError("extractor: empty width list");
      for (int w : *widths)
        if (w < 1) throw ConfigError("extractor: widths must be positive");
    }
  }

  int min_frame1() const { return k_local; }
  int min_frame2() const { return std::max(k_local, k_corr); }

  std::string describe() const {
    std::ostringstream os;
    os << "reference_extractor(kl" << k_local;
    for (int w : local_widths) os << " " << w;
    os << " kc" << k_corr;
    for (int w : corr_widths) os << " " << w;
    os << " refine";
    for (int w : refine_widths) os << " " << w;
    os << ")";
    return os.str();
  }

  static FlowExtractorConfig tiny() {
    FlowExtractorConfig cfg;
    cfg.k_local = 4;
    cfg.local_widths = {6};
    cfg.k_corr = 4;
    cfg.corr_widths = {8};
    cfg.refine_widths = {8};
    return cfg;
  }
};

// Lightweight learned extractor: a shared per-point local encoder on each
// cloud, one cross-cloud correlation layer aggregating the k nearest frame-2
// points with relative offsets and features, per-point refinement, and a
// zero-initialized 3-vector head (initial prediction is exactly zero flow).
// Only relative coordinates enter the network, so shifting both clouds by the
// same offset leaves the prediction unchanged.
class ReferenceFlowExtractor : public FlowModel {
 public:
  ReferenceFlowExtractor(FlowExtractorConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {rng_tag::params, 2}));
    int d = 3;
    for (std::size_t li = 0; li < cfg_.local_widths.size(); ++li) {
      local_layers_.push_back(nn::add_linear(
          params_, "local.l" + std::to_string(li), d, cfg_.local_widths[li],
          rng));
      d = cfg_.local_widths[li];
    }
    const int local_dim = d;
    d = 3 + 2 * local_dim;
    for (std::size_t li = 0; li < cfg_.corr_widths.size(); ++li) {
      corr_layers_.push_back(nn::add_linear(
          params_, "corr.l" + std::to_string(li), d, cfg_.corr_widths[li],
          rng));
      d = cfg_.corr_widths[li];
    }
    d = d + local_dim;
    for (std::size_t li = 0; li < cfg_.refine_widths.size(); ++li) {
      refine_layers_.push_back(nn::add_linear(
          params_, "refine.l" + std::to_string(li), d, cfg_.refine_widths[li],
          rng));
      d = cfg_.refine_widths[li];
    }
    head_ = nn::add_linear(params_, "head", d, 3, rng, /*zero_init=*/true);
  }

  const FlowExtractorConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const {
    return params_.bind(tape, trainable);
  }

  // Flow graph for (frame1, frame2); output is N x 3 bound to frame1 rows.
  // Differentiable with respect to the parameters and both input clouds.
  ad::Var build(ad::Tape& tape, ad::Var frame1, ad::Var frame2,
                const std::vector<ad::Var>& params) const {
    const ad::Mat& p1 = tape.val(frame1);
    const ad::Mat& p2 = tape.val(frame2);
    if (p1.cols() != 3 || p2.cols() != 3)
      throw ContractViolation("predict_flow: clouds must be N x 3");
    if (p1.rows() < cfg_.min_frame1())
      throw ContractViolation(
          "predict_flow: frame1 has " + std::to_string(p1.rows()) +
          " points, architecture minimum is " +
          std::to_string(cfg_.min_frame1()));
    if (p2.rows() < cfg_.min_frame2())
      throw ContractViolation(
          "predict_flow: frame2 has " + std::to_string(p2.rows()) +
          " points, architecture minimum is " +
          std::to_string(cfg_.min_frame2()));

    const ad::Var feat1 = encode_local(tape, frame1, params);
    const ad::Var feat2 = encode_local(tape, frame2, params);

    const int n = static_cast<int>(p1.rows());
    const std::vector<int> corr_idx = geom::knn_indices(p1, p2, cfg_.k_corr);
    const std::vector<int> offsets = geom::uniform_offsets(n, cfg_.k_corr);
    ad::Var rel = tape.sub(tape.gather_rows(frame2, corr_idx),
                           tape.expand_rows(frame1, offsets));
    ad::Var rows = tape.concat_cols({rel, tape.expand_rows(feat1, offsets),
                                     tape.gather_rows(feat2, corr_idx)});
    for (const auto& layer : corr_layers_)
      rows = tape.relu(nn::apply_linear(tape, params, layer, rows));
    ad::Var corr = tape.pool_mean(rows, offsets);

    ad::Var refined = tape.concat_cols({corr, feat1});
    for (const auto& layer : refine_layers_)
      refined = tape.relu(nn::apply_linear(tape, params, layer, refined));
    return nn::apply_linear(tape, params, head_, refined);
  }

  FlowField predict(const PointCloud& frame1,
                    const PointCloud& frame2) const override {
    frame1.validate();
    frame2.validate();
    ad::Tape tape;
    const std::vector<ad::Var> params = bind(tape, false);
    const ad::Var f1 = tape.constant(frame1.points);
    const ad::Var f2 = tape.constant(frame2.points);
    const ad::Var flow = build(tape, f1, f2, params);
    return FlowField{tape.val(flow)};
  }

  std::string describe() const override { return cfg_.describe(); }

 private:
  ad::Var encode_local(ad::Tape& tape, ad::Var cloud,
                       const std::vector<ad::Var>& params) const {
    const ad::Mat& pts = tape.val(cloud);
    const int n = static_cast<int>(pts.rows());
    const std::vector<int> idx = geom::knn_indices(pts, pts, cfg_.k_local);
    const std::vector<int> offsets = geom::uniform_offsets(n, cfg_.k_local);
    ad::Var rel = tape.sub(tape.gather_rows(cloud, idx),
                           tape.expand_rows(cloud, offsets));
    ad::Var rows = rel;
    for (const auto& layer : local_layers_)
      rows = tape.relu(nn::apply_linear(tape, params, layer, rows));
    return tape.pool_mean(rows, offsets);
  }

  FlowExtractorConfig cfg_;
  nn::ParamStore params_;
  std::vector<nn::LinearIdx> local_layers_;
  std::vector<nn::LinearIdx> corr_layers_;
  std::vector<nn::LinearIdx> refine_layers_;
  nn::LinearIdx head_;
};

}  // namespace sfs
