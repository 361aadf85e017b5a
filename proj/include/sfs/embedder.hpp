#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "sfs/ad/tape.hpp"
#include "sfs/errors.hpp"
#include "sfs/geom.hpp"
#include "sfs/nn/params.hpp"
#include "sfs/point_cloud.hpp"
#include "sfs/pyramid.hpp"
#include "sfs/rng.hpp"

namespace sfs {

struct EmbedderStage {
  int centroids = 0;
  double radius = 0.0;
  std::vector<int> widths;
};

// Set-abstraction pyramid: each stage subsamples centroids by farthest-point
// sampling, groups ball neighborhoods, applies a shared per-point MLP and
// mean-pools per group; the stage output is also globally mean-pooled into a
// pyramid level. A fully connected head maps the deepest pooled vector to the
// final embedding.
struct EmbedderConfig {
  std::vector<EmbedderStage> stages{
      {48, 0.5, {32, 32}},
      {16, 1.0, {64, 64}},
      {6, 2.0, {64, 64}},
  };
  std::vector<int> head_widths{128, 128, 256};

  void validate() const {
    if (stages.empty()) throw ConfigError("embedder: need at least one stage");
    int prev = 1 << 30;
    for (const auto& s : stages) {
      if (s.centroids < 1 || s.centroids > prev)
        throw ConfigError("embedder: stage centroid counts must be positive "
                          "and non-increasing");
      if (!(s.radius > 0.0)) throw ConfigError("embedder: radius must be > 0");
      if (s.widths.empty()) throw ConfigError("embedder: stage needs widths");
      for (int w : s.widths)
        if (w < 1) throw ConfigError("embedder: widths must be positive");
      prev = s.centroids;
    }
    if (head_widths.empty()) throw ConfigError("embedder: head needs widths");
    for (int w : head_widths)
      if (w < 1) throw ConfigError("embedder: head widths must be positive");
  }

  int min_points() const { return stages.front().centroids; }
  int level_count() const { return static_cast<int>(stages.size()) + 1; }
  int final_dim() const { return head_widths.back(); }

  std::string describe() const {
    std::ostringstream os;
    os << "embedder(";
    for (const auto& s : stages) {
      os << "[c" << s.centroids << " r" << s.radius;
      for (int w : s.widths) os << " " << w;
      os << "]";
    }
    os << " head";
    for (int w : head_widths) os << " " << w;
    os << ")";
    return os.str();
  }

  // Matches the reference recipe: three stages, 4096-dim final vector.
  static EmbedderConfig paper_scale() {
    EmbedderConfig cfg;
    cfg.stages = {{512, 0.5, {64, 64, 128}},
                  {128, 1.0, {128, 128, 256}},
                  {32, 2.0, {256, 256, 512}}};
    cfg.head_widths = {1024, 2048, 4096};
    return cfg;
  }

  // Small enough for finite-difference sweeps over every coordinate.
  static EmbedderConfig tiny() {
    EmbedderConfig cfg;
    cfg.stages = {{8, 0.7, {6}}, {4, 1.4, {8}}, {2, 2.8, {8}}};
    cfg.head_widths = {8, 8};
    return cfg;
  }
};

class CloudEmbedder {
 public:
  CloudEmbedder(EmbedderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(seed, {rng_tag::params, 1}));
    // Stage 1 consumes [relative offset, absolute position]; later stages
    // consume [relative offset, previous features]. Absolute positions make
    // the embedding translation sensitive, which the latent distance needs.
    int in_dim = 3 + 3;
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      const auto& stage = cfg_.stages[s];
      std::vector<nn::LinearIdx> layers;
      int d = in_dim;
      for (std::size_t li = 0; li < stage.widths.size(); ++li) {
        layers.push_back(nn::add_linear(
            params_, "stage" + std::to_string(s) + ".l" + std::to_string(li),
            d, stage.widths[li], rng));
        d = stage.widths[li];
      }
      stage_layers_.push_back(std::move(layers));
      in_dim = d + 3;  // next stage sees features + relative coordinates
    }
    int d = cfg_.stages.back().widths.back();
    for (std::size_t li = 0; li < cfg_.head_widths.size(); ++li) {
      head_layers_.push_back(nn::add_linear(
          params_, "head.l" + std::to_string(li), d, cfg_.head_widths[li],
          rng));
      d = cfg_.head_widths[li];
    }
  }

  const EmbedderConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  std::vector<ad::Var> bind(ad::Tape& tape, bool trainable) const {
    return params_.bind(tape, trainable);
  }

  // Builds the embedding graph for one cloud; returns pyramid level vars
  // ordered deep to shallow ([0] = head output). Gradients flow to the
  // parameters and to the cloud coordinates.
  std::vector<ad::Var> build(ad::Tape& tape, ad::Var cloud,
                             const std::vector<ad::Var>& params) const {
    const ad::Mat& pts0 = tape.val(cloud);
    if (pts0.cols() != 3)
      throw ContractViolation("embed: cloud must be N x 3");
    if (pts0.rows() < cfg_.min_points())
      throw ContractViolation("embed: cloud of " +
                              std::to_string(pts0.rows()) +
                              " points below the subsampling minimum of " +
                              std::to_string(cfg_.min_points()));

    std::vector<ad::Var> shallow_to_deep;
    ad::Var cur_pts = cloud;
    ad::Var cur_feat = cloud;  // stage-1 features are the positions
    for (std::size_t s = 0; s < cfg_.stages.size(); ++s) {
      const auto& stage = cfg_.stages[s];
      const PointMatrix pts = tape.val(cur_pts);
      const std::vector<int> centers =
          geom::farthest_point_indices(pts, stage.centroids);
      geom::Groups groups = geom::radius_groups(pts, centers, stage.radius);

      ad::Var center_xyz = tape.gather_rows(cur_pts, centers);
      ad::Var member_xyz = tape.gather_rows(cur_pts, groups.flat);
      ad::Var rel =
          tape.sub(member_xyz, tape.expand_rows(center_xyz, groups.offsets));
      ad::Var rows =
          tape.concat_cols({rel, tape.gather_rows(cur_feat, groups.flat)});
      for (const auto& layer : stage_layers_[s])
        rows = tape.relu(nn::apply_linear(tape, params, layer, rows));
      ad::Var feat = tape.pool_mean(rows, groups.offsets);
      shallow_to_deep.push_back(tape.mean_rows(feat));
      cur_pts = center_xyz;
      cur_feat = feat;
    }

    ad::Var head = shallow_to_deep.back();
    for (std::size_t li = 0; li < head_layers_.size(); ++li) {
      head = nn::apply_linear(tape, params, head_layers_[li], head);
      if (li + 1 < head_layers_.size()) head = tape.relu(head);
    }

    std::vector<ad::Var> levels;
    levels.push_back(head);
    for (auto it = shallow_to_deep.rbegin(); it != shallow_to_deep.rend(); ++it)
      levels.push_back(*it);
    return levels;
  }

  EmbeddingPyramid embed(const PointCloud& cloud) const {
    cloud.validate();
    ad::Tape tape;
    const std::vector<ad::Var> params = bind(tape, false);
    const ad::Var input = tape.constant(cloud.points);
    const std::vector<ad::Var> levels = build(tape, input, params);
    EmbeddingPyramid pyramid;
    for (ad::Var v : levels)
      pyramid.levels.push_back(tape.val(v).row(0).transpose());
    return pyramid;
  }

 private:
  EmbedderConfig cfg_;
  nn::ParamStore params_;
  std::vector<std::vector<nn::LinearIdx>> stage_layers_;
  std::vector<nn::LinearIdx> head_layers_;
};

}  // namespace sfs
