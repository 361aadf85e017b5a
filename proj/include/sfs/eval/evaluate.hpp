#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sfs/flow/extractor.hpp"
#include "sfs/metrics.hpp"
#include "sfs/point_cloud.hpp"

namespace sfs {

using FlowPredictor = std::function<FlowField(const ScenePair&)>;

struct SampleEvaluation {
  int index = 0;
  MetricReport report;
  bool skipped = false;
  std::string error;
};

struct EvalResult {
  MetricReport aggregate;  // means over evaluated samples
  std::vector<SampleEvaluation> samples;
  int skipped = 0;
  int evaluated = 0;
};

// Per-sample metrics plus dataset means. Samples the model cannot handle
// (e.g. clouds below the architecture minimum) are recorded and skipped.
inline EvalResult evaluate(const FlowPredictor& predictor,
                           const std::vector<ScenePair>& dataset) {
  EvalResult result;
  double epe_sum = 0.0, acc01_sum = 0.0, acc005_sum = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    SampleEvaluation sample;
    sample.index = static_cast<int>(i);
    try {
      const FlowField pred = predictor(dataset[i]);
      sample.report = flow_metrics(pred, dataset[i].gt_flow);
      epe_sum += sample.report.epe;
      acc01_sum += sample.report.acc01;
      acc005_sum += sample.report.acc005;
      result.aggregate.n_points += sample.report.n_points;
      ++result.evaluated;
    } catch (const Error& e) {
      sample.skipped = true;
      sample.error = e.what();
      ++result.skipped;
    }
    result.samples.push_back(std::move(sample));
  }
  if (result.evaluated > 0) {
    result.aggregate.epe = epe_sum / result.evaluated;
    result.aggregate.acc01 = acc01_sum / result.evaluated;
    result.aggregate.acc005 = acc005_sum / result.evaluated;
  }
  return result;
}

inline EvalResult evaluate(const FlowModel& model,
                           const std::vector<ScenePair>& dataset) {
  return evaluate(
      [&model](const ScenePair& pair) {
        return model.predict(pair.frame1, pair.frame2);
      },
      dataset);
}

}  // namespace sfs
