#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sfs/eval/evaluate.hpp"
#include "sfs/eval/report.hpp"
#include "sfs/train/trainer.hpp"

namespace sfs {

struct ExperimentDataset {
  std::vector<ScenePair> train;
  std::vector<ScenePair> val;
  std::vector<ScenePair> test;
};

// Deterministic split: leading samples train, then validation, trailing
// fraction test.
inline ExperimentDataset split_dataset(const std::vector<ScenePair>& pairs,
                                       double val_fraction = 0.1,
                                       double test_fraction = 0.2) {
  if (!(val_fraction >= 0.0) || !(test_fraction >= 0.0) ||
      val_fraction + test_fraction >= 1.0)
    throw ConfigError("split_dataset: fractions must be nonnegative and sum "
                      "below 1");
  ExperimentDataset out;
  const auto n = pairs.size();
  const auto n_test = static_cast<std::size_t>(test_fraction * n);
  const auto n_val = static_cast<std::size_t>(val_fraction * n);
  const auto n_train = n - n_test - n_val;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train) out.train.push_back(pairs[i]);
    else if (i < n_train + n_val) out.val.push_back(pairs[i]);
    else out.test.push_back(pairs[i]);
  }
  return out;
}

struct AblationRow {
  std::string label;
  TrainConfig config;
  std::string config_dump;
  TrainHistory history;
  EvalResult result;
  bool failed = false;
  std::string error;
};

namespace detail {

inline void run_rows(std::vector<AblationRow>& rows,
                     const ExperimentDataset& data, int max_parallel) {
  auto run_one = [&data](AblationRow& row) {
    try {
      Trainer trainer(row.config);
      row.history = trainer.train(data.train, data.val);
      Trainer best = trainer.restored_best();
      row.result = evaluate(best.extractor(), data.test);
    } catch (const Error& e) {
      row.failed = true;
      row.error = e.what();
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
  };
  if (max_parallel <= 1) {
    for (auto& row : rows) run_one(row);
    return;
  }
  std::vector<std::thread> workers;
  std::size_t next = 0;
  std::mutex mutex;
  for (int w = 0; w < max_parallel; ++w) {
    workers.emplace_back([&rows, &next, &mutex, &run_one] {
      for (;;) {
        std::size_t mine;
        {
          std::lock_guard<std::mutex> lock(mutex);
          if (next >= rows.size()) return;
          mine = next++;
        }
        run_one(rows[mine]);
      }
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace detail

// One training+evaluation run per cycle-term subset; everything else,
// including every seed, held identical across rows.
inline std::vector<AblationRow> run_cycle_ablation(
    const ExperimentDataset& data, const TrainConfig& base,
    int max_parallel = 1) {
  const std::vector<std::pair<std::string, CycleTerms>> variants = {
      {"none", {false, false, false}},
      {"cosine", {true, false, false}},
      {"mse", {false, true, false}},
      {"l2", {false, false, true}},
      {"cosine+mse", {true, true, false}},
      {"cosine+l2", {true, false, true}},
  };
  std::vector<AblationRow> rows;
  for (const auto& [label, terms] : variants) {
    AblationRow row;
    row.label = label;
    row.config = base;
    row.config.loss.cycle_terms = terms;
    row.config_dump = row.config.dump();
    rows.push_back(std::move(row));
  }
  detail::run_rows(rows, data, max_parallel);
  return rows;
}

// One run per depth-weighting factor.
inline std::vector<AblationRow> run_multiscale_ablation(
    const ExperimentDataset& data, const TrainConfig& base,
    int max_parallel = 1) {
  const MultiscaleFactor factors[] = {
      MultiscaleFactor::none, MultiscaleFactor::inv_sqrt,
      MultiscaleFactor::inv_linear, MultiscaleFactor::inv_square};
  std::vector<AblationRow> rows;
  for (MultiscaleFactor f : factors) {
    AblationRow row;
    row.label = to_string(f);
    row.config = base;
    row.config.loss.factor = f;
    row.config_dump = row.config.dump();
    rows.push_back(std::move(row));
  }
  detail::run_rows(rows, data, max_parallel);
  return rows;
}

// 2x2 mechanism study: one model per training mechanism, each evaluated on
// both test mechanisms. Index 0 = correspondence, 1 = resampling.
struct MechanismMatrix {
  std::array<std::array<double, 2>, 2> epe{};  // [train][test], seed means
  std::array<std::array<std::vector<double>, 2>, 2> per_seed_epe;
  std::array<std::array<EvalResult, 2>, 2> last_seed_details;
  // Qualitative sample per cell, from the last seed's model.
  std::array<std::array<ScenePair, 2>, 2> example_pair;
  std::array<std::array<FlowField, 2>, 2> example_pred;
  std::vector<std::uint64_t> seeds;
};

inline void check_matched_scene_seeds(const std::vector<ScenePair>& corr,
                                      const std::vector<ScenePair>& resamp) {
  if (corr.size() != resamp.size())
    throw ConfigError("mechanism matrix: datasets differ in sample count");
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (corr[i].meta.seed != resamp[i].meta.seed)
      throw ConfigError("mechanism matrix: sample " + std::to_string(i) +
                        " scene seeds differ (" +
                        std::to_string(corr[i].meta.seed) + " vs " +
                        std::to_string(resamp[i].meta.seed) +
                        "); the two datasets must share scene seeds");
    if (corr[i].meta.mechanism != Mechanism::correspondence ||
        resamp[i].meta.mechanism != Mechanism::resampling)
      throw ConfigError("mechanism matrix: datasets must be one "
                        "correspondence and one re-sampling");
  }
}

inline MechanismMatrix run_mechanism_matrix(
    const std::vector<ScenePair>& corr_pairs,
    const std::vector<ScenePair>& resamp_pairs, const TrainConfig& base,
    const std::vector<std::uint64_t>& seeds, int max_parallel = 1) {
  if (seeds.empty())
    throw ConfigError("mechanism matrix: need at least one seed");
  check_matched_scene_seeds(corr_pairs, resamp_pairs);

  const ExperimentDataset data_c = split_dataset(corr_pairs);
  const ExperimentDataset data_r = split_dataset(resamp_pairs);
  const ExperimentDataset* splits[2] = {&data_c, &data_r};

  MechanismMatrix matrix;
  matrix.seeds = seeds;

  struct Job {
    int train_mech;
    std::uint64_t seed;
    std::array<EvalResult, 2> results;
    std::array<FlowField, 2> example_preds;
    bool failed = false;
    std::string error;
  };
  std::vector<Job> jobs;
  for (std::uint64_t seed : seeds)
    for (int mech = 0; mech < 2; ++mech)
      jobs.push_back(Job{mech, seed, {}, {}, false, ""});

  auto run_job = [&](Job& job) {
    try {
      TrainConfig cfg = base;
      cfg.seed = job.seed;
      Trainer trainer(cfg);
      trainer.train(splits[job.train_mech]->train,
                    splits[job.train_mech]->val);
      Trainer best = trainer.restored_best();
      for (int test_mech = 0; test_mech < 2; ++test_mech) {
        const auto& test_set = splits[test_mech]->test;
        job.results[static_cast<std::size_t>(test_mech)] =
            evaluate(best.extractor(), test_set);
        if (!test_set.empty())
          job.example_preds[static_cast<std::size_t>(test_mech)] =
              best.extractor().predict(test_set.front().frame1,
                                       test_set.front().frame2);
      }
    } catch (const std::exception& e) {
      job.failed = true;
      job.error = e.what();
    }
  };

  if (max_parallel <= 1) {
    for (auto& job : jobs) run_job(job);
  } else {
    std::vector<std::thread> workers;
    std::size_t next = 0;
    std::mutex mutex;
    for (int w = 0; w < max_parallel; ++w)
      workers.emplace_back([&jobs, &next, &mutex, &run_job] {
        for (;;) {
          std::size_t mine;
          {
            std::lock_guard<std::mutex> lock(mutex);
            if (next >= jobs.size()) return;
            mine = next++;
          }
          run_job(jobs[mine]);
        }
      });
    for (auto& t : workers) t.join();
  }

  for (const auto& job : jobs)
    if (job.failed)
      throw TrainError("mechanism matrix cell (train mech " +
                       std::to_string(job.train_mech) + ", seed " +
                       std::to_string(job.seed) + ") failed: " + job.error);

  for (const auto& job : jobs) {
    for (int test_mech = 0; test_mech < 2; ++test_mech) {
      const auto tm = static_cast<std::size_t>(job.train_mech);
      const auto te = static_cast<std::size_t>(test_mech);
      matrix.per_seed_epe[tm][te].push_back(job.results[te].aggregate.epe);
      matrix.last_seed_details[tm][te] = job.results[te];
      matrix.example_pair[tm][te] = splits[test_mech]->test.empty()
                                        ? ScenePair{}
                                        : splits[test_mech]->test.front();
      matrix.example_pred[tm][te] = job.example_preds[te];
    }
  }
  for (int tm = 0; tm < 2; ++tm)
    for (int te = 0; te < 2; ++te) {
      double sum = 0.0;
      for (double v : matrix.per_seed_epe[tm][te]) sum += v;
      matrix.epe[tm][te] =
          sum / static_cast<double>(matrix.per_seed_epe[tm][te].size());
    }
  return matrix;
}

// ---- report emission ----

inline const char* mechanism_letter(int mech) { return mech == 0 ? "C" : "R"; }

inline void emit_ablation_report(const std::filesystem::path& dir,
                                 const std::vector<AblationRow>& rows,
                                 const std::vector<std::string>& annotations) {
  std::filesystem::create_directories(dir);
  std::vector<ResultRow> table;
  for (const auto& row : rows) {
    if (row.failed) {
      std::ofstream fail(dir / (row.label + ".failed.txt"));
      fail << row.error << "\n";
      continue;
    }
    table.push_back(ResultRow{row.label, row.result.aggregate});
  }
  write_results_table(dir / "results.tsv", table, annotations);
  for (const auto& row : rows) {
    std::ofstream cfg(dir / (row.label + ".config.txt"));
    cfg << row.config_dump;
    if (!row.failed) {
      write_train_log(dir / (row.label + ".train_log.txt"), row.history);
      emit_training_curves(dir / row.label, row.history);
    }
  }
}

inline void emit_mechanism_report(const std::filesystem::path& dir,
                                  const MechanismMatrix& matrix,
                                  const std::vector<std::string>& annotations) {
  std::filesystem::create_directories(dir);
  std::vector<ResultRow> table;
  for (int tm = 0; tm < 2; ++tm)
    for (int te = 0; te < 2; ++te) {
      ResultRow row;
      row.label = std::string(mechanism_letter(tm)) + "->" +
                  mechanism_letter(te);
      row.metrics = matrix.last_seed_details[static_cast<std::size_t>(tm)]
                                            [static_cast<std::size_t>(te)]
                                                .aggregate;
      row.metrics.epe = matrix.epe[static_cast<std::size_t>(tm)]
                                  [static_cast<std::size_t>(te)];
      table.push_back(std::move(row));
    }
  write_results_table(dir / "mechmatrix.tsv", table, annotations);
  for (int tm = 0; tm < 2; ++tm)
    for (int te = 0; te < 2; ++te) {
      const auto& pair = matrix.example_pair[static_cast<std::size_t>(tm)]
                                            [static_cast<std::size_t>(te)];
      const auto& pred = matrix.example_pred[static_cast<std::size_t>(tm)]
                                            [static_cast<std::size_t>(te)];
      if (pair.frame1.size() == 0 || pred.size() != pair.frame1.size())
        continue;
      const std::string name = std::string("scatter_") +
                               mechanism_letter(tm) + "_to_" +
                               mechanism_letter(te) + ".svg";
      write_flow_scatter_svg(dir / name, pair, pred);
    }
}

}  // namespace sfs
