// Command-line front end: sandbox generation, training, evaluation, the
// ablation and mechanism studies, and report emission.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sfs/eval/evaluate.hpp"
#include "sfs/eval/experiments.hpp"
#include "sfs/eval/report.hpp"
#include "sfs/flow/baselines.hpp"
#include "sfs/sandbox/dataset_io.hpp"
#include "sfs/sandbox/scene.hpp"
#include "sfs/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace sfs;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  std::string out;
  bool deterministic = false;
};

struct GenerateOpts {
  int samples = 100;
  int points = 256;
  int objects = 1;
  std::string mechanism = "correspondence";
  std::string shape = "sphere";
  double max_rotation = 30.0 * std::numbers::pi / 180.0;
  double max_translation = 0.5;
  double workspace = 4.0;
};

struct TrainOpts {
  std::string data;
  std::string val_data;
  double val_fraction = 0.1;
  std::string resume;
  std::string objective = "adversarial";
  std::string arch = "desk";
  int epochs = 10;
  int batch_size = 4;
  int cloud_size = 256;
  double lr_flow = 5e-4;
  double lr_embedder = 5e-5;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-4;
  int plateau_patience = 20;
  double plateau_factor = 0.75;
  double margin = 1.0;
  std::string multiscale_factor = "inv_sqrt";
  std::string cycle_terms = "cosine+l2";
  double lambda_cc = 1.0;
  double cycle_epsilon = 1e-8;
  std::string cycle_reduce = "mean";
  bool cycle_stop_gradient = false;
  int embedder_phases = 1;
  int extractor_phases = 1;
};

void add_train_options(CLI::App* cmd, TrainOpts& o, bool with_data) {
  if (with_data)
    cmd->add_option("--data", o.data, "training dataset directory")
        ->required();
  cmd->add_option("--val", o.val_data,
                  "validation dataset directory (default: split from --data)");
  cmd->add_option("--val-fraction", o.val_fraction,
                  "validation fraction when no --val is given");
  cmd->add_option("--objective", o.objective, "adversarial|chamfer_cycle");
  cmd->add_option("--arch", o.arch, "architecture preset: desk|tiny|paper");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch-size", o.batch_size, "pairs per round");
  cmd->add_option("--cloud-size", o.cloud_size,
                  "points per training cloud (subsampled from storage)");
  cmd->add_option("--lr-flow", o.lr_flow, "flow extractor learning rate");
  cmd->add_option("--lr-embedder", o.lr_embedder,
                  "cloud embedder learning rate");
  cmd->add_option("--adam-beta1", o.adam_beta1, "first-moment decay");
  cmd->add_option("--adam-beta2", o.adam_beta2, "second-moment decay");
  cmd->add_option("--adam-eps", o.adam_eps, "optimizer epsilon");
  cmd->add_option("--weight-decay", o.weight_decay, "coupled weight decay");
  cmd->add_option("--plateau-patience", o.plateau_patience,
                  "epochs without improvement before decaying rates");
  cmd->add_option("--plateau-factor", o.plateau_factor,
                  "learning-rate multiplier on plateau");
  cmd->add_option("--margin", o.margin, "triplet margin");
  cmd->add_option("--multiscale-factor", o.multiscale_factor,
                  "none|inv_sqrt|inv_linear|inv_square");
  cmd->add_option("--cycle-terms", o.cycle_terms,
                  "subset of cosine,mse,l2 (or none)");
  cmd->add_option("--lambda-cc", o.lambda_cc, "cycle-consistency weight");
  cmd->add_option("--cycle-epsilon", o.cycle_epsilon,
                  "norm guard for the cosine term");
  cmd->add_option("--cycle-reduce", o.cycle_reduce,
                  "mean|sum over points in the cycle loss");
  cmd->add_flag("--cycle-stop-gradient", o.cycle_stop_gradient,
                "stop gradients through the transformed cloud in the "
                "backward pass");
  cmd->add_option("--embedder-phases", o.embedder_phases,
                  "embedder optimizer steps per round");
  cmd->add_option("--extractor-phases", o.extractor_phases,
                  "extractor optimizer steps per round");
}

TrainConfig build_train_config(const TrainOpts& o, std::uint64_t seed) {
  TrainConfig cfg;
  if (o.arch == "desk") {
    // defaults as constructed
  } else if (o.arch == "tiny") {
    cfg.embedder = EmbedderConfig::tiny();
    cfg.extractor = FlowExtractorConfig::tiny();
  } else if (o.arch == "paper") {
    cfg.embedder = EmbedderConfig::paper_scale();
  } else {
    throw ConfigError("unknown arch preset '" + o.arch +
                      "' (expected desk|tiny|paper)");
  }
  cfg.objective = objective_from_string(o.objective);
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.cloud_size = o.cloud_size;
  cfg.lr_flow = o.lr_flow;
  cfg.lr_embedder = o.lr_embedder;
  cfg.adam.beta1 = o.adam_beta1;
  cfg.adam.beta2 = o.adam_beta2;
  cfg.adam.eps = o.adam_eps;
  cfg.adam.weight_decay = o.weight_decay;
  cfg.plateau_patience = o.plateau_patience;
  cfg.plateau_factor = o.plateau_factor;
  cfg.loss.margin = o.margin;
  cfg.loss.factor = multiscale_factor_from_string(o.multiscale_factor);
  cfg.loss.cycle_terms = cycle_terms_from_string(o.cycle_terms);
  cfg.loss.lambda_cc = o.lambda_cc;
  cfg.loss.epsilon = o.cycle_epsilon;
  if (o.cycle_reduce == "mean") cfg.loss.cycle_reduce = CycleReduce::mean;
  else if (o.cycle_reduce == "sum") cfg.loss.cycle_reduce = CycleReduce::sum;
  else throw ConfigError("cycle_reduce must be mean|sum");
  cfg.loss.cycle_stop_gradient = o.cycle_stop_gradient;
  cfg.embedder_phases = o.embedder_phases;
  cfg.extractor_phases = o.extractor_phases;
  cfg.seed = seed;
  cfg.validate();
  return cfg;
}

fs::path require_out(const GlobalOpts& g) {
  if (g.out.empty())
    throw ConfigError("--out is required for this command");
  fs::create_directories(g.out);
  return g.out;
}

// Stored clouds may be larger than the training cloud size; draw fixed-size
// clouds deterministically.
std::vector<ScenePair> load_pairs_for_training(const std::string& dir,
                                               int cloud_size,
                                               std::uint64_t seed) {
  std::vector<ScenePair> pairs = read_dataset(dir);
  if (pairs.empty()) return pairs;
  bool needs_subsample = false;
  for (const auto& p : pairs)
    if (p.frame1.size() != cloud_size || p.frame2.size() != cloud_size)
      needs_subsample = true;
  if (!needs_subsample) return pairs;
  return subsample_dataset(pairs, cloud_size, derive_seed(seed, {rng_tag::subsample}));
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) seeds.push_back(std::stoull(tok));
  if (seeds.empty()) throw ConfigError("--seeds: empty seed list");
  return seeds;
}

int run_generate(const GlobalOpts& g, const GenerateOpts& o) {
  const fs::path out = require_out(g);
  SceneSpec spec;
  spec.n_objects = o.objects;
  spec.points_per_cloud = o.points;
  spec.mechanism = mechanism_from_string(o.mechanism);
  spec.shape_family = shape_family_from_string(o.shape);
  spec.motion = MotionBounds{o.max_rotation, o.max_translation};
  spec.workspace = o.workspace;
  spec.seed = g.seed;
  spec.validate();
  const auto pairs = generate_dataset(spec, o.samples);
  write_dataset(pairs, out);
  std::cout << "wrote " << pairs.size() << " samples ("
            << to_string(spec.mechanism) << ", " << o.points
            << " pts) to " << out.string() << "\n";
  return 0;
}

int run_train(const GlobalOpts& g, const TrainOpts& o) {
  const fs::path out = require_out(g);
  const TrainConfig cfg = build_train_config(o, g.seed);

  std::vector<ScenePair> train_pairs =
      load_pairs_for_training(o.data, cfg.cloud_size, cfg.seed);
  std::vector<ScenePair> val_pairs;
  if (!o.val_data.empty()) {
    val_pairs = load_pairs_for_training(o.val_data, cfg.cloud_size,
                                        derive_seed(cfg.seed, {17}));
  } else {
    const auto split = split_dataset(train_pairs, o.val_fraction, 0.0);
    val_pairs = split.val;
    train_pairs = split.train;
  }

  Trainer trainer = o.resume.empty()
                        ? Trainer(cfg)
                        : Trainer::load_checkpoint(fs::path(o.resume), cfg);
  const TrainHistory history = trainer.train(train_pairs, val_pairs);

  {
    std::ofstream cfg_out(out / "config.txt");
    cfg_out << cfg.dump();
  }
  write_train_log(out / "train_log.txt", history);
  emit_training_curves(out, history);
  trainer.save_checkpoint(out / "final.ckpt");
  if (!trainer.best_checkpoint_blob().empty()) {
    std::ofstream best(out / "best.ckpt", std::ios::binary);
    best << trainer.best_checkpoint_blob();
  }
  std::cout << "trained " << history.epochs.size() << " epochs; best val EPE "
            << trainer.best_val_epe() << "; artifacts in " << out.string()
            << "\n";
  return 0;
}

int run_eval(const GlobalOpts& g, const std::string& checkpoint,
             const std::string& model_name, const std::string& data) {
  const auto pairs = read_dataset(data);
  EvalResult result;
  std::string label;
  if (!checkpoint.empty()) {
    Trainer trainer = Trainer::load_checkpoint(fs::path(checkpoint));
    result = evaluate(trainer.extractor(), pairs);
    label = "checkpoint:" + checkpoint;
  } else if (model_name == "zero") {
    result = evaluate(ZeroFlowModel{}, pairs);
    label = "zero_flow";
  } else if (model_name == "nn") {
    result = evaluate(NearestNeighborModel{}, pairs);
    label = "nearest_neighbor";
  } else {
    throw ConfigError("eval needs --checkpoint or --model zero|nn");
  }
  if (!g.out.empty()) {
    const fs::path out = require_out(g);
    write_results_table(out / "results.tsv",
                        {ResultRow{label, result.aggregate}});
    std::vector<ResultRow> per_sample;
    for (const auto& s : result.samples)
      if (!s.skipped)
        per_sample.push_back(
            ResultRow{"sample_" + std::to_string(s.index), s.report});
    write_results_table(out / "per_sample.tsv", per_sample);
  }
  std::cout << "epe " << result.aggregate.epe << " acc01 "
            << result.aggregate.acc01 << " acc005 " << result.aggregate.acc005
            << " evaluated " << result.evaluated << " skipped "
            << result.skipped << "\n";
  return 0;
}

int run_ablate(const GlobalOpts& g, const TrainOpts& o,
               const std::string& kind, int jobs) {
  const fs::path out = require_out(g);
  const TrainConfig base = build_train_config(o, g.seed);
  const auto pairs = load_pairs_for_training(o.data, base.cloud_size,
                                             base.seed);
  const auto data = split_dataset(pairs);
  const int parallel = g.deterministic ? 1 : jobs;
  std::vector<AblationRow> rows;
  std::vector<std::string> annotations;
  if (kind == "cycle") {
    rows = run_cycle_ablation(data, base, parallel);
    annotations = {
        "published full-scale reference EPE (not reproduced at this scale): "
        "none 0.4920, cosine 0.4302, mse 0.4405, l2 0.3786, cosine+mse "
        "0.4200, cosine+l2 0.3497"};
  } else if (kind == "multiscale") {
    rows = run_multiscale_ablation(data, base, parallel);
    annotations = {
        "published full-scale reference EPE (not reproduced at this scale): "
        "none 0.4043, inv_sqrt 0.3497, inv_linear 0.3850, inv_square 0.4137"};
  } else {
    throw ConfigError("--kind must be cycle|multiscale");
  }
  emit_ablation_report(out, rows, annotations);
  for (const auto& row : rows) {
    if (row.failed)
      std::cout << row.label << "\tFAILED\t" << row.error << "\n";
    else
      std::cout << row.label << "\tepe " << row.result.aggregate.epe << "\n";
  }
  return 0;
}

int run_mechmatrix(const GlobalOpts& g, const TrainOpts& o,
                   const std::string& data_c, const std::string& data_r,
                   const std::string& seeds_text, int jobs) {
  const fs::path out = require_out(g);
  const TrainConfig base = build_train_config(o, g.seed);
  const auto corr = load_pairs_for_training(data_c, base.cloud_size,
                                            base.seed);
  const auto resamp = load_pairs_for_training(data_r, base.cloud_size,
                                              base.seed);
  const auto seeds = parse_seed_list(seeds_text);
  const int parallel = g.deterministic ? 1 : jobs;
  const MechanismMatrix matrix =
      run_mechanism_matrix(corr, resamp, base, seeds, parallel);
  emit_mechanism_report(
      out, matrix,
      {"published full-scale reference EPE (not reproduced at this scale): "
       "C->C 0.0575, C->R 0.4747, R->C 0.1701, R->R 0.2644"});
  for (int tm = 0; tm < 2; ++tm)
    for (int te = 0; te < 2; ++te)
      std::cout << mechanism_letter(tm) << "->" << mechanism_letter(te)
                << "\tepe " << matrix.epe[tm][te] << "\n";
  return 0;
}

int run_report(const GlobalOpts& g, const std::string& log,
               const std::string& checkpoint, const std::string& data,
               int scatter_count) {
  const fs::path out = require_out(g);
  bool did_anything = false;
  if (!log.empty()) {
    const TrainHistory history = read_train_log(log);
    emit_training_curves(out, history);
    did_anything = true;
  }
  if (!checkpoint.empty() && !data.empty()) {
    Trainer trainer = Trainer::load_checkpoint(fs::path(checkpoint));
    const auto pairs = read_dataset(data);
    const EvalResult result = evaluate(trainer.extractor(), pairs);
    write_results_table(out / "results.tsv",
                        {ResultRow{"checkpoint", result.aggregate}});
    const int n_scatter =
        std::min<int>(scatter_count, static_cast<int>(pairs.size()));
    for (int i = 0; i < n_scatter; ++i) {
      const FlowField pred =
          trainer.extractor().predict(pairs[i].frame1, pairs[i].frame2);
      write_flow_scatter_svg(out / ("scatter_" + std::to_string(i) + ".svg"),
                             pairs[i], pred);
    }
    did_anything = true;
  }
  if (!did_anything)
    throw ConfigError("report needs --log and/or (--checkpoint with --data)");
  std::cout << "report written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scene-flow sandbox toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file (sections per "
                                 "subcommand); CLI flags override file keys");

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global RNG seed")->capture_default_str();
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--deterministic", g.deterministic,
               "force serial, reproducible execution");

  GenerateOpts gen;
  auto* cmd_gen = app.add_subcommand("generate",
                                     "generate a sandbox dataset");
  cmd_gen->fallthrough();
  cmd_gen->add_option("--samples", gen.samples, "number of scene pairs");
  cmd_gen->add_option("--points", gen.points, "points per cloud");
  cmd_gen->add_option("--objects", gen.objects, "objects per scene");
  cmd_gen->add_option("--mechanism", gen.mechanism,
                      "correspondence|resampling");
  cmd_gen->add_option("--shape", gen.shape, "sphere|box|cylinder");
  cmd_gen->add_option("--max-rotation", gen.max_rotation,
                      "max rotation angle (radians)");
  cmd_gen->add_option("--max-translation", gen.max_translation,
                      "max translation (meters)");
  cmd_gen->add_option("--workspace", gen.workspace,
                      "workspace cube side (meters)");

  TrainOpts tr;
  auto* cmd_train = app.add_subcommand("train", "train a flow extractor");
  cmd_train->fallthrough();
  add_train_options(cmd_train, tr, true);
  cmd_train->add_option("--resume", tr.resume,
                        "checkpoint to resume training from");

  std::string eval_checkpoint, eval_model, eval_data;
  auto* cmd_eval = app.add_subcommand("eval",
                                      "evaluate a checkpoint or baseline");
  cmd_eval->fallthrough();
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file");
  cmd_eval->add_option("--model", eval_model, "baseline model: zero|nn");
  cmd_eval->add_option("--data", eval_data, "dataset directory")->required();

  TrainOpts ab;
  std::string ablate_kind = "cycle";
  int ablate_jobs = 1;
  auto* cmd_ablate = app.add_subcommand("ablate",
                                        "loss ablation study");
  cmd_ablate->fallthrough();
  add_train_options(cmd_ablate, ab, true);
  cmd_ablate->add_option("--kind", ablate_kind, "cycle|multiscale");
  cmd_ablate->add_option("--jobs", ablate_jobs, "parallel rows");

  TrainOpts mm;
  std::string mm_data_c, mm_data_r, mm_seeds = "1,2,3";
  int mm_jobs = 1;
  auto* cmd_mm = app.add_subcommand(
      "mechmatrix", "train/test mechanism study (2x2 EPE table)");
  cmd_mm->fallthrough();
  add_train_options(cmd_mm, mm, false);
  cmd_mm->add_option("--data-c", mm_data_c,
                     "correspondence dataset directory")->required();
  cmd_mm->add_option("--data-r", mm_data_r,
                     "re-sampling dataset directory")->required();
  cmd_mm->add_option("--seeds", mm_seeds, "comma-separated training seeds");
  cmd_mm->add_option("--jobs", mm_jobs, "parallel cells");

  std::string rep_log, rep_checkpoint, rep_data;
  int rep_scatters = 4;
  auto* cmd_report = app.add_subcommand(
      "report", "emit plots and tables from logs or checkpoints");
  cmd_report->fallthrough();
  cmd_report->add_option("--log", rep_log, "training log to plot");
  cmd_report->add_option("--checkpoint", rep_checkpoint,
                         "checkpoint to evaluate");
  cmd_report->add_option("--data", rep_data, "dataset for evaluation");
  cmd_report->add_option("--scatters", rep_scatters,
                         "number of qualitative flow scatters");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(cmd_gen)) return run_generate(g, gen);
    if (app.got_subcommand(cmd_train)) return run_train(g, tr);
    if (app.got_subcommand(cmd_eval))
      return run_eval(g, eval_checkpoint, eval_model, eval_data);
    if (app.got_subcommand(cmd_ablate))
      return run_ablate(g, ab, ablate_kind, ablate_jobs);
    if (app.got_subcommand(cmd_mm))
      return run_mechmatrix(g, mm, mm_data_c, mm_data_r, mm_seeds, mm_jobs);
    if (app.got_subcommand(cmd_report))
      return run_report(g, rep_log, rep_checkpoint, rep_data, rep_scatters);
    std::cerr << "error:config: no subcommand\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error:" << to_string(e.category()) << ": " << e.what()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return 1;
  }
}
