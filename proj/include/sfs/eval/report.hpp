#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "sfs/errors.hpp"
#include "sfs/eval/evaluate.hpp"
#include "sfs/metrics.hpp"
#include "sfs/point_cloud.hpp"
#include "sfs/train/trainer.hpp"

namespace sfs {

// ---- results tables ----
//
// Schema (tab-separated, one row per result, '#' lines are comments):
//   # sceneflow-results v1
//   label<TAB>epe<TAB>acc01<TAB>acc005<TAB>n_points
// Doubles are printed with max_digits10, so parsing reproduces the stored
// values exactly.

struct ResultRow {
  std::string label;
  MetricReport metrics;
};

inline void write_results_table(const std::filesystem::path& path,
                                const std::vector<ResultRow>& rows,
                                const std::vector<std::string>& annotations = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write results table: " + path.string());
  out << "# sceneflow-results v1\n";
  for (const auto& note : annotations) out << "# " << note << "\n";
  out << "label\tepe\tacc01\tacc005\tn_points\n";
  out << std::setprecision(17);
  for (const auto& row : rows)
    out << row.label << "\t" << row.metrics.epe << "\t" << row.metrics.acc01
        << "\t" << row.metrics.acc005 << "\t" << row.metrics.n_points << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<ResultRow> read_results_table(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results table: " + path.string());
  std::vector<ResultRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // column header
      continue;
    }
    std::istringstream ls(line);
    ResultRow row;
    std::string epe_s, acc01_s, acc005_s, n_s;
    if (!std::getline(ls, row.label, '\t') ||
        !std::getline(ls, epe_s, '\t') || !std::getline(ls, acc01_s, '\t') ||
        !std::getline(ls, acc005_s, '\t') || !std::getline(ls, n_s))
      throw DataError(DataErrorCode::malformed,
                      "bad results row: " + line);
    row.metrics.epe = std::stod(epe_s);
    row.metrics.acc01 = std::stod(acc01_s);
    row.metrics.acc005 = std::stod(acc005_s);
    row.metrics.n_points = std::stol(n_s);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- training metrics log ----
//
// Plain text, one record per line:
//   round <idx> epoch <e> loss_g <v> loss_h <v> r_p <v...> r_n <v...> \
//         lr_flow <v> lr_embedder <v>
//   epoch <e> val_epe <v> lr_flow <v> lr_embedder <v> improved <0|1> \
//         plateau <0|1>

inline void write_train_log(const std::filesystem::path& path,
                            const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write train log: " + path.string());
  out << std::setprecision(17);
  std::size_t next_epoch = 0;
  for (const auto& r : history.rounds) {
    while (next_epoch < history.epochs.size() &&
           history.epochs[next_epoch].epoch < r.epoch) {
      const auto& e = history.epochs[next_epoch++];
      out << "epoch " << e.epoch << " val_epe " << e.val_epe << " lr_flow "
          << e.lr_flow << " lr_embedder " << e.lr_embedder << " improved "
          << (e.improved ? 1 : 0) << " plateau "
          << (e.plateau_triggered ? 1 : 0) << "\n";
    }
    out << "round " << r.round << " epoch " << r.epoch << " loss_g "
        << r.loss_g << " loss_h " << r.loss_h;
    out << " r_p";
    for (double v : r.r_p_mean) out << " " << v;
    out << " r_n";
    for (double v : r.r_n_mean) out << " " << v;
    out << " lr_flow " << r.lr_flow << " lr_embedder " << r.lr_embedder
        << "\n";
  }
  for (; next_epoch < history.epochs.size(); ++next_epoch) {
    const auto& e = history.epochs[next_epoch];
    out << "epoch " << e.epoch << " val_epe " << e.val_epe << " lr_flow "
        << e.lr_flow << " lr_embedder " << e.lr_embedder << " improved "
        << (e.improved ? 1 : 0) << " plateau " << (e.plateau_triggered ? 1 : 0)
        << "\n";
  }
}

// Parses the log format written above; used by the report command to plot
// curves from an existing run.
inline TrainHistory read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open train log: " + path.string());
  TrainHistory history;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "round") {
      RoundLog r;
      std::string key;
      ls >> r.round >> key >> r.epoch >> key >> r.loss_g >> key >> r.loss_h;
      ls >> key;  // "r_p"
      std::string tok;
      while (ls >> tok) {
        if (tok == "r_n") break;
        r.r_p_mean.push_back(std::stod(tok));
      }
      while (ls >> tok) {
        if (tok == "lr_flow") break;
        r.r_n_mean.push_back(std::stod(tok));
      }
      ls >> r.lr_flow >> tok >> r.lr_embedder;
      history.rounds.push_back(std::move(r));
    } else if (kind == "epoch") {
      EpochLog e;
      std::string key;
      int improved = 0, plateau = 0;
      ls >> e.epoch >> key >> e.val_epe >> key >> e.lr_flow >> key >>
          e.lr_embedder >> key >> improved >> key >> plateau;
      e.improved = improved != 0;
      e.plateau_triggered = plateau != 0;
      history.epochs.push_back(e);
    } else {
      throw DataError(DataErrorCode::malformed,
                      "unrecognized train-log line: " + line);
    }
  }
  for (const auto& e : history.epochs)
    if (e.improved && e.val_epe <= history.best_val_epe) {
      history.best_val_epe = e.val_epe;
      history.best_epoch = e.epoch;
    }
  return history;
}

// ---- SVG emission ----

namespace detail {

struct Series {
  std::string label;
  std::string color;
  std::vector<double> values;
};

inline void write_svg_line_chart(const std::filesystem::path& path,
                                 const std::string& title,
                                 const std::vector<Series>& series) {
  const int width = 640, height = 400, margin = 48;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write plot: " + path.string());
  double lo = 0.0, hi = 1.0;
  std::size_t max_len = 0;
  bool any = false;
  for (const auto& s : series)
    for (double v : s.values) {
      if (!any) {
        lo = hi = v;
        any = true;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  for (const auto& s : series) max_len = std::max(max_len, s.values.size());
  if (hi <= lo) hi = lo + 1.0;
  auto x_at = [&](std::size_t i) {
    const double span = max_len > 1 ? static_cast<double>(max_len - 1) : 1.0;
    return margin + (width - 2 * margin) * (static_cast<double>(i) / span);
  };
  auto y_at = [&](double v) {
    return height - margin -
           (height - 2 * margin) * ((v - lo) / (hi - lo));
  };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin << "\" y=\"24\" font-size=\"14\">" << title
      << "</text>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << height - margin
      << "\" x2=\"" << width - margin << "\" y2=\"" << height - margin
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << margin << "\" y1=\"" << margin << "\" x2=\""
      << margin << "\" y2=\"" << height - margin << "\" stroke=\"black\"/>\n";
  out << "<text x=\"4\" y=\"" << margin << "\" font-size=\"10\">" << hi
      << "</text>\n";
  out << "<text x=\"4\" y=\"" << height - margin << "\" font-size=\"10\">"
      << lo << "</text>\n";
  int legend_y = 40;
  for (const auto& s : series) {
    out << "<text x=\"" << width - margin - 140 << "\" y=\"" << legend_y
        << "\" font-size=\"11\" fill=\"" << s.color << "\">" << s.label
        << "</text>\n";
    legend_y += 14;
    if (s.values.empty()) continue;
    out << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i)
      out << x_at(i) << "," << y_at(s.values[i]) << " ";
    out << "\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace detail

// Loss and EPE curves from a training history.
inline void emit_training_curves(const std::filesystem::path& dir,
                                 const TrainHistory& history) {
  std::filesystem::create_directories(dir);
  detail::Series loss_g{"L_g (embedder)", "#1f77b4", {}};
  detail::Series loss_h{"L_h (extractor)", "#d62728", {}};
  for (const auto& r : history.rounds) {
    loss_g.values.push_back(r.loss_g);
    loss_h.values.push_back(r.loss_h);
  }
  detail::write_svg_line_chart(dir / "loss_curves.svg",
                               "training losses per round",
                               {loss_g, loss_h});
  detail::Series epe_curve{"validation EPE", "#2ca02c", {}};
  for (const auto& e : history.epochs) epe_curve.values.push_back(e.val_epe);
  detail::write_svg_line_chart(dir / "epe_curve.svg",
                               "validation EPE per epoch", {epe_curve});
}

// Top-down (x, y) projection of one sample: frame-1 points with ground-truth
// and predicted flow vectors drawn from each point.
inline void write_flow_scatter_svg(const std::filesystem::path& path,
                                   const ScenePair& pair,
                                   const FlowField& predicted) {
  if (predicted.size() != pair.frame1.size())
    throw ContractViolation("flow scatter: prediction not bound to frame1");
  const int width = 640, height = 640, margin = 32;
  double lo_x = pair.frame1.points.col(0).minCoeff();
  double hi_x = pair.frame1.points.col(0).maxCoeff();
  double lo_y = pair.frame1.points.col(1).minCoeff();
  double hi_y = pair.frame1.points.col(1).maxCoeff();
  const double pad = 0.5;
  lo_x -= pad; hi_x += pad; lo_y -= pad; hi_y += pad;
  auto x_at = [&](double x) {
    return margin + (width - 2 * margin) * (x - lo_x) / (hi_x - lo_x);
  };
  auto y_at = [&](double y) {
    return height - margin - (height - 2 * margin) * (y - lo_y) / (hi_y - lo_y);
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write scatter: " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << margin
      << "\" y=\"20\" font-size=\"12\">x-y projection; ground truth blue, "
         "prediction red</text>\n";
  for (int i = 0; i < pair.frame1.size(); ++i) {
    const double px = pair.frame1.points(i, 0);
    const double py = pair.frame1.points(i, 1);
    out << "<circle cx=\"" << x_at(px) << "\" cy=\"" << y_at(py)
        << "\" r=\"1.5\" fill=\"#444444\"/>\n";
    out << "<line x1=\"" << x_at(px) << "\" y1=\"" << y_at(py) << "\" x2=\""
        << x_at(px + pair.gt_flow.vectors(i, 0)) << "\" y2=\""
        << y_at(py + pair.gt_flow.vectors(i, 1))
        << "\" stroke=\"#1f77b4\" stroke-width=\"0.8\"/>\n";
    out << "<line x1=\"" << x_at(px) << "\" y1=\"" << y_at(py) << "\" x2=\""
        << x_at(px + predicted.vectors(i, 0)) << "\" y2=\""
        << y_at(py + predicted.vectors(i, 1))
        << "\" stroke=\"#d62728\" stroke-width=\"0.8\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace sfs
