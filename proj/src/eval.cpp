#include "epmvg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "epmvg/errors.hpp"
#include "epmvg/tape.hpp"

namespace epmvg::vg {

namespace {

std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// "12.34 +- 1.20", both in percent.
std::string pct_pm(double mean, double range) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f +- %.2f", 100.0 * mean, 100.0 * range);
  return buf;
}

void mean_and_half_range(const std::vector<double>& xs, double& mean,
                         double& range) {
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  range = (*hi - *lo) / 2.0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

EvalReport evaluate(const Predictor& predict, const Dataset& ds,
                    const std::vector<std::size_t>& indices) {
  if (!predict) throw ContractError("evaluate was given an empty predictor");
  if (indices.empty()) throw ConfigError("evaluation over an empty split");
  EvalReport report;
  report.records.reserve(indices.size());
  double iou_sum = 0.0;
  for (const std::size_t i : indices) {
    if (i >= ds.samples.size())
      throw DataError("evaluation index " + std::to_string(i) +
                      " is outside the dataset (" +
                      std::to_string(ds.samples.size()) + " samples)");
    const Sample& s = ds.samples[i];
    const double overlap = iou(predict(s), s.gt_box);
    const bool correct = overlap > 0.5;
    report.records.push_back({s.sample_id, overlap, correct});
    iou_sum += overlap;
    if (correct) ++report.n_correct;
  }
  report.n_samples = indices.size();
  report.accuracy = double(report.n_correct) / double(report.n_samples);
  report.mean_iou = iou_sum / double(report.n_samples);
  return report;
}

EvalReport evaluate(const Model& model, const Dataset& ds,
                    const std::vector<std::size_t>& indices) {
  const ModelConfig& cfg = model.config();
  const std::vector<std::string>& vocab = grammar_vocab();
  const auto side = std::size_t(cfg.image_size);
  const Predictor predict = [&](const Sample& s) {
    const std::vector<int> ids = tokenize(s.expression, vocab, cfg.n_l);
    const auto& shape = s.image.shape();
    const bool sized = shape.size() == 3 && shape[0] == 3 &&
                       shape[1] == side && shape[2] == side;
    numcore::Tape t;
    if (sized) {
      return as_box(model.forward(t, s.image, ids).box);
    }
    const Preprocessed pre = preprocess_image(s.image, cfg.image_size);
    return unmap_box(pre.map, as_box(model.forward(t, pre.image, ids).box));
  };
  return evaluate(predict, ds, indices);
}

EvalReport evaluate_constant_box(const BoundingBox& box, const Dataset& ds,
                                 const std::vector<std::size_t>& indices) {
  return evaluate([&box](const Sample&) { return box; }, ds, indices);
}

void write_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write report '" + path + "'");
  out << "# n_samples=" << report.n_samples
      << "\tn_correct=" << report.n_correct
      << "\taccuracy=" << fixed6(report.accuracy)
      << "\tmean_iou=" << fixed6(report.mean_iou) << '\n';
  for (const EvalRecord& r : report.records)
    out << r.sample_id << '\t' << fixed6(r.iou) << '\t' << (r.correct ? 1 : 0)
        << '\n';
  if (!out) throw DataError("report write failed for '" + path + "'");
}

AblationGrid run_ablation(const std::string& title,
                          const std::vector<AblationCell>& cells,
                          const std::vector<std::uint64_t>& seeds) {
  if (cells.empty()) throw ConfigError("ablation grid has no cells");
  if (seeds.empty()) throw ConfigError("ablation grid needs at least one seed");
  AblationGrid grid;
  grid.title = title;
  grid.seeds = seeds;
  grid.cells.reserve(cells.size());
  for (const AblationCell& cell : cells) {
    if (!cell.run)
      throw ContractError("ablation cell '" + cell.label + "' has no runner");
    AblationResult result;
    result.label = cell.label;
    for (const std::uint64_t seed : seeds) {
      try {
        const EvalReport rep = cell.run(seed);
        result.accuracies.push_back(rep.accuracy);
        result.mean_ious.push_back(rep.mean_iou);
      } catch (const std::exception& e) {
        result.failed = true;
        result.error = e.what();
        break;  // this cell is done; the rest of the grid still runs
      }
    }
    if (!result.failed) {
      mean_and_half_range(result.accuracies, result.acc_mean,
                          result.acc_range);
      mean_and_half_range(result.mean_ious, result.iou_mean, result.iou_range);
    }
    grid.cells.push_back(std::move(result));
  }
  return grid;
}

std::string format_table(const AblationGrid& grid) {
  const std::string acc_header = "acc@0.5 (%)";
  const std::string iou_header = "mean IoU (%)";
  std::size_t label_w = std::string("cell").size();
  std::size_t acc_w = acc_header.size();
  for (const AblationResult& c : grid.cells) {
    label_w = std::max(label_w, c.label.size());
    if (!c.failed)
      acc_w = std::max(acc_w, pct_pm(c.acc_mean, c.acc_range).size());
  }
  std::ostringstream out;
  out << grid.title << " (mean +- half-range over " << grid.seeds.size()
      << (grid.seeds.size() == 1 ? " seed)\n" : " seeds)\n");
  const auto pad = [&out](const std::string& s, std::size_t w) {
    out << s << std::string(w - s.size() + 2, ' ');
  };
  pad("cell", label_w);
  pad(acc_header, acc_w);
  out << iou_header << '\n';
  for (const AblationResult& c : grid.cells) {
    pad(c.label, label_w);
    if (c.failed) {
      out << "FAILED: " << one_line(c.error) << '\n';
    } else {
      pad(pct_pm(c.acc_mean, c.acc_range), acc_w);
      out << pct_pm(c.iou_mean, c.iou_range) << '\n';
    }
  }
  return out.str();
}

void write_ablation_tsv(const std::string& path, const AblationGrid& grid) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write ablation table '" + path + "'");
  out << "# " << one_line(grid.title) << "\tseeds=" << grid.seeds.size()
      << '\n';
  for (const AblationResult& c : grid.cells) {
    if (c.failed) {
      out << one_line(c.label) << "\tfailed\t" << one_line(c.error) << '\n';
    } else {
      out << one_line(c.label) << "\tok\t" << fixed6(c.acc_mean) << '\t'
          << fixed6(c.acc_range) << '\t' << fixed6(c.iou_mean) << '\t'
          << fixed6(c.iou_range) << '\n';
    }
  }
  if (!out) throw DataError("ablation table write failed for '" + path + "'");
}

}  // namespace epmvg::vg
