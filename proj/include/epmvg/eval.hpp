#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "epmvg/box.hpp"
#include "epmvg/data.hpp"
#include "epmvg/model.hpp"

namespace epmvg::vg {

// One scored sample. A prediction counts as correct when its overlap with
// the ground-truth box strictly exceeds 0.5.
struct EvalRecord {
  std::uint64_t sample_id = 0;
  double iou = 0.0;
  bool correct = false;
};

struct EvalReport {
  std::size_t n_samples = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;  // n_correct / n_samples
  double mean_iou = 0.0;
  std::vector<EvalRecord> records;
};

// Any box predictor. The model adapter below is the normal case; tests and
// baselines plug in closed-form predictors.
using Predictor = std::function<BoundingBox(const Sample&)>;

// Scores a predictor over the chosen samples. ConfigError on an empty index
// set, DataError on an out-of-range index.
EvalReport evaluate(const Predictor& predict, const Dataset& ds,
                    const std::vector<std::size_t>& indices);

// Runs the model with dropout off. Images whose side differs from the
// model's input size are aspect-preserving resized, and the predicted box is
// mapped back into the source frame before scoring. This path involves no
// teacher of any kind.
EvalReport evaluate(const Model& model, const Dataset& ds,
                    const std::vector<std::size_t>& indices);

// Fixed-box baseline: the floor any trained model has to clear.
EvalReport evaluate_constant_box(const BoundingBox& box, const Dataset& ds,
                                 const std::vector<std::size_t>& indices);

// Tab-separated per-sample records with a summary header line.
void write_report(const std::string& path, const EvalReport& report);

// ---------------------------------------------------------------------------
// ablation harness

// One experiment cell: `run` trains/loads whatever the label describes for
// a given seed and returns its held-out report.
struct AblationCell {
  std::string label;
  std::function<EvalReport(std::uint64_t seed)> run;
};

struct AblationResult {
  std::string label;
  bool failed = false;
  std::string error;               // first failure message when failed
  std::vector<double> accuracies;  // per seed, in seed order
  std::vector<double> mean_ious;
  double acc_mean = 0.0, acc_range = 0.0;  // mean and half-range over seeds
  double iou_mean = 0.0, iou_range = 0.0;
};

struct AblationGrid {
  std::string title;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationResult> cells;
};

// Runs every cell on every seed. An exception inside a cell marks that cell
// failed and the sweep continues; ConfigError when cells or seeds are empty.
AblationGrid run_ablation(const std::string& title,
                          const std::vector<AblationCell>& cells,
                          const std::vector<std::uint64_t>& seeds);

// Aligned text table, one row per cell: accuracy and mean IoU as
// mean +- half-range over seeds, or the failure message.
std::string format_table(const AblationGrid& grid);

void write_ablation_tsv(const std::string& path, const AblationGrid& grid);

}  // namespace epmvg::vg
