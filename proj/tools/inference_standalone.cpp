// Inference-only driver: loads a trained grounding model and a dataset,
// scores a split, and writes the per-sample report. It links only the
// numeric core and the grounding library — if this target builds, the
// inference path has no dependency on the teacher/distillation stack.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "epmvg/data.hpp"
#include "epmvg/eval.hpp"
#include "epmvg/model_io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"grounding inference without the training stack"};
  std::string checkpoint, data_dir, split = "val", report_path;
  app.add_option("checkpoint", checkpoint, "trained model checkpoint")
      ->required();
  app.add_option("data", data_dir, "dataset directory (manifest.tsv + images)")
      ->required();
  app.add_option("--split", split, "val, train or all")
      ->check(CLI::IsMember({"val", "train", "all"}));
  app.add_option("--report", report_path, "write per-sample report.tsv here");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);  // --help exits 0; bad usage exits nonzero
  }

  try {
    const auto model = epmvg::vg::load_model(checkpoint);
    const epmvg::vg::Dataset ds = epmvg::vg::load_dataset(data_dir);
    std::vector<std::size_t> indices;
    if (split == "val") {
      indices = ds.val_indices();
    } else if (split == "train") {
      indices = ds.train_indices();
    } else {
      indices.resize(ds.samples.size());
      for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    }
    const epmvg::vg::EvalReport r = epmvg::vg::evaluate(*model, ds, indices);
    std::printf("split=%s n=%zu correct=%zu acc@0.5=%.4f mean_iou=%.4f\n",
                split.c_str(), r.n_samples, r.n_correct, r.accuracy,
                r.mean_iou);
    if (!report_path.empty()) epmvg::vg::write_report(report_path, r);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
