#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "epmvg/model.hpp"
#include "epmvg/serialize.hpp"

namespace epmvg::vg {

// Writes the model configuration and parameters as a student checkpoint.
// `extra_meta` entries (e.g. training progress) are stored verbatim, and
// `extra_params` tensors (e.g. optimizer moments) are appended under their
// own names so a single file can restore both the model and its optimizer.
void save_model(const std::string& path, const Model& model,
                std::vector<std::pair<std::string, std::string>> extra_meta = {},
                const numcore::ParamStore* extra_params = nullptr);

// Rebuilds the configuration echoed in the checkpoint meta and loads the
// parameter payload into a fresh model.
std::unique_ptr<Model> model_from_checkpoint(const numcore::CheckpointData& data);

std::unique_ptr<Model> load_model(const std::string& path);

}  // namespace epmvg::vg
