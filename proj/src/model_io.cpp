#include "epmvg/model_io.hpp"

#include <utility>

#include "epmvg/errors.hpp"

namespace epmvg::vg {

using numcore::CheckpointData;
using numcore::format_f64;
using numcore::meta_f64;
using numcore::meta_u64;

void save_model(const std::string& path, const Model& model,
                std::vector<std::pair<std::string, std::string>> extra_meta,
                const numcore::ParamStore* extra_params) {
  const ModelConfig& c = model.config();
  std::vector<std::pair<std::string, std::string>> meta = {
      {"model.image_size", std::to_string(c.image_size)},
      {"model.stem", format_stem(c.stem)},
      {"model.c_v", std::to_string(c.c_v)},
      {"model.c_l", std::to_string(c.c_l)},
      {"model.d", std::to_string(c.d)},
      {"model.n_l", std::to_string(c.n_l)},
      {"model.vocab_size", std::to_string(c.vocab_size)},
      {"model.pad_id", std::to_string(c.pad_id)},
      {"model.visual_layers", std::to_string(c.visual_layers)},
      {"model.visual_heads", std::to_string(c.visual_heads)},
      {"model.linguistic_layers", std::to_string(c.linguistic_layers)},
      {"model.linguistic_heads", std::to_string(c.linguistic_heads)},
      {"model.fusion_layers", std::to_string(c.fusion_layers)},
      {"model.fusion_heads", std::to_string(c.fusion_heads)},
      {"model.dropout", format_f64(c.dropout)},
      {"model.ln_eps", format_f64(c.ln_eps)},
      {"model.seed", std::to_string(model.params().seed())},
  };
  for (auto& kv : extra_meta) meta.push_back(std::move(kv));
  CheckpointData data =
      snapshot_params(model.params(), numcore::kStudentMagic, std::move(meta));
  if (extra_params) {
    CheckpointData extras =
        snapshot_params(*extra_params, numcore::kStudentMagic);
    for (auto& kv : extras.params) data.params.push_back(std::move(kv));
  }
  write_checkpoint(path, data);
}

std::unique_ptr<Model> model_from_checkpoint(const CheckpointData& data) {
  ModelConfig c;
  c.image_size = int(meta_u64(data, "model.image_size"));
  c.stem = parse_stem(data.meta_value("model.stem"));
  c.c_v = meta_u64(data, "model.c_v");
  c.c_l = meta_u64(data, "model.c_l");
  c.d = meta_u64(data, "model.d");
  c.n_l = meta_u64(data, "model.n_l");
  c.vocab_size = meta_u64(data, "model.vocab_size");
  c.pad_id = int(meta_u64(data, "model.pad_id"));
  c.visual_layers = meta_u64(data, "model.visual_layers");
  c.visual_heads = meta_u64(data, "model.visual_heads");
  c.linguistic_layers = meta_u64(data, "model.linguistic_layers");
  c.linguistic_heads = meta_u64(data, "model.linguistic_heads");
  c.fusion_layers = meta_u64(data, "model.fusion_layers");
  c.fusion_heads = meta_u64(data, "model.fusion_heads");
  c.dropout = meta_f64(data, "model.dropout");
  c.ln_eps = meta_f64(data, "model.ln_eps");
  c.validate();
  auto model = std::make_unique<Model>(c, meta_u64(data, "model.seed"));
  assign_params(data, model->params());
  return model;
}

std::unique_ptr<Model> load_model(const std::string& path) {
  return model_from_checkpoint(
      numcore::read_checkpoint(path, numcore::kStudentMagic));
}

}  // namespace epmvg::vg
