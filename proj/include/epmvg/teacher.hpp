#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "epmvg/data.hpp"
#include "epmvg/layers.hpp"
#include "epmvg/serialize.hpp"

namespace epmvg::distill {

using numcore::ParamStore;
using numcore::Tape;
using numcore::Tensor;

// Two-tower contrastive image/text encoder: a desk-scale stand-in for a
// large pretrained vision-language model. Pretrained once on synthetic
// pairs, then frozen and consumed read-only as the distillation target.
struct TeacherConfig {
  int image_size = 64;
  std::vector<vg::StemStage> stem = {{8, 2}, {16, 2}, {24, 2}};
  std::size_t d = 48;    // embedding width; deliberately != student width
  std::size_t c_l = 24;  // text transformer width
  std::size_t n_l = 20;  // token budget
  std::size_t vocab_size = 0;  // must be set by the caller
  int pad_id = 1;
  std::size_t text_layers = 2, text_heads = 4;
  double ln_eps = 1e-5;
  // Initial logit_scale. Embeddings start near-collapsed, so the loss at
  // initialization stays ≈ ln(batch) even with a sharp temperature, and a
  // sharp start is what makes the contrastive objective trainable.
  double logit_scale_init = 2.302585092994046;  // ln(10)
  // The image tower averages stem features over a pool_grid x pool_grid
  // partition and concatenates the regions. A single global cell (grid 1)
  // cannot represent where anything is, which the caption language needs.
  std::size_t pool_grid = 2;

  std::size_t stem_stride() const;
  std::size_t stem_side() const;
  void validate() const;  // ConfigError on violation
};

struct TeacherEmbeddings {
  Tensor die;  // image embedding [d]
  Tensor dte;  // text embedding [d]
};

class Teacher {
 public:
  Teacher(TeacherConfig cfg, std::uint64_t seed);
  Teacher(const Teacher&) = delete;
  Teacher& operator=(const Teacher&) = delete;

  const TeacherConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // [3 x S x S] -> [d]: conv stem, regional average pool, linear head.
  Tensor encode_image(Tape& t, const Tensor& image) const;
  // n_l token ids -> [d]: embedding + masked transformer, leading-token
  // readout, linear head.
  Tensor encode_text(Tape& t, const std::vector<int>& ids) const;
  TeacherEmbeddings encode(Tape& t, const Tensor& image,
                           const std::vector<int>& ids) const;

  // Contrastive logit temperature exp(logit_scale) as a [1] node; positive
  // by construction.
  Tensor temperature(Tape& t) const;

  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

 private:
  TeacherConfig cfg_;
  ParamStore store_;
  std::unique_ptr<vg::ConvStem> stem_;
  Tensor img_ln_g_, img_ln_b_, img_proj_w_, img_proj_b_;
  Tensor embed_, text_pos_;
  std::unique_ptr<vg::TransformerEncoder> text_enc_;
  Tensor text_ln_g_, text_ln_b_, text_proj_w_, text_proj_b_;
  Tensor logit_scale_;
  bool frozen_ = false;
};

// Adaptive average pooling of a vector to `out_dim` entries:
//   out[i] = mean(v[floor(i*d/out_dim) .. ceil((i+1)*d/out_dim)))
// Identity when out_dim == d; differentiable w.r.t. v.
Tensor pool_to_dim(Tape& t, const Tensor& v, std::size_t out_dim);

// Symmetric in-batch contrastive objective over cosine-similarity logits
// scaled by the learned temperature: cross entropy of each image against
// all texts and of each text against all images, averaged. Batch size < 2
// is a ConfigError (there is nothing to contrast against).
Tensor inbatch_contrastive_loss(Tape& t, const Teacher& teacher,
                                const std::vector<Tensor>& images,
                                const std::vector<std::vector<int>>& token_ids);

struct PretrainConfig {
  TeacherConfig teacher;
  std::size_t epochs = 8;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PretrainReport {
  std::unique_ptr<Teacher> teacher;  // frozen
  std::vector<double> epoch_loss;    // mean contrastive loss per epoch
};

// Trains both towers on the dataset's train split (expressions tokenized
// against the generation grammar's vocabulary), then freezes the result.
PretrainReport pretrain_teacher(const vg::Dataset& dataset,
                                const PretrainConfig& cfg);

// Fraction of samples whose matched partner wins the in-batch similarity
// argmax, averaged over image->text and text->image directions, computed
// over consecutive full batches of `indices`.
double inbatch_retrieval_top1(const Teacher& teacher, const vg::Dataset& ds,
                              const std::vector<std::size_t>& indices,
                              std::size_t batch_size);

// Byte-level drift of the teacher's parameters against a snapshot taken
// earlier (freeze verification for frozen runs, drift measurement for the
// unfrozen ablation). Snapshot of a different model → ContractError.
numcore::DriftReport assert_frozen(const Teacher& teacher,
                                   const numcore::CheckpointData& snapshot);

// Versioned binary checkpoint carrying config echo + all parameters.
void save_teacher(const std::string& path, const Teacher& teacher);
// Rebuilds from the config echo, restores parameters, returns frozen.
std::unique_ptr<Teacher> load_teacher(const std::string& path);

}  // namespace epmvg::distill
