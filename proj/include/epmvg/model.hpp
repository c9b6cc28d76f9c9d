#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "epmvg/box.hpp"
#include "epmvg/layers.hpp"

namespace epmvg::vg {

struct ModelConfig {
  int image_size = 64;
  std::vector<StemStage> stem = {{8, 2}, {16, 2}, {24, 2}};
  std::size_t c_v = 24;  // reduced visual channels
  std::size_t c_l = 24;  // linguistic channels
  std::size_t d = 32;    // joint embedding width
  std::size_t n_l = 20;  // language token budget
  std::size_t vocab_size = 0;  // must be set by the caller
  int pad_id = 1;
  std::size_t visual_layers = 2, visual_heads = 4;
  std::size_t linguistic_layers = 2, linguistic_heads = 4;
  std::size_t fusion_layers = 2, fusion_heads = 4;
  double dropout = 0.1;
  double ln_eps = 1e-5;

  std::size_t stem_stride() const;
  std::size_t stem_side() const;    // image_size / stem_stride
  std::size_t n_v() const;          // stem_side^2
  std::size_t joint_width() const;  // n_v + n_l + 1
  void validate() const;            // ConfigError on violation
};

// Joint token sequence [d x (n_v + n_l + 1)]: column 0 is the box query
// token, column 1 the first visual token, column n_v + 1 the first
// linguistic token.
struct JointSequence {
  Tensor tokens;
  std::size_t n_v = 0, n_l = 0;

  static constexpr std::size_t reg_pos() { return 0; }
  static constexpr std::size_t vls_pos() { return 1; }
  std::size_t cls_pos() const { return n_v + 1; }
  std::size_t width() const { return n_v + n_l + 1; }
};

// Student grounding network: visual branch, linguistic branch, projection
// into a joint sequence led by a learnable box query token, cross-modal
// fusion, and a box regression head.
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // [3 x H x W] -> [c_v x n_v]
  Tensor visual_encode(Tape& t, const Tensor& image,
                       ForwardState* fs = nullptr) const;
  // n_l token ids -> [c_l x n_l]; pad positions are masked out of attention
  Tensor linguistic_encode(Tape& t, const std::vector<int>& ids,
                           ForwardState* fs = nullptr) const;
  // project both to width d and prepend the box query token
  JointSequence project_and_join(Tape& t, const Tensor& f_v,
                                 const Tensor& f_l) const;
  // full (unmasked) attention over the joint sequence
  JointSequence fuse(Tape& t, const JointSequence& x,
                     ForwardState* fs = nullptr) const;
  // box query column [d] -> [4] in (0,1): center x, y, width, height
  Tensor predict_box(Tape& t, const Tensor& p_r_out) const;

  struct Outputs {
    JointSequence fused;
    Tensor p_r, p_v1, p_l1;  // fused columns, each [d]
    Tensor box;              // [4]
  };
  Outputs forward(Tape& t, const Tensor& image, const std::vector<int>& ids,
                  ForwardState* fs = nullptr) const;

  // Parameters trained at the reduced "pretrained backbone" learning rate:
  // the visual stem and the word embedding table.
  static bool is_backbone_param(const std::string& name);

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<ConvStem> stem_;
  Tensor reduce_w_, reduce_b_, visual_pos_;
  std::unique_ptr<TransformerEncoder> visual_enc_;
  Tensor embed_, linguistic_pos_;
  std::unique_ptr<TransformerEncoder> linguistic_enc_;
  Tensor proj_v_w_, proj_v_b_, proj_l_w_, proj_l_b_, reg_;
  Tensor fusion_pos_;
  std::unique_ptr<TransformerEncoder> fusion_enc_;
  Tensor head0_w_, head0_b_, head1_w_, head1_b_, head2_w_, head2_b_;
};

// Detached view of a [4] prediction as a box struct.
BoundingBox as_box(const Tensor& coords);

}  // namespace epmvg::vg
