#include "epmvg/model.hpp"

#include <string_view>

#include "epmvg/errors.hpp"

namespace epmvg::vg {

std::size_t ModelConfig::stem_stride() const {
  std::size_t s = 1;
  for (const StemStage& st : stem) s *= st.stride;
  return s;
}

std::size_t ModelConfig::stem_side() const {
  return std::size_t(image_size) / stem_stride();
}

std::size_t ModelConfig::n_v() const { return stem_side() * stem_side(); }

std::size_t ModelConfig::joint_width() const { return n_v() + n_l + 1; }

void ModelConfig::validate() const {
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (stem.empty()) throw ConfigError("stem needs at least one stage");
  const std::size_t stride = stem_stride();
  if (std::size_t(image_size) % stride != 0)
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " is not divisible by the stem stride " +
                      std::to_string(stride));
  if (c_v < 1 || c_l < 1) throw ConfigError("c_v and c_l must be at least 1");
  if (d < 1) throw ConfigError("d must be at least 1");
  if (n_l < 1) throw ConfigError("n_l must be at least 1");
  if (vocab_size < 3)
    throw ConfigError("vocab_size must cover the reserved special tokens");
  if (pad_id < 0 || std::size_t(pad_id) >= vocab_size)
    throw ConfigError("pad_id outside the vocabulary");
  if (d % fusion_heads != 0)
    throw ConfigError("d " + std::to_string(d) + " is not divisible by " +
                      std::to_string(fusion_heads) + " fusion heads");
  if (c_v % visual_heads != 0)
    throw ConfigError("c_v is not divisible by the visual head count");
  if (c_l % linguistic_heads != 0)
    throw ConfigError("c_l is not divisible by the linguistic head count");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must lie in [0, 1)");
  if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
}

Model::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), store_(seed) {
  cfg_.validate();
  const std::size_t n_v = cfg_.n_v();

  stem_ = std::make_unique<ConvStem>(store_, "stem", 3, cfg_.stem);
  const std::size_t c_stem = stem_->out_channels();
  reduce_w_ = store_.add_xavier("visual.reduce.w", {c_stem, cfg_.c_v}, c_stem,
                                cfg_.c_v);
  reduce_b_ = store_.add_zeros("visual.reduce.b", {cfg_.c_v});
  visual_pos_ =
      store_.add_xavier("visual.pos", {n_v, cfg_.c_v}, n_v, cfg_.c_v);
  visual_enc_ = std::make_unique<TransformerEncoder>(
      store_, "visual", cfg_.c_v, cfg_.visual_layers, cfg_.visual_heads,
      cfg_.dropout, cfg_.ln_eps);

  embed_ = store_.add_xavier("linguistic.embed", {cfg_.vocab_size, cfg_.c_l},
                             cfg_.vocab_size, cfg_.c_l);
  linguistic_pos_ = store_.add_xavier("linguistic.pos", {cfg_.n_l, cfg_.c_l},
                                      cfg_.n_l, cfg_.c_l);
  linguistic_enc_ = std::make_unique<TransformerEncoder>(
      store_, "linguistic", cfg_.c_l, cfg_.linguistic_layers,
      cfg_.linguistic_heads, cfg_.dropout, cfg_.ln_eps);

  proj_v_w_ = store_.add_xavier("project.visual.w", {cfg_.c_v, cfg_.d},
                                cfg_.c_v, cfg_.d);
  proj_v_b_ = store_.add_zeros("project.visual.b", {cfg_.d});
  proj_l_w_ = store_.add_xavier("project.linguistic.w", {cfg_.c_l, cfg_.d},
                                cfg_.c_l, cfg_.d);
  proj_l_b_ = store_.add_zeros("project.linguistic.b", {cfg_.d});
  reg_ = store_.add_xavier("reg", {cfg_.d}, 1, cfg_.d);

  fusion_pos_ = store_.add_xavier("fusion.pos", {cfg_.joint_width(), cfg_.d},
                                  cfg_.joint_width(), cfg_.d);
  fusion_enc_ = std::make_unique<TransformerEncoder>(
      store_, "fusion", cfg_.d, cfg_.fusion_layers, cfg_.fusion_heads,
      cfg_.dropout, cfg_.ln_eps);

  head0_w_ = store_.add_xavier("head.0.w", {cfg_.d, cfg_.d}, cfg_.d, cfg_.d);
  head0_b_ = store_.add_zeros("head.0.b", {cfg_.d});
  head1_w_ = store_.add_xavier("head.1.w", {cfg_.d, cfg_.d}, cfg_.d, cfg_.d);
  head1_b_ = store_.add_zeros("head.1.b", {cfg_.d});
  head2_w_ = store_.add_xavier("head.2.w", {cfg_.d, 4}, cfg_.d, 4);
  head2_b_ = store_.add_zeros("head.2.b", {4});
}

Tensor Model::visual_encode(Tape& t, const Tensor& image,
                            ForwardState* fs) const {
  const std::size_t s = std::size_t(cfg_.image_size);
  if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != s ||
      image.dim(2) != s)
    throw ShapeError("visual_encode expects [3 x " + std::to_string(s) +
                     " x " + std::to_string(s) + "], got " +
                     numcore::shape_str(image.shape()));
  const Tensor z = stem_->forward(t, image);  // [c_stem x h x w]
  const std::size_t n_v = cfg_.n_v();
  const Tensor flat = t.reshape(z, {z.dim(0), n_v});
  Tensor rows = t.transpose(flat);  // [n_v x c_stem]
  rows = t.add_rowvec(t.matmul(rows, reduce_w_), reduce_b_);
  rows = t.add(rows, visual_pos_);
  rows = visual_enc_->forward(t, rows, {}, fs);
  return t.transpose(rows);  // [c_v x n_v]
}

Tensor Model::linguistic_encode(Tape& t, const std::vector<int>& ids,
                                ForwardState* fs) const {
  if (ids.size() != cfg_.n_l)
    throw ShapeError("linguistic_encode expects exactly " +
                     std::to_string(cfg_.n_l) + " token ids, got " +
                     std::to_string(ids.size()));
  std::vector<std::uint8_t> valid(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    valid[i] = ids[i] != cfg_.pad_id ? 1 : 0;
  Tensor rows = t.embedding(embed_, ids);  // [n_l x c_l]
  rows = t.add(rows, linguistic_pos_);
  rows = linguistic_enc_->forward(t, rows, valid, fs);
  return t.transpose(rows);  // [c_l x n_l]
}

JointSequence Model::project_and_join(Tape& t, const Tensor& f_v,
                                      const Tensor& f_l) const {
  const std::size_t n_v = cfg_.n_v();
  if (f_v.ndim() != 2 || f_v.dim(0) != cfg_.c_v || f_v.dim(1) != n_v)
    throw ShapeError("project_and_join: visual tokens must be [" +
                     std::to_string(cfg_.c_v) + " x " + std::to_string(n_v) +
                     "], got " + numcore::shape_str(f_v.shape()));
  if (f_l.ndim() != 2 || f_l.dim(0) != cfg_.c_l || f_l.dim(1) != cfg_.n_l)
    throw ShapeError("project_and_join: linguistic tokens must be [" +
                     std::to_string(cfg_.c_l) + " x " +
                     std::to_string(cfg_.n_l) + "], got " +
                     numcore::shape_str(f_l.shape()));
  const Tensor pv =
      t.add_rowvec(t.matmul(t.transpose(f_v), proj_v_w_), proj_v_b_);
  const Tensor pl =
      t.add_rowvec(t.matmul(t.transpose(f_l), proj_l_w_), proj_l_b_);
  const Tensor reg_row = t.reshape(reg_, {1, cfg_.d});
  const Tensor rows = t.concat_rows({reg_row, pv, pl});
  JointSequence x;
  x.tokens = t.transpose(rows);  // [d x (n_v + n_l + 1)]
  x.n_v = n_v;
  x.n_l = cfg_.n_l;
  return x;
}

JointSequence Model::fuse(Tape& t, const JointSequence& x,
                          ForwardState* fs) const {
  if (!x.tokens.defined() || x.tokens.ndim() != 2 ||
      x.tokens.dim(0) != cfg_.d || x.tokens.dim(1) != cfg_.joint_width() ||
      x.width() != cfg_.joint_width())
    throw ShapeError("fuse expects a joint sequence of shape [" +
                     std::to_string(cfg_.d) + " x " +
                     std::to_string(cfg_.joint_width()) + "]");
  Tensor rows = t.transpose(x.tokens);
  rows = t.add(rows, fusion_pos_);
  rows = fusion_enc_->forward(t, rows, {}, fs);
  JointSequence out;
  out.tokens = t.transpose(rows);
  out.n_v = x.n_v;
  out.n_l = x.n_l;
  return out;
}

Tensor Model::predict_box(Tape& t, const Tensor& p_r_out) const {
  if (p_r_out.ndim() != 1 || p_r_out.dim(0) != cfg_.d)
    throw ShapeError("predict_box expects [" + std::to_string(cfg_.d) +
                     "], got " + numcore::shape_str(p_r_out.shape()));
  Tensor x = t.reshape(p_r_out, {1, cfg_.d});
  x = t.relu(t.add_rowvec(t.matmul(x, head0_w_), head0_b_));
  x = t.relu(t.add_rowvec(t.matmul(x, head1_w_), head1_b_));
  x = t.add_rowvec(t.matmul(x, head2_w_), head2_b_);
  return t.reshape(t.sigmoid(x), {4});
}

Model::Outputs Model::forward(Tape& t, const Tensor& image,
                              const std::vector<int>& ids,
                              ForwardState* fs) const {
  Outputs out;
  const Tensor f_v = visual_encode(t, image, fs);
  const Tensor f_l = linguistic_encode(t, ids, fs);
  out.fused = fuse(t, project_and_join(t, f_v, f_l), fs);
  out.p_r = t.col(out.fused.tokens, JointSequence::reg_pos());
  out.p_v1 = t.col(out.fused.tokens, JointSequence::vls_pos());
  out.p_l1 = t.col(out.fused.tokens, out.fused.cls_pos());
  out.box = predict_box(t, out.p_r);
  return out;
}

bool Model::is_backbone_param(const std::string& name) {
  return std::string_view(name).substr(0, 5) == "stem." ||
         name == "linguistic.embed";
}

BoundingBox as_box(const Tensor& coords) {
  if (coords.ndim() != 1 || coords.dim(0) != 4)
    throw ShapeError("as_box expects [4], got " +
                     numcore::shape_str(coords.shape()));
  const auto v = coords.data();
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace epmvg::vg
