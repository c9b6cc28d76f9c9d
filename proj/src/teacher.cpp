#include "epmvg/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "epmvg/errors.hpp"
#include "epmvg/optim.hpp"
#include "epmvg/rng.hpp"

namespace epmvg::distill {

using numcore::CheckpointData;
using numcore::Rng;
using numcore::format_f64;
using numcore::meta_f64;
using numcore::meta_u64;
using vg::format_stem;
using vg::parse_stem;

namespace {

// Row-normalized [1 x d] view of an embedding, with the norm floored so a
// degenerate all-zero tower output cannot divide by zero.
Tensor unit_row(Tape& t, const Tensor& e) {
  const Tensor norm = t.sqrt(t.sum(t.mul(e, e)));
  const Tensor inv = t.div(Tensor::scalar(1.0), t.max_scalar(norm, 1e-12));
  return t.reshape(t.scale_by(e, inv), {1, e.size()});
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_int(0, i - 1)]);
}

}  // namespace

std::size_t TeacherConfig::stem_stride() const {
  std::size_t s = 1;
  for (const vg::StemStage& st : stem) s *= st.stride;
  return s;
}

std::size_t TeacherConfig::stem_side() const {
  return std::size_t(image_size) / stem_stride();
}

void TeacherConfig::validate() const {
  if (image_size < 1) throw ConfigError("image_size must be positive");
  if (stem.empty()) throw ConfigError("stem needs at least one stage");
  if (std::size_t(image_size) % stem_stride() != 0)
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " is not divisible by the stem stride " +
                      std::to_string(stem_stride()));
  if (d < 1) throw ConfigError("d must be at least 1");
  if (c_l < 1) throw ConfigError("c_l must be at least 1");
  if (n_l < 1) throw ConfigError("n_l must be at least 1");
  if (vocab_size < 3)
    throw ConfigError("vocab_size must cover the reserved special tokens");
  if (pad_id < 0 || std::size_t(pad_id) >= vocab_size)
    throw ConfigError("pad_id outside the vocabulary");
  if (text_layers < 1) throw ConfigError("text_layers must be at least 1");
  if (c_l % text_heads != 0)
    throw ConfigError("c_l is not divisible by the text head count");
  if (ln_eps <= 0.0) throw ConfigError("ln_eps must be positive");
  if (!std::isfinite(logit_scale_init))
    throw ConfigError("logit_scale_init must be finite");
  if (pool_grid < 1) throw ConfigError("pool_grid must be at least 1");
  if (stem_side() % pool_grid != 0)
    throw ConfigError("stem output side " + std::to_string(stem_side()) +
                      " is not divisible by pool_grid " +
                      std::to_string(pool_grid));
}

Teacher::Teacher(TeacherConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), store_(seed) {
  cfg_.validate();

  stem_ = std::make_unique<vg::ConvStem>(store_, "img.stem", 3, cfg_.stem);
  const std::size_t c_img =
      stem_->out_channels() * cfg_.pool_grid * cfg_.pool_grid;
  // LayerNorm ahead of each projection head strips the feature profile the
  // whole dataset shares (background through ReLU stages, the always-present
  // leading token) — without it the embeddings start collapsed onto one
  // direction and the contrastive gradient is too small to train on.
  img_ln_g_ = store_.add_full("img.ln.g", {c_img}, 1.0);
  img_ln_b_ = store_.add_zeros("img.ln.b", {c_img});
  img_proj_w_ = store_.add_xavier("img.proj.w", {c_img, cfg_.d}, c_img, cfg_.d);
  img_proj_b_ = store_.add_zeros("img.proj.b", {cfg_.d});

  embed_ = store_.add_xavier("text.embed", {cfg_.vocab_size, cfg_.c_l},
                             cfg_.vocab_size, cfg_.c_l);
  text_pos_ =
      store_.add_xavier("text.pos", {cfg_.n_l, cfg_.c_l}, cfg_.n_l, cfg_.c_l);
  text_enc_ = std::make_unique<vg::TransformerEncoder>(
      store_, "text.enc", cfg_.c_l, cfg_.text_layers, cfg_.text_heads,
      /*dropout=*/0.0, cfg_.ln_eps);
  text_ln_g_ = store_.add_full("text.ln.g", {cfg_.c_l}, 1.0);
  text_ln_b_ = store_.add_zeros("text.ln.b", {cfg_.c_l});
  text_proj_w_ =
      store_.add_xavier("text.proj.w", {cfg_.c_l, cfg_.d}, cfg_.c_l, cfg_.d);
  text_proj_b_ = store_.add_zeros("text.proj.b", {cfg_.d});

  logit_scale_ = store_.add_full("logit_scale", {1}, cfg_.logit_scale_init);
}

Tensor Teacher::encode_image(Tape& t, const Tensor& image) const {
  const std::size_t s = std::size_t(cfg_.image_size);
  if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) != s ||
      image.dim(2) != s)
    throw ShapeError("teacher encode_image expects [3 x " + std::to_string(s) +
                     " x " + std::to_string(s) + "], got " +
                     numcore::shape_str(image.shape()));
  const Tensor z = stem_->forward(t, image);  // [c_stem x side x side]
  const std::size_t side = z.dim(1);
  const std::size_t hw = side * side;
  const std::size_t g = cfg_.pool_grid;
  const std::size_t cell = side / g;  // validated divisible
  // Regional average pooling as a matmul with a constant [hw x g^2]
  // region-membership matrix; column q averages the cells of region q.
  Tensor regions = Tensor::zeros({hw, g * g});
  auto rd = regions.mut_data();
  const double inv = 1.0 / double(cell * cell);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      rd[(r * side + c) * g * g + (r / cell) * g + c / cell] = inv;
  const Tensor flat = t.reshape(z, {z.dim(0), hw});
  const Tensor pooled = t.matmul(flat, regions);  // [c_stem x g^2]
  Tensor row = t.reshape(pooled, {1, z.dim(0) * g * g});
  row = t.layer_norm(row, img_ln_g_, img_ln_b_, cfg_.ln_eps);
  const Tensor out = t.add_rowvec(t.matmul(row, img_proj_w_), img_proj_b_);
  return t.reshape(out, {cfg_.d});
}

Tensor Teacher::encode_text(Tape& t, const std::vector<int>& ids) const {
  if (ids.size() != cfg_.n_l)
    throw ShapeError("teacher encode_text expects exactly " +
                     std::to_string(cfg_.n_l) + " token ids, got " +
                     std::to_string(ids.size()));
  std::vector<std::uint8_t> valid(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i)
    valid[i] = ids[i] != cfg_.pad_id ? 1 : 0;
  Tensor rows = t.embedding(embed_, ids);  // [n_l x c_l]
  rows = t.add(rows, text_pos_);
  rows = text_enc_->forward(t, rows, valid, nullptr);
  Tensor lead = t.reshape(t.row(rows, 0), {1, cfg_.c_l});
  lead = t.layer_norm(lead, text_ln_g_, text_ln_b_, cfg_.ln_eps);
  const Tensor out = t.add_rowvec(t.matmul(lead, text_proj_w_), text_proj_b_);
  return t.reshape(out, {cfg_.d});
}

TeacherEmbeddings Teacher::encode(Tape& t, const Tensor& image,
                                  const std::vector<int>& ids) const {
  return {encode_image(t, image), encode_text(t, ids)};
}

Tensor Teacher::temperature(Tape& t) const { return t.exp(logit_scale_); }

void Teacher::freeze() {
  store_.set_requires_grad(false);
  frozen_ = true;
}

void Teacher::unfreeze() {
  store_.set_requires_grad(true);
  frozen_ = false;
}

Tensor pool_to_dim(Tape& t, const Tensor& v, std::size_t out_dim) {
  return t.adaptive_avg_pool1d(v, out_dim);
}

Tensor inbatch_contrastive_loss(
    Tape& t, const Teacher& teacher, const std::vector<Tensor>& images,
    const std::vector<std::vector<int>>& token_ids) {
  if (images.size() != token_ids.size())
    throw ContractError("contrastive batch: " + std::to_string(images.size()) +
                        " images vs " + std::to_string(token_ids.size()) +
                        " token lists");
  const std::size_t b = images.size();
  if (b < 2)
    throw ConfigError("contrastive loss needs a batch of at least 2, got " +
                      std::to_string(b));

  std::vector<Tensor> u_rows, v_rows;
  u_rows.reserve(b);
  v_rows.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const TeacherEmbeddings e = teacher.encode(t, images[i], token_ids[i]);
    u_rows.push_back(unit_row(t, e.die));
    v_rows.push_back(unit_row(t, e.dte));
  }
  const Tensor u = t.concat_rows(u_rows);  // [b x d]
  const Tensor v = t.concat_rows(v_rows);  // [b x d]
  const Tensor logits = t.scale_by(t.matmul_nt(u, v), teacher.temperature(t));
  const Tensor img_to_txt = t.mean(t.take_diag(t.log_softmax_rows(logits)));
  const Tensor txt_to_img =
      t.mean(t.take_diag(t.log_softmax_rows(t.transpose(logits))));
  return t.scale(t.add(img_to_txt, txt_to_img), -0.5);
}

void PretrainConfig::validate() const {
  teacher.validate();
  if (epochs < 1) throw ConfigError("pretraining needs at least one epoch");
  if (batch_size < 2)
    throw ConfigError("contrastive pretraining needs batch_size >= 2; the "
                      "loss is undefined for a batch of " +
                      std::to_string(batch_size));
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw ConfigError("pretraining lr must be finite and > 0");
  if (weight_decay < 0.0)
    throw ConfigError("pretraining weight_decay must be >= 0");
}

PretrainReport pretrain_teacher(const vg::Dataset& dataset,
                                const PretrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> train = dataset.train_indices();
  if (train.size() < cfg.batch_size)
    throw ConfigError("train split has " + std::to_string(train.size()) +
                      " samples; need at least one batch of " +
                      std::to_string(cfg.batch_size));

  const std::vector<std::string>& vocab = vg::grammar_vocab();
  std::vector<std::vector<int>> tokens(dataset.samples.size());
  for (std::size_t i : train)
    tokens[i] =
        vg::tokenize(dataset.samples[i].expression, vocab, cfg.teacher.n_l);

  PretrainReport report;
  report.teacher = std::make_unique<Teacher>(cfg.teacher, cfg.seed);
  Teacher& teacher = *report.teacher;

  AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  AdamW opt(teacher.params(), oc);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(cfg.seed, "shuffle", epoch);
    shuffle_indices(train, shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t off = 0; off + cfg.batch_size <= train.size();
         off += cfg.batch_size) {
      Tape t;
      std::vector<Tensor> images;
      std::vector<std::vector<int>> ids;
      images.reserve(cfg.batch_size);
      ids.reserve(cfg.batch_size);
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        const std::size_t i = train[off + k];
        images.push_back(dataset.samples[i].image);
        ids.push_back(tokens[i]);
      }
      const Tensor loss = inbatch_contrastive_loss(t, teacher, images, ids);
      teacher.params().zero_grads();
      t.backward(loss);
      opt.step();
      loss_sum += loss.value();
      ++batches;
    }
    report.epoch_loss.push_back(loss_sum / double(batches));
  }

  teacher.freeze();
  return report;
}

double inbatch_retrieval_top1(const Teacher& teacher, const vg::Dataset& ds,
                              const std::vector<std::size_t>& indices,
                              std::size_t batch_size) {
  if (batch_size < 2)
    throw ConfigError("retrieval needs batches of at least 2");
  if (indices.size() < batch_size)
    throw ConfigError("retrieval over " + std::to_string(indices.size()) +
                      " samples cannot fill a batch of " +
                      std::to_string(batch_size));
  const std::vector<std::string>& vocab = vg::grammar_vocab();
  const std::size_t d = teacher.config().d;

  std::size_t hits = 0, total = 0;
  for (std::size_t off = 0; off + batch_size <= indices.size();
       off += batch_size) {
    std::vector<std::vector<double>> u(batch_size), v(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
      const vg::Sample& s = ds.samples[indices[off + k]];
      Tape t;
      const TeacherEmbeddings e = teacher.encode(
          t, s.image, vg::tokenize(s.expression, vocab, teacher.config().n_l));
      auto normalized = [d](const Tensor& x) {
        std::vector<double> out(x.data().begin(), x.data().end());
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += out[j] * out[j];
        norm = std::max(std::sqrt(norm), 1e-12);
        for (std::size_t j = 0; j < d; ++j) out[j] /= norm;
        return out;
      };
      u[k] = normalized(e.die);
      v[k] = normalized(e.dte);
    }
    auto dot = [d](const std::vector<double>& a, const std::vector<double>& b) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += a[j] * b[j];
      return s;
    };
    for (std::size_t i = 0; i < batch_size; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < batch_size; ++j)
        if (dot(u[i], v[j]) > dot(u[i], v[best])) best = j;
      if (best == i) ++hits;
      best = 0;
      for (std::size_t j = 1; j < batch_size; ++j)
        if (dot(u[j], v[i]) > dot(u[best], v[i])) best = j;
      if (best == i) ++hits;
      total += 2;
    }
  }
  return double(hits) / double(total);
}

numcore::DriftReport assert_frozen(const Teacher& teacher,
                                   const CheckpointData& snapshot) {
  return numcore::compare_params(snapshot, teacher.params());
}

void save_teacher(const std::string& path, const Teacher& teacher) {
  const TeacherConfig& c = teacher.config();
  std::vector<std::pair<std::string, std::string>> meta = {
      {"teacher.image_size", std::to_string(c.image_size)},
      {"teacher.stem", format_stem(c.stem)},
      {"teacher.d", std::to_string(c.d)},
      {"teacher.c_l", std::to_string(c.c_l)},
      {"teacher.n_l", std::to_string(c.n_l)},
      {"teacher.vocab_size", std::to_string(c.vocab_size)},
      {"teacher.pad_id", std::to_string(c.pad_id)},
      {"teacher.text_layers", std::to_string(c.text_layers)},
      {"teacher.text_heads", std::to_string(c.text_heads)},
      {"teacher.ln_eps", format_f64(c.ln_eps)},
      {"teacher.logit_scale_init", format_f64(c.logit_scale_init)},
      {"teacher.pool_grid", std::to_string(c.pool_grid)},
      {"teacher.seed", std::to_string(teacher.params().seed())},
  };
  numcore::write_checkpoint(
      path, numcore::snapshot_params(teacher.params(), numcore::kTeacherMagic,
                                     std::move(meta)));
}

std::unique_ptr<Teacher> load_teacher(const std::string& path) {
  const CheckpointData data =
      numcore::read_checkpoint(path, numcore::kTeacherMagic);
  TeacherConfig c;
  c.image_size = int(meta_u64(data, "teacher.image_size"));
  c.stem = parse_stem(data.meta_value("teacher.stem"));
  c.d = meta_u64(data, "teacher.d");
  c.c_l = meta_u64(data, "teacher.c_l");
  c.n_l = meta_u64(data, "teacher.n_l");
  c.vocab_size = meta_u64(data, "teacher.vocab_size");
  c.pad_id = int(meta_u64(data, "teacher.pad_id"));
  c.text_layers = meta_u64(data, "teacher.text_layers");
  c.text_heads = meta_u64(data, "teacher.text_heads");
  c.ln_eps = meta_f64(data, "teacher.ln_eps");
  c.logit_scale_init = meta_f64(data, "teacher.logit_scale_init");
  c.pool_grid = meta_u64(data, "teacher.pool_grid");

  auto teacher =
      std::make_unique<Teacher>(c, meta_u64(data, "teacher.seed"));
  numcore::assign_params(data, teacher->params());
  teacher->freeze();
  return teacher;
}

}  // namespace epmvg::distill
