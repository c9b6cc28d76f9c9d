#include "epmvg/layers.hpp"

#include <cmath>

#include "epmvg/errors.hpp"
#include "epmvg/rng.hpp"

namespace epmvg::vg {

using numcore::Rng;

Tensor apply_dropout(Tape& t, const Tensor& x, double rate, ForwardState* fs) {
  if (!fs || !fs->training || rate == 0.0) return x;
  Rng rng(fs->seed, "dropout:" + std::to_string(fs->next_site++), fs->step);
  return t.dropout(x, rate, rng, true);
}

std::string format_stem(const std::vector<StemStage>& stem) {
  std::string s;
  for (const StemStage& st : stem) {
    if (!s.empty()) s += ',';
    s += std::to_string(st.channels) + ':' + std::to_string(st.stride);
  }
  return s;
}

std::vector<StemStage> parse_stem(const std::string& text) {
  std::vector<StemStage> stem;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::size_t colon = text.find(':', pos);
    if (colon == std::string::npos || colon >= comma)
      throw FormatError("malformed stem spec '" + text + "'");
    try {
      stem.push_back({std::stoul(text.substr(pos, colon - pos)),
                      std::stoul(text.substr(colon + 1, comma - colon - 1))});
    } catch (const std::exception&) {
      throw FormatError("malformed stem spec '" + text + "'");
    }
    pos = comma + 1;
  }
  if (stem.empty()) throw FormatError("empty stem spec");
  return stem;
}

ConvStem::ConvStem(ParamStore& store, const std::string& prefix,
                   std::size_t in_channels,
                   const std::vector<StemStage>& stages)
    : in_channels_(in_channels) {
  if (stages.empty()) throw ParamError("conv stem needs at least one stage");
  std::size_t c_in = in_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const StemStage& s = stages[i];
    if (s.channels == 0 || s.stride == 0)
      throw ParamError("conv stem stage " + std::to_string(i) +
                       " has zero channels or stride");
    const std::string base = prefix + "." + std::to_string(i);
    Stage st;
    st.w = store.add_xavier(base + ".w", {s.channels, c_in, 3, 3}, c_in * 9,
                            s.channels * 9);
    st.b = store.add_zeros(base + ".b", {s.channels});
    st.stride = s.stride;
    stages_.push_back(st);
    c_in = s.channels;
  }
}

Tensor ConvStem::forward(Tape& t, const Tensor& image) const {
  Tensor x = image;
  for (const Stage& s : stages_) x = t.relu(t.conv2d(x, s.w, s.b, s.stride, 1));
  return x;
}

std::size_t ConvStem::out_channels() const {
  return stages_.back().w.dim(0);
}

std::size_t ConvStem::total_stride() const {
  std::size_t stride = 1;
  for (const Stage& s : stages_) stride *= s.stride;
  return stride;
}

TransformerEncoder::TransformerEncoder(ParamStore& store,
                                       const std::string& prefix,
                                       std::size_t width, std::size_t layers,
                                       std::size_t heads, double dropout,
                                       double ln_eps)
    : width_(width), heads_(heads), dropout_(dropout), ln_eps_(ln_eps) {
  if (width == 0 || heads == 0 || layers == 0)
    throw ParamError("transformer encoder needs width, heads, layers >= 1");
  if (width % heads != 0)
    throw ParamError("encoder width " + std::to_string(width) +
                     " is not divisible by " + std::to_string(heads) +
                     " heads");
  const std::size_t hidden = 2 * width;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    Layer lay;
    lay.wq = store.add_xavier(base + ".attn.wq", {width, width}, width, width);
    lay.bq = store.add_zeros(base + ".attn.bq", {width});
    lay.wk = store.add_xavier(base + ".attn.wk", {width, width}, width, width);
    lay.bk = store.add_zeros(base + ".attn.bk", {width});
    lay.wv = store.add_xavier(base + ".attn.wv", {width, width}, width, width);
    lay.bv = store.add_zeros(base + ".attn.bv", {width});
    lay.wo = store.add_xavier(base + ".attn.wo", {width, width}, width, width);
    lay.bo = store.add_zeros(base + ".attn.bo", {width});
    lay.ln1_g = store.add_full(base + ".ln1.g", {width}, 1.0);
    lay.ln1_b = store.add_zeros(base + ".ln1.b", {width});
    lay.w1 = store.add_xavier(base + ".ffn.w1", {width, hidden}, width, hidden);
    lay.b1 = store.add_zeros(base + ".ffn.b1", {hidden});
    lay.w2 = store.add_xavier(base + ".ffn.w2", {hidden, width}, hidden, width);
    lay.b2 = store.add_zeros(base + ".ffn.b2", {width});
    lay.ln2_g = store.add_full(base + ".ln2.g", {width}, 1.0);
    lay.ln2_b = store.add_zeros(base + ".ln2.b", {width});
    layers_.push_back(lay);
  }
}

Tensor TransformerEncoder::forward(Tape& t, Tensor x,
                                   const std::vector<std::uint8_t>& valid_keys,
                                   ForwardState* fs) const {
  if (x.ndim() != 2 || x.dim(1) != width_)
    throw ShapeError("encoder expects [tokens x " + std::to_string(width_) +
                     "], got " + numcore::shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  if (!valid_keys.empty() && valid_keys.size() != n)
    throw ShapeError("attention mask holds " +
                     std::to_string(valid_keys.size()) + " entries for " +
                     std::to_string(n) + " tokens");
  const std::size_t dk = width_ / heads_;
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(dk));

  for (const Layer& lay : layers_) {
    // multi-head self-attention
    const Tensor q = t.add_rowvec(t.matmul(x, lay.wq), lay.bq);
    const Tensor k = t.add_rowvec(t.matmul(x, lay.wk), lay.bk);
    const Tensor v = t.add_rowvec(t.matmul(x, lay.wv), lay.bv);
    const Tensor qt = t.transpose(q), kt = t.transpose(k), vt = t.transpose(v);
    std::vector<Tensor> head_rows;  // per head [dk x n], stacked to [width x n]
    head_rows.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const Tensor qh_t = t.slice_rows(qt, h * dk, dk);
      const Tensor kh_t = t.slice_rows(kt, h * dk, dk);
      const Tensor vh_t = t.slice_rows(vt, h * dk, dk);
      // rows index queries, columns index keys
      const Tensor scores =
          t.scale(t.matmul(t.transpose(qh_t), kh_t), inv_sqrt_dk);
      const Tensor probs = valid_keys.empty()
                               ? t.softmax(scores, 1)
                               : t.masked_softmax(scores, 1, valid_keys);
      head_rows.push_back(t.matmul_nt(vh_t, probs));
    }
    const Tensor merged = t.transpose(t.concat_rows(head_rows));  // [n x width]
    const Tensor attn = t.add_rowvec(t.matmul(merged, lay.wo), lay.bo);
    x = t.layer_norm(t.add(x, apply_dropout(t, attn, dropout_, fs)), lay.ln1_g,
                     lay.ln1_b, ln_eps_);

    // position-wise feed-forward
    const Tensor h1 = t.relu(t.add_rowvec(t.matmul(x, lay.w1), lay.b1));
    const Tensor ff = t.add_rowvec(
        t.matmul(apply_dropout(t, h1, dropout_, fs), lay.w2), lay.b2);
    x = t.layer_norm(t.add(x, apply_dropout(t, ff, dropout_, fs)), lay.ln2_g,
                     lay.ln2_b, ln_eps_);
  }
  return x;
}

}  // namespace epmvg::vg
