#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epmvg/params.hpp"
#include "epmvg/tape.hpp"

namespace epmvg::vg {

using numcore::ParamStore;
using numcore::Tape;
using numcore::Tensor;

// Per-forward dropout bookkeeping. Masks are drawn from streams keyed by
// (seed, site, step): the site counter advances in forward order, so the
// same site gets the same mask whenever the step repeats, and a new step
// re-rolls every mask. Pass nullptr (or training=false) for eval mode.
struct ForwardState {
  bool training = false;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  int next_site = 0;
};

// Identity in eval mode; inverted dropout during training.
Tensor apply_dropout(Tape& t, const Tensor& x, double rate, ForwardState* fs);

// One stage of a strided convolutional stem.
struct StemStage {
  std::size_t channels;
  std::size_t stride;
};

// Text form "channels:stride,channels:stride,..." used by config files and
// checkpoint meta. parse_stem throws FormatError on malformed input.
std::string format_stem(const std::vector<StemStage>& stem);
std::vector<StemStage> parse_stem(const std::string& text);

// 3x3 conv + ReLU stages. Parameters live in the store under
// "<prefix>.<stage>.w" / ".b".
class ConvStem {
 public:
  ConvStem(ParamStore& store, const std::string& prefix,
           std::size_t in_channels, const std::vector<StemStage>& stages);

  // [in_channels x H x W] -> [out_channels x H/stride x W/stride]
  Tensor forward(Tape& t, const Tensor& image) const;

  std::size_t out_channels() const;
  std::size_t total_stride() const;

 private:
  struct Stage {
    Tensor w, b;
    std::size_t stride;
  };
  std::size_t in_channels_;
  std::vector<Stage> stages_;
};

// Stack of post-norm transformer encoder layers over a tokens-as-rows
// sequence [N x width]. Each layer: x = LN(x + Drop(Attn(x))) followed by
// x = LN(x + Drop(FFN(x))), FFN hidden width = 2*width with ReLU and an
// inner dropout. Parameters live under "<prefix>.<layer>.<leaf>".
class TransformerEncoder {
 public:
  TransformerEncoder(ParamStore& store, const std::string& prefix,
                     std::size_t width, std::size_t layers, std::size_t heads,
                     double dropout, double ln_eps);

  // valid_keys empty -> full attention; otherwise positions with
  // valid_keys[j] == 0 are excluded as attention targets (padding).
  Tensor forward(Tape& t, Tensor x, const std::vector<std::uint8_t>& valid_keys,
                 ForwardState* fs) const;

  std::size_t width() const { return width_; }

 private:
  struct Layer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
  };
  std::vector<Layer> layers_;
  std::size_t width_, heads_;
  double dropout_, ln_eps_;
};

}  // namespace epmvg::vg
