#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epmvg/box.hpp"
#include "epmvg/tensor.hpp"

namespace epmvg::vg {

using numcore::Tensor;

// ---------------------------------------------------------------------------
// synthetic scenes

enum class ShapeKind { circle, square, triangle };
enum class SizeKind { small, large };
enum class RelKind { left_of, right_of, above, below };

// 8-color palette rendered on a 0.5 gray background.
struct PaletteColor {
  const char* name;
  double r, g, b;
};
const std::vector<PaletteColor>& palette();

const char* to_word(ShapeKind s);
const char* to_word(SizeKind s);
const char* to_phrase(RelKind r);

struct SceneObject {
  ShapeKind shape;
  int color;    // palette index
  SizeKind size;
  int cell;     // 0..15 on the 4x4 placement grid, row-major
  double cx, cy;  // jittered center in pixels
  double half_extent;  // pixels; the rendered footprint is 2*half_extent wide
};

// Structured form of the expression, kept alongside the text so referent
// uniqueness can be checked without parsing.
struct ExpressionSpec {
  int family = 0;  // 0 attribute, 1 relation, 2 region
  SizeKind size = SizeKind::small;
  int color = 0;
  ShapeKind shape = ShapeKind::circle;
  ShapeKind other_shape = ShapeKind::circle;  // relation family
  RelKind rel = RelKind::left_of;             // relation family
  int quadrant = 0;  // region family: 0 tl, 1 tr, 2 bl, 3 br
};

struct Scene {
  std::vector<SceneObject> objects;
  std::size_t target = 0;
  ExpressionSpec spec;
  std::string expression;
};

// Indices of scene objects the expression is true of; generation only
// accepts scenes where this is exactly {target}.
std::vector<std::size_t> matching_objects(const Scene& scene);

// ---------------------------------------------------------------------------
// dataset

struct Sample {
  std::uint64_t sample_id = 0;
  Tensor image;  // [3 x S x S], values in [0,1]
  std::string expression;
  BoundingBox gt_box;  // normalized, center format
  bool is_val = false;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> val_indices() const;
};

struct GrammarConfig {
  bool attribute = true;
  bool relation = true;
  bool region = true;
};

struct GeneratedDataset {
  Dataset dataset;
  std::vector<Scene> scenes;  // parallel to dataset.samples
};

// Deterministic in (n, seed, grammar, image_size). Scenes failing the
// unique-referent check are redrawn; DataError if n samples are not
// reached within 100*n attempts.
GeneratedDataset generate_dataset(std::size_t n, std::uint64_t seed,
                                  const GrammarConfig& grammar = {},
                                  int image_size = 64);

// ---------------------------------------------------------------------------
// text pipeline

inline constexpr int kClsId = 0;
inline constexpr int kPadId = 1;
inline constexpr int kUnkId = 2;

// Specials [CLS] [PAD] [UNK] followed by the grammar's closed word set.
const std::vector<std::string>& grammar_vocab();

// Lowercase, whitespace-split, vocab lookup with [UNK] fallback, prepend
// [CLS], pad/truncate to exactly n_l ids.
std::vector<int> tokenize(const std::string& expression,
                          const std::vector<std::string>& vocab,
                          std::size_t n_l);

// ---------------------------------------------------------------------------
// image preprocessing

struct BoxMap {
  double scale_x = 1.0, scale_y = 1.0;
  double offset_x = 0.0, offset_y = 0.0;
};

struct Preprocessed {
  Tensor image;  // [3 x S x S]
  BoxMap map;    // normalized source box -> normalized padded box
};

// Aspect-preserving bilinear resize of the longer side to S; the short side
// is padded (content anchored top-left) with the per-channel mean of the
// resized content.
Preprocessed preprocess_image(const Tensor& raw, int target_size);

BoundingBox map_box(const BoxMap& m, const BoundingBox& b);
BoundingBox unmap_box(const BoxMap& m, const BoundingBox& b);

// ---------------------------------------------------------------------------
// on-disk format

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Layout: <dir>/manifest.tsv plus <dir>/images/sample_<id>.ppm. Manifest
// line: id, file, expression, x, y, w, h (6 decimals), split; tab-separated.
void save_dataset(const std::string& dir, const Dataset& ds);
Dataset load_dataset(const std::string& dir);

}  // namespace epmvg::vg
