#include "epmvg/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "epmvg/errors.hpp"
#include "epmvg/rng.hpp"

namespace epmvg::vg {

using numcore::Rng;
using numcore::mix64;

namespace {

constexpr int kGrid = 4;  // placement grid is 4x4

// radii and jitter are pinned at the 64px reference and scale with S
double small_radius(int s) { return 4.5 * s / 64.0; }
double large_radius(int s) { return 6.5 * s / 64.0; }
double jitter_extent(int s) { return 1.5 * s / 64.0; }

bool inside_shape(ShapeKind shape, double dx, double dy, double r) {
  switch (shape) {
    case ShapeKind::circle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::square:
      return std::fabs(dx) <= r && std::fabs(dy) <= r;
    case ShapeKind::triangle:
      // apex at (0, -r), base corners at (-r, +r) and (+r, +r)
      return dy <= r && std::fabs(dx) <= (dy + r) / 2.0;
  }
  return false;
}

void render_scene(const Scene& scene, int s, Tensor& image) {
  double* px = image.mut_data().data();
  const std::size_t plane = std::size_t(s) * s;
  std::fill(px, px + 3 * plane, 0.5);

  for (const SceneObject& o : scene.objects) {
    const PaletteColor& col = palette()[std::size_t(o.color)];
    const double rgb[3] = {col.r, col.g, col.b};
    const double r = o.half_extent;
    const int x0 = std::max(0, int(std::floor(o.cx - r)));
    const int x1 = std::min(s - 1, int(std::ceil(o.cx + r)));
    const int y0 = std::max(0, int(std::floor(o.cy - r)));
    const int y1 = std::min(s - 1, int(std::ceil(o.cy + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;  // 4x4 subsamples per pixel for anti-aliasing
        for (int sy = 0; sy < 4; ++sy) {
          for (int sx = 0; sx < 4; ++sx) {
            const double sx_pos = x + (sx + 0.5) / 4.0 - o.cx;
            const double sy_pos = y + (sy + 0.5) / 4.0 - o.cy;
            if (inside_shape(o.shape, sx_pos, sy_pos, r)) ++hits;
          }
        }
        if (hits == 0) continue;
        const double cov = hits / 16.0;
        for (int c = 0; c < 3; ++c) {
          double& v = px[c * plane + std::size_t(y) * s + x];
          v = v * (1.0 - cov) + rgb[c] * cov;
        }
      }
    }
  }
}

int quadrant_of(const SceneObject& o) {
  const int col = o.cell % kGrid, row = o.cell / kGrid;
  return (row < kGrid / 2 ? 0 : 2) + (col < kGrid / 2 ? 0 : 1);
}

const char* quadrant_phrase(int q) {
  switch (q) {
    case 0: return "top left";
    case 1: return "top right";
    case 2: return "bottom left";
    case 3: return "bottom right";
  }
  throw ParamError("invalid quadrant index");
}

bool relation_holds(const SceneObject& a, const SceneObject& b, RelKind rel) {
  switch (rel) {
    case RelKind::left_of: return a.cx < b.cx;
    case RelKind::right_of: return a.cx > b.cx;
    case RelKind::above: return a.cy < b.cy;
    case RelKind::below: return a.cy > b.cy;
  }
  return false;
}

std::string build_expression(const Scene& scene) {
  const ExpressionSpec& e = scene.spec;
  std::string out = "the ";
  switch (e.family) {
    case 0:
      out += to_word(e.size);
      out += ' ';
      out += palette()[std::size_t(e.color)].name;
      out += ' ';
      out += to_word(e.shape);
      break;
    case 1:
      out += to_word(e.shape);
      out += ' ';
      out += to_phrase(e.rel);
      out += " the ";
      out += to_word(e.other_shape);
      break;
    case 2:
      out += palette()[std::size_t(e.color)].name;
      out += ' ';
      out += to_word(e.shape);
      out += " in the ";
      out += quadrant_phrase(e.quadrant);
      break;
    default:
      throw ParamError("invalid expression family");
  }
  return out;
}

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string format_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

const std::vector<PaletteColor>& palette() {
  static const std::vector<PaletteColor> p = {
      {"red", 1.0, 0.0, 0.0},    {"green", 0.0, 1.0, 0.0},
      {"blue", 0.0, 0.0, 1.0},   {"yellow", 1.0, 1.0, 0.0},
      {"purple", 0.5, 0.0, 0.5}, {"cyan", 0.0, 1.0, 1.0},
      {"orange", 1.0, 0.65, 0.0}, {"white", 1.0, 1.0, 1.0},
  };
  return p;
}

const char* to_word(ShapeKind s) {
  switch (s) {
    case ShapeKind::circle: return "circle";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  throw ParamError("invalid shape kind");
}

const char* to_word(SizeKind s) {
  return s == SizeKind::small ? "small" : "large";
}

const char* to_phrase(RelKind r) {
  switch (r) {
    case RelKind::left_of: return "left of";
    case RelKind::right_of: return "right of";
    case RelKind::above: return "above";
    case RelKind::below: return "below";
  }
  throw ParamError("invalid relation kind");
}

std::vector<std::size_t> matching_objects(const Scene& scene) {
  const ExpressionSpec& e = scene.spec;
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& o = scene.objects[i];
    bool match = false;
    switch (e.family) {
      case 0:
        match = o.size == e.size && o.color == e.color && o.shape == e.shape;
        break;
      case 1: {
        if (o.shape != e.shape) break;
        for (std::size_t j = 0; j < scene.objects.size(); ++j) {
          if (j == i) continue;
          const SceneObject& w = scene.objects[j];
          if (w.shape == e.other_shape && relation_holds(o, w, e.rel)) {
            match = true;
            break;
          }
        }
        break;
      }
      case 2:
        match = o.color == e.color && o.shape == e.shape &&
                quadrant_of(o) == e.quadrant;
        break;
      default:
        throw ParamError("invalid expression family");
    }
    if (match) hits.push_back(i);
  }
  return hits;
}

std::vector<std::size_t> Dataset::train_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (!samples[i].is_val) idx.push_back(i);
  return idx;
}

std::vector<std::size_t> Dataset::val_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].is_val) idx.push_back(i);
  return idx;
}

GeneratedDataset generate_dataset(std::size_t n, std::uint64_t seed,
                                  const GrammarConfig& grammar,
                                  int image_size) {
  if (n == 0) throw ParamError("generate_dataset: n must be at least 1");
  if (image_size < 16 || image_size % kGrid != 0)
    throw ParamError("generate_dataset: image size must be a multiple of 4, "
                     "at least 16");
  std::vector<int> families;
  if (grammar.attribute) families.push_back(0);
  if (grammar.relation) families.push_back(1);
  if (grammar.region) families.push_back(2);
  if (families.empty())
    throw ParamError("generate_dataset: no template family enabled");

  const double cell = double(image_size) / kGrid;
  const std::uint64_t max_attempts = 100 * std::uint64_t(n);

  GeneratedDataset out;
  std::uint64_t attempt = 0;
  while (out.dataset.samples.size() < n) {
    if (attempt >= max_attempts)
      throw DataError("could not generate " + std::to_string(n) +
                      " unique-referent scenes in " +
                      std::to_string(max_attempts) + " attempts");
    Rng rng(seed, "generation", attempt++);

    Scene scene;
    const std::size_t n_objects = 1 + std::size_t(rng.uniform_int(1, 4));
    std::vector<int> cells;
    while (cells.size() < n_objects) {
      const int c = int(rng.uniform_int(0, kGrid * kGrid - 1));
      if (std::find(cells.begin(), cells.end(), c) == cells.end())
        cells.push_back(c);
    }
    for (std::size_t i = 0; i < n_objects; ++i) {
      SceneObject o;
      o.shape = ShapeKind(rng.uniform_int(0, 2));
      o.color = int(rng.uniform_int(0, 7));
      o.size = SizeKind(rng.uniform_int(0, 1));
      o.cell = cells[i];
      o.half_extent = o.size == SizeKind::small ? small_radius(image_size)
                                                : large_radius(image_size);
      const double j = jitter_extent(image_size);
      o.cx = (o.cell % kGrid + 0.5) * cell + rng.uniform(-j, j);
      o.cy = (o.cell / kGrid + 0.5) * cell + rng.uniform(-j, j);
      scene.objects.push_back(o);
    }

    scene.target = std::size_t(rng.uniform_int(0, int(n_objects) - 1));
    const SceneObject& target = scene.objects[scene.target];
    ExpressionSpec& e = scene.spec;
    e.family = families[std::size_t(rng.uniform_int(0, int(families.size()) - 1))];
    switch (e.family) {
      case 0:
        e.size = target.size;
        e.color = target.color;
        e.shape = target.shape;
        break;
      case 1: {
        const std::size_t other = (scene.target + 1 +
                                   std::size_t(rng.uniform_int(0, int(n_objects) - 2))) %
                                  n_objects;
        const SceneObject& w = scene.objects[other];
        e.shape = target.shape;
        e.other_shape = w.shape;
        std::vector<RelKind> holds;
        for (RelKind r : {RelKind::left_of, RelKind::right_of, RelKind::above,
                          RelKind::below})
          if (relation_holds(target, w, r)) holds.push_back(r);
        if (holds.empty()) continue;  // coincident centers, redraw
        e.rel = holds[std::size_t(rng.uniform_int(0, int(holds.size()) - 1))];
        break;
      }
      case 2:
        e.color = target.color;
        e.shape = target.shape;
        e.quadrant = quadrant_of(target);
        break;
    }
    scene.expression = build_expression(scene);

    const std::vector<std::size_t> hits = matching_objects(scene);
    if (hits.size() != 1 || hits[0] != scene.target) continue;

    Sample sample;
    sample.sample_id = out.dataset.samples.size();
    sample.expression = scene.expression;
    sample.image = Tensor::zeros(
        {3, std::size_t(image_size), std::size_t(image_size)});
    render_scene(scene, image_size, sample.image);
    sample.gt_box.x = target.cx / image_size;
    sample.gt_box.y = target.cy / image_size;
    sample.gt_box.w = 2.0 * target.half_extent / image_size;
    sample.gt_box.h = 2.0 * target.half_extent / image_size;
    sample.is_val = mix64(sample.sample_id) % 10 == 0;
    if (!in_frame(sample.gt_box))
      throw DataError("generated box escaped the frame");

    out.dataset.samples.push_back(std::move(sample));
    out.scenes.push_back(std::move(scene));
  }
  return out;
}

const std::vector<std::string>& grammar_vocab() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> words = {"[CLS]", "[PAD]", "[UNK]"};
    words.insert(words.end(), {"the", "small", "large"});
    for (const PaletteColor& c : palette()) words.push_back(c.name);
    words.insert(words.end(), {"circle", "square", "triangle", "left",
                               "right", "above", "below", "of", "in", "top",
                               "bottom"});
    return words;
  }();
  return v;
}

std::vector<int> tokenize(const std::string& expression,
                          const std::vector<std::string>& vocab,
                          std::size_t n_l) {
  if (n_l == 0) throw ParamError("tokenize: token budget must be positive");
  std::vector<int> ids;
  ids.reserve(n_l);
  ids.push_back(kClsId);
  std::istringstream in(lower(expression));
  std::string word;
  while (ids.size() < n_l && in >> word) {
    const auto it = std::find(vocab.begin(), vocab.end(), word);
    ids.push_back(it == vocab.end() ? kUnkId : int(it - vocab.begin()));
  }
  while (ids.size() < n_l) ids.push_back(kPadId);
  return ids;
}

Preprocessed preprocess_image(const Tensor& raw, int target_size) {
  if (target_size <= 0)
    throw ParamError("preprocess_image: target size must be positive");
  if (raw.ndim() != 3 || raw.dim(0) != 3)
    throw ShapeError("preprocess_image expects [3 x h x w], got " +
                     numcore::shape_str(raw.shape()));
  const std::size_t h0 = raw.dim(1), w0 = raw.dim(2);
  const std::size_t s = std::size_t(target_size);
  const std::size_t longer = std::max(h0, w0);
  const std::size_t out_h = std::max<std::size_t>(
      1, std::size_t(std::llround(double(h0) * double(s) / double(longer))));
  const std::size_t out_w = std::max<std::size_t>(
      1, std::size_t(std::llround(double(w0) * double(s) / double(longer))));

  Tensor result = Tensor::zeros({3, s, s});
  double* dst = result.mut_data().data();
  const double* src = raw.data().data();
  double mean[3] = {0.0, 0.0, 0.0};

  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const double sy = (y + 0.5) * double(h0) / double(out_h) - 0.5;
      const double cy = std::clamp(sy, 0.0, double(h0 - 1));
      const std::size_t y0 = std::size_t(cy);
      const std::size_t y1 = std::min(y0 + 1, h0 - 1);
      const double fy = cy - double(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double sx = (x + 0.5) * double(w0) / double(out_w) - 0.5;
        const double cx = std::clamp(sx, 0.0, double(w0 - 1));
        const std::size_t x0 = std::size_t(cx);
        const std::size_t x1 = std::min(x0 + 1, w0 - 1);
        const double fx = cx - double(x0);
        const double v00 = src[(c * h0 + y0) * w0 + x0];
        const double v01 = src[(c * h0 + y0) * w0 + x1];
        const double v10 = src[(c * h0 + y1) * w0 + x0];
        const double v11 = src[(c * h0 + y1) * w0 + x1];
        const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                         fy * ((1 - fx) * v10 + fx * v11);
        dst[(c * s + y) * s + x] = v;
        mean[c] += v;
      }
    }
    mean[c] /= double(out_h * out_w);
  }

  // pad the uncovered band (right and bottom) with the channel mean
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        if (y < out_h && x < out_w) continue;
        dst[(c * s + y) * s + x] = mean[c];
      }
    }
  }

  Preprocessed p;
  p.image = result;
  p.map.scale_x = double(out_w) / double(s);
  p.map.scale_y = double(out_h) / double(s);
  return p;
}

BoundingBox map_box(const BoxMap& m, const BoundingBox& b) {
  return {b.x * m.scale_x + m.offset_x, b.y * m.scale_y + m.offset_y,
          b.w * m.scale_x, b.h * m.scale_y};
}

BoundingBox unmap_box(const BoxMap& m, const BoundingBox& b) {
  return {(b.x - m.offset_x) / m.scale_x, (b.y - m.offset_y) / m.scale_y,
          b.w / m.scale_x, b.h / m.scale_y};
}

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("write_ppm expects [3 x h x w], got " +
                     numcore::shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  const double* px = image.data().data();
  std::string bytes;
  bytes.reserve(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(px[(c * h + y) * w + x], 0.0, 1.0);
        bytes.push_back(char(std::uint8_t(std::lround(v * 255.0))));
      }
    }
  }
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

Tensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open image '" + path + "'");
  std::string magic;
  f >> magic;
  if (magic != "P6")
    throw FormatError("'" + path + "' is not a binary PPM (magic '" + magic +
                      "')");
  std::size_t w = 0, h = 0;
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w == 0 || h == 0)
    throw FormatError("bad PPM header in '" + path + "'");
  if (maxval != 255)
    throw FormatError("unsupported PPM maxval " + std::to_string(maxval) +
                      " in '" + path + "'");
  f.get();  // single whitespace byte after the header
  std::string bytes(3 * w * h, '\0');
  f.read(bytes.data(), std::streamsize(bytes.size()));
  if (std::size_t(f.gcount()) != bytes.size())
    throw FormatError("truncated PPM payload in '" + path + "'");

  Tensor image = Tensor::zeros({3, h, w});
  double* px = image.mut_data().data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        px[(c * h + y) * w + x] =
            double(std::uint8_t(bytes[(y * w + x) * 3 + c])) / 255.0;
  return image;
}

void save_dataset(const std::string& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream manifest(fs::path(dir) / "manifest.tsv",
                         std::ios::binary | std::ios::trunc);
  if (!manifest) throw DataError("cannot write manifest in '" + dir + "'");
  for (const Sample& s : ds.samples) {
    const std::string file =
        "images/sample_" + std::to_string(s.sample_id) + ".ppm";
    write_ppm((fs::path(dir) / file).string(), s.image);
    manifest << s.sample_id << '\t' << file << '\t' << s.expression << '\t'
             << format_coord(s.gt_box.x) << '\t' << format_coord(s.gt_box.y)
             << '\t' << format_coord(s.gt_box.w) << '\t'
             << format_coord(s.gt_box.h) << '\t'
             << (s.is_val ? "val" : "train") << '\n';
  }
  if (!manifest) throw DataError("manifest write failed in '" + dir + "'");
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.tsv").string();
  std::ifstream manifest(manifest_path, std::ios::binary);
  if (!manifest) throw DataError("cannot open manifest '" + manifest_path + "'");

  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_tabs(line);
    if (f.size() != 8)
      throw FormatError(manifest_path + ":" + std::to_string(lineno) +
                        ": expected 8 tab-separated fields, got " +
                        std::to_string(f.size()));
    Sample s;
    try {
      s.sample_id = std::stoull(f[0]);
      s.expression = f[2];
      s.gt_box.x = std::stod(f[3]);
      s.gt_box.y = std::stod(f[4]);
      s.gt_box.w = std::stod(f[5]);
      s.gt_box.h = std::stod(f[6]);
    } catch (const std::exception&) {
      throw FormatError(manifest_path + ":" + std::to_string(lineno) +
                        ": malformed numeric field");
    }
    if (f[7] == "val")
      s.is_val = true;
    else if (f[7] == "train")
      s.is_val = false;
    else
      throw FormatError(manifest_path + ":" + std::to_string(lineno) +
                        ": unknown split tag '" + f[7] + "'");
    if (s.expression.empty())
      throw FormatError(manifest_path + ":" + std::to_string(lineno) +
                        ": empty expression");
    s.image = read_ppm((fs::path(dir) / f[1]).string());
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty())
    throw DataError("manifest '" + manifest_path + "' holds no samples");
  return ds;
}

}  // namespace epmvg::vg
