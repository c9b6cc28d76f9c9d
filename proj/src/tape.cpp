#include "epmvg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "epmvg/errors.hpp"
#include "kernels.hpp"

namespace epmvg::numcore {

namespace {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_2d(const char* op, const Tensor& a) {
  if (a.ndim() != 2)
    throw ShapeError(std::string(op) + " expects a 2-D tensor, got " +
                     shape_str(a.shape()));
}

bool any_requires_grad(const std::vector<Tensor>& ts) {
  return std::any_of(ts.begin(), ts.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

struct Lanes {
  std::size_t outer, len, inner;
};

Lanes lanes_for(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(s));
  Lanes l{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) l.inner *= s[i];
  return l;
}

}  // namespace

Tensor Tape::finish(const char* op, Shape shape, std::vector<double> data,
                    std::vector<Tensor> inputs, BackwardFn fn) {
  check_finite(op, data);
  Tensor r = Tensor::from_data(std::move(shape), std::move(data),
                               any_requires_grad(inputs));
  Entry e;
  e.result = r.impl_ptr();
  e.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) e.inputs.push_back(t.impl_ptr());
  if (r.requires_grad()) e.fn = std::move(fn);
  entries_.push_back(std::move(e));
  return r;
}

// ---------------------------------------------------------------------------
// elementwise binary

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("add", a.shape(), std::move(out), {a, b},
                [ai, bi](const std::vector<double>& g) {
                  if (ai->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ai->grad[i] += g[i];
                  if (bi->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      bi->grad[i] += g[i];
                });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("sub", a.shape(), std::move(out), {a, b},
                [ai, bi](const std::vector<double>& g) {
                  if (ai->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ai->grad[i] += g[i];
                  if (bi->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      bi->grad[i] -= g[i];
                });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("mul", a.shape(), std::move(out), {a, b},
                [ai, bi](const std::vector<double>& g) {
                  if (ai->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ai->grad[i] += g[i] * bi->data[i];
                  if (bi->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      bi->grad[i] += g[i] * ai->data[i];
                });
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] / b.data()[i];
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("div", a.shape(), std::move(out), {a, b},
                [ai, bi](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double inv = 1.0 / bi->data[i];
                    if (ai->requires_grad) ai->grad[i] += g[i] * inv;
                    if (bi->requires_grad)
                      bi->grad[i] -= g[i] * ai->data[i] * inv * inv;
                  }
                });
}

Tensor Tape::maximum(const Tensor& a, const Tensor& b) {
  check_same_shape("maximum", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::max(a.data()[i], b.data()[i]);
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("maximum", a.shape(), std::move(out), {a, b},
                [ai, bi](const std::vector<double>& g) {
                  // ties route the gradient to the first argument
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if (ai->data[i] >= bi->data[i]) {
                      if (ai->requires_grad) ai->grad[i] += g[i];
                    } else if (bi->requires_grad) {
                      bi->grad[i] += g[i];
                    }
                  }
                });
}

Tensor Tape::minimum(const Tensor& a, const Tensor& b) {
  check_same_shape("minimum", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::min(a.data()[i], b.data()[i]);
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("minimum", a.shape(), std::move(out), {a, b},
                [ai, bi](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if (ai->data[i] <= bi->data[i]) {
                      if (ai->requires_grad) ai->grad[i] += g[i];
                    } else if (bi->requires_grad) {
                      bi->grad[i] += g[i];
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// scalar-argument elementwise

Tensor Tape::add_scalar(const Tensor& a, double c) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] + c;
  Impl ai = a.impl_ptr();
  return finish("add_scalar", a.shape(), std::move(out), {a},
                [ai](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i];
                });
}

Tensor Tape::scale(const Tensor& a, double c) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
  Impl ai = a.impl_ptr();
  return finish("scale", a.shape(), std::move(out), {a},
                [ai, c](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i] * c;
                });
}

Tensor Tape::scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1)
    throw ShapeError("scale_by needs a single-element scale, got " +
                     shape_str(s.shape()));
  const double c = s.data()[0];
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * c;
  Impl ai = a.impl_ptr(), si = s.impl_ptr();
  return finish("scale_by", a.shape(), std::move(out), {a, s},
                [ai, si, c](const std::vector<double>& g) {
                  if (ai->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      ai->grad[i] += g[i] * c;
                  if (si->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i)
                      acc += g[i] * ai->data[i];
                    si->grad[0] += acc;
                  }
                });
}

Tensor Tape::max_scalar(const Tensor& a, double c) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(a.data()[i], c);
  Impl ai = a.impl_ptr();
  return finish("max_scalar", a.shape(), std::move(out), {a},
                [ai, c](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (ai->data[i] >= c) ai->grad[i] += g[i];
                });
}

// ---------------------------------------------------------------------------
// elementwise maps

Tensor Tape::relu(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::max(a.data()[i], 0.0);
  Impl ai = a.impl_ptr();
  return finish("relu", a.shape(), std::move(out), {a},
                [ai](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    if (ai->data[i] > 0.0) ai->grad[i] += g[i];
                });
}

Tensor Tape::sigmoid(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    // stable form for both signs
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  Impl ai = a.impl_ptr();
  std::vector<double> y = out;
  return finish("sigmoid", a.shape(), std::move(out), {a},
                [ai, y = std::move(y)](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i] * y[i] * (1.0 - y[i]);
                });
}

Tensor Tape::exp(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a.data()[i]);
  Impl ai = a.impl_ptr();
  std::vector<double> y = out;
  return finish("exp", a.shape(), std::move(out), {a},
                [ai, y = std::move(y)](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i] * y[i];
                });
}

Tensor Tape::log(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (a.data()[i] <= 0.0)
      throw NumericError("log of a non-positive value");
    out[i] = std::log(a.data()[i]);
  }
  Impl ai = a.impl_ptr();
  return finish("log", a.shape(), std::move(out), {a},
                [ai](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i] / ai->data[i];
                });
}

Tensor Tape::sqrt(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (a.data()[i] < 0.0) throw NumericError("sqrt of a negative value");
    out[i] = std::sqrt(a.data()[i]);
  }
  Impl ai = a.impl_ptr();
  std::vector<double> y = out;
  return finish("sqrt", a.shape(), std::move(out), {a},
                [ai, y = std::move(y)](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i] * 0.5 / y[i];
                });
}

Tensor Tape::abs(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(a.data()[i]);
  Impl ai = a.impl_ptr();
  return finish("abs", a.shape(), std::move(out), {a},
                [ai](const std::vector<double>& g) {
                  // subgradient 0 at the origin
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = ai->data[i];
                    if (x > 0.0)
                      ai->grad[i] += g[i];
                    else if (x < 0.0)
                      ai->grad[i] -= g[i];
                  }
                });
}

Tensor Tape::huber_unit(const Tensor& a) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.data()[i];
    const double ax = std::fabs(x);
    out[i] = ax < 1.0 ? 0.5 * x * x : ax - 0.5;
  }
  Impl ai = a.impl_ptr();
  return finish("huber_unit", a.shape(), std::move(out), {a},
                [ai](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double x = ai->data[i];
                    const double d =
                        std::fabs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
                    ai->grad[i] += g[i] * d;
                  }
                });
}

// ---------------------------------------------------------------------------
// linear algebra

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  detail::mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("matmul", {m, n}, std::move(out), {a, b},
                [ai, bi, m, k, n](const std::vector<double>& g) {
                  if (ai->requires_grad)
                    detail::mm_nt(g.data(), bi->data.data(), ai->grad.data(),
                                  m, n, k, true);
                  if (bi->requires_grad)
                    detail::mm_tn(ai->data.data(), g.data(), bi->grad.data(),
                                  k, m, n, true);
                });
}

Tensor Tape::matmul_nt(const Tensor& a, const Tensor& b) {
  check_2d("matmul_nt", a);
  check_2d("matmul_nt", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw ShapeError("matmul_nt: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  detail::mm_nt(a.data().data(), b.data().data(), out.data(), m, k, n, false);
  Impl ai = a.impl_ptr(), bi = b.impl_ptr();
  return finish("matmul_nt", {m, n}, std::move(out), {a, b},
                [ai, bi, m, k, n](const std::vector<double>& g) {
                  if (ai->requires_grad)
                    detail::mm_nn(g.data(), bi->data.data(), ai->grad.data(),
                                  m, n, k, true);
                  if (bi->requires_grad)
                    detail::mm_tn(g.data(), ai->data.data(), bi->grad.data(),
                                  n, m, k, true);
                });
}

Tensor Tape::transpose(const Tensor& a) {
  check_2d("transpose", a);
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
  Impl ai = a.impl_ptr();
  return finish("transpose", {c, r}, std::move(out), {a},
                [ai, r, c](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j)
                      ai->grad[i * c + j] += g[j * r + i];
                });
}

// ---------------------------------------------------------------------------
// reductions

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  Impl ai = a.impl_ptr();
  return finish("sum", {1}, {s}, {a}, [ai](const std::vector<double>& g) {
    for (double& gi : ai->grad) gi += g[0];
  });
}

Tensor Tape::mean(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  const double inv = 1.0 / static_cast<double>(a.size());
  Impl ai = a.impl_ptr();
  return finish("mean", {1}, {s * inv}, {a},
                [ai, inv](const std::vector<double>& g) {
                  const double gi = g[0] * inv;
                  for (double& gd : ai->grad) gd += gi;
                });
}

// ---------------------------------------------------------------------------
// shape plumbing

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: size mismatch, " + shape_str(a.shape()) +
                     " to " + shape_str(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  Impl ai = a.impl_ptr();
  return finish("reshape", std::move(shape), std::move(out), {a},
                [ai](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i] += g[i];
                });
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  std::size_t cols = 0, rows = 0;
  for (const Tensor& p : parts) {
    check_2d("concat_rows", p);
    if (cols == 0) cols = p.dim(1);
    if (p.dim(1) != cols)
      throw ShapeError("concat_rows: column mismatch, expected " +
                       std::to_string(cols) + ", got " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const Tensor& p : parts)
    out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Impl> impls;
  impls.reserve(parts.size());
  for (const Tensor& p : parts) impls.push_back(p.impl_ptr());
  return finish("concat_rows", {rows, cols}, std::move(out), parts,
                [impls](const std::vector<double>& g) {
                  std::size_t off = 0;
                  for (const Impl& pi : impls) {
                    const std::size_t n = pi->data.size();
                    if (pi->requires_grad)
                      for (std::size_t i = 0; i < n; ++i)
                        pi->grad[i] += g[off + i];
                    off += n;
                  }
                });
}

Tensor Tape::slice_rows(const Tensor& a, std::size_t begin,
                        std::size_t count) {
  check_2d("slice_rows", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (begin + count > rows)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " +
                     std::to_string(rows) + " rows");
  std::vector<double> out(a.data().begin() + begin * cols,
                          a.data().begin() + (begin + count) * cols);
  Impl ai = a.impl_ptr();
  return finish("slice_rows", {count, cols}, std::move(out), {a},
                [ai, begin, cols](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[begin * cols + i] += g[i];
                });
}

Tensor Tape::row(const Tensor& a, std::size_t i) {
  Tensor s = slice_rows(a, i, 1);
  return reshape(s, {a.dim(1)});
}

Tensor Tape::col(const Tensor& a, std::size_t j) {
  check_2d("col", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (j >= cols)
    throw ShapeError("col: index " + std::to_string(j) + " out of " +
                     std::to_string(cols) + " columns");
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = a.data()[i * cols + j];
  Impl ai = a.impl_ptr();
  return finish("col", {rows}, std::move(out), {a},
                [ai, j, cols](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    ai->grad[i * cols + j] += g[i];
                });
}

Tensor Tape::element(const Tensor& a, std::size_t flat_index) {
  if (flat_index >= a.size())
    throw ShapeError("element: index " + std::to_string(flat_index) +
                     " out of " + std::to_string(a.size()));
  Impl ai = a.impl_ptr();
  return finish("element", {1}, {a.data()[flat_index]}, {a},
                [ai, flat_index](const std::vector<double>& g) {
                  ai->grad[flat_index] += g[0];
                });
}

Tensor Tape::add_rowvec(const Tensor& x, const Tensor& v) {
  check_2d("add_rowvec", x);
  if (v.ndim() != 1 || v.dim(0) != x.dim(1))
    throw ShapeError("add_rowvec: vector " + shape_str(v.shape()) +
                     " does not match columns of " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = x.data()[i * cols + j] + v.data()[j];
  Impl xi = x.impl_ptr(), vi = v.impl_ptr();
  return finish("add_rowvec", x.shape(), std::move(out), {x, v},
                [xi, vi, rows, cols](const std::vector<double>& g) {
                  if (xi->requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                      xi->grad[i] += g[i];
                  if (vi->requires_grad)
                    for (std::size_t i = 0; i < rows; ++i)
                      for (std::size_t j = 0; j < cols; ++j)
                        vi->grad[j] += g[i * cols + j];
                });
}

// ---------------------------------------------------------------------------
// normalized maps

Tensor Tape::softmax(const Tensor& a, std::size_t axis) {
  const Lanes L = lanes_for("softmax", a.shape(), axis);
  std::vector<double> out(a.size());
  const auto x = a.data();
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t in = 0; in < L.inner; ++in) {
      const std::size_t base = o * L.len * L.inner + in;
      double mx = x[base];
      for (std::size_t j = 1; j < L.len; ++j)
        mx = std::max(mx, x[base + j * L.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < L.len; ++j) {
        const double e = std::exp(x[base + j * L.inner] - mx);
        out[base + j * L.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < L.len; ++j) out[base + j * L.inner] *= inv;
    }
  }
  Impl ai = a.impl_ptr();
  std::vector<double> y = out;
  return finish("softmax", a.shape(), std::move(out), {a},
                [ai, L, y = std::move(y)](const std::vector<double>& g) {
                  for (std::size_t o = 0; o < L.outer; ++o) {
                    for (std::size_t in = 0; in < L.inner; ++in) {
                      const std::size_t base = o * L.len * L.inner + in;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < L.len; ++j) {
                        const std::size_t t = base + j * L.inner;
                        dot += g[t] * y[t];
                      }
                      for (std::size_t j = 0; j < L.len; ++j) {
                        const std::size_t t = base + j * L.inner;
                        ai->grad[t] += y[t] * (g[t] - dot);
                      }
                    }
                  }
                });
}

Tensor Tape::masked_softmax(const Tensor& a, std::size_t axis,
                            const std::vector<std::uint8_t>& valid) {
  const Lanes L = lanes_for("masked_softmax", a.shape(), axis);
  if (valid.size() != L.len)
    throw ShapeError("masked_softmax: mask length " +
                     std::to_string(valid.size()) + " does not match axis of " +
                     shape_str(a.shape()));
  if (std::none_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v; }))
    throw ContractError("masked_softmax: all positions are masked");
  std::vector<double> out(a.size(), 0.0);
  const auto x = a.data();
  for (std::size_t o = 0; o < L.outer; ++o) {
    for (std::size_t in = 0; in < L.inner; ++in) {
      const std::size_t base = o * L.len * L.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < L.len; ++j)
        if (valid[j]) mx = std::max(mx, x[base + j * L.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < L.len; ++j) {
        if (!valid[j]) continue;
        const double e = std::exp(x[base + j * L.inner] - mx);
        out[base + j * L.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t j = 0; j < L.len; ++j)
        if (valid[j]) out[base + j * L.inner] *= inv;
    }
  }
  Impl ai = a.impl_ptr();
  std::vector<double> y = out;
  return finish("masked_softmax", a.shape(), std::move(out), {a},
                [ai, L, y = std::move(y)](const std::vector<double>& g) {
                  // masked outputs are exactly 0, so the plain softmax
                  // backward already routes no gradient to them
                  for (std::size_t o = 0; o < L.outer; ++o) {
                    for (std::size_t in = 0; in < L.inner; ++in) {
                      const std::size_t base = o * L.len * L.inner + in;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < L.len; ++j) {
                        const std::size_t t = base + j * L.inner;
                        dot += g[t] * y[t];
                      }
                      for (std::size_t j = 0; j < L.len; ++j) {
                        const std::size_t t = base + j * L.inner;
                        ai->grad[t] += y[t] * (g[t] - dot);
                      }
                    }
                  }
                });
}

Tensor Tape::log_softmax_rows(const Tensor& a) {
  check_2d("log_softmax_rows", a);
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<double> out(rows * cols);
  const auto x = a.data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x.data() + i * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(xr[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = xr[j] - lse;
  }
  Impl ai = a.impl_ptr();
  std::vector<double> y = out;
  return finish("log_softmax_rows", a.shape(), std::move(out), {a},
                [ai, rows, cols, y = std::move(y)](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < rows; ++i) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) s += g[i * cols + j];
                    for (std::size_t j = 0; j < cols; ++j) {
                      const std::size_t t = i * cols + j;
                      ai->grad[t] += g[t] - std::exp(y[t]) * s;
                    }
                  }
                });
}

Tensor Tape::take_diag(const Tensor& a) {
  check_2d("take_diag", a);
  const std::size_t n = a.dim(0);
  if (a.dim(1) != n)
    throw ShapeError("take_diag expects a square matrix, got " +
                     shape_str(a.shape()));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i * n + i];
  Impl ai = a.impl_ptr();
  return finish("take_diag", {n}, std::move(out), {a},
                [ai, n](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < n; ++i)
                    ai->grad[i * n + i] += g[i];
                });
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain,
                        const Tensor& bias, double eps) {
  if (eps <= 0.0) throw ParamError("layer_norm: eps must be positive");
  if (x.ndim() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != n || bias.ndim() != 1 ||
      bias.dim(0) != n)
    throw ShapeError("layer_norm: gain/bias must be length " +
                     std::to_string(n));
  const std::size_t lanes = x.size() / n;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(lanes);
  const auto xd = x.data();
  for (std::size_t l = 0; l < lanes; ++l) {
    const double* xr = xd.data() + l * n;
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += xr[j];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xr[j] - m;
      v += d * d;
    }
    v /= static_cast<double>(n);
    const double s = 1.0 / std::sqrt(v + eps);
    inv_std[l] = s;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - m) * s;
      xhat[l * n + j] = h;
      out[l * n + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  Impl xi = x.impl_ptr(), gi = gain.impl_ptr(), bi = bias.impl_ptr();
  return finish(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [xi, gi, bi, n, lanes, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const std::vector<double>& g) {
        const double invn = 1.0 / static_cast<double>(n);
        for (std::size_t l = 0; l < lanes; ++l) {
          const double* gr = g.data() + l * n;
          const double* hr = xhat.data() + l * n;
          if (gi->requires_grad)
            for (std::size_t j = 0; j < n; ++j)
              gi->grad[j] += gr[j] * hr[j];
          if (bi->requires_grad)
            for (std::size_t j = 0; j < n; ++j) bi->grad[j] += gr[j];
          if (xi->requires_grad) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = gr[j] * gi->data[j];
              m1 += dh;
              m2 += dh * hr[j];
            }
            m1 *= invn;
            m2 *= invn;
            const double s = inv_std[l];
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = gr[j] * gi->data[j];
              xi->grad[l * n + j] += (dh - m1 - hr[j] * m2) * s;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// network pieces

Tensor Tape::conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                    std::size_t stride, std::size_t padding) {
  if (x.ndim() != 3)
    throw ShapeError("conv2d expects input [C x H x W], got " +
                     shape_str(x.shape()));
  if (w.ndim() != 4)
    throw ShapeError("conv2d expects weight [Co x Ci x Kh x Kw], got " +
                     shape_str(w.shape()));
  if (stride == 0) throw ParamError("conv2d: stride must be positive");
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci)
    throw ShapeError("conv2d: input channels " + std::to_string(ci) +
                     " do not match weight " + shape_str(w.shape()));
  if (b.ndim() != 1 || b.dim(0) != co)
    throw ShapeError("conv2d: bias must be length " + std::to_string(co));
  if (h + 2 * padding < kh || wd + 2 * padding < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - kw) / stride + 1;

  std::vector<double> out(co * ho * wo);
  const auto xd = x.data();
  const auto wdat = w.data();
  for (std::size_t oc = 0; oc < co; ++oc) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        double acc = b.data()[oc];
        for (std::size_t ic = 0; ic < ci; ++ic) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) -
                static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) -
                  static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              acc += xd[(ic * h + iy) * wd + ix] *
                     wdat[((oc * ci + ic) * kh + ky) * kw + kx];
            }
          }
        }
        out[(oc * ho + oy) * wo + ox] = acc;
      }
    }
  }

  Impl xi = x.impl_ptr(), wi = w.impl_ptr(), bi = b.impl_ptr();
  return finish(
      "conv2d", {co, ho, wo}, std::move(out), {x, w, b},
      [xi, wi, bi, ci, h, wd, co, kh, kw, ho, wo, stride,
       padding](const std::vector<double>& g) {
        for (std::size_t oc = 0; oc < co; ++oc) {
          for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double go = g[(oc * ho + oy) * wo + ox];
              if (bi->requires_grad) bi->grad[oc] += go;
              for (std::size_t ic = 0; ic < ci; ++ic) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(oy * stride + ky) -
                      static_cast<std::ptrdiff_t>(padding);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  for (std::size_t kx = 0; kx < kw; ++kx) {
                    const std::ptrdiff_t ix =
                        static_cast<std::ptrdiff_t>(ox * stride + kx) -
                        static_cast<std::ptrdiff_t>(padding);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd))
                      continue;
                    const std::size_t xo = (ic * h + iy) * wd + ix;
                    const std::size_t wo_idx =
                        ((oc * ci + ic) * kh + ky) * kw + kx;
                    if (xi->requires_grad)
                      xi->grad[xo] += go * wi->data[wo_idx];
                    if (wi->requires_grad)
                      wi->grad[wo_idx] += go * xi->data[xo];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor Tape::embedding(const Tensor& table, const std::vector<int>& ids) {
  check_2d("embedding", table);
  const std::size_t v = table.dim(0), e = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v)
      throw DataError("embedding: token id " + std::to_string(ids[i]) +
                      " at position " + std::to_string(i) +
                      " out of vocabulary of size " + std::to_string(v));
  }
  std::vector<double> out(ids.size() * e);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * e, e,
                out.data() + i * e);
  Impl ti = table.impl_ptr();
  std::vector<int> idc = ids;
  return finish("embedding", {ids.size(), e}, std::move(out), {table},
                [ti, e, idc = std::move(idc)](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < idc.size(); ++i) {
                    double* gr =
                        ti->grad.data() + static_cast<std::size_t>(idc[i]) * e;
                    const double* gs = g.data() + i * e;
                    for (std::size_t j = 0; j < e; ++j) gr[j] += gs[j];
                  }
                });
}

Tensor Tape::dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ParamError("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const std::size_t n = x.size();
  const double keep_inv = 1.0 / (1.0 - rate);
  std::vector<double> mask(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = rng.uniform() >= rate ? keep_inv : 0.0;
    out[i] = x.data()[i] * mask[i];
  }
  Impl xi = x.impl_ptr();
  return finish("dropout", x.shape(), std::move(out), {x},
                [xi, mask = std::move(mask)](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < g.size(); ++i)
                    xi->grad[i] += g[i] * mask[i];
                });
}

Tensor Tape::adaptive_avg_pool1d(const Tensor& x, std::size_t out_size) {
  if (x.ndim() != 1)
    throw ShapeError("adaptive_avg_pool1d expects a 1-D tensor, got " +
                     shape_str(x.shape()));
  if (out_size == 0)
    throw ParamError("adaptive_avg_pool1d: output size must be positive");
  const std::size_t d = x.dim(0);
  std::vector<double> out(out_size);
  for (std::size_t i = 0; i < out_size; ++i) {
    const std::size_t lo = i * d / out_size;
    const std::size_t hi = ((i + 1) * d + out_size - 1) / out_size;
    double s = 0.0;
    for (std::size_t j = lo; j < hi; ++j) s += x.data()[j];
    out[i] = s / static_cast<double>(hi - lo);
  }
  Impl xi = x.impl_ptr();
  return finish("adaptive_avg_pool1d", {out_size}, std::move(out), {x},
                [xi, d, out_size](const std::vector<double>& g) {
                  for (std::size_t i = 0; i < out_size; ++i) {
                    const std::size_t lo = i * d / out_size;
                    const std::size_t hi =
                        ((i + 1) * d + out_size - 1) / out_size;
                    const double gi =
                        g[i] / static_cast<double>(hi - lo);
                    for (std::size_t j = lo; j < hi; ++j) xi->grad[j] += gi;
                  }
                });
}

// ---------------------------------------------------------------------------
// backward

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got " +
                        shape_str(loss.shape()));
  if (entries_.empty()) throw ContractError("backward on an empty tape");

  TensorImpl* loss_impl = loss.impl();
  const bool produced =
      std::any_of(entries_.begin(), entries_.end(),
                  [loss_impl](const Entry& e) { return e.result.get() == loss_impl; });
  if (!produced)
    throw ContractError("backward: loss was not produced by this tape");
  if (!loss.requires_grad()) return;  // nothing reachable requires grad

  // reachability: reverse pass over the topologically ordered record
  std::unordered_set<TensorImpl*> reach;
  reach.insert(loss_impl);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!reach.count(it->result.get())) continue;
    for (const Impl& in : it->inputs)
      if (in->requires_grad) reach.insert(in.get());
  }

  for (TensorImpl* t : reach) t->grad.assign(t->data.size(), 0.0);
  loss_impl->grad[0] = 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->fn && reach.count(it->result.get())) it->fn(it->result->grad);
  }
}

void Tape::clear() { entries_.clear(); }

}  // namespace epmvg::numcore
