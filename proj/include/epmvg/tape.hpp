#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "epmvg/rng.hpp"
#include "epmvg/tensor.hpp"

namespace epmvg::numcore {

// Reverse-mode tape. Ops append their result plus a backward closure in
// execution order, so the record is topologically sorted by construction.
// One tape per forward pass; single-threaded. backward() walks the record
// in reverse, visiting each recorded op exactly once, and leaves
// d(loss)/d(tensor) in the grad of every requires_grad tensor reachable
// from the loss. Gradients of fan-out nodes accumulate additively.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // elementwise, same shape
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);
  Tensor maximum(const Tensor& a, const Tensor& b);
  Tensor minimum(const Tensor& a, const Tensor& b);

  Tensor add_scalar(const Tensor& a, double c);
  Tensor scale(const Tensor& a, double c);
  // y = a * s with s a single-element tensor; gradient reaches both.
  Tensor scale_by(const Tensor& a, const Tensor& s);
  Tensor neg(const Tensor& a) { return scale(a, -1.0); }
  Tensor max_scalar(const Tensor& a, double c);

  // elementwise maps
  Tensor relu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor sqrt(const Tensor& a);
  Tensor abs(const Tensor& a);
  // 0.5*x^2 for |x| < 1, |x| - 0.5 otherwise; one-sided derivatives agree
  // at the seam.
  Tensor huber_unit(const Tensor& a);

  // linear algebra (2-D)
  Tensor matmul(const Tensor& a, const Tensor& b);
  // a[m x k] * b[n x k]^T without materializing the transpose
  Tensor matmul_nt(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  // reductions
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);

  // shape plumbing
  Tensor reshape(const Tensor& a, Shape shape);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
  Tensor row(const Tensor& a, std::size_t i);      // [cols]
  Tensor col(const Tensor& a, std::size_t j);      // [rows]
  Tensor element(const Tensor& a, std::size_t flat_index);  // scalar
  // y = x + v broadcast over rows of x[r x c], v[c]
  Tensor add_rowvec(const Tensor& x, const Tensor& v);

  // normalized maps
  Tensor softmax(const Tensor& a, std::size_t axis);
  // softmax along `axis` restricted to positions with valid[j] != 0;
  // masked positions are exactly 0 in the output.
  Tensor masked_softmax(const Tensor& a, std::size_t axis,
                        const std::vector<std::uint8_t>& valid);
  Tensor log_softmax_rows(const Tensor& a);
  Tensor take_diag(const Tensor& a);
  // normalize each length along the LAST axis to zero mean / unit variance,
  // then scale by gain and shift by bias (both sized to the last axis)
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps);

  // network pieces
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                std::size_t stride, std::size_t padding);
  Tensor embedding(const Tensor& table, const std::vector<int>& ids);
  Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);
  Tensor adaptive_avg_pool1d(const Tensor& x, std::size_t out_size);

  // Seeds d(loss)/d(loss) = 1 and propagates back through the record.
  // loss must be a scalar produced by this tape.
  void backward(const Tensor& loss);

  void clear();
  std::size_t size() const { return entries_.size(); }

 private:
  // fn receives d(loss)/d(result) and accumulates into input grads.
  // Empty when the result does not require grad.
  using BackwardFn = std::function<void(const std::vector<double>&)>;

  struct Entry {
    std::shared_ptr<detail::TensorImpl> result;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    BackwardFn fn;
  };

  Tensor finish(const char* op, Shape shape, std::vector<double> data,
                std::vector<Tensor> inputs, BackwardFn fn);

  std::vector<Entry> entries_;
};

}  // namespace epmvg::numcore
