#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "spanparse/error.hpp"

namespace spanparse {

using Mat = Eigen::MatrixXd;

// Learnable parameter with gradient and Adam moment buffers.
struct Tensor {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;  // Adam first moment
  Mat v;  // Adam second moment

  Tensor() = default;
  Tensor(std::string n, int rows, int cols)
      : name(std::move(n)),
        value(Mat::Zero(rows, cols)),
        grad(Mat::Zero(rows, cols)),
        m(Mat::Zero(rows, cols)),
        v(Mat::Zero(rows, cols)) {}

  int64_t size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

// Named parameter collection. Order of insertion is the serialization order,
// so construction must be deterministic.
struct ParamSet {
  std::vector<Tensor> tensors;

  Tensor& add(const std::string& name, int rows, int cols);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  int64_t count() const;
  void zero_grad();
};

// Process-wide live/peak byte counter over tape activations. The benchmark
// harness resets the peak, runs one decode, and reads it back.
namespace memmeter {
void add(size_t bytes);
void sub(size_t bytes);
void reset_peak();
size_t peak();
size_t current();
}  // namespace memmeter

struct Var {
  int i = -1;
};

// Reverse-mode tape. Activations live on the tape; parameters are referenced
// directly and receive gradients via accumulation into Tensor::grad. A tape
// built with grad_enabled=false records values only.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_; }
  // Invalidated by the next op pushed onto this tape; copy the matrix if it
  // must outlive further graph construction.
  const Mat& val(Var v) const { return nodes_[v.i].value; }
  size_t live_bytes() const { return tracked_; }

  Var input(Mat value);  // constant leaf

  Var lookup_rows(Tensor& table, std::vector<int> ids);
  Var linear(Var x, Tensor& w, Tensor* b);  // x*W (+ b broadcast over rows)
  Var add_rowvec(Var x, Tensor& b);
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var add(Var a, Var b);
  Var add_const(Var a, const Mat& c);
  Var scale(Var a, double s);
  Var add_scaled(Var a, Var b, double s);  // a + s*b, same shape
  Var slice_cols(Var a, int start, int n);
  Var concat_cols(const std::vector<Var>& xs);
  Var gelu(Var a);
  Var layer_norm(Var a, Tensor& gamma, Tensor& beta);
  Var softmax_rows(Var a);
  Var log_softmax_rows(Var a);
  Var mean_rows(Var a);  // 1 x cols
  Var dropout(Var a, double p, std::mt19937_64& rng);

  // Scalar (1x1) reductions over row-wise log-distributions.
  Var nll(Var logp, std::vector<int> targets);  // mean over rows
  Var neg_entropy(Var logp);                    // mean_r sum_c p*logp
  Var ce_uniform(Var logp);                     // mean_r -(1/C) sum_c logp
  Var kl_sym(Var logp_a, Var logp_b);           // mean_r KL(a||b)+KL(b||a)

  void backward(Var loss);

 private:
  struct Node {
    Mat value;
    Mat grad;  // lazily allocated during backward
    std::function<void()> back;
  };

  std::vector<Node> nodes_;
  bool grad_ = true;
  size_t tracked_ = 0;

  Var push(Mat value, std::function<void()> back = {});
  void accum(int node, const Mat& g);
  const Mat& grad_of(int node) const { return nodes_[node].grad; }

  friend struct TapeTestAccess;
};

}  // namespace spanparse
