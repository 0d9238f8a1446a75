#include "spanparse/tensor.hpp"

#include <atomic>
#include <cmath>

namespace spanparse {

namespace memmeter {
namespace {
std::atomic<size_t> g_current{0};
std::atomic<size_t> g_peak{0};
}  // namespace

void add(size_t bytes) {
  const size_t now = g_current.fetch_add(bytes) + bytes;
  size_t prev = g_peak.load();
  while (now > prev && !g_peak.compare_exchange_weak(prev, now)) {
  }
}

void sub(size_t bytes) { g_current.fetch_sub(bytes); }
void reset_peak() { g_peak.store(g_current.load()); }
size_t peak() { return g_peak.load(); }
size_t current() { return g_current.load(); }
}  // namespace memmeter

Tensor& ParamSet::add(const std::string& name, int rows, int cols) {
  if (has(name)) fail(ErrorKind::ConfigError, "duplicate tensor " + name);
  tensors.emplace_back(name, rows, cols);
  return tensors.back();
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& t : tensors)
    if (t.name == name) return t;
  fail(ErrorKind::ConfigError, "no tensor named " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  fail(ErrorKind::ConfigError, "no tensor named " + name);
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

int64_t ParamSet::count() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& t : tensors) t.zero_grad();
}

Tape::~Tape() { memmeter::sub(tracked_); }

Var Tape::push(Mat value, std::function<void()> back) {
  const size_t bytes = static_cast<size_t>(value.size()) * sizeof(double);
  memmeter::add(bytes);
  tracked_ += bytes;
  Node n;
  n.value = std::move(value);
  if (grad_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int node, const Mat& g) {
  Node& n = nodes_[node];
  if (n.grad.size() == 0) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    const size_t bytes = static_cast<size_t>(n.grad.size()) * sizeof(double);
    memmeter::add(bytes);
    tracked_ += bytes;
  }
  n.grad += g;
}

Var Tape::input(Mat value) { return push(std::move(value)); }

Var Tape::lookup_rows(Tensor& table, std::vector<int> ids) {
  const int rows = static_cast<int>(ids.size());
  Mat out(rows, table.value.cols());
  for (int r = 0; r < rows; ++r) {
    if (ids[r] < 0 || ids[r] >= table.value.rows())
      fail(ErrorKind::ConfigError,
           "row " + std::to_string(ids[r]) + " outside table " + table.name);
    out.row(r) = table.value.row(ids[r]);
  }
  Tensor* tp = &table;
  Var v = push(std::move(out));
  nodes_[v.i].back = !grad_ ? std::function<void()>() :
      [this, v, tp, ids = std::move(ids)] {
        const Mat& g = grad_of(v.i);
        for (int r = 0; r < g.rows(); ++r) tp->grad.row(ids[r]) += g.row(r);
      };
  return v;
}

Var Tape::linear(Var x, Tensor& w, Tensor* b) {
  Mat out = val(x) * w.value;
  if (b) out.rowwise() += b->value.row(0);
  Var v = push(std::move(out));
  Tensor* wp = &w;
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, x, wp, b] {
    const Mat& g = grad_of(v.i);
    accum(x.i, g * wp->value.transpose());
    wp->grad += val(x).transpose() * g;
    if (b) b->grad += g.colwise().sum();
  };
  return v;
}

Var Tape::add_rowvec(Var x, Tensor& b) {
  Mat out = val(x);
  out.rowwise() += b.value.row(0);
  Var v = push(std::move(out));
  Tensor* bp = &b;
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, x, bp] {
    const Mat& g = grad_of(v.i);
    accum(x.i, g);
    bp->grad += g.colwise().sum();
  };
  return v;
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  Mat out;
  if (!trans_a && !trans_b) out = A * B;
  else if (trans_a && !trans_b) out = A.transpose() * B;
  else if (!trans_a && trans_b) out = A * B.transpose();
  else out = A.transpose() * B.transpose();
  Var v = push(std::move(out));
  nodes_[v.i].back = !grad_ ? std::function<void()>() :
      [this, v, a, b, trans_a, trans_b] {
        const Mat& g = grad_of(v.i);
        const Mat& A = val(a);
        const Mat& B = val(b);
        if (!trans_a) accum(a.i, trans_b ? Mat(g * B) : Mat(g * B.transpose()));
        else accum(a.i, trans_b ? Mat(B.transpose() * g.transpose())
                                : Mat(B * g.transpose()));
        if (!trans_b) accum(b.i, trans_a ? Mat(A * g) : Mat(A.transpose() * g));
        else accum(b.i, trans_a ? Mat(g.transpose() * A.transpose())
                                : Mat(g.transpose() * A));
      };
  return v;
}

Var Tape::add(Var a, Var b) {
  Var v = push(val(a) + val(b));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a, b] {
    accum(a.i, grad_of(v.i));
    accum(b.i, grad_of(v.i));
  };
  return v;
}

Var Tape::add_const(Var a, const Mat& c) {
  Var v = push(val(a) + c);
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a] {
    accum(a.i, grad_of(v.i));
  };
  return v;
}

Var Tape::scale(Var a, double s) {
  Var v = push(val(a) * s);
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a, s] {
    accum(a.i, grad_of(v.i) * s);
  };
  return v;
}

Var Tape::add_scaled(Var a, Var b, double s) {
  Var v = push(val(a) + s * val(b));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a, b, s] {
    accum(a.i, grad_of(v.i));
    accum(b.i, grad_of(v.i) * s);
  };
  return v;
}

Var Tape::slice_cols(Var a, int start, int n) {
  Var v = push(val(a).middleCols(start, n));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a, start, n] {
    Mat g = Mat::Zero(val(a).rows(), val(a).cols());
    g.middleCols(start, n) = grad_of(v.i);
    accum(a.i, g);
  };
  return v;
}

Var Tape::concat_cols(const std::vector<Var>& xs) {
  int rows = val(xs[0]).rows(), cols = 0;
  for (Var x : xs) cols += val(x).cols();
  Mat out(rows, cols);
  int at = 0;
  for (Var x : xs) {
    out.middleCols(at, val(x).cols()) = val(x);
    at += val(x).cols();
  }
  Var v = push(std::move(out));
  nodes_[v.i].back = !grad_ ? std::function<void()>() :
      [this, v, xs = std::vector<Var>(xs)] {
        const Mat& g = grad_of(v.i);
        int at = 0;
        for (Var x : xs) {
          accum(x.i, g.middleCols(at, val(x).cols()));
          at += val(x).cols();
        }
      };
  return v;
}

Var Tape::gelu(Var a) {
  const Mat& x = val(a);
  Mat out = x.unaryExpr(
      [](double t) { return 0.5 * t * (1.0 + std::erf(t * M_SQRT1_2)); });
  Var v = push(std::move(out));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a] {
    static const double inv_sqrt_2pi = 0.3989422804014327;
    Mat d = val(a).unaryExpr([](double t) {
      return 0.5 * (1.0 + std::erf(t * M_SQRT1_2)) +
             t * inv_sqrt_2pi * std::exp(-0.5 * t * t);
    });
    accum(a.i, grad_of(v.i).cwiseProduct(d));
  };
  return v;
}

Var Tape::layer_norm(Var a, Tensor& gamma, Tensor& beta) {
  static const double eps = 1e-5;
  const Mat& x = val(a);
  const int R = x.rows(), C = x.cols();
  Mat xhat(R, C);
  Eigen::VectorXd inv_std(R);
  for (int r = 0; r < R; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Mat out = xhat;
  out.array().rowwise() *= gamma.value.row(0).array();
  out.rowwise() += beta.value.row(0);
  Var v = push(std::move(out));
  Tensor* gp = &gamma;
  Tensor* bp = &beta;
  nodes_[v.i].back = !grad_ ? std::function<void()>() :
      [this, v, a, gp, bp, xhat = std::move(xhat),
       inv_std = std::move(inv_std)] {
        const Mat& g = grad_of(v.i);
        gp->grad += (g.cwiseProduct(xhat)).colwise().sum();
        bp->grad += g.colwise().sum();
        Mat dxhat = g;
        dxhat.array().rowwise() *= gp->value.row(0).array();
        Mat dx(g.rows(), g.cols());
        for (int r = 0; r < g.rows(); ++r) {
          const double m1 = dxhat.row(r).mean();
          const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
          dx.row(r) =
              inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
        accum(a.i, dx);
      };
  return v;
}

Var Tape::softmax_rows(Var a) {
  const Mat& x = val(a);
  Mat out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  Var v = push(std::move(out));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a] {
    const Mat& g = grad_of(v.i);
    const Mat& y = val(v);
    Mat dx(g.rows(), g.cols());
    for (int r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    accum(a.i, dx);
  };
  return v;
}

Var Tape::log_softmax_rows(Var a) {
  const Mat& x = val(a);
  Mat out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const double mx = x.row(r).maxCoeff();
    const double lse = std::log((x.row(r).array() - mx).exp().sum()) + mx;
    out.row(r) = x.row(r).array() - lse;
  }
  Var v = push(std::move(out));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a] {
    const Mat& g = grad_of(v.i);
    const Mat& lp = val(v);
    Mat dx(g.rows(), g.cols());
    for (int r = 0; r < g.rows(); ++r) {
      const double s = g.row(r).sum();
      dx.row(r) = g.row(r) - s * lp.row(r).array().exp().matrix();
    }
    accum(a.i, dx);
  };
  return v;
}

Var Tape::mean_rows(Var a) {
  const Mat& x = val(a);
  Var v = push(x.colwise().mean());
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, a] {
    const Mat& g = grad_of(v.i);
    const double inv = 1.0 / val(a).rows();
    accum(a.i, (g * inv).replicate(val(a).rows(), 1));
  };
  return v;
}

Var Tape::dropout(Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) fail(ErrorKind::ConfigError, "dropout rate must be < 1");
  const Mat& x = val(a);
  std::bernoulli_distribution keep(1.0 - p);
  Mat mask(x.rows(), x.cols());
  const double scl = 1.0 / (1.0 - p);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) mask(r, c) = keep(rng) ? scl : 0.0;
  Var v = push(x.cwiseProduct(mask));
  nodes_[v.i].back = !grad_ ? std::function<void()>() :
      [this, v, a, mask = std::move(mask)] {
        accum(a.i, grad_of(v.i).cwiseProduct(mask));
      };
  return v;
}

Var Tape::nll(Var logp, std::vector<int> targets) {
  const Mat& lp = val(logp);
  if (static_cast<int>(targets.size()) != lp.rows())
    fail(ErrorKind::ConfigError, "nll: one target per row required");
  double acc = 0;
  for (int r = 0; r < lp.rows(); ++r) {
    if (targets[r] < 0 || targets[r] >= lp.cols())
      fail(ErrorKind::TargetOutOfVocab,
           "target " + std::to_string(targets[r]) + " outside " +
               std::to_string(lp.cols()) + " classes");
    acc -= lp(r, targets[r]);
  }
  Var v = push(Mat::Constant(1, 1, acc / lp.rows()));
  nodes_[v.i].back = !grad_ ? std::function<void()>() :
      [this, v, logp, targets = std::move(targets)] {
        const double g = grad_of(v.i)(0, 0) / val(logp).rows();
        Mat d = Mat::Zero(val(logp).rows(), val(logp).cols());
        for (int r = 0; r < d.rows(); ++r) d(r, targets[r]) = -g;
        accum(logp.i, d);
      };
  return v;
}

Var Tape::neg_entropy(Var logp) {
  const Mat& lp = val(logp);
  const double value = lp.array().exp().cwiseProduct(lp.array()).sum() / lp.rows();
  Var v = push(Mat::Constant(1, 1, value));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, logp] {
    const Mat& lp = val(logp);
    const double g = grad_of(v.i)(0, 0) / lp.rows();
    Mat p = lp.array().exp();
    accum(logp.i, g * (p.cwiseProduct(lp) + p));
  };
  return v;
}

Var Tape::ce_uniform(Var logp) {
  const Mat& lp = val(logp);
  const double value = -lp.sum() / (lp.rows() * lp.cols());
  Var v = push(Mat::Constant(1, 1, value));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, logp] {
    const Mat& lp = val(logp);
    const double g = grad_of(v.i)(0, 0) / (lp.rows() * lp.cols());
    accum(logp.i, Mat::Constant(lp.rows(), lp.cols(), -g));
  };
  return v;
}

Var Tape::kl_sym(Var logp_a, Var logp_b) {
  const Mat& la = val(logp_a);
  const Mat& lb = val(logp_b);
  if (la.rows() != lb.rows() || la.cols() != lb.cols())
    fail(ErrorKind::ConfigError, "kl_sym: shape mismatch");
  const Mat pa = la.array().exp();
  const Mat pb = lb.array().exp();
  const Mat diff = la - lb;
  const double value =
      (pa.cwiseProduct(diff).sum() - pb.cwiseProduct(diff).sum()) / la.rows();
  Var v = push(Mat::Constant(1, 1, value));
  nodes_[v.i].back = !grad_ ? std::function<void()>() : [this, v, logp_a, logp_b] {
    const Mat& la = val(logp_a);
    const Mat& lb = val(logp_b);
    const double g = grad_of(v.i)(0, 0) / la.rows();
    const Mat pa = la.array().exp();
    const Mat pb = lb.array().exp();
    const Mat diff = la - lb;
    accum(logp_a.i, g * (pa.cwiseProduct(diff) + pa - pb));
    accum(logp_b.i, g * (pb.cwiseProduct(-diff) + pb - pa));
  };
  return v;
}

void Tape::backward(Var loss) {
  if (!grad_) fail(ErrorKind::ConfigError, "backward on a no-grad tape");
  if (val(loss).size() != 1)
    fail(ErrorKind::ConfigError, "backward expects a scalar loss");
  accum(loss.i, Mat::Constant(1, 1, 1.0));
  for (int i = loss.i; i >= 0; --i)
    if (nodes_[i].grad.size() != 0 && nodes_[i].back) nodes_[i].back();
}

}  // namespace spanparse
