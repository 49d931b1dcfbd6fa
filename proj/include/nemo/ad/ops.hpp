#pragma once

// The primitive set: add, sub, mul, div (with row/column/scalar
// broadcasting), matmul, sums and means, sigmoid, relu, softplus, sqrt,
// row-wise cross product and normalization, concatenation, slicing and
// explicit broadcast.

#include <cmath>
#include <string>
#include <vector>

#include "nemo/ad/tape.hpp"

namespace nemo::ad {

namespace detail {

inline Eigen::Index broadcast_dim(Eigen::Index a, Eigen::Index b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeMismatch(std::string(op) + ": incompatible dimensions " + std::to_string(a) + " and " +
                      std::to_string(b));
}

inline Tensor expand(const Tensor& x, Eigen::Index rows, Eigen::Index cols) {
  if (x.rows() == rows && x.cols() == cols) return x;
  return x.replicate(rows / x.rows(), cols / x.cols());
}

/// Sums `g` down to shape rows x cols (undoes expand()).
inline Tensor reduce_to(const Tensor& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Tensor out = g;
  if (rows == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (cols == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ShapeMismatch("operands live on different tapes");
  return *a.tape();
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// --- elementwise binary with broadcasting ---

inline Var operator+(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const auto r = detail::broadcast_dim(a.rows(), b.rows(), "add");
  const auto c = detail::broadcast_dim(a.cols(), b.cols(), "add");
  Tensor v = detail::expand(a.value(), r, c) + detail::expand(b.value(), r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, detail::reduce_to(g, tp.value(ia).rows(), tp.value(ia).cols()));
    if (tp.needs_grad(ib)) tp.accumulate(ib, detail::reduce_to(g, tp.value(ib).rows(), tp.value(ib).cols()));
  });
}

inline Var operator-(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const auto r = detail::broadcast_dim(a.rows(), b.rows(), "sub");
  const auto c = detail::broadcast_dim(a.cols(), b.cols(), "sub");
  Tensor v = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, detail::reduce_to(g, tp.value(ia).rows(), tp.value(ia).cols()));
    if (tp.needs_grad(ib)) {
      tp.accumulate(ib, Tensor(-detail::reduce_to(g, tp.value(ib).rows(), tp.value(ib).cols())));
    }
  });
}

inline Var operator*(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const auto r = detail::broadcast_dim(a.rows(), b.rows(), "mul");
  const auto c = detail::broadcast_dim(a.cols(), b.cols(), "mul");
  Tensor v = detail::expand(a.value(), r, c).cwiseProduct(detail::expand(b.value(), r, c));
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), {a, b}, [ia, ib, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    const Tensor& va = tp.value(ia);
    const Tensor& vb = tp.value(ib);
    if (tp.needs_grad(ia)) {
      tp.accumulate(ia, detail::reduce_to(g.cwiseProduct(detail::expand(vb, r, c)), va.rows(), va.cols()));
    }
    if (tp.needs_grad(ib)) {
      tp.accumulate(ib, detail::reduce_to(g.cwiseProduct(detail::expand(va, r, c)), vb.rows(), vb.cols()));
    }
  });
}

inline Var operator/(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const auto r = detail::broadcast_dim(a.rows(), b.rows(), "div");
  const auto c = detail::broadcast_dim(a.cols(), b.cols(), "div");
  Tensor v = detail::expand(a.value(), r, c).cwiseQuotient(detail::expand(b.value(), r, c));
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), {a, b}, [ia, ib, r, c](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    const Tensor& va = tp.value(ia);
    const Tensor& vb = tp.value(ib);
    const Tensor eb = detail::expand(vb, r, c);
    if (tp.needs_grad(ia)) {
      tp.accumulate(ia, detail::reduce_to(g.cwiseQuotient(eb), va.rows(), va.cols()));
    }
    if (tp.needs_grad(ib)) {
      const Tensor ea = detail::expand(va, r, c);
      Tensor d = -(g.array() * ea.array() / (eb.array() * eb.array())).matrix();
      tp.accumulate(ib, detail::reduce_to(d, vb.rows(), vb.cols()));
    }
  });
}

// --- scalar constants ---

inline Var operator*(const Var& a, double s) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value() * s, {a}, [ia, s](Tape& tp, std::size_t self) {
    tp.accumulate(ia, Tensor(tp.adjoint(self) * s));
  });
}
inline Var operator*(double s, const Var& a) { return a * s; }
inline Var operator/(const Var& a, double s) { return a * (1.0 / s); }
inline Var operator-(const Var& a) { return a * -1.0; }

inline Var operator+(const Var& a, double s) {
  const std::size_t ia = a.id();
  return a.tape()->record((a.value().array() + s).matrix(), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.adjoint(self));
  });
}
inline Var operator+(double s, const Var& a) { return a + s; }
inline Var operator-(const Var& a, double s) { return a + (-s); }

/// Elementwise product with a constant tensor of broadcast-compatible shape.
inline Var operator*(const Var& a, const Tensor& k) { return a * a.tape()->constant(k); }
inline Var operator+(const Var& a, const Tensor& k) { return a + a.tape()->constant(k); }
inline Var operator-(const Var& a, const Tensor& k) { return a - a.tape()->constant(k); }

// --- linear algebra and reductions ---

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                        std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor v = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    if (tp.needs_grad(ia)) tp.accumulate(ia, Tensor(g * tp.value(ib).transpose()));
    if (tp.needs_grad(ib)) tp.accumulate(ib, Tensor(tp.value(ia).transpose() * g));
  });
}

/// Sum of all entries, 1x1.
inline Var sum(const Var& a) {
  const std::size_t ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(Tensor::Constant(1, 1, a.value().sum()), {a}, [ia, r, c](Tape& tp, std::size_t self) {
    tp.accumulate(ia, Tensor::Constant(r, c, tp.adjoint(self)(0, 0)));
  });
}

inline Var mean(const Var& a) { return sum(a) * (1.0 / static_cast<double>(a.value().size())); }

/// R x C -> R x 1.
inline Var row_sums(const Var& a) {
  const std::size_t ia = a.id();
  const auto c = a.cols();
  return a.tape()->record(a.value().rowwise().sum(), {a}, [ia, c](Tape& tp, std::size_t self) {
    tp.accumulate(ia, Tensor(tp.adjoint(self).replicate(1, c)));
  });
}

/// R x C -> 1 x C.
inline Var col_sums(const Var& a) {
  const std::size_t ia = a.id();
  const auto r = a.rows();
  return a.tape()->record(a.value().colwise().sum(), {a}, [ia, r](Tape& tp, std::size_t self) {
    tp.accumulate(ia, Tensor(tp.adjoint(self).replicate(r, 1)));
  });
}

inline Var row_means(const Var& a) { return row_sums(a) * (1.0 / static_cast<double>(a.cols())); }

// --- elementwise unary ---

inline Var sigmoid(const Var& a) {
  Tensor v = a.value().unaryExpr([](double x) { return detail::sigmoid(x); });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& y = tp.value(self);
    tp.accumulate(ia, Tensor(tp.adjoint(self).array() * y.array() * (1.0 - y.array())));
  });
}

inline Var relu(const Var& a) {
  Tensor v = a.value().cwiseMax(0.0);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& x = tp.value(ia);
    tp.accumulate(ia, Tensor((x.array() > 0.0).select(tp.adjoint(self).array(), 0.0)));
  });
}

inline Var softplus(const Var& a) {
  Tensor v = a.value().unaryExpr([](double x) { return detail::softplus(x); });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& x = tp.value(ia);
    tp.accumulate(ia, Tensor(tp.adjoint(self).array() * x.array().unaryExpr([](double z) {
      return detail::sigmoid(z);
    })));
  });
}

inline Var sqrt(const Var& a) {
  Tensor v = a.value().cwiseSqrt();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, Tensor(tp.adjoint(self).array() * 0.5 / tp.value(self).array()));
  });
}

inline Var square(const Var& a) {
  Tensor v = a.value().cwiseAbs2();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(v), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, Tensor(2.0 * tp.adjoint(self).array() * tp.value(ia).array()));
  });
}

// --- row-wise 3-vector ops ---

/// Row-wise cross product of two R x 3 tensors (either may be 1 x 3).
inline Var cross_rows(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != 3 || b.cols() != 3) throw ShapeMismatch("cross_rows expects 3 columns");
  const auto r = detail::broadcast_dim(a.rows(), b.rows(), "cross_rows");
  const Tensor ea = detail::expand(a.value(), r, 3);
  const Tensor eb = detail::expand(b.value(), r, 3);
  auto cross = [](const Tensor& x, const Tensor& y) {
    Tensor out(x.rows(), 3);
    out.col(0) = x.col(1).cwiseProduct(y.col(2)) - x.col(2).cwiseProduct(y.col(1));
    out.col(1) = x.col(2).cwiseProduct(y.col(0)) - x.col(0).cwiseProduct(y.col(2));
    out.col(2) = x.col(0).cwiseProduct(y.col(1)) - x.col(1).cwiseProduct(y.col(0));
    return out;
  };
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(cross(ea, eb), {a, b}, [ia, ib, r, cross](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    const Tensor& va = tp.value(ia);
    const Tensor& vb = tp.value(ib);
    // d/da (a x b).g = b x g ; d/db = g x a
    if (tp.needs_grad(ia)) tp.accumulate(ia, detail::reduce_to(cross(detail::expand(vb, r, 3), g), va.rows(), 3));
    if (tp.needs_grad(ib)) tp.accumulate(ib, detail::reduce_to(cross(g, detail::expand(va, r, 3)), vb.rows(), 3));
  });
}

/// Row-wise unit vectors. Throws DegenerateRotation if a row norm is <= eps.
inline Var normalize_rows(const Var& a, double eps) {
  const Tensor& x = a.value();
  const Eigen::VectorXd norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > eps)) {
      throw DegenerateRotation("normalize: row " + std::to_string(i) + " has norm " + std::to_string(norms(i)));
    }
  }
  Tensor y = x.array().colwise() / norms.array();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(y), {a}, [ia](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    const Tensor& yv = tp.value(self);
    const Eigen::VectorXd n = tp.value(ia).rowwise().norm();
    const Eigen::VectorXd proj = yv.cwiseProduct(g).rowwise().sum();
    Tensor d = g - (yv.array().colwise() * proj.array()).matrix();
    d.array().colwise() /= n.array();
    tp.accumulate(ia, d);
  });
}

/// Row-wise dot products, R x 1.
inline Var dot_rows(const Var& a, const Var& b) { return row_sums(a * b); }

// --- structural ---

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  Tape& t = *parts.front().tape();
  const auto r = parts.front().rows();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ShapeMismatch("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor v(r, total);
  std::vector<std::size_t> ids;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    ids.push_back(p.id());
  }
  return t.record(std::move(v), parts, [ids](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    Eigen::Index o = 0;
    for (std::size_t id : ids) {
      const auto c = tp.value(id).cols();
      if (tp.needs_grad(id)) tp.accumulate(id, Tensor(g.middleCols(o, c)));
      o += c;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  Tape& t = *parts.front().tape();
  const auto c = parts.front().cols();
  Eigen::Index total = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw ShapeMismatch("concat_rows: column counts differ");
    total += p.rows();
  }
  Tensor v(total, c);
  std::vector<std::size_t> ids;
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    v.middleRows(off, p.rows()) = p.value();
    off += p.rows();
    ids.push_back(p.id());
  }
  return t.record(std::move(v), parts, [ids](Tape& tp, std::size_t self) {
    const Tensor& g = tp.adjoint(self);
    Eigen::Index o = 0;
    for (std::size_t id : ids) {
      const auto r = tp.value(id).rows();
      if (tp.needs_grad(id)) tp.accumulate(id, Tensor(g.middleRows(o, r)));
      o += r;
    }
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeMismatch("slice_cols: out of range");
  const std::size_t ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [ia, r, c, start, count](Tape& tp, std::size_t self) {
                            Tensor d = Tensor::Zero(r, c);
                            d.middleCols(start, count) = tp.adjoint(self);
                            tp.accumulate(ia, d);
                          });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeMismatch("slice_rows: out of range");
  const std::size_t ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(a.value().middleRows(start, count), {a},
                          [ia, r, c, start, count](Tape& tp, std::size_t self) {
                            Tensor d = Tensor::Zero(r, c);
                            d.middleRows(start, count) = tp.adjoint(self);
                            tp.accumulate(ia, d);
                          });
}

/// Replicates a 1-row and/or 1-column tensor up to rows x cols.
inline Var broadcast_to(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if ((a.rows() != rows && a.rows() != 1) || (a.cols() != cols && a.cols() != 1)) {
    throw ShapeMismatch("broadcast_to: incompatible target shape");
  }
  const std::size_t ia = a.id();
  const auto r = a.rows(), c = a.cols();
  return a.tape()->record(detail::expand(a.value(), rows, cols), {a}, [ia, r, c](Tape& tp, std::size_t self) {
    tp.accumulate(ia, detail::reduce_to(tp.adjoint(self), r, c));
  });
}

}  // namespace nemo::ad
