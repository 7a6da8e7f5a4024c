#pragma once

// Dense math primitives shared by the model, the lenses and the analyses.
// Everything is templated on the scalar type; the runtime path uses float,
// the gradient checks instantiate the same code with double.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>

#include "lensdyn/errors.hpp"

namespace lensdyn {

using Index = Eigen::Index;

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using VectorF = Vector<float>;
using MatrixD = Matrix<double>;
using VectorD = Vector<double>;

/// Floor applied to q before taking its log in KL(p || q).
inline constexpr double kKlFloor = 1e-12;
/// Slack allowed on the normalization of probability inputs.
inline constexpr double kNormTolerance = 1e-6;

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

template <class Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const char* what) {
  if (!x.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

template <class A, class B>
Matrix<typename A::Scalar> matmul(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_string(a.rows(), a.cols()) +
                     " x " + shape_string(b.rows(), b.cols()));
  }
  Matrix<typename A::Scalar> out = a * b;
  require_finite(out, "matmul result");
  return out;
}

/// Max-subtracted softmax over all entries.
template <class Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  if (logits.size() == 0) throw ArgumentError("softmax: empty input");
  require_finite(logits, "softmax input");
  const S peak = logits.maxCoeff();
  Vector<S> out = (logits.derived().reshaped().array() - peak).exp().matrix();
  out /= out.sum();
  return out;
}

/// Softmax over the selected entries only; output is ordered like `restrict`.
template <class Derived>
Vector<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits,
                                         std::span<const Index> restrict) {
  if (restrict.empty()) throw ArgumentError("softmax: empty restriction set");
  Vector<typename Derived::Scalar> picked(static_cast<Index>(restrict.size()));
  for (std::size_t i = 0; i < restrict.size(); ++i) {
    const Index k = restrict[i];
    if (k < 0 || k >= logits.size()) {
      throw IndexError("softmax: restricted index " + std::to_string(k) +
                       " out of range for length " + std::to_string(logits.size()));
    }
    picked[static_cast<Index>(i)] = logits.derived().reshaped()(k);
  }
  return softmax(picked);
}

/// Row-wise softmax of a [n x V] matrix.
template <class Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  if (logits.cols() == 0) throw ArgumentError("softmax_rows: empty rows");
  require_finite(logits, "softmax input");
  Matrix<Scalar> out = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

/// (x - mean) / sqrt(var + eps) * gain + bias, population variance.
template <class X, class G, class B>
Vector<typename X::Scalar> layer_norm(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<G>& gain,
                                      const Eigen::MatrixBase<B>& bias, typename X::Scalar eps) {
  using S = typename X::Scalar;
  if (x.size() != gain.size() || x.size() != bias.size()) {
    throw ShapeError("layer_norm: dimension mismatch x=" + std::to_string(x.size()) +
                     " gain=" + std::to_string(gain.size()) + " bias=" + std::to_string(bias.size()));
  }
  if (!(eps > S(0))) throw ArgumentError("layer_norm: eps must be positive");
  const S mean = x.mean();
  const Vector<S> centered = x.derived().reshaped().array() - mean;
  const S var = centered.squaredNorm() / static_cast<S>(x.size());
  const S inv = S(1) / std::sqrt(var + eps);
  return (centered.array() * inv * gain.derived().reshaped().array() +
          bias.derived().reshaped().array())
      .matrix();
}

/// Row-wise layer norm of a [n x d] matrix; same arithmetic as the vector form.
template <class Scalar>
Matrix<Scalar> layer_norm_rows(const Matrix<Scalar>& x, const Vector<Scalar>& gain,
                               const Vector<Scalar>& bias, Scalar eps) {
  if (x.cols() != gain.size() || x.cols() != bias.size()) {
    throw ShapeError("layer_norm: dimension mismatch x=" + shape_string(x.rows(), x.cols()) +
                     " gain=" + std::to_string(gain.size()));
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = layer_norm(x.row(i).transpose(), gain, bias, eps).transpose();
  return out;
}

/// KL(p || q) = sum p_i log(p_i / q_i); zero-probability terms of p contribute nothing.
template <class P, class Q>
typename P::Scalar kl_divergence(const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<Q>& q) {
  using S = typename P::Scalar;
  if (p.size() != q.size()) {
    throw ShapeError("kl_divergence: length mismatch " + std::to_string(p.size()) + " vs " +
                     std::to_string(q.size()));
  }
  if (p.size() == 0) throw ArgumentError("kl_divergence: empty input");
  if (std::abs(static_cast<double>(p.sum()) - 1.0) > kNormTolerance ||
      std::abs(static_cast<double>(q.sum()) - 1.0) > kNormTolerance || (p.array() < S(0)).any() ||
      (q.array() < S(0)).any()) {
    throw ArgumentError("kl_divergence: inputs must be normalized probability vectors");
  }
  const auto pf = p.derived().reshaped();
  const auto qf = q.derived().reshaped();
  S total = 0;
  for (Index i = 0; i < p.size(); ++i) {
    const S pi = pf(i);
    if (pi == S(0)) continue;
    const S qi = std::max(qf(i), static_cast<S>(kKlFloor));
    total += pi * (std::log(pi) - std::log(qi));
  }
  return std::max(total, S(0));
}

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

template <class Scalar>
struct AdamState {
  AdamHyper hyper;
  Index rows = 0;
  Index cols = 0;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> first_moment;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> second_moment;
  std::int64_t step = 0;
};

template <class Scalar>
AdamState<Scalar> make_adam_state(Index rows, Index cols, const AdamHyper& hyper) {
  AdamState<Scalar> s;
  s.hyper = hyper;
  s.rows = rows;
  s.cols = cols;
  s.first_moment = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(rows * cols);
  s.second_moment = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(rows * cols);
  return s;
}

/// One Adam update with decoupled weight decay, in place.
template <class Derived, class GradDerived>
void adam_step(Eigen::PlainObjectBase<Derived>& params, const Eigen::MatrixBase<GradDerived>& grads,
               AdamState<typename Derived::Scalar>& state) {
  using S = typename Derived::Scalar;
  if (params.rows() != grads.rows() || params.cols() != grads.cols() || params.rows() != state.rows ||
      params.cols() != state.cols) {
    throw ShapeError("adam_step: params " + shape_string(params.rows(), params.cols()) + ", grads " +
                     shape_string(grads.rows(), grads.cols()) + ", state " +
                     shape_string(state.rows, state.cols));
  }
  require_finite(grads, "adam_step gradients");
  const AdamHyper& h = state.hyper;
  state.step += 1;
  const S lr = static_cast<S>(h.learning_rate);
  const S b1 = static_cast<S>(h.beta1);
  const S b2 = static_cast<S>(h.beta2);
  const S correction1 = static_cast<S>(1.0 - std::pow(h.beta1, static_cast<double>(state.step)));
  const S correction2 = static_cast<S>(1.0 - std::pow(h.beta2, static_cast<double>(state.step)));

  // Same storage order as params, so both flatten identically.
  const typename Derived::PlainObject grads_plain = grads;
  Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>> p(params.data(), params.size());
  const Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>> g(grads_plain.data(), grads_plain.size());

  if (h.weight_decay != 0.0) p -= lr * static_cast<S>(h.weight_decay) * p;
  state.first_moment = b1 * state.first_moment + (S(1) - b1) * g;
  state.second_moment = b2 * state.second_moment + (S(1) - b2) * g.square();
  const auto m_hat = state.first_moment / correction1;
  const auto v_hat = state.second_moment / correction2;
  p -= lr * m_hat / (v_hat.sqrt() + static_cast<S>(h.epsilon));
}

}  // namespace lensdyn
