#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ulm/forward_op.hpp"
#include "ulm/image.hpp"

namespace ulm {

// Elementwise sign(v)*max(|v|-tau, 0); one-sided max(v-tau, 0) when nonneg.
inline double soft_threshold(double v, double tau, bool nonneg) {
  if (nonneg) return v > tau ? v - tau : 0.0;
  if (v > tau) return v - tau;
  if (v < -tau) return v + tau;
  return 0.0;
}

template <typename T>
Image<T> soft_threshold(const Image<T>& v, double tau, bool nonneg) {
  if (tau < 0) throw InvalidParameter("soft_threshold: tau must be >= 0");
  Image<T> out(v.width, v.height);
  for (std::size_t i = 0; i < v.data.size(); ++i)
    out.data[i] = static_cast<T>(soft_threshold(static_cast<double>(v.data[i]), tau, nonneg));
  return out;
}

struct IstaConfig {
  double lambda = 1e-2;
  double mu = 0;  // <= 0: auto, 0.9 / power-iteration estimate of L
  int max_iters = 5000;
  double tol = 1e-8;  // relative-change stopping criterion
  bool nonneg = true;
  int power_iters = 50;

  void validate() const {
    if (lambda < 0) throw InvalidParameter("IstaConfig: lambda must be >= 0");
    if (max_iters < 1) throw InvalidParameter("IstaConfig: max_iters must be >= 1");
    if (tol < 0) throw InvalidParameter("IstaConfig: tol must be >= 0");
  }
};

struct IstaResult {
  Image<double> x;
  std::vector<double> objective;  // per accepted iterate
  int iters = 0;
  double mu = 0;
};

inline double lasso_objective(const Image<double>& y, const ForwardOp& op, const Image<double>& x,
                              double lambda) {
  const Image<double> hx = op.apply(x);
  double resid = 0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    const double d = y.data[i] - hx.data[i];
    resid += d * d;
  }
  double l1 = 0;
  for (double v : x.data) l1 += std::abs(v);
  return 0.5 * resid + lambda * l1;
}

// Classic ISTA from x0 = 0: x_{k+1} = S_{mu*lambda}(x_k + mu*H^T(y - H x_k)).
// The objective must be non-increasing; an increase means the step size
// violates mu <= 1/L and raises NumericDivergence.
inline IstaResult ista_solve(const Image<double>& y, const ForwardOp& op, const IstaConfig& cfg) {
  cfg.validate();
  IstaResult res;
  res.mu = cfg.mu > 0 ? cfg.mu : 0.9 / power_iteration_L(op, cfg.power_iters);
  if (!(res.mu > 0)) throw InvalidParameter("ista_solve: non-positive step size");

  Image<double> x(op.grid().hr_width(), op.grid().hr_height());
  double obj = lasso_objective(y, op, x, cfg.lambda);
  res.objective.push_back(obj);

  for (int k = 0; k < cfg.max_iters; ++k) {
    Image<double> hx = op.apply(x);
    for (std::size_t i = 0; i < hx.data.size(); ++i) hx.data[i] = y.data[i] - hx.data[i];
    const Image<double> grad = op.apply_adjoint(hx);

    Image<double> xn(x.width, x.height);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      xn.data[i] = soft_threshold(x.data[i] + res.mu * grad.data[i], res.mu * cfg.lambda, cfg.nonneg);

    const double obj_n = lasso_objective(y, op, xn, cfg.lambda);
    if (obj_n > obj + 1e-12 * std::max(1.0, std::abs(obj)))
      throw NumericDivergence("ista_solve: objective increased (step size exceeds 1/L): " +
                              std::to_string(obj) + " -> " + std::to_string(obj_n));

    double dn = 0, xn2 = 0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      const double d = xn.data[i] - x.data[i];
      dn += d * d;
      xn2 += xn.data[i] * xn.data[i];
    }
    x = std::move(xn);
    obj = obj_n;
    res.objective.push_back(obj);
    res.iters = k + 1;
    if (xn2 > 0 && std::sqrt(dn / xn2) < cfg.tol) break;
    if (xn2 == 0 && dn == 0) break;
  }
  res.x = std::move(x);
  return res;
}

}  // namespace ulm
