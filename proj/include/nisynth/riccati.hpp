#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "nisynth/errors.hpp"
#include "nisynth/matrix_core.hpp"

namespace nisynth {

/// The quadratic matrix expression shared by every Riccati equation here:
///
///   res(X) = X f + f^T X + (g - h^T X)^T r^-1 (g - h^T X)
///
/// f is n x n, g is m x n, h is n x m, r is m x m symmetric positive definite.
struct QuadraticForm {
  Mat f, g, h, r;

  Index order() const { return f.rows(); }
};

inline constexpr double kResidualFloor = 1e-12;

struct ResidualReport {
  double abs = 0.0;    // ||res(X)||_F
  double scale = 0.0;  // ||X f||_F + ||f^T X||_F + ||Q^T r^-1 Q||_F
  double rel = 0.0;    // abs / scale (0 when both vanish)

  /// abs <= max(tol * scale, 1e-12).
  bool passes(double tol) const { return abs <= std::max(tol * scale, kResidualFloor); }
};

inline ResidualReport make_residual_report(double abs, double scale) {
  ResidualReport rep;
  rep.abs = abs;
  rep.scale = scale;
  rep.rel = scale > 0.0 ? abs / scale : (abs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return rep;
}

inline void validate(const QuadraticForm& q) {
  const Index n = q.f.rows();
  if (q.f.cols() != n) throw DomainError("quadratic form: f must be square");
  if (q.g.cols() != n) throw DomainError("quadratic form: g must have n columns");
  if (q.h.rows() != n) throw DomainError("quadratic form: h must have n rows");
  if (q.r.rows() != q.r.cols() || q.r.rows() != q.g.rows() || q.h.cols() != q.r.rows())
    throw DomainError("quadratic form: r must be m x m matching g and h");
  if (!psd_margin(q.r, kPsdTol).is_pd) throw DomainError("quadratic form: R is not positive definite");
}

inline Mat residual_matrix(const QuadraticForm& q, const Mat& x) {
  validate(q);
  if (x.rows() != q.order() || x.cols() != q.order())
    throw DomainError("quadratic form: candidate has the wrong size");
  const Mat qx = q.g - q.h.transpose() * x;
  return x * q.f + q.f.transpose() * x + qx.transpose() * solve_linear(q.r, qx);
}

inline ResidualReport residual(const QuadraticForm& q, const Mat& x) {
  const Mat res = residual_matrix(q, x);
  const Mat qx = q.g - q.h.transpose() * x;
  const double scale =
      fro(x * q.f) + fro(q.f.transpose() * x) + fro(qx.transpose() * solve_linear(q.r, qx));
  return make_residual_report(fro(res), scale);
}

/// Residual of a sub-block of res(X), scaled like the sub-block of each term.
inline ResidualReport block_residual(const QuadraticForm& q, const Mat& x, Index row0, Index rows,
                                     Index col0, Index cols) {
  const Mat res = residual_matrix(q, x);
  const Mat qx = q.g - q.h.transpose() * x;
  const Mat xf = x * q.f;
  const Mat ftx = q.f.transpose() * x;
  const Mat quad = qx.transpose() * solve_linear(q.r, qx);
  const double scale = fro(xf.block(row0, col0, rows, cols)) +
                       fro(ftx.block(row0, col0, rows, cols)) +
                       fro(quad.block(row0, col0, rows, cols));
  return make_residual_report(fro(res.block(row0, col0, rows, cols)), scale);
}

/// X f0 + f0^T X + X gm X + q0 = 0, the expanded form of res(X) = 0.
struct ExpandedRiccati {
  Mat f0, gm, q0;
};

inline ExpandedRiccati expand(const QuadraticForm& q) {
  validate(q);
  const Mat r_inv_g = solve_linear(q.r, q.g);
  const Mat r_inv_ht = solve_linear(q.r, q.h.transpose());
  ExpandedRiccati e;
  e.f0 = q.f - q.h * r_inv_g;
  e.gm = symmetric_part(q.h * r_inv_ht);
  e.q0 = symmetric_part(q.g.transpose() * r_inv_g);
  return e;
}

// ---------------------------------------------------------------------------
// Newton iteration
// ---------------------------------------------------------------------------

struct NewtonOptions {
  int max_iterations = 200;
  double accept_tol = 1e-10;  // scaled residual required to report convergence
  double stop_tol = 1e-14;    // scaled residual at which iteration stops early
  bool line_search = false;
};

struct NewtonResult {
  Mat x;
  int iterations = 0;
  bool converged = false;
  ResidualReport residual;
  Index reduced_order = 0;  // dimension the iteration actually ran in
  std::string note;
};

namespace detail {

// Minimizes ||(1 - t) r + t^2 v||_F^2 over t in [0, 2].
inline double exact_line_search(const Mat& r, const Mat& v) {
  const double a = r.squaredNorm();
  const double b = (r.array() * v.array()).sum();
  const double c = v.squaredNorm();
  auto f = [&](double t) {
    return a * (1 - t) * (1 - t) + 2 * b * (1 - t) * t * t + c * t * t * t * t;
  };
  double best_t = 1.0;
  double best = f(1.0);
  for (int i = 0; i <= 200; ++i) {
    const double t = 0.01 * i;
    if (f(t) < best) {
      best = f(t);
      best_t = t;
    }
  }
  double lo = std::max(0.0, best_t - 0.01);
  double hi = std::min(2.0, best_t + 0.01);
  for (int i = 0; i < 60; ++i) {
    const double m1 = lo + (hi - lo) / 3;
    const double m2 = hi - (hi - lo) / 3;
    if (f(m1) < f(m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return 0.5 * (lo + hi);
}

// Orthonormal basis of the observable subspace of (q0, f0):
// span{ f0^T^k q0 }, grown until it stops growing.
inline Mat observable_basis(const Mat& f0, const Mat& q0) {
  const Index n = f0.rows();
  auto orth = [](const Mat& m, double abs_tol) {
    if (m.cols() == 0) return Mat(m.rows(), 0);
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU);
    Index rank = 0;
    for (Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > abs_tol) ++rank;
    return Mat(svd.matrixU().leftCols(rank));
  };
  const double tol_q = 1e-10 * std::max(1.0, fro(q0));
  Mat basis = orth(q0, tol_q);
  const double tol_f = 1e-10 * std::max(1.0, fro(f0));
  while (basis.cols() > 0 && basis.cols() < n) {
    Mat next = f0.transpose() * basis;
    next -= basis * (basis.transpose() * next);
    next -= basis * (basis.transpose() * next);
    Mat fresh = orth(next, tol_f);
    if (fresh.cols() == 0) break;
    Mat grown(n, basis.cols() + fresh.cols());
    grown << basis, fresh;
    basis = orth(grown, 0.5);
  }
  return basis;
}

inline NewtonResult newton_expanded(const ExpandedRiccati& e, Mat x,
                                    const std::function<ResidualReport(const Mat&)>& measure,
                                    const NewtonOptions& opts) {
  NewtonResult out;
  out.reduced_order = e.f0.rows();
  out.x = x;
  out.residual = measure(x);
  Mat best = x;
  ResidualReport best_res = out.residual;
  int stalled = 0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Mat ak = e.f0 + e.gm * x;
    const Mat current = x * e.f0 + e.f0.transpose() * x + x * e.gm * x + e.q0;
    Mat step;
    try {
      step = solve_lyapunov(ak.transpose(), current);
    } catch (const NumericalFailure& err) {
      out.note = std::string("Newton step failed: ") + err.what();
      break;
    }
    double t = 1.0;
    if (opts.line_search) t = exact_line_search(current, step * e.gm * step);
    x = symmetric_part(x + t * step);
    out.iterations = it;
    const ResidualReport res = measure(x);
    if (!std::isfinite(res.abs)) {
      out.note = "Newton iterate diverged";
      break;
    }
    if (res.abs < best_res.abs) {
      best = x;
      best_res = res;
      stalled = 0;
    } else if (++stalled >= 8) {
      break;
    }
    if (res.abs <= opts.stop_tol * res.scale) break;
  }
  out.x = best;
  out.residual = best_res;
  out.converged = best_res.passes(opts.accept_tol);
  return out;
}

}  // namespace detail

/// Solves res(X) = 0 by Newton's method started at X = 0. Each step is one
/// Lyapunov solve. The iteration runs on the observable subspace of
/// (q0, f0); the unobservable part is f0-invariant and lies in ker q0, so
/// X = 0 there is consistent. Returns the best iterate; check `converged`.
inline NewtonResult solve_riccati_newton(const QuadraticForm& q, const NewtonOptions& opts = {}) {
  const ExpandedRiccati e = expand(q);
  const Index n = q.order();
  auto measure = [&q](const Mat& x) { return residual(q, x); };

  const Mat basis = detail::observable_basis(e.f0, e.q0);
  const Index k = basis.cols();
  if (k == 0) {
    NewtonResult out;
    out.x = Mat::Zero(n, n);
    out.residual = residual(q, out.x);
    out.converged = out.residual.passes(opts.accept_tol);
    out.note = "constant term vanishes on every invariant subspace; X = 0";
    return out;
  }

  NewtonResult out;
  if (k < n) {
    ExpandedRiccati red{basis.transpose() * e.f0 * basis, basis.transpose() * e.gm * basis,
                        basis.transpose() * e.q0 * basis};
    auto lifted = [&](const Mat& xr) { return Mat(basis * xr * basis.transpose()); };
    auto measure_red = [&](const Mat& xr) { return residual(q, lifted(xr)); };
    out = detail::newton_expanded(red, Mat::Zero(k, k), measure_red, opts);
    out.x = symmetric_part(lifted(out.x));
    out.reduced_order = k;
    if (out.converged) return out;
  }
  NewtonResult full = detail::newton_expanded(e, Mat::Zero(n, n), measure, opts);
  if (!full.converged && !opts.line_search) {
    NewtonOptions ls = opts;
    ls.line_search = true;
    NewtonResult damped = detail::newton_expanded(e, Mat::Zero(n, n), measure, ls);
    if (damped.residual.abs < full.residual.abs) full = damped;
  }
  if (k < n && out.residual.abs < full.residual.abs) return out;
  return full;
}

/// Newton iteration for a general symmetric quadratic matrix equation
/// phi(X) = 0 whose derivative at X is E -> a(X) E + E a(X)^T.
inline NewtonResult solve_symmetric_newton(const std::function<Mat(const Mat&)>& phi,
                                           const std::function<Mat(const Mat&)>& jacobian_a,
                                           const std::function<ResidualReport(const Mat&)>& measure,
                                           Mat x0, const NewtonOptions& opts = {}) {
  NewtonResult out;
  out.reduced_order = x0.rows();
  Mat x = std::move(x0);
  Mat best = x;
  ResidualReport best_res = measure(x);
  int stalled = 0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    Mat step;
    try {
      step = solve_lyapunov(jacobian_a(x), phi(x));
    } catch (const NumericalFailure& err) {
      out.note = std::string("Newton step failed: ") + err.what();
      break;
    }
    x = symmetric_part(x + step);
    out.iterations = it;
    const ResidualReport res = measure(x);
    if (!std::isfinite(res.abs)) {
      out.note = "Newton iterate diverged";
      break;
    }
    if (res.abs < best_res.abs) {
      best = x;
      best_res = res;
      stalled = 0;
    } else if (++stalled >= 8) {
      break;
    }
    if (res.abs <= opts.stop_tol * res.scale) break;
  }
  out.x = best;
  out.residual = best_res;
  out.converged = best_res.passes(opts.accept_tol);
  return out;
}

}  // namespace nisynth
