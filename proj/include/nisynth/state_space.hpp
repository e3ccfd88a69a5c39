#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nisynth/errors.hpp"
#include "nisynth/matrix_core.hpp"

namespace nisynth {

/// x' = a x + b u,  y = c x + d u.
struct StateSpace {
  Mat a, b, c, d;

  Index states() const { return a.rows(); }
  Index inputs() const { return b.cols(); }
  Index outputs() const { return c.rows(); }
};

inline void validate(const StateSpace& sys) {
  const Index n = sys.a.rows();
  if (sys.a.cols() != n) throw DomainError("state matrix A must be square");
  if (sys.b.rows() != n) throw DomainError("B must have as many rows as A");
  if (sys.c.cols() != n) throw DomainError("C must have as many columns as A");
  if (sys.d.rows() != sys.c.rows() || sys.d.cols() != sys.b.cols())
    throw DomainError("D must be (rows of C) x (columns of B)");
  require_finite(sys.a, "A");
  require_finite(sys.b, "B");
  require_finite(sys.c, "C");
  require_finite(sys.d, "D");
}

inline StateSpace make_system(Mat a, Mat b, Mat c, Mat d) {
  StateSpace sys{std::move(a), std::move(b), std::move(c), std::move(d)};
  validate(sys);
  return sys;
}

inline StateSpace make_system(Mat a, Mat b, Mat c) {
  Mat d = Mat::Zero(c.rows(), b.cols());
  return make_system(std::move(a), std::move(b), std::move(c), std::move(d));
}

/// Plant with disturbance w, control u, performance z and measurement y:
///   x' = A x + B1 w + B2 u,  z = C1 x,  y = C2 x + D21 w.
struct UncertainPlant {
  Mat a, b1, b2, c1, c2, d21;

  Index states() const { return a.rows(); }
  Index disturbances() const { return b1.cols(); }
  Index controls() const { return b2.cols(); }
  Index measurements() const { return c2.rows(); }
};

inline void validate(const UncertainPlant& p) {
  const Index n = p.a.rows();
  if (n < 1) throw DomainError("plant needs at least one state");
  if (p.a.cols() != n) throw DomainError("A must be square");
  if (p.b1.rows() != n) throw DomainError("B1 must have n rows");
  if (p.b2.rows() != n) throw DomainError("B2 must have n rows");
  if (p.b2.cols() < 1) throw DomainError("B2 needs at least one column");
  if (p.c1.cols() != n) throw DomainError("C1 must have n columns");
  if (p.c2.cols() != n) throw DomainError("C2 must have n columns");
  const Index m = p.b1.cols();
  if (p.c1.rows() != m) throw DomainError("C1 must have as many rows as B1 has columns");
  if (p.d21.rows() != p.c2.rows() || p.d21.cols() != m)
    throw DomainError("D21 must be (rows of C2) x (columns of B1)");
  if (p.d21.rows() != p.d21.cols()) throw DomainError("D21 must be square (p = m)");
  require_finite(p.a, "A");
  require_finite(p.b1, "B1");
  require_finite(p.b2, "B2");
  require_finite(p.c1, "C1");
  require_finite(p.c2, "C2");
  require_finite(p.d21, "D21");
}

/// Uncertainty Delta(s), assumed SNI, closing the loop from z back to w.
struct SniUncertainty {
  Mat a_d, b_d, c_d, d_d;

  StateSpace system() const { return make_system(a_d, b_d, c_d, d_d); }
};

/// Strictly proper compensator x_k' = Ak x_k + Bk y, u = Ck x_k.
struct DynamicController {
  Mat a_k, b_k, c_k;
};

struct AssumptionReport {
  bool a1_stabilizable = false;
  bool a1_detectable = false;
  bool a2_c1b2_nonsingular = false;
  bool a3_d21_nonsingular = false;
  bool a4_r_pd = false;
  Mat r;
  double r_min_eig = 0.0;

  bool all() const {
    return a1_stabilizable && a1_detectable && a2_c1b2_nonsingular && a3_d21_nonsingular &&
           a4_r_pd;
  }

  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    if (!a1_stabilizable) out.emplace_back("A1: (A, B2) not stabilizable");
    if (!a1_detectable) out.emplace_back("A1: (C2, A) not detectable");
    if (!a2_c1b2_nonsingular) out.emplace_back("A2: C1 B2 singular");
    if (!a3_d21_nonsingular) out.emplace_back("A3: D21 singular");
    if (!a4_r_pd) out.emplace_back("A4: R = C1 B1 + B1^T C1^T not positive definite");
    return out;
  }
};

/// Closed loop in the original coordinates (x, x_k) and in (x, x - x_k).
struct ClosedLoop {
  Mat a_c, b_c, c_c;
  Mat a_cl, b_cl, c_cl;

  StateSpace original() const {
    return make_system(a_c, b_c, c_c);
  }
  StateSpace transformed() const {
    return make_system(a_cl, b_cl, c_cl);
  }
};

inline StateSpace transpose_system(const StateSpace& sys) {
  return StateSpace{sys.a.transpose(), sys.c.transpose(), sys.b.transpose(),
                    sys.d.transpose()};
}

/// (A + L C, B + L D, C, D).
inline StateSpace output_injection(const StateSpace& sys, const Mat& l) {
  if (l.rows() != sys.states() || l.cols() != sys.outputs())
    throw DomainError("output injection gain must be n x p");
  return StateSpace{sys.a + l * sys.c, sys.b + l * sys.d, sys.c, sys.d};
}

// ---------------------------------------------------------------------------
// Structural tests
// ---------------------------------------------------------------------------

inline constexpr double kRankTol = 1e-9;
inline constexpr double kUnstableFloor = -1e-9;

/// Eigenvalue clusters of `a` with centroid real part >= re_floor.
inline std::vector<Complex> closed_right_modes(const Mat& a, double re_floor) {
  std::vector<Complex> out;
  for (const EigenCluster& c : cluster_spectrum(eigvals(a), cluster_radius(a))) {
    if (c.center.real() >= re_floor) out.push_back(c.center);
  }
  return out;
}

/// PBH: rank [lambda I - a, b] = n at every mode with Re >= re_floor.
inline bool pbh_stabilizable(const Mat& a, const Mat& b, double re_floor = kUnstableFloor) {
  const Index n = a.rows();
  const CMat ac = a.cast<Complex>();
  const CMat bc = b.cast<Complex>();
  for (const Complex& lambda : closed_right_modes(a, re_floor)) {
    CMat pencil(n, n + b.cols());
    pencil << lambda * CMat::Identity(n, n) - ac, bc;
    if (numerical_rank(pencil, kRankTol) < n) return false;
  }
  return true;
}

inline bool pbh_detectable(const Mat& c, const Mat& a, double re_floor = kUnstableFloor) {
  return pbh_stabilizable(a.transpose(), c.transpose(), re_floor);
}

/// PBH controllability at every eigenvalue.
inline bool pbh_controllable(const Mat& a, const Mat& b) {
  return pbh_stabilizable(a, b, -std::numeric_limits<double>::infinity());
}

inline bool pbh_observable(const Mat& c, const Mat& a) {
  return pbh_controllable(a.transpose(), c.transpose());
}

inline Mat controllability_matrix(const Mat& a, const Mat& b) {
  const Index n = a.rows();
  Mat k(n, n * b.cols());
  Mat block = b;
  for (Index i = 0; i < n; ++i) {
    k.middleCols(i * b.cols(), b.cols()) = block;
    block = a * block;
  }
  return k;
}

struct Minimality {
  bool controllable = false;
  bool observable = false;
  bool minimal() const { return controllable && observable; }
};

/// Kalman rank tests, singular values above 1e-9 * largest.
inline Minimality minimality_check(const StateSpace& sys) {
  validate(sys);
  const Index n = sys.states();
  Minimality m;
  m.controllable = numerical_rank(controllability_matrix(sys.a, sys.b), kRankTol) == n;
  m.observable =
      numerical_rank(controllability_matrix(sys.a.transpose(), sys.c.transpose()), kRankTol) == n;
  return m;
}

inline AssumptionReport check_assumptions(const UncertainPlant& p) {
  validate(p);
  AssumptionReport rep;
  rep.a1_stabilizable = pbh_stabilizable(p.a, p.b2);
  rep.a1_detectable = pbh_detectable(p.c2, p.a);
  rep.a2_c1b2_nonsingular = is_nonsingular(p.c1 * p.b2);
  rep.a3_d21_nonsingular = is_nonsingular(p.d21);
  rep.r = p.c1 * p.b1 + p.b1.transpose() * p.c1.transpose();
  const PsdReport r_psd = psd_margin(rep.r, kPsdTol);
  rep.r_min_eig = r_psd.min_eig;
  rep.a4_r_pd = r_psd.is_pd;
  return rep;
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

inline void require_compatible(const UncertainPlant& p, const DynamicController& k) {
  const Index nk = k.a_k.rows();
  if (k.a_k.cols() != nk) throw DomainError("Ak must be square");
  if (k.b_k.rows() != nk || k.b_k.cols() != p.measurements())
    throw DomainError("Bk must be (order of Ak) x (rows of C2)");
  if (k.c_k.rows() != p.controls() || k.c_k.cols() != nk)
    throw DomainError("Ck must be (columns of B2) x (order of Ak)");
  require_finite(k.a_k, "Ak");
  require_finite(k.b_k, "Bk");
  require_finite(k.c_k, "Ck");
}

/// Both realizations of the loop closed by u = Ck x_k. The (x, x - x_k)
/// form needs a full-order controller.
inline ClosedLoop build_closed_loop(const UncertainPlant& p, const DynamicController& k) {
  validate(p);
  require_compatible(p, k);
  const Index n = p.states();
  const Index nk = k.a_k.rows();
  const Index m = p.disturbances();

  ClosedLoop cl;
  cl.a_c.resize(n + nk, n + nk);
  cl.a_c << p.a, p.b2 * k.c_k, k.b_k * p.c2, k.a_k;
  cl.b_c.resize(n + nk, m);
  cl.b_c << p.b1, k.b_k * p.d21;
  cl.c_c = Mat::Zero(m, n + nk);
  cl.c_c.leftCols(n) = p.c1;

  if (nk == n) {
    const Mat b2ck = p.b2 * k.c_k;
    cl.a_cl.resize(2 * n, 2 * n);
    cl.a_cl << p.a + b2ck, -b2ck, p.a - k.a_k + b2ck - k.b_k * p.c2, k.a_k - b2ck;
    cl.b_cl.resize(2 * n, m);
    cl.b_cl << p.b1, p.b1 - k.b_k * p.d21;
    cl.c_cl = cl.c_c;
  }
  return cl;
}

// ---------------------------------------------------------------------------
// Frequency response
// ---------------------------------------------------------------------------

inline constexpr double kPoleTol = 1e-9;

/// Distance from s to the nearest pole candidate (eigenvalue cluster of a).
inline double pole_distance(const Mat& a, Complex s) {
  double best = std::numeric_limits<double>::infinity();
  for (const EigenCluster& c : cluster_spectrum(eigvals(a), cluster_radius(a)))
    best = std::min(best, std::abs(s - c.center));
  return best;
}

/// C (sI - A)^-1 B + D at an arbitrary complex point, no proximity check.
inline CMat transfer_at(const StateSpace& sys, Complex s) {
  const Index n = sys.states();
  if (n == 0) return sys.d.cast<Complex>();
  const CMat resolvent = s * CMat::Identity(n, n) - sys.a.cast<Complex>();
  Eigen::PartialPivLU<CMat> lu(resolvent);
  const CMat x = lu.solve(sys.b.cast<Complex>());
  return sys.c.cast<Complex>() * x + sys.d.cast<Complex>();
}

/// G(j omega). Throws PoleProximity when j omega lies within 1e-9 of an
/// eigenvalue of A (scaled by max(1, |omega|)).
inline CMat freq_response(const StateSpace& sys, double omega) {
  validate(sys);
  if (!std::isfinite(omega)) throw DomainError("frequency must be finite");
  const Complex s(0.0, omega);
  if (sys.states() > 0 && pole_distance(sys.a, s) <= kPoleTol * std::max(1.0, std::abs(omega)))
    throw PoleProximity("j*omega is (numerically) a pole at omega = " + std::to_string(omega));
  return transfer_at(sys, s);
}

}  // namespace nisynth
