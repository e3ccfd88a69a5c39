#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nisynth/are_forms.hpp"
#include "nisynth/errors.hpp"
#include "nisynth/matrix_core.hpp"
#include "nisynth/riccati.hpp"
#include "nisynth/state_space.hpp"

namespace nisynth {

// ---------------------------------------------------------------------------
// Frequency grids and pointwise margins
// ---------------------------------------------------------------------------

struct FreqGrid {
  std::vector<double> omegas;  // strictly increasing, positive
  double tol = 1e-8;
};

inline void validate(const FreqGrid& grid) {
  if (grid.omegas.empty()) throw DomainError("frequency grid is empty");
  for (std::size_t i = 0; i < grid.omegas.size(); ++i) {
    const double w = grid.omegas[i];
    if (!std::isfinite(w) || w <= 0.0) throw DomainError("grid frequencies must be positive and finite");
    if (i > 0 && w <= grid.omegas[i - 1]) throw DomainError("grid must be strictly increasing");
  }
  if (!(grid.tol >= 0.0)) throw DomainError("grid tolerance must be non-negative");
}

/// `points` log-spaced frequencies in [w_min, w_max]. One point gives {w_min}.
inline FreqGrid log_grid(double w_min, double w_max, int points, double tol = 1e-8) {
  if (points < 1) throw DomainError("grid needs at least one point");
  if (!(w_min > 0.0) || !(w_max >= w_min)) throw DomainError("need 0 < omega-min <= omega-max");
  FreqGrid grid;
  grid.tol = tol;
  if (points == 1 || w_max == w_min) {
    grid.omegas.push_back(w_min);
    if (points > 1) throw DomainError("omega-min = omega-max admits a single point only");
    return grid;
  }
  const double l0 = std::log10(w_min);
  const double l1 = std::log10(w_max);
  for (int i = 0; i < points; ++i) {
    const double w = i == points - 1 ? w_max : std::pow(10.0, l0 + (l1 - l0) * i / (points - 1));
    grid.omegas.push_back(i == 0 ? w_min : w);
  }
  validate(grid);
  return grid;
}

inline FreqGrid default_grid(double tol = 1e-8) { return log_grid(1e-3, 1e3, 200, tol); }

/// lambda_min(j (G - G^*)).
inline double ni_margin(const CMat& g) {
  const CMat h = Complex(0.0, 1.0) * (g - g.adjoint());
  Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (h + h.adjoint()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// lambda_min(F + F^*).
inline double pr_margin(const CMat& f) {
  Eigen::SelfAdjointEigenSolver<CMat> es(f + f.adjoint(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline constexpr double kSkipDistance = 1e-6;

inline std::vector<EigenCluster> pole_clusters(const Mat& a) {
  if (a.rows() == 0) return {};
  return cluster_spectrum(eigvals(a), cluster_radius(a));
}

inline bool near_pole(const std::vector<EigenCluster>& poles, double omega) {
  for (const EigenCluster& c : poles)
    if (std::abs(Complex(0.0, omega) - c.center) <= kSkipDistance) return true;
  return false;
}

struct MarginSample {
  double omega = 0.0;
  double margin = 0.0;
  bool skipped = false;
};

template <typename MarginFn>
std::vector<MarginSample> sample_margins(const StateSpace& sys, const std::vector<double>& omegas,
                                         MarginFn margin_of) {
  const std::vector<EigenCluster> poles = pole_clusters(sys.a);
  std::vector<MarginSample> out(omegas.size());
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    out[i].omega = omegas[i];
    if (near_pole(poles, omegas[i])) {
      out[i].skipped = true;
      out[i].margin = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    out[i].margin = margin_of(transfer_at(sys, Complex(0.0, omegas[i])));
  }
  return out;
}

inline std::vector<MarginSample> ni_margins(const StateSpace& sys, const std::vector<double>& omegas) {
  require_square_io(sys);
  return sample_margins(sys, omegas, [](const CMat& g) { return ni_margin(g); });
}

// ---------------------------------------------------------------------------
// Poles on the imaginary axis
// ---------------------------------------------------------------------------

struct AxisPole {
  double omega0 = 0.0;
  int order = 0;
  bool simple = false;
  bool residue_psd = false;
  CMat residue;
};

struct OriginPole {
  int order = 0;
  bool limit_psd = true;  // only meaningful for order 2
  Mat limit;              // lim s^2 G(s) for order 2
};

struct PoleConditionReport {
  std::vector<AxisPole> axis_poles;
  std::optional<OriginPole> origin_pole;

  bool passes() const {
    for (const AxisPole& p : axis_poles)
      if (!p.simple || !p.residue_psd) return false;
    if (origin_pole && (origin_pole->order > 2 || !origin_pole->limit_psd)) return false;
    return true;
  }
};

namespace detail {

// Order of the pole of G at s0 (0 if none), from how fast G grows along a
// real offset: successive differences at eps, eps/2, eps/4 scale as 2^order.
inline int pole_order(const StateSpace& sys, Complex s0) {
  const double eps = 1e-4;
  const CMat g1 = transfer_at(sys, s0 + eps);
  const CMat g2 = transfer_at(sys, s0 + eps / 2);
  const CMat g3 = transfer_at(sys, s0 + eps / 4);
  const double d1 = (g2 - g1).norm();
  const double d2 = (g3 - g2).norm();
  if (d1 == 0.0 || d2 == 0.0) return 0;
  const double order = std::log2(d2 / d1);
  return std::max(0, static_cast<int>(std::lround(order)));
}

// Right and left null spaces of (lambda I - a).
inline std::pair<CMat, CMat> eigenspaces(const Mat& a, Complex lambda) {
  const Index n = a.rows();
  const CMat m = lambda * CMat::Identity(n, n) - a.cast<Complex>();
  const double tol = 1e-8 * std::max(1.0, a.norm());
  auto null_space = [&](const CMat& x) {
    Eigen::JacobiSVD<CMat> svd(x, Eigen::ComputeFullV);
    Index rank = 0;
    for (Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > tol) ++rank;
    return CMat(svd.matrixV().rightCols(n - rank));
  };
  return {null_space(m), null_space(m.adjoint())};
}

// Residue K = lim (s - j w0) j G(s) of a simple pole. Uses the spectral
// projector when the eigenvalue is semisimple, Richardson extrapolation
// otherwise.
inline CMat simple_residue(const StateSpace& sys, Complex lambda, int multiplicity) {
  const Complex j(0.0, 1.0);
  const auto [v, w] = eigenspaces(sys.a, lambda);
  if (v.cols() == multiplicity && w.cols() == multiplicity) {
    const CMat wv = w.adjoint() * v;
    const CMat proj = v * wv.fullPivLu().solve(w.adjoint());
    return j * sys.c.cast<Complex>() * proj * sys.b.cast<Complex>();
  }
  const double eps = 1e-4;
  const CMat k1 = eps * j * transfer_at(sys, lambda + eps);
  const CMat k2 = (eps / 2) * j * transfer_at(sys, lambda + eps / 2);
  return 2.0 * k2 - k1;
}

// lim s^2 G(s) at the origin, Richardson-refined from s = 1e-4 and 5e-5.
inline Mat double_pole_limit(const StateSpace& sys) {
  const double eps = 1e-4;
  const CMat m1 = eps * eps * transfer_at(sys, Complex(eps, 0.0));
  const CMat m2 = (eps / 2) * (eps / 2) * transfer_at(sys, Complex(eps / 2, 0.0));
  return (2.0 * m2 - m1).real();
}

inline bool hermitian_psd(const CMat& k, double tol) {
  const double scale = std::max(1.0, k.norm());
  if ((k - k.adjoint()).norm() > tol * scale) return false;
  Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (k + k.adjoint()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol * scale;
}

}  // namespace detail

inline constexpr double kAxisTol = 1e-9;

/// Poles of G on the imaginary axis and the conditions they must meet.
inline PoleConditionReport axis_pole_conditions(const StateSpace& sys) {
  PoleConditionReport rep;
  for (const EigenCluster& c : pole_clusters(sys.a)) {
    const double scale = std::max(1.0, std::abs(c.center));
    if (std::abs(c.center.real()) > kAxisTol * scale) continue;
    const double w0 = c.center.imag();
    if (w0 < -kAxisTol * scale) continue;  // conjugate of a listed pole
    const Complex s0(0.0, std::abs(w0) <= kAxisTol * scale ? 0.0 : w0);
    const int order = detail::pole_order(sys, s0);
    if (order == 0) continue;
    if (s0.imag() == 0.0) {
      OriginPole op;
      op.order = order;
      if (order == 2) {
        op.limit = detail::double_pole_limit(sys);
        op.limit_psd = detail::hermitian_psd(op.limit.cast<Complex>(), 1e-6);
      } else if (order > 2) {
        op.limit_psd = false;
      }
      rep.origin_pole = op;
      continue;
    }
    AxisPole ap;
    ap.omega0 = s0.imag();
    ap.order = order;
    ap.simple = order == 1;
    if (ap.simple) {
      ap.residue = detail::simple_residue(sys, s0, c.multiplicity);
      ap.residue_psd = detail::hermitian_psd(ap.residue, 1e-8);
    }
    rep.axis_poles.push_back(std::move(ap));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Frequency-domain checks
// ---------------------------------------------------------------------------

struct NiFreqResult {
  bool verdict = false;
  double worst_margin = std::numeric_limits<double>::infinity();
  bool unstable = false;  // some eigenvalue with Re > 1e-9
  PoleConditionReport poles;
  std::vector<MarginSample> samples;  // includes omega = 0 when evaluated
  std::vector<double> skipped;
};

/// Samples lambda_min(j(G - G^*)) on the grid (plus omega = 0 when the
/// origin is not a pole) and checks the pole conditions.
inline NiFreqResult ni_freq_check(const StateSpace& sys, const FreqGrid& grid) {
  require_square_io(sys);
  validate(grid);
  NiFreqResult out;
  const std::vector<EigenCluster> poles = pole_clusters(sys.a);
  for (const EigenCluster& c : poles)
    if (c.center.real() > kAxisTol) out.unstable = true;
  out.poles = axis_pole_conditions(sys);

  std::vector<double> omegas;
  if (!out.poles.origin_pole && !near_pole(poles, 0.0)) omegas.push_back(0.0);
  omegas.insert(omegas.end(), grid.omegas.begin(), grid.omegas.end());
  out.samples = ni_margins(sys, omegas);
  for (const MarginSample& s : out.samples) {
    if (s.skipped) {
      out.skipped.push_back(s.omega);
      continue;
    }
    out.worst_margin = std::min(out.worst_margin, s.margin);
  }
  out.verdict = !out.unstable && out.worst_margin >= -grid.tol && out.poles.passes();
  return out;
}

struct SniFreqResult {
  bool verdict = false;
  double worst_margin = std::numeric_limits<double>::infinity();
  bool stable = false;  // every eigenvalue with Re < -1e-9
};

inline SniFreqResult sni_freq_check(const StateSpace& sys, const FreqGrid& grid) {
  require_square_io(sys);
  validate(grid);
  SniFreqResult out;
  out.stable = true;
  for (const EigenCluster& c : pole_clusters(sys.a))
    if (c.center.real() >= -kAxisTol) out.stable = false;
  for (const MarginSample& s : ni_margins(sys, grid.omegas))
    if (!s.skipped) out.worst_margin = std::min(out.worst_margin, s.margin);
  out.verdict = out.stable && out.worst_margin > grid.tol;
  return out;
}

/// Realization (A, B, C A, C B) of s (G(s) - D).
inline StateSpace shifted_system(const StateSpace& sys) {
  validate(sys);
  return StateSpace{sys.a, sys.b, sys.c * sys.a, sys.c * sys.b};
}

inline std::vector<MarginSample> pr_margins(const StateSpace& sys, const std::vector<double>& omegas) {
  require_square_io(sys);
  return sample_margins(sys, omegas, [](const CMat& f) { return pr_margin(f); });
}

/// lambda_min(F + F^*) >= -tol at every grid point not next to a pole.
inline bool pr_check(const StateSpace& sys, const FreqGrid& grid) {
  validate(grid);
  for (const MarginSample& s : pr_margins(sys, grid.omegas))
    if (!s.skipped && s.margin < -grid.tol) return false;
  return true;
}

inline bool pr_check_of_shifted(const StateSpace& sys, const FreqGrid& grid) {
  return pr_check(shifted_system(sys), grid);
}

/// ((A + L C2)^T, A^T C1^T, B1^T + D21^T L^T, B1^T C1^T), taken verbatim.
inline StateSpace output_injection_dual_system(const UncertainPlant& p, const Mat& l) {
  validate(p);
  return make_system((p.a + l * p.c2).transpose(), p.a.transpose() * p.c1.transpose(),
                     p.b1.transpose() + p.d21.transpose() * l.transpose(),
                     p.b1.transpose() * p.c1.transpose());
}

// ---------------------------------------------------------------------------
// Riccati certificates
// ---------------------------------------------------------------------------

inline ResidualReport are_residual(AreKind kind, const StateSpace& sys, const Mat& x) {
  return residual(system_form(kind, sys), x);
}

struct SideCondition {
  std::string name;
  bool holds = false;
};

struct NiCertificate {
  AreKind kind = AreKind::NiPrimal;
  Mat solution;
  ResidualReport residual;
  double residual_norm = 0.0;
  PsdReport psd;
  std::vector<SideCondition> side_conditions;
  double tol = 1e-8;

  bool valid() const {
    if (!residual.passes(tol) || !psd.is_psd) return false;
    for (const SideCondition& c : side_conditions)
      if (!c.holds) return false;
    return true;
  }
};

inline NiCertificate make_certificate(AreKind kind, const QuadraticForm& form, const Mat& x,
                                      const Tolerances& tol) {
  NiCertificate cert;
  cert.kind = kind;
  cert.solution = x;
  cert.residual = residual(form, x);
  cert.residual_norm = cert.residual.abs;
  cert.psd = psd_margin(symmetric_part(x), tol.psd);
  cert.tol = tol.residual;
  return cert;
}

namespace detail {

inline void require_ni_route(const StateSpace& sys) {
  require_square_io(sys);
  if (!psd_margin(r_matrix(sys), kPsdTol).is_pd)
    throw CertificationFailure("ARE route not applicable: CB + B^T C^T is not positive definite");
}

// Eigenvalues of f0 + gm X in the open left half plane or at the origin.
// The origin test is loose because these equations carry a double zero of
// the Hamiltonian and Newton converges only linearly there.
inline bool sni_side_condition(const QuadraticForm& form, const Mat& x) {
  const ExpandedRiccati e = expand(form);
  const Mat closed = e.f0 + e.gm * x;
  for (const EigenCluster& c : pole_clusters(closed)) {
    if (std::abs(c.center) <= 1e-6) continue;
    if (c.center.real() >= -kAxisTol) return false;
  }
  return true;
}

}  // namespace detail

/// Attempts P >= 0 for the NI equation, then Z >= 0 for its dual. Throws
/// CertificationFailure when neither is found; that outcome is "undecided",
/// never a disproof.
inline NiCertificate certify_ni_via_are(const StateSpace& sys, const Tolerances& tol = {}) {
  detail::require_ni_route(sys);
  std::string why;
  for (AreKind kind : {AreKind::NiPrimal, AreKind::NiDual}) {
    const QuadraticForm form = system_form(kind, sys);
    const NewtonResult nr = solve_riccati_newton(form);
    NiCertificate cert = make_certificate(kind, form, nr.x, tol);
    if (cert.valid()) return cert;
    why += to_string(kind) + ": residual " + std::to_string(cert.residual.abs) + ", min eig " +
           std::to_string(cert.psd.min_eig) + (nr.note.empty() ? "" : " (" + nr.note + ")") + "; ";
  }
  throw CertificationFailure("no positive semidefinite ARE solution found (" + why + ")");
}

/// Attempts P > 0 with the eigenvalue-location side condition, then the dual.
inline NiCertificate certify_sni_via_are(const StateSpace& sys, const Tolerances& tol = {}) {
  require_square_io(sys);
  for (const EigenCluster& c : pole_clusters(sys.a)) {
    if (std::abs(c.center.real()) <= kAxisTol * std::max(1.0, std::abs(c.center)))
      throw DomainError("A has an imaginary-axis eigenvalue");
  }
  detail::require_ni_route(sys);
  std::string why;
  for (AreKind kind : {AreKind::SniPrimal, AreKind::SniDual}) {
    const QuadraticForm form = system_form(kind, sys);
    const NewtonResult nr = solve_riccati_newton(form);
    NiCertificate cert = make_certificate(kind, form, nr.x, tol);
    cert.side_conditions.push_back({"positive definite", cert.psd.is_pd});
    cert.side_conditions.push_back(
        {"closed-loop Riccati matrix stable or at origin", detail::sni_side_condition(form, nr.x)});
    if (cert.valid()) return cert;
    why += to_string(kind) + ": residual " + std::to_string(cert.residual.abs) + ", min eig " +
           std::to_string(cert.psd.min_eig) + "; ";
  }
  throw CertificationFailure("no positive definite ARE solution found (" + why + ")");
}

struct InverseTransformResult {
  Mat z;
  ResidualReport residual;
};

/// Z = P^-1 and the residual of Z A0^T + A0 Z + Z Qb Z + B R^-1 B^T with
/// A0 = A - B R^-1 C A, Qb = A^T C^T R^-1 C A.
inline InverseTransformResult inverse_riccati_transform(const Mat& p, const StateSpace& sys) {
  require_square_io(sys);
  if (!is_nonsingular(p)) throw DomainError("P is singular");
  const ResidualReport source = are_residual(AreKind::SniPrimal, sys, p);
  if (!source.passes(1e-8)) throw DomainError("P does not solve the SNI equation to 1e-8");
  const Mat r = r_matrix(sys);
  const Mat ca = sys.c * sys.a;
  const Mat a0 = sys.a - sys.b * solve_linear(r, ca);
  const Mat qb = ca.transpose() * solve_linear(r, ca);
  const Mat brb = sys.b * solve_linear(r, sys.b.transpose());
  InverseTransformResult out;
  out.z = symmetric_part(inverse(p));
  const Mat t1 = out.z * a0.transpose();
  const Mat t2 = a0 * out.z;
  const Mat t3 = out.z * qb * out.z;
  out.residual = make_residual_report(fro(t1 + t2 + t3 + brb), fro(t1) + fro(t2) + fro(t3) + fro(brb));
  return out;
}

struct DcGainResult {
  bool ok = false;
  double rho = 0.0;
};

/// rho(G(0) Delta(0)) < 1. Throws PoleProximity on an origin pole.
inline DcGainResult dc_gain_robust_check(const StateSpace& g, const SniUncertainty& delta) {
  const StateSpace d = delta.system();
  const CMat g0 = freq_response(g, 0.0);
  const CMat d0 = freq_response(d, 0.0);
  if (g0.cols() != d0.rows() || d0.cols() != g0.rows())
    throw DomainError("uncertainty dimensions do not match the plant channel");
  DcGainResult out;
  out.rho = spectral_radius(Mat((g0 * d0).real()));
  out.ok = out.rho < 1.0;
  return out;
}

}  // namespace nisynth
