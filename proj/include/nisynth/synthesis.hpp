#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nisynth/are_forms.hpp"
#include "nisynth/errors.hpp"
#include "nisynth/matrix_core.hpp"
#include "nisynth/ni_analysis.hpp"
#include "nisynth/riccati.hpp"
#include "nisynth/state_space.hpp"

namespace nisynth {

// ---------------------------------------------------------------------------
// Ordered Schur split and the two Lyapunov equations
// ---------------------------------------------------------------------------

/// Uses the ordered Schur form of N to split
///   X N + N^T X + X (Bpos R^-1 Bpos^T - Bneg R Bneg^T) X = 0
/// into a trivial stable part and an anti-stable part A22.
struct SchurPartition {
  Mat n_matrix;
  Mat u;
  Mat a_f;
  Index stable_dim = 0;
  Mat a11, a12, a22;
  Mat b_f, bf1, bf2;   // U^T Bneg
  Mat b1_t, b11, b22;  // U^T Bpos
  Mat r;
  bool has_zero_mode = false;  // some eigenvalue of A11 with |lambda| <= 1e-7

  Index anti_stable_dim() const { return a_f.rows() - stable_dim; }
};

inline SchurPartition partition_from(const Mat& n, const Mat& bneg, const Mat& bpos, const Mat& r,
                                     double tol_order = kOrderTol) {
  SchurPartition sp;
  sp.n_matrix = n;
  sp.r = r;
  const SchurForm sf = real_schur_ordered(n, tol_order);
  sp.u = sf.u;
  sp.a_f = sf.t;
  sp.stable_dim = sf.stable_dim;
  const Index k = sf.stable_dim;
  const Index m = n.rows() - k;
  sp.a11 = sp.a_f.topLeftCorner(k, k);
  sp.a12 = sp.a_f.topRightCorner(k, m);
  sp.a22 = sp.a_f.bottomRightCorner(m, m);
  sp.b_f = sp.u.transpose() * bneg;
  sp.bf1 = sp.b_f.topRows(k);
  sp.bf2 = sp.b_f.bottomRows(m);
  sp.b1_t = sp.u.transpose() * bpos;
  sp.b11 = sp.b1_t.topRows(k);
  sp.b22 = sp.b1_t.bottomRows(m);
  for (const Complex& z : eigvals(sp.a11))
    if (std::abs(z) <= 1e-7) sp.has_zero_mode = true;
  return sp;
}

/// Partition of A - B2 (C1 B2)^-1 C1 A with B_f = U^T (B2 (C1 B2)^-1 - B1 R^-1)
/// and B1~ = U^T B1.
inline SchurPartition schur_decompose_sf(const UncertainPlant& p, double tol_order = kOrderTol) {
  validate(p);
  const Mat m = p.c1 * p.b2;
  if (!is_nonsingular(m)) throw AssumptionViolation("A2: C1 B2 is singular");
  const Mat r = r_matrix(p);
  if (!psd_margin(r, kPsdTol).is_pd) throw AssumptionViolation("A4: R is not positive definite");
  const Mat n = p.a - p.b2 * solve_linear(m, p.c1 * p.a);
  const Mat bneg = p.b2 * inverse(m) - p.b1 * inverse(r);
  return partition_from(n, bneg, p.b1, r, tol_order);
}

enum class GapStatus { Positive, Boundary, Indefinite };

inline std::string to_string(GapStatus g) {
  switch (g) {
    case GapStatus::Positive: return "positive";
    case GapStatus::Boundary: return "boundary";
    case GapStatus::Indefinite: return "indefinite";
  }
  return "unknown";
}

struct TSResult {
  Mat t, s;
  PsdReport gap;
  bool t_psd = true;
  bool s_psd = true;
  GapStatus status = GapStatus::Positive;
};

/// -A22 T - T A22^T + Bf2 R Bf2^T = 0,  -A22 S - S A22^T + B22 R^-1 B22^T = 0,
/// and the definiteness of T - S.
inline TSResult solve_TS(const SchurPartition& sp, double psd_tol = kPsdTol) {
  TSResult out;
  const Index m = sp.a22.rows();
  if (m == 0) {
    out.t = out.s = Mat(0, 0);
    out.gap = psd_margin(out.t, psd_tol);
    return out;
  }
  const Mat neg_a22 = -sp.a22;
  out.t = symmetric_part(solve_lyapunov(neg_a22, sp.bf2 * sp.r * sp.bf2.transpose()));
  out.s = symmetric_part(
      solve_lyapunov(neg_a22, sp.b22 * solve_linear(sp.r, sp.b22.transpose())));
  out.t_psd = psd_margin(out.t, psd_tol).is_psd;
  out.s_psd = psd_margin(out.s, psd_tol).is_psd;
  out.gap = psd_margin(out.t - out.s, psd_tol);
  if (out.gap.is_pd) {
    out.status = GapStatus::Positive;
  } else if (out.gap.min_eig >= -psd_tol) {
    out.status = GapStatus::Boundary;
  } else {
    out.status = GapStatus::Indefinite;
  }
  return out;
}

/// U diag(0, (T - S)^-1) U^T, returned with the Schur-coordinate P_f.
inline std::pair<Mat, Mat> assemble_from_gap(const SchurPartition& sp, const TSResult& ts) {
  const Index n = sp.a_f.rows();
  const Index k = sp.stable_dim;
  Mat x_f = Mat::Zero(n, n);
  if (n > k) x_f.bottomRightCorner(n - k, n - k) = symmetric_part(inverse(ts.t - ts.s));
  return {symmetric_part(sp.u * x_f * sp.u.transpose()), x_f};
}

// ---------------------------------------------------------------------------
// State feedback and output injection
// ---------------------------------------------------------------------------

struct StateFeedbackSolution {
  Mat k, p, t, s, p_f;
  SchurPartition partition;
  TSResult ts;
  ResidualReport residual_a;
};

inline void require_r_pd(const UncertainPlant& p, const std::string& stage) {
  if (!psd_margin(r_matrix(p), kPsdTol).is_pd)
    throw AssumptionViolation(stage + ": A4 fails, R = C1 B1 + B1^T C1^T is not positive definite");
}

/// P = U diag(0, (T - S)^-1) U^T and
/// K = (C1 B2)^-1 (B1^T P - C1 A - R (B2^T C1^T)^-1 B2^T P).
inline StateFeedbackSolution synth_state_feedback(const UncertainPlant& p, const Tolerances& tol = {}) {
  validate(p);
  require_r_pd(p, "state-feedback");
  StateFeedbackSolution out;
  out.partition = schur_decompose_sf(p, tol.order);
  out.ts = solve_TS(out.partition, tol.psd);
  out.t = out.ts.t;
  out.s = out.ts.s;
  if (out.ts.status != GapStatus::Positive) {
    throw SynthesisFailure("state-feedback", "T - S is " + to_string(out.ts.status) +
                                                 " (margin " + std::to_string(out.ts.gap.min_eig) +
                                                 "); no P >= 0 solves condition (a)");
  }
  std::tie(out.p, out.p_f) = assemble_from_gap(out.partition, out.ts);
  const Mat m = p.c1 * p.b2;
  const Mat r = out.partition.r;
  const Mat b2t_p = p.b2.transpose() * out.p;
  out.k = solve_linear(m, p.b1.transpose() * out.p - p.c1 * p.a -
                              r * solve_linear(m.transpose(), b2t_p));
  out.residual_a = residual(condition_a_form(p, out.k), out.p);
  if (!out.residual_a.passes(tol.residual)) {
    throw SynthesisFailure("state-feedback",
                           "condition (a) residual " + std::to_string(out.residual_a.abs) +
                               " exceeds tolerance",
                           true);
  }
  return out;
}

/// L = (Z A^T C1^T - B1 - Z C2^T D21^-1 R)(D21^T)^-1, evaluated as written.
inline Mat injection_gain(const UncertainPlant& p, const Mat& z) {
  const Mat r = r_matrix(p);
  const Mat inner = z * p.a.transpose() * p.c1.transpose() - p.b1 -
                    z * p.c2.transpose() * solve_linear(p.d21, r);
  return solve_linear(p.d21, inner.transpose()).transpose();
}

struct OutputInjectionSolution {
  Mat l, z;
  std::string route;  // "dual-schur" or "newton"
  SchurPartition partition;
  TSResult ts;
  ResidualReport residual_b;
  int newton_iterations = 0;
  std::vector<std::string> notes;
};

namespace detail {

inline OutputInjectionSolution injection_from_z(const UncertainPlant& p, Mat z) {
  OutputInjectionSolution out;
  out.z = symmetric_part(z);
  out.l = injection_gain(p, out.z);
  out.residual_b = residual(condition_b_form(p, out.l), out.z);
  return out;
}

// Condition (b) with L written in terms of Z, solved by Newton from Z = 0.
inline NewtonResult injection_newton(const UncertainPlant& p, int max_iterations) {
  const Mat r = r_matrix(p);
  const Mat d_inv_t = inverse(p.d21.transpose());
  const Mat act = p.a.transpose() * p.c1.transpose();
  const Mat l0 = -p.b1 * d_inv_t;
  const Mat l1 = (act - p.c2.transpose() * solve_linear(p.d21, r)) * d_inv_t;
  const Mat mq = l1 * p.d21 - act;
  auto parts = [&](const Mat& z) {
    const Mat ab = p.a + (l0 + z * l1) * p.c2;
    const Mat qb = p.b1 + (l0 + z * l1) * p.d21 - z * act;
    return std::make_pair(ab, qb);
  };
  auto phi = [&](const Mat& z) {
    const auto [ab, qb] = parts(z);
    return Mat(z * ab.transpose() + ab * z + qb * solve_linear(r, qb.transpose()));
  };
  auto jac = [&](const Mat& z) {
    const auto [ab, qb] = parts(z);
    return Mat(ab + z * p.c2.transpose() * l1.transpose() + qb * solve_linear(r, mq.transpose()));
  };
  auto measure = [&](const Mat& z) {
    return residual(condition_b_form(p, injection_gain(p, z)), z);
  };
  NewtonOptions opts;
  opts.max_iterations = max_iterations;
  opts.accept_tol = 1e-10;
  return solve_symmetric_newton(phi, jac, measure, Mat::Zero(p.states(), p.states()), opts);
}

}  // namespace detail

/// Z >= 0 and L solving condition (b). Tries the ordered-Schur construction
/// on the dual data first, then Newton on the Z-equation with L substituted.
inline OutputInjectionSolution synth_output_injection(const UncertainPlant& p, const Tolerances& tol = {}) {
  validate(p);
  if (!is_nonsingular(p.d21)) throw AssumptionViolation("output-injection: A3 fails, D21 is singular");
  require_r_pd(p, "output-injection");
  const Mat r = r_matrix(p);
  const Mat d_inv = inverse(p.d21);
  const Mat a_w = p.a - p.b1 * d_inv * p.c2;
  const Mat act = p.a.transpose() * p.c1.transpose();
  const Mat bneg = p.c2.transpose() * d_inv.transpose() - act * inverse(r);

  std::vector<std::string> notes;
  SchurPartition sp = partition_from(a_w.transpose(), bneg, act, r, tol.order);
  TSResult ts = solve_TS(sp, tol.psd);
  if (ts.status == GapStatus::Positive) {
    OutputInjectionSolution out = detail::injection_from_z(p, assemble_from_gap(sp, ts).first);
    out.route = "dual-schur";
    out.partition = std::move(sp);
    out.ts = ts;
    if (out.residual_b.passes(tol.residual) && psd_margin(out.z, tol.psd).is_psd) return out;
    notes.push_back("dual Schur route: condition (b) residual " +
                    std::to_string(out.residual_b.abs) + " with L from Z; falling back to Newton");
  } else {
    notes.push_back("dual Schur route: T - S is " + to_string(ts.status) + " (margin " +
                    std::to_string(ts.gap.min_eig) + "); falling back to Newton");
  }

  const NewtonResult nr = detail::injection_newton(p, 50);
  OutputInjectionSolution out = detail::injection_from_z(p, nr.x);
  out.route = "newton";
  out.partition = std::move(sp);
  out.ts = ts;
  out.newton_iterations = nr.iterations;
  out.notes = std::move(notes);
  const PsdReport zpsd = psd_margin(out.z, tol.psd);
  if (!out.residual_b.passes(tol.residual) || !zpsd.is_psd) {
    std::string why = "no Z >= 0 found; Newton residual " + std::to_string(out.residual_b.abs) +
                      ", min eig " + std::to_string(zpsd.min_eig);
    for (const std::string& n : out.notes) why += "; " + n;
    throw SynthesisFailure("output-injection", why);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Coupling, controller, V
// ---------------------------------------------------------------------------

struct CouplingResult {
  double rho = 0.0;
  bool strict_ok = false;
  bool weak_ok = false;
};

inline CouplingResult check_coupling(const Mat& p, const Mat& z) {
  CouplingResult out;
  out.rho = p.rows() == 0 ? 0.0 : spectral_radius(z * p);
  out.strict_ok = out.rho < 1.0 - 1e-12;
  out.weak_ok = out.rho <= 1.0 + 1e-8;
  return out;
}

/// Ck = F, Bk = -(I - Z P)^-1 L,
/// Ak = A + B2 Ck - Bk C2 - (B1 + (I - Z P)^-1 L D21) R^-1 (C1 (A + B2 Ck) - B1^T P).
inline DynamicController build_controller(const UncertainPlant& p, const Mat& pm, const Mat& z,
                                          const Mat& f, const Mat& l) {
  validate(p);
  const CouplingResult c = check_coupling(pm, z);
  if (!c.strict_ok)
    throw SynthesisFailure("coupling", "rho(ZP) = " + std::to_string(c.rho) + " is not below 1");
  const Index n = p.states();
  const Mat izp = Mat::Identity(n, n) - z * pm;
  const Mat izp_l = solve_linear(izp, l);
  const Mat r = r_matrix(p);
  DynamicController k;
  k.c_k = f;
  k.b_k = -izp_l;
  k.a_k = p.a + p.b2 * f - k.b_k * p.c2 -
          (p.b1 + izp_l * p.d21) * solve_linear(r, p.c1 * (p.a + p.b2 * f) - p.b1.transpose() * pm);
  return k;
}

struct VConstruction {
  // Intermediates of the W argument.
  Mat w;    // Z (I - P Z)^-1
  Mat a_w;  // A - B1 D21^-1 C2
  Mat r_z;
  Mat r_w;  // P A_w + A_w^T P + R_z
  ResidualReport w_residual;  // A_w W + W A_w^T + W R_w W

  // Data of the V equation.
  Mat a_e, c_e1, c_e2;
  Mat l_e;  // as printed, from W
  Mat q_e;  // B1 + L_e D21 - W C_e1^T
  Mat v;
  Mat q_v;  // -C_e1 - (B1 - Bk D21)^T V
  ResidualReport residual_v;          // lower-right block equation, solved
  ResidualReport residual_v_printed;  // printed form with L_e, C_e1; diagnostic
  PsdReport v_psd;
  int newton_iterations = 0;
};

/// V >= 0 from the lower-right block of the closed-loop equation, together
/// with every intermediate of the W argument.
inline VConstruction build_V(const UncertainPlant& p, const Mat& pm, const Mat& z, const Mat& f,
                             const Mat& l, const Tolerances& tol = {}) {
  validate(p);
  const CouplingResult c = check_coupling(pm, z);
  if (!c.strict_ok)
    throw SynthesisFailure("v-construction", "rho(ZP) = " + std::to_string(c.rho) + " is not below 1");
  const Index n = p.states();
  const Mat r = r_matrix(p);
  const Mat d_inv = inverse(p.d21);
  const Mat i_n = Mat::Identity(n, n);
  VConstruction vc;

  vc.w = symmetric_part(z * inverse(i_n - pm * z));
  vc.a_w = p.a - p.b1 * d_inv * p.c2;
  const Mat dc = d_inv * p.c2;
  const Mat act_dc = p.a.transpose() * p.c1.transpose() * dc;
  vc.r_z = act_dc + act_dc.transpose() - dc.transpose() * r * dc;
  vc.r_w = pm * vc.a_w + vc.a_w.transpose() * pm + vc.r_z;
  {
    const Mat t1 = vc.a_w * vc.w;
    const Mat t2 = vc.w * vc.a_w.transpose();
    const Mat t3 = vc.w * vc.r_w * vc.w;
    vc.w_residual = make_residual_report(fro(t1 + t2 + t3), fro(t1) + fro(t2) + fro(t3));
  }

  const Mat at = p.a + p.b2 * f;
  const Mat qt = p.c1 * at - p.b1.transpose() * pm;
  vc.a_e = p.a - p.b1 * solve_linear(r, qt);
  vc.c_e1 = p.c1 * p.b2 * f;
  vc.c_e2 = p.c2 - p.d21 * solve_linear(r, qt);
  const Mat r_inv = inverse(r);
  vc.l_e = -(p.b1 * r_inv + vc.w * (d_inv * vc.c_e2 - r_inv * vc.c_e1).transpose()) *
           inverse(r_inv * p.d21.transpose());
  vc.q_e = p.b1 + vc.l_e * p.d21 - vc.w * vc.c_e1.transpose();

  const DynamicController k = build_controller(p, pm, z, f, l);
  const QuadraticForm form = v_form(p, f, k);
  const NewtonResult nr = solve_riccati_newton(form);
  vc.v = symmetric_part(nr.x);
  vc.newton_iterations = nr.iterations;
  vc.residual_v = residual(form, vc.v);
  vc.q_v = form.g - form.h.transpose() * vc.v;
  vc.v_psd = psd_margin(vc.v, tol.psd);

  const Mat ae_le = vc.a_e + vc.l_e * vc.c_e2;
  const QuadraticForm printed{ae_le, vc.c_e1, p.b1 + vc.l_e * p.d21, r};
  vc.residual_v_printed = residual(printed, vc.v);

  if (!vc.residual_v.passes(tol.residual) || !vc.v_psd.is_psd) {
    throw SynthesisFailure(
        "v-construction",
        "no V >= 0 found (residual " + std::to_string(vc.residual_v.abs) + ", min eig " +
            std::to_string(vc.v_psd.min_eig) + ", ||W|| " + std::to_string(fro(vc.w)) +
            ", ||A_e|| " + std::to_string(fro(vc.a_e)) + (nr.note.empty() ? "" : ", " + nr.note) + ")",
        true);
  }
  return vc;
}

// ---------------------------------------------------------------------------
// Closed-loop certificate
// ---------------------------------------------------------------------------

struct ClosedLoopCheck {
  ResidualReport residual;
  ResidualReport x11, x21, x22;
  PsdReport psd;

  bool passes(double tol) const { return residual.passes(tol) && psd.is_psd; }
};

/// Closed-loop equation in (x, x - x_k) coordinates, with its blocks.
inline ClosedLoopCheck verify_closed_loop(const ClosedLoop& cl, const Mat& sigma,
                                          double psd_tol = kPsdTol) {
  const QuadraticForm form = closed_loop_form(cl);
  if (sigma.rows() != form.order() || sigma.cols() != form.order())
    throw DomainError("certificate has the wrong size for the closed loop");
  const Index n = form.order() / 2;
  ClosedLoopCheck out;
  out.residual = residual(form, sigma);
  out.x11 = block_residual(form, sigma, 0, n, 0, n);
  out.x21 = block_residual(form, sigma, n, n, 0, n);
  out.x22 = block_residual(form, sigma, n, n, n, n);
  out.psd = psd_margin(symmetric_part(sigma), psd_tol);
  return out;
}

inline Mat block_diag(const Mat& a, const Mat& b) {
  Mat out = Mat::Zero(a.rows() + b.rows(), a.cols() + b.cols());
  out.topLeftCorner(a.rows(), a.cols()) = a;
  out.bottomRightCorner(b.rows(), b.cols()) = b;
  return out;
}

struct SynthesisReport {
  AssumptionReport assumptions;
  StateFeedbackSolution sf;
  OutputInjectionSolution oi;
  CouplingResult coupling;
  double rho_zp = 0.0;
  DynamicController controller;
  VConstruction vc;
  ClosedLoop closed_loop;
  Mat sigma;
  ClosedLoopCheck closed_loop_check;
  double closed_loop_residual = 0.0;
  NiFreqResult freq;
  bool freq_verdict = false;
  bool a_c_hurwitz = false;
  Tolerances tol;
  bool success = false;

  /// Named residuals (absolute Frobenius norms).
  std::map<std::string, double> residuals() const {
    return {{"condition_a", sf.residual_a.abs},
            {"condition_b", oi.residual_b.abs},
            {"v_equation", vc.residual_v.abs},
            {"closed_loop", closed_loop_check.residual.abs},
            {"x11", closed_loop_check.x11.abs},
            {"x21", closed_loop_check.x21.abs},
            {"x22", closed_loop_check.x22.abs}};
  }
};

inline bool is_hurwitz(const Mat& a) {
  for (const Complex& z : eigvals(a))
    if (z.real() >= -kAxisTol) return false;
  return true;
}

/// State feedback, output injection, coupling, controller, V, closed loop,
/// certificate and frequency check, in that order.
inline SynthesisReport synth_output_feedback(const UncertainPlant& p, const Tolerances& tol = {},
                                             const FreqGrid& grid = default_grid()) {
  SynthesisReport rep;
  rep.tol = tol;
  rep.assumptions = check_assumptions(p);
  if (!rep.assumptions.all()) {
    std::string why;
    for (const std::string& f : rep.assumptions.failures()) why += (why.empty() ? "" : "; ") + f;
    throw AssumptionViolation("assumptions: " + why);
  }
  auto stage = [](const std::string& name, auto&& fn) {
    try {
      return fn();
    } catch (const SynthesisFailure&) {
      throw;
    } catch (const NumericalFailure& e) {
      throw SynthesisFailure(name, e.what(), true);
    }
  };
  rep.sf = stage("state-feedback", [&] { return synth_state_feedback(p, tol); });
  rep.oi = stage("output-injection", [&] { return synth_output_injection(p, tol); });
  rep.coupling = check_coupling(rep.sf.p, rep.oi.z);
  rep.rho_zp = rep.coupling.rho;
  if (!rep.coupling.strict_ok)
    throw SynthesisFailure("coupling", "rho(ZP) = " + std::to_string(rep.rho_zp) + " is not below 1");
  rep.controller = stage("controller", [&] {
    return build_controller(p, rep.sf.p, rep.oi.z, rep.sf.k, rep.oi.l);
  });
  rep.vc = stage("v-construction", [&] {
    return build_V(p, rep.sf.p, rep.oi.z, rep.sf.k, rep.oi.l, tol);
  });
  rep.closed_loop = build_closed_loop(p, rep.controller);
  rep.sigma = block_diag(rep.sf.p, rep.vc.v);
  rep.closed_loop_check = verify_closed_loop(rep.closed_loop, rep.sigma, tol.psd);
  rep.closed_loop_residual = rep.closed_loop_check.residual.abs;
  rep.a_c_hurwitz = is_hurwitz(rep.closed_loop.a_c);
  rep.freq = ni_freq_check(rep.closed_loop.original(), grid);
  rep.freq_verdict = rep.freq.verdict;
  if (!rep.closed_loop_check.passes(tol.residual)) {
    throw SynthesisFailure("closed-loop",
                           "closed-loop residual " + std::to_string(rep.closed_loop_residual) +
                               " or certificate not PSD (min eig " +
                               std::to_string(rep.closed_loop_check.psd.min_eig) + ")",
                           true);
  }
  rep.success = rep.freq_verdict;
  if (!rep.success)
    throw SynthesisFailure("frequency-check",
                           "closed loop fails the NI frequency check (worst margin " +
                               std::to_string(rep.freq.worst_margin) + ")",
                           true);
  return rep;
}

// ---------------------------------------------------------------------------
// Necessity direction
// ---------------------------------------------------------------------------

struct NecessityExtraction {
  Mat sigma_full;
  Mat e_tilde, e_bar;
  Mat p, z, f, l;
  double rho_zp = 0.0;
  ResidualReport residual_a, residual_b;
  ResidualReport identity_residual;  // Z^-1 - P - S12 S22^-1 S12^T
  PsdReport p_psd, z_psd;
};

/// Newton solve of the closed-loop equation in (x, x_k) coordinates.
inline NewtonResult closed_loop_certificate(const ClosedLoop& cl) {
  return solve_riccati_newton(original_closed_loop_form(cl));
}

namespace detail {

// P, Z, F, L from the blocks of a closed-loop certificate, with no gates.
inline NecessityExtraction necessity_blocks(const UncertainPlant& plant, const DynamicController& k,
                                            const Mat& sigma_full, double psd_tol) {
  const Index n = plant.states();
  const Index nk = k.a_k.rows();
  NecessityExtraction out;
  out.sigma_full = symmetric_part(sigma_full);
  const Mat s11 = out.sigma_full.topLeftCorner(n, n);
  const Mat s12 = out.sigma_full.topRightCorner(n, nk);
  const Mat s22 = out.sigma_full.bottomRightCorner(nk, nk);
  if (!is_nonsingular(s22)) throw DegenerateCertificate("Sigma22 is singular");
  if (!is_nonsingular(s11)) throw DegenerateCertificate("Sigma11 is singular");
  const Mat s22_inv_s12t = solve_linear(s22, s12.transpose());
  out.e_tilde = -s22_inv_s12t;
  out.e_bar = solve_linear(s11, s12);
  out.p = symmetric_part(s11 - s12 * s22_inv_s12t);
  out.z = symmetric_part(inverse(s11));
  out.f = k.c_k * out.e_tilde;
  out.l = out.e_bar * k.b_k;
  out.rho_zp = spectral_radius(out.z * out.p);
  out.residual_a = residual(condition_a_form(plant, out.f), out.p);
  out.residual_b = residual(condition_b_form(plant, out.l), out.z);
  const Mat coupling = s12 * s22_inv_s12t;
  const Mat zinv = inverse(out.z);
  out.identity_residual = make_residual_report(fro(zinv - out.p - coupling),
                                               fro(zinv) + fro(out.p) + fro(coupling));
  out.p_psd = psd_margin(out.p, psd_tol);
  out.z_psd = psd_margin(out.z, psd_tol);
  return out;
}

}  // namespace detail

/// Recovers P, Z, F, L from a positive definite closed-loop certificate.
/// Refuses unless the loop is SNI, minimal, and sigma_full is a PD solution.
inline NecessityExtraction extract_necessity(const UncertainPlant& plant, const ClosedLoop& cl,
                                             const DynamicController& k, const Mat& sigma_full,
                                             const FreqGrid& grid = default_grid(),
                                             const Tolerances& tol = {}) {
  validate(plant);
  require_compatible(plant, k);
  const StateSpace sys = cl.original();
  if (!sni_freq_check(sys, grid).verdict) throw DomainError("necessity gate: closed loop is not SNI");
  if (!minimality_check(sys).minimal()) throw DomainError("necessity gate: closed loop is not minimal");
  const QuadraticForm form = original_closed_loop_form(cl);
  if (sigma_full.rows() != form.order() || sigma_full.cols() != form.order())
    throw DomainError("necessity gate: certificate has the wrong size");
  if (!psd_margin(symmetric_part(sigma_full), tol.psd).is_pd)
    throw DomainError("necessity gate: certificate is not positive definite");
  const ResidualReport sres = residual(form, sigma_full);
  if (!sres.passes(tol.residual))
    throw DomainError("necessity gate: certificate residual " + std::to_string(sres.abs) +
                      " exceeds tolerance");

  return detail::necessity_blocks(plant, k, sigma_full, tol.psd);
}

}  // namespace nisynth
