#pragma once

#include <string>

#include "nisynth/errors.hpp"
#include "nisynth/matrix_core.hpp"
#include "nisynth/riccati.hpp"
#include "nisynth/state_space.hpp"

namespace nisynth {

/// Every Riccati equation used by analysis and synthesis, each mapped onto
///   res(X) = X f + f^T X + (g - h^T X)^T r^-1 (g - h^T X).
///
///   kind          X   f               g                  h                 r
///   NiPrimal      P   A               C A                B                 CB + B^T C^T
///   NiDual        Z   A^T             B^T                A^T C^T           CB + B^T C^T
///   SniPrimal     P   (as NiPrimal)
///   SniDual       Z   (as NiDual)
///   ConditionA    P   A + B2 F        C1 (A + B2 F)      B1                R
///   ConditionB    Z   (A + L C2)^T    (B1 + L D21)^T     A^T C1^T          R
///   ClosedLoop    S   A_cl            C_cl A_cl          B_cl              R
///   VForm         V   Ak - B2 F       -C1 B2 F           B1 - Bk D21       R
///
/// with R = C1 B1 + B1^T C1^T for plant-based kinds.
enum class AreKind { NiPrimal, NiDual, SniPrimal, SniDual, ConditionA, ConditionB, ClosedLoop, VForm };

inline std::string to_string(AreKind k) {
  switch (k) {
    case AreKind::NiPrimal: return "ni-primal";
    case AreKind::NiDual: return "ni-dual";
    case AreKind::SniPrimal: return "sni-primal";
    case AreKind::SniDual: return "sni-dual";
    case AreKind::ConditionA: return "condition-a";
    case AreKind::ConditionB: return "condition-b";
    case AreKind::ClosedLoop: return "closed-loop";
    case AreKind::VForm: return "v-form";
  }
  return "unknown";
}

inline Mat r_matrix(const StateSpace& sys) {
  return sys.c * sys.b + sys.b.transpose() * sys.c.transpose();
}

inline Mat r_matrix(const UncertainPlant& p) {
  return p.c1 * p.b1 + p.b1.transpose() * p.c1.transpose();
}

inline void require_square_io(const StateSpace& sys) {
  validate(sys);
  if (sys.inputs() != sys.outputs()) throw DomainError("transfer matrix must be square");
}

/// Forms built from a plain realization (A, B, C, D); ClosedLoop takes the
/// loop as a StateSpace in whichever coordinates the caller wants.
inline QuadraticForm system_form(AreKind kind, const StateSpace& sys) {
  require_square_io(sys);
  const Mat r = r_matrix(sys);
  switch (kind) {
    case AreKind::NiPrimal:
    case AreKind::SniPrimal:
    case AreKind::ClosedLoop:
      return QuadraticForm{sys.a, sys.c * sys.a, sys.b, r};
    case AreKind::NiDual:
    case AreKind::SniDual:
      return QuadraticForm{sys.a.transpose(), sys.b.transpose(),
                           sys.a.transpose() * sys.c.transpose(), r};
    default:
      throw DomainError("equation kind " + to_string(kind) + " needs plant data");
  }
}

inline QuadraticForm condition_a_form(const UncertainPlant& p, const Mat& f) {
  validate(p);
  if (f.rows() != p.controls() || f.cols() != p.states())
    throw DomainError("state feedback gain F must be (columns of B2) x n");
  const Mat at = p.a + p.b2 * f;
  return QuadraticForm{at, p.c1 * at, p.b1, r_matrix(p)};
}

inline QuadraticForm condition_b_form(const UncertainPlant& p, const Mat& l) {
  validate(p);
  if (l.rows() != p.states() || l.cols() != p.measurements())
    throw DomainError("output injection gain L must be n x (rows of C2)");
  const Mat ab = p.a + l * p.c2;
  return QuadraticForm{ab.transpose(), (p.b1 + l * p.d21).transpose(),
                       p.a.transpose() * p.c1.transpose(), r_matrix(p)};
}

/// Lower-right block of the closed-loop equation in (x, x - x_k)
/// coordinates when the certificate is block diagonal diag(P, V).
inline QuadraticForm v_form(const UncertainPlant& p, const Mat& f, const DynamicController& k) {
  validate(p);
  require_compatible(p, k);
  return QuadraticForm{k.a_k - p.b2 * f, -(p.c1 * p.b2 * f), p.b1 - k.b_k * p.d21, r_matrix(p)};
}

inline QuadraticForm closed_loop_form(const ClosedLoop& cl) {
  if (cl.a_cl.size() == 0) throw DomainError("closed loop has no (x, x - x_k) realization");
  return QuadraticForm{cl.a_cl, cl.c_cl * cl.a_cl, cl.b_cl, cl.c_cl * cl.b_cl +
                                                             cl.b_cl.transpose() * cl.c_cl.transpose()};
}

inline QuadraticForm original_closed_loop_form(const ClosedLoop& cl) {
  return QuadraticForm{cl.a_c, cl.c_c * cl.a_c, cl.b_c,
                       cl.c_c * cl.b_c + cl.b_c.transpose() * cl.c_c.transpose()};
}

}  // namespace nisynth
