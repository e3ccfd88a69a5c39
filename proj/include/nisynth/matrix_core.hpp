#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "nisynth/errors.hpp"

namespace nisynth {

using Mat = Eigen::MatrixXd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;
using Index = Eigen::Index;

/// Default split between the closed-left (stable) and open-right spectrum.
inline constexpr double kOrderTol = 1e-9;
inline constexpr double kPsdTol = 1e-9;

/// Pass/fail thresholds shared by analysis, synthesis and the CLI.
struct Tolerances {
  double residual = 1e-8;  // relative, with an absolute floor of 1e-12
  double psd = kPsdTol;
  double freq = 1e-8;
  double order = kOrderTol;
};

inline void require_finite(const Mat& m, const std::string& what) {
  if (!m.allFinite()) throw DomainError(what + ": non-finite entry");
}

inline void require_square(const Mat& m, const std::string& what) {
  if (m.rows() != m.cols()) {
    throw DomainError(what + ": expected a square matrix, got " + std::to_string(m.rows()) +
                      "x" + std::to_string(m.cols()));
  }
}

inline double fro(const Mat& m) { return m.size() == 0 ? 0.0 : m.norm(); }

inline bool is_symmetric(const Mat& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  return fro(m - m.transpose()) <= std::max(rel_tol * fro(m), 1e-12);
}

inline Mat symmetric_part(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Orders eigenvalues by real part, then imaginary part, then magnitude.
inline void sort_spectrum(std::vector<Complex>& values) {
  std::sort(values.begin(), values.end(), [](const Complex& a, const Complex& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    if (a.imag() != b.imag()) return a.imag() < b.imag();
    return std::abs(a) < std::abs(b);
  });
}

inline std::vector<Complex> eigvals(const Mat& m) {
  require_square(m, "eigvals");
  require_finite(m, "eigvals");
  std::vector<Complex> out;
  if (m.rows() == 0) return out;
  Eigen::EigenSolver<Mat> solver(m, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success) {
    throw NumericalFailure("eigvals: QR iteration did not converge");
  }
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) out.push_back(solver.eigenvalues()(i));
  sort_spectrum(out);
  return out;
}

inline double spectral_radius(const Mat& m) {
  double rho = 0.0;
  for (const Complex& z : eigvals(m)) rho = std::max(rho, std::abs(z));
  return rho;
}

struct PsdReport {
  double min_eig = std::numeric_limits<double>::infinity();
  bool is_psd = true;
  bool is_pd = true;
  double tol = 0.0;
};

/// Smallest eigenvalue of the symmetrized matrix, with PSD/PD verdicts at
/// `tol`. An empty matrix is vacuously positive definite.
inline PsdReport psd_margin(const Mat& m, double tol) {
  require_square(m, "psd_margin");
  require_finite(m, "psd_margin");
  if (!is_symmetric(m, 1e-8)) throw DomainError("psd_margin: matrix is not symmetric");
  PsdReport report;
  report.tol = tol;
  if (m.rows() == 0) return report;
  Eigen::SelfAdjointEigenSolver<Mat> solver(symmetric_part(m), Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw NumericalFailure("psd_margin: symmetric eigensolver did not converge");
  }
  report.min_eig = solver.eigenvalues().minCoeff();
  report.is_psd = report.min_eig >= -tol;
  report.is_pd = report.min_eig > tol;
  return report;
}

inline constexpr double kMaxCondition = 1e12;

inline double condition_number(const Mat& a) {
  if (a.size() == 0) return 1.0;
  Eigen::JacobiSVD<Mat> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

inline bool is_nonsingular(const Mat& a) {
  return a.rows() == a.cols() && condition_number(a) <= kMaxCondition;
}

/// Solves a X = b. Throws SingularMatrix when cond(a) exceeds 1e12.
inline Mat solve_linear(const Mat& a, const Mat& b) {
  require_square(a, "solve_linear");
  if (a.rows() != b.rows()) throw DomainError("solve_linear: row mismatch between a and b");
  require_finite(a, "solve_linear");
  require_finite(b, "solve_linear");
  if (a.rows() == 0) return b;
  const double cond = condition_number(a);
  if (!(cond <= kMaxCondition)) {
    throw SingularMatrix("solve_linear: matrix is singular (condition number " +
                         std::to_string(cond) + ")");
  }
  return a.fullPivLu().solve(b);
}

inline Mat inverse(const Mat& a) {
  return solve_linear(a, Mat::Identity(a.rows(), a.cols()));
}

/// Rank with singular values above rel_tol * (largest singular value).
template <typename Derived>
Index numerical_rank(const Eigen::MatrixBase<Derived>& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<typename Derived::PlainObject> svd(m);
  const auto& s = svd.singularValues();
  if (s(0) == 0.0) return 0;
  Index rank = 0;
  for (Index i = 0; i < s.size(); ++i) {
    if (s(i) > rel_tol * s(0)) ++rank;
  }
  return rank;
}

// Eigenvalues of a defective cluster split by O(sqrt(eps)); their centroid is
// accurate to O(eps). Clusters group eigenvalues closer than `radius`
// (transitively).
struct EigenCluster {
  Complex center;
  int multiplicity = 0;
};

inline double cluster_radius(const Mat& m) {
  return 8.0 * std::sqrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, fro(m));
}

inline std::vector<int> cluster_labels(const std::vector<Complex>& values, double radius) {
  const std::size_t n = values.size();
  std::vector<int> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (std::abs(values[i] - values[j]) <= radius && label[i] != label[j]) {
          const int lo = std::min(label[i], label[j]);
          label[i] = label[j] = lo;
          changed = true;
        }
      }
    }
  }
  return label;
}

inline std::vector<EigenCluster> cluster_spectrum(const std::vector<Complex>& values,
                                                  double radius) {
  const std::vector<int> label = cluster_labels(values, radius);
  std::vector<EigenCluster> out;
  std::vector<int> seen;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto it = std::find(seen.begin(), seen.end(), label[i]);
    if (it == seen.end()) {
      seen.push_back(label[i]);
      out.push_back({values[i], 1});
    } else {
      EigenCluster& c = out[static_cast<std::size_t>(it - seen.begin())];
      c.center += values[i];
      ++c.multiplicity;
    }
  }
  for (EigenCluster& c : out) c.center /= static_cast<double>(c.multiplicity);
  return out;
}

// ---------------------------------------------------------------------------
// Real Schur form
// ---------------------------------------------------------------------------

struct SchurForm {
  Mat u;               // orthogonal
  Mat t;               // quasi-upper-triangular, u^T m u = t
  Index stable_dim = 0;
};

namespace detail {

// Diagonal block sizes (1 or 2) of a quasi-upper-triangular matrix whose
// deflated subdiagonal entries are exact zeros.
inline std::vector<Index> schur_block_sizes(const Mat& t) {
  std::vector<Index> sizes;
  const Index n = t.rows();
  Index i = 0;
  while (i < n) {
    if (i + 1 < n && t(i + 1, i) != 0.0) {
      sizes.push_back(2);
      i += 2;
    } else {
      sizes.push_back(1);
      i += 1;
    }
  }
  return sizes;
}

inline std::vector<Complex> block_eigenvalues(const Mat& t, Index start, Index size) {
  if (size == 1) return {Complex(t(start, start), 0.0)};
  const double a = t(start, start), b = t(start, start + 1);
  const double c = t(start + 1, start), d = t(start + 1, start + 1);
  const double mid = 0.5 * (a + d);
  const double disc = 0.25 * (a - d) * (a - d) + b * c;
  if (disc >= 0.0) {
    const double r = std::sqrt(disc);
    return {Complex(mid - r, 0.0), Complex(mid + r, 0.0)};
  }
  const double im = std::sqrt(-disc);
  return {Complex(mid, -im), Complex(mid, im)};
}

inline std::vector<Complex> quasi_triangular_spectrum(const Mat& t) {
  std::vector<Complex> out;
  Index start = 0;
  for (Index size : schur_block_sizes(t)) {
    for (const Complex& z : block_eigenvalues(t, start, size)) out.push_back(z);
    start += size;
  }
  return out;
}

// Unordered real Schur decomposition with the strictly-lower part (below the
// first subdiagonal) cleared.
inline SchurForm real_schur(const Mat& m) {
  SchurForm form;
  const Index n = m.rows();
  if (n == 0) {
    form.u = Mat(0, 0);
    form.t = Mat(0, 0);
    return form;
  }
  Eigen::RealSchur<Mat> schur(m, /*computeU=*/true);
  if (schur.info() != Eigen::Success) {
    throw NumericalFailure("real Schur: QR iteration did not converge");
  }
  form.u = schur.matrixU();
  form.t = schur.matrixT();
  for (Index j = 0; j < n; ++j) {
    for (Index i = j + 2; i < n; ++i) form.t(i, j) = 0.0;
  }
  return form;
}

// Swaps the adjacent diagonal blocks of sizes p (at row j) and q (at row j+p)
// by an orthogonal similarity, updating t and accumulating into u.
inline void swap_adjacent_blocks(Mat& t, Mat& u, Index j, Index p, Index q) {
  const Index k = p + q;
  const Mat a11 = t.block(j, j, p, p);
  const Mat a12 = t.block(j, j + p, p, q);
  const Mat a22 = t.block(j + p, j + p, q, q);

  // a11 X - X a22 = a12, column-major vectorization.
  Mat op = Mat::Zero(p * q, p * q);
  for (Index c = 0; c < q; ++c) {
    for (Index r = 0; r < p; ++r) {
      for (Index i = 0; i < p; ++i) op(c * p + r, c * p + i) += a11(r, i);
      for (Index l = 0; l < q; ++l) op(c * p + r, l * p + r) -= a22(l, c);
    }
  }
  Eigen::FullPivLU<Mat> lu(op);
  if (!lu.isInvertible()) {
    throw NumericalFailure("real Schur reorder: adjacent blocks share an eigenvalue");
  }
  const Eigen::VectorXd x = lu.solve(Eigen::Map<const Eigen::VectorXd>(a12.data(), p * q));

  Mat basis(k, q);
  basis.topRows(p) = -Eigen::Map<const Mat>(x.data(), p, q);
  basis.bottomRows(q).setIdentity();
  Eigen::HouseholderQR<Mat> qr(basis);
  const Mat qm = qr.householderQ() * Mat::Identity(k, k);

  const Mat rows = qm.transpose() * t.middleRows(j, k);
  t.middleRows(j, k) = rows;
  const Mat cols = t.middleCols(j, k) * qm;
  t.middleCols(j, k) = cols;
  const Mat ucols = u.middleCols(j, k) * qm;
  u.middleCols(j, k) = ucols;

  const double spill = t.block(j + q, j, p, q).norm();
  if (spill > 1e-8 * std::max(1.0, t.block(j, j, k, k).norm())) {
    throw NumericalFailure("real Schur reorder: block swap is ill-conditioned");
  }
  t.block(j + q, j, p, q).setZero();
}

// Stability flag per diagonal block, judged on the centroid of the
// eigenvalue cluster the block belongs to.
inline std::vector<bool> block_stability(const Mat& t, const std::vector<Index>& sizes,
                                         double tol_order, double radius) {
  std::vector<Complex> values;
  std::vector<std::size_t> owner;
  Index start = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    for (const Complex& z : block_eigenvalues(t, start, sizes[b])) {
      values.push_back(z);
      owner.push_back(b);
    }
    start += sizes[b];
  }
  const std::vector<int> label = cluster_labels(values, radius);
  std::vector<Complex> sum(values.size(), Complex(0.0, 0.0));
  std::vector<int> count(values.size(), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum[static_cast<std::size_t>(label[i])] += values[i];
    ++count[static_cast<std::size_t>(label[i])];
  }
  std::vector<bool> stable(sizes.size(), true);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto l = static_cast<std::size_t>(label[i]);
    const double centroid = sum[l].real() / count[l];
    if (centroid > tol_order) stable[owner[i]] = false;
  }
  return stable;
}

}  // namespace detail

/// Real Schur form with every eigenvalue satisfying Re <= tol_order moved to the
/// leading block. stable_dim is the size of that block. Members of a tight
/// (defective) cluster are classified together by the cluster centroid.
inline SchurForm real_schur_ordered(const Mat& m, double tol_order = kOrderTol) {
  require_square(m, "real_schur_ordered");
  require_finite(m, "real_schur_ordered");
  SchurForm form = detail::real_schur(m);
  Mat& t = form.t;
  Mat& u = form.u;

  std::vector<Index> sizes = detail::schur_block_sizes(t);
  std::vector<bool> stable = detail::block_stability(t, sizes, tol_order, cluster_radius(m));

  // Insertion sort on blocks: bubble each stable block left past the unstable
  // ones in front of it.
  std::size_t settled = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    if (!stable[b]) continue;
    std::size_t cur = b;
    while (cur > settled) {
      Index start = 0;
      for (std::size_t i = 0; i + 1 < cur; ++i) start += sizes[i];
      detail::swap_adjacent_blocks(t, u, start, sizes[cur - 1], sizes[cur]);
      std::swap(sizes[cur - 1], sizes[cur]);
      std::swap(stable[cur - 1], stable[cur]);
      --cur;
    }
    ++settled;
  }

  form.stable_dim = 0;
  for (std::size_t b = 0; b < settled; ++b) form.stable_dim += sizes[b];
  return form;
}

// ---------------------------------------------------------------------------
// Lyapunov equation  a X + X a^T + q = 0
// ---------------------------------------------------------------------------

/// Bartels-Stewart solve of a X + X a^T + q = 0. Throws SingularEquation when
/// some pair of eigenvalues of `a` sums to (numerically) zero.
inline Mat solve_lyapunov(const Mat& a, const Mat& q) {
  require_square(a, "solve_lyapunov");
  require_square(q, "solve_lyapunov");
  if (a.rows() != q.rows()) throw DomainError("solve_lyapunov: a and q differ in size");
  require_finite(a, "solve_lyapunov");
  require_finite(q, "solve_lyapunov");
  const Index n = a.rows();
  if (n == 0) return Mat(0, 0);

  const SchurForm schur = detail::real_schur(a);
  const Mat& t = schur.t;
  const Mat& u = schur.u;

  const std::vector<Complex> spectrum = detail::quasi_triangular_spectrum(t);
  const double resonance_tol = 1e-12 * fro(a);
  for (const Complex& li : spectrum) {
    for (const Complex& lj : spectrum) {
      if (std::abs(li + lj) <= resonance_tol) {
        throw SingularEquation("solve_lyapunov: eigenvalues of a sum to zero");
      }
    }
  }

  const Mat qt = u.transpose() * q * u;
  Mat y = Mat::Zero(n, n);
  const std::vector<Index> sizes = detail::schur_block_sizes(t);
  Index end = n;
  for (auto it = sizes.rbegin(); it != sizes.rend(); ++it) {
    const Index s = *it;
    const Index c = end - s;
    Mat rhs = -qt.middleCols(c, s);
    if (end < n) rhs -= y.rightCols(n - end) * t.block(c, end, s, n - end).transpose();
    if (s == 1) {
      const Mat op = t + t(c, c) * Mat::Identity(n, n);
      y.col(c) = op.partialPivLu().solve(rhs);
    } else {
      Mat op = Mat::Zero(2 * n, 2 * n);
      const Mat tjj = t.block(c, c, 2, 2);
      for (Index bi = 0; bi < 2; ++bi) {
        op.block(bi * n, bi * n, n, n) += t;
        for (Index bj = 0; bj < 2; ++bj) {
          op.block(bi * n, bj * n, n, n) += tjj(bi, bj) * Mat::Identity(n, n);
        }
      }
      const Eigen::VectorXd v =
          op.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(rhs.data(), 2 * n));
      y.middleCols(c, 2) = Eigen::Map<const Mat>(v.data(), n, 2);
    }
    end = c;
  }

  Mat x = u * y * u.transpose();
  if (fro(q - q.transpose()) <= 1e-14 * fro(q)) x = symmetric_part(x);
  if (!x.allFinite()) throw NumericalFailure("solve_lyapunov: non-finite solution");
  return x;
}

}  // namespace nisynth
