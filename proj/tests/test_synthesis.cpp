#include <gtest/gtest.h>

#include "nisynth/synthesis.hpp"
#include "oracles.hpp"

using namespace nisynth;

namespace {

// A = diag(0, 1), C1 = [1, 0]: the feedback matrix is A itself, A22 = [1],
// |Bf2| = 1, R = 2 and |B22| = b. T = 1 and S = b^2 / 4.
UncertainPlant scalar_split_plant(double b) {
  UncertainPlant p;
  p.a = Mat::Zero(2, 2);
  p.a(1, 1) = 1.0;
  p.b1 = Mat(2, 1);
  p.b1 << 1, b;
  p.b2 = Mat(2, 1);
  p.b2 << 1, 1 + b / 2;
  p.c1 = Mat(1, 2);
  p.c1 << 1, 0;
  p.c2 = Mat(1, 2);
  p.c2 << 1, 1;
  p.d21 = Mat::Identity(1, 1);
  return p;
}

UncertainPlant transposed(const UncertainPlant& p) {
  UncertainPlant t;
  t.a = p.a.transpose();
  t.b1 = p.c1.transpose();
  t.b2 = p.c2.transpose();
  t.c1 = p.b1.transpose();
  t.c2 = p.b2.transpose();
  t.d21 = p.d21.transpose();
  return t;
}

const std::vector<oracle::SynthFixture>& fixtures() {
  static const std::vector<oracle::SynthFixture> f = oracle::synthesizable_fixtures(8);
  return f;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schur partition and T, S
// ---------------------------------------------------------------------------

TEST(SchurPartition, Ex1HasEmptyAntiStableBlock) {
  const SchurPartition sp = schur_decompose_sf(oracle::ex1_plant());
  EXPECT_EQ(sp.stable_dim, 3);
  EXPECT_EQ(sp.a22.rows(), 0);
  EXPECT_TRUE(sp.has_zero_mode);
  EXPECT_LE(fro(sp.u.transpose() * sp.n_matrix * sp.u - sp.a_f), 1e-12);
}

TEST(SchurPartition, DecoupledChannels) {
  UncertainPlant p = oracle::ex1_plant();
  p.a = Mat::Zero(2, 2);
  p.a.diagonal() << -1, 2;
  p.b1 = Mat(2, 1);
  p.b1 << 1, 0.5;
  p.b2 = Mat(2, 1);
  p.b2 << 1, 0;
  p.c1 = Mat(1, 2);
  p.c1 << 1, 0;
  p.c2 = Mat(1, 2);
  p.c2 << 0, 1;
  const SchurPartition sp = schur_decompose_sf(p);
  EXPECT_EQ(sp.stable_dim, 1);
  ASSERT_EQ(sp.a22.rows(), 1);
  EXPECT_NEAR(sp.a22(0, 0), 2.0, 1e-12);
  EXPECT_TRUE(sp.has_zero_mode);
}

TEST(SchurPartition, InvariantsOnRandomPlants) {
  for (const auto& f : fixtures()) {
    const SchurPartition& sp = f.report.sf.partition;
    const Index n = sp.a_f.rows();
    EXPECT_LE(fro(sp.u * sp.a_f * sp.u.transpose() - sp.n_matrix), 1e-8 * std::max(1.0, fro(sp.n_matrix)));
    for (const Complex& z : eigvals(sp.a11)) EXPECT_LE(z.real(), 1e-9);
    for (const Complex& z : eigvals(sp.a22)) EXPECT_GT(z.real(), 1e-9);
    EXPECT_TRUE(sp.has_zero_mode);
    std::vector<Complex> joined = eigvals(sp.a11);
    for (const Complex& z : eigvals(sp.a22)) joined.push_back(z);
    sort_spectrum(joined);
    const std::vector<Complex> all = eigvals(sp.a_f);
    ASSERT_EQ(joined.size(), static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < joined.size(); ++i) EXPECT_LE(std::abs(joined[i] - all[i]), 1e-8);
  }
}

TEST(SchurPartition, RequiresA2AndA4) {
  UncertainPlant p = oracle::ex1_plant();
  p.c1 << 0, 1, -1;
  EXPECT_THROW(schur_decompose_sf(p), AssumptionViolation);
  UncertainPlant q = oracle::ex1_plant();
  q.b1 = -q.b1;
  EXPECT_THROW(schur_decompose_sf(q), AssumptionViolation);
}

TEST(SolveTS, EmptyBlockIsVacuouslyPositive) {
  const TSResult ts = solve_TS(schur_decompose_sf(oracle::ex1_plant()));
  EXPECT_EQ(ts.t.rows(), 0);
  EXPECT_EQ(ts.s.rows(), 0);
  EXPECT_EQ(ts.status, GapStatus::Positive);
}

TEST(SolveTS, ScalarHandValues) {
  const SchurPartition sp = schur_decompose_sf(scalar_split_plant(1.0));
  ASSERT_EQ(sp.a22.rows(), 1);
  EXPECT_NEAR(sp.a22(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(sp.bf2(0, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(sp.b22(0, 0)), 1.0, 1e-14);
  const TSResult ts = solve_TS(sp);
  EXPECT_NEAR(ts.t(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(ts.s(0, 0), 0.25, 1e-14);
  EXPECT_NEAR(ts.gap.min_eig, 0.75, 1e-14);
  EXPECT_EQ(ts.status, GapStatus::Positive);
}

TEST(SolveTS, SymmetricPsdOnFixtures) {
  for (const auto& f : fixtures()) {
    for (const TSResult* ts : {&f.report.sf.ts, &f.report.oi.ts}) {
      EXPECT_LE(fro(ts->t - ts->t.transpose()), 1e-12 * std::max(1.0, fro(ts->t)));
      EXPECT_TRUE(ts->t_psd);
      EXPECT_TRUE(ts->s_psd);
    }
  }
}

TEST(SolveTS, BoundaryAndIndefinite) {
  EXPECT_EQ(solve_TS(schur_decompose_sf(scalar_split_plant(2.0))).status, GapStatus::Boundary);
  EXPECT_EQ(solve_TS(schur_decompose_sf(scalar_split_plant(4.0))).status, GapStatus::Indefinite);
}

// ---------------------------------------------------------------------------
// State feedback
// ---------------------------------------------------------------------------

TEST(StateFeedback, Ex1GivesZeroPAndPrintedF) {
  const StateFeedbackSolution sf = synth_state_feedback(oracle::ex1_plant());
  EXPECT_EQ(sf.p, Mat(Mat::Zero(3, 3)));
  Mat f(1, 3);
  f << 1, 0, 0;
  EXPECT_LE(fro(sf.k - f), 1e-12);
  EXPECT_EQ(sf.residual_a.abs, 0.0);
  const UncertainPlant p = oracle::ex1_plant();
  const StateSpace loop = make_system(p.a + p.b2 * sf.k, p.b1, p.c1);
  EXPECT_LE(are_residual(AreKind::NiPrimal, loop, sf.p).abs, 1e-10);
}

TEST(StateFeedback, ScalarSplitAssemblesFourThirds) {
  const StateFeedbackSolution sf = synth_state_feedback(scalar_split_plant(1.0));
  Mat expected = Mat::Zero(2, 2);
  expected(1, 1) = 4.0 / 3.0;
  EXPECT_LE(fro(sf.p_f - expected), 1e-12);
  EXPECT_LE(fro(sf.p - expected), 1e-12);
  EXPECT_TRUE(sf.residual_a.passes(1e-8));
}

TEST(StateFeedback, IndefiniteGapIsNoSolution) {
  try {
    synth_state_feedback(scalar_split_plant(4.0));
    FAIL() << "expected a synthesis failure";
  } catch (const SynthesisFailure& e) {
    EXPECT_EQ(e.stage(), "state-feedback");
    EXPECT_FALSE(e.numerical());
    EXPECT_NE(std::string(e.what()).find("margin"), std::string::npos);
  }
  EXPECT_THROW(synth_state_feedback(scalar_split_plant(2.0)), SynthesisFailure);
}

TEST(StateFeedback, IndefiniteGapLeavesOnlyNegativeRoot) {
  // On the anti-stable scalar block the reduced equation is
  // 2 a p + p^2 (b22^2 / R - bf2^2 R) = 0; its nonzero root is 1/(T - S).
  for (double b : {1.0, 4.0}) {
    const SchurPartition sp = schur_decompose_sf(scalar_split_plant(b));
    const double a = sp.a22(0, 0), r = sp.r(0, 0);
    const double q = sp.b22(0, 0) * sp.b22(0, 0) / r - sp.bf2(0, 0) * sp.bf2(0, 0) * r;
    const double root = -2.0 * a / q;
    const TSResult ts = solve_TS(sp);
    EXPECT_NEAR(root, 1.0 / (ts.t(0, 0) - ts.s(0, 0)), 1e-12);
    if (b == 1.0) {
      EXPECT_GT(root, 0.0);
    } else {
      EXPECT_LT(root, 0.0);
    }
  }
}

TEST(StateFeedback, PropertiesOnFixtures) {
  for (const auto& f : fixtures()) {
    const StateFeedbackSolution& sf = f.report.sf;
    EXPECT_LE(fro(sf.p - sf.partition.u * sf.p_f * sf.partition.u.transpose()), 1e-10 * std::max(1.0, fro(sf.p)));
    EXPECT_TRUE(psd_margin(sf.p, 1e-9).is_psd);
    EXPECT_TRUE(sf.residual_a.passes(1e-8));
    EXPECT_LE(numerical_rank(sf.p, kRankTol), sf.partition.anti_stable_dim());
  }
}

// ---------------------------------------------------------------------------
// Output injection and coupling
// ---------------------------------------------------------------------------

TEST(OutputInjection, Ex1GivesZeroZ) {
  const OutputInjectionSolution oi = synth_output_injection(oracle::ex1_plant());
  EXPECT_EQ(oi.z, Mat(Mat::Zero(3, 3)));
  Mat l(3, 1);
  l << -1, -2, -1;
  EXPECT_EQ(oi.l, l);
  EXPECT_EQ(oi.residual_b.abs, 0.0);
  const UncertainPlant p = oracle::ex1_plant();
  EXPECT_EQ(Mat(p.b1 + oi.l * p.d21 - oi.z * p.a.transpose() * p.c1.transpose()), Mat(Mat::Zero(3, 1)));
}

TEST(OutputInjection, Ex1AgreesWithTransposedStateFeedback) {
  const UncertainPlant p = oracle::ex1_plant();
  const StateFeedbackSolution dual = synth_state_feedback(transposed(p));
  EXPECT_LE(fro(dual.p - synth_output_injection(p).z), 1e-12);
}

TEST(OutputInjection, PropertiesOnFixtures) {
  for (const auto& f : fixtures()) {
    const OutputInjectionSolution& oi = f.report.oi;
    EXPECT_TRUE(psd_margin(oi.z, 1e-9).is_psd);
    EXPECT_TRUE(oi.residual_b.passes(1e-8));
    EXPECT_LE(fro(injection_gain(f.plant, oi.z) - oi.l), 1e-12 * std::max(1.0, fro(oi.l)));
  }
}

TEST(OutputInjection, NewtonFallbackSolvesConditionB) {
  for (const auto& f : fixtures()) {
    const NewtonResult nr = detail::injection_newton(f.plant, 50);
    if (!nr.converged) continue;
    const OutputInjectionSolution oi = detail::injection_from_z(f.plant, nr.x);
    EXPECT_TRUE(oi.residual_b.passes(1e-8));
  }
}

TEST(Coupling, Examples) {
  const CouplingResult ex1 = check_coupling(Mat::Zero(3, 3), Mat::Zero(3, 3));
  EXPECT_EQ(ex1.rho, 0.0);
  EXPECT_TRUE(ex1.strict_ok);
  EXPECT_TRUE(ex1.weak_ok);
  const CouplingResult edge = check_coupling(Mat::Identity(2, 2), Mat::Identity(2, 2));
  EXPECT_DOUBLE_EQ(edge.rho, 1.0);
  EXPECT_FALSE(edge.strict_ok);
  EXPECT_TRUE(edge.weak_ok);
  const CouplingResult bad = check_coupling(Mat::Identity(2, 2), 2.0 * Mat::Identity(2, 2));
  EXPECT_DOUBLE_EQ(bad.rho, 2.0);
  EXPECT_FALSE(bad.strict_ok);
  EXPECT_FALSE(bad.weak_ok);
}

// ---------------------------------------------------------------------------
// Controller, V, closed loop
// ---------------------------------------------------------------------------

TEST(Controller, Ex1IsThePrintedCompensator) {
  const UncertainPlant p = oracle::ex1_plant();
  Mat f(1, 3);
  f << 1, 0, 0;
  Mat l(3, 1);
  l << -1, -2, -1;
  const DynamicController k = build_controller(p, Mat::Zero(3, 3), Mat::Zero(3, 3), f, l);
  const DynamicController printed = oracle::ex1_controller();
  EXPECT_EQ(k.a_k, printed.a_k);
  EXPECT_EQ(k.b_k, printed.b_k);
  EXPECT_EQ(k.c_k, printed.c_k);
}

TEST(Controller, ZeroZGivesMinusL) {
  oracle::Rng rng(89);
  for (const auto& f : fixtures()) {
    const Index n = f.plant.states();
    const Mat l = rng.gaussian(n, 1);
    const DynamicController k = build_controller(f.plant, f.report.sf.p, Mat::Zero(n, n), f.report.sf.k, l);
    EXPECT_EQ(k.b_k, Mat(-l));
  }
}

TEST(Controller, RefusesWithoutStrictCoupling) {
  const UncertainPlant p = oracle::ex1_plant();
  EXPECT_THROW(build_controller(p, Mat::Identity(3, 3), Mat::Identity(3, 3), Mat::Zero(1, 3), Mat::Zero(3, 1)),
               SynthesisFailure);
}

TEST(BuildV, Ex1MatchesPrintedBlock) {
  const UncertainPlant p = oracle::ex1_plant();
  Mat f(1, 3);
  f << 1, 0, 0;
  Mat l(3, 1);
  l << -1, -2, -1;
  const VConstruction vc = build_V(p, Mat::Zero(3, 3), Mat::Zero(3, 3), f, l);
  EXPECT_EQ(vc.w, Mat(Mat::Zero(3, 3)));
  EXPECT_LE((vc.v - oracle::ex1_printed_v()).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_TRUE(vc.residual_v.passes(1e-8));
  EXPECT_TRUE(vc.v_psd.is_psd);
}

TEST(BuildV, IntermediatesOnFixtures) {
  for (const auto& f : fixtures()) {
    const VConstruction& vc = f.report.vc;
    const Mat& pm = f.report.sf.p;
    const Mat& z = f.report.oi.z;
    EXPECT_TRUE(psd_margin(vc.w, 1e-9).is_psd);
    EXPECT_TRUE(vc.w_residual.passes(1e-8)) << "W residual " << vc.w_residual.rel;
    EXPECT_TRUE(vc.residual_v.passes(1e-8));
    EXPECT_TRUE(vc.v_psd.is_psd);
    if (fro(pm) == 0.0) {
      EXPECT_LE(fro(vc.w - z), 1e-14);
    }
  }
}

TEST(ClosedLoopCertificate, Ex1PipelineAndPrinted) {
  const ClosedLoop cl = build_closed_loop(oracle::ex1_plant(), oracle::ex1_controller());
  const ClosedLoopCheck printed = verify_closed_loop(cl, oracle::ex1_printed_sigma(), 1e-3);
  EXPECT_LE(printed.residual.rel, 5e-3);
  EXPECT_TRUE(printed.psd.is_psd);
  const SynthesisReport rep = synth_output_feedback(oracle::ex1_plant());
  EXPECT_TRUE(rep.closed_loop_check.passes(1e-8));
  EXPECT_TRUE(rep.closed_loop_check.x11.passes(1e-8));
  EXPECT_TRUE(rep.closed_loop_check.x21.passes(1e-8));
  EXPECT_TRUE(rep.closed_loop_check.x22.passes(1e-8));
}

TEST(ClosedLoopCertificate, WrongSizeIsRejected) {
  const ClosedLoop cl = build_closed_loop(oracle::ex1_plant(), oracle::ex1_controller());
  EXPECT_THROW(verify_closed_loop(cl, Mat::Zero(3, 3)), DomainError);
}

// ---------------------------------------------------------------------------
// End to end
// ---------------------------------------------------------------------------

TEST(Pipeline, Ex1EndToEnd) {
  const SynthesisReport rep = synth_output_feedback(oracle::ex1_plant());
  EXPECT_TRUE(rep.success);
  EXPECT_TRUE(rep.freq_verdict);
  EXPECT_EQ(rep.rho_zp, 0.0);
  const DynamicController printed = oracle::ex1_controller();
  EXPECT_LE((rep.controller.a_k - printed.a_k).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((rep.controller.b_k - printed.b_k).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((rep.controller.c_k - printed.c_k).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_FALSE(rep.a_c_hurwitz);
  for (const auto& [name, value] : rep.residuals()) EXPECT_LE(value, 1e-12) << name;
}

TEST(Pipeline, AssumptionFailureAtStageZero) {
  UncertainPlant p = oracle::ex1_plant();
  p.c1 << 0, 1, -1;
  EXPECT_THROW(synth_output_feedback(p), AssumptionViolation);
}

TEST(Pipeline, IndefiniteGapFailsAtStateFeedback) {
  try {
    synth_output_feedback(scalar_split_plant(4.0));
    FAIL() << "expected a synthesis failure";
  } catch (const SynthesisFailure& e) {
    EXPECT_EQ(e.stage(), "state-feedback");
  }
}

TEST(Pipeline, SufficiencyObligationsOnFixtures) {
  ASSERT_GE(fixtures().size(), 5u);
  for (const auto& f : fixtures()) {
    const SynthesisReport& rep = f.report;
    EXPECT_TRUE(rep.sf.residual_a.passes(1e-8));
    EXPECT_TRUE(rep.oi.residual_b.passes(1e-8));
    EXPECT_TRUE(rep.vc.residual_v.passes(1e-8));
    EXPECT_TRUE(rep.closed_loop_check.residual.passes(1e-8));
    EXPECT_TRUE(rep.closed_loop_check.x11.passes(1e-8));
    EXPECT_TRUE(rep.closed_loop_check.x21.passes(1e-8));
    EXPECT_TRUE(rep.closed_loop_check.x22.passes(1e-8));
    EXPECT_TRUE(rep.closed_loop_check.psd.is_psd);
    EXPECT_LT(rep.rho_zp, 1.0);
    EXPECT_EQ(rep.closed_loop.original().d, Mat(Mat::Zero(1, 1)));
    EXPECT_TRUE(rep.freq_verdict);
  }
}

// ---------------------------------------------------------------------------
// Necessity
// ---------------------------------------------------------------------------

TEST(Necessity, BlockDiagonalCertificateCollapses) {
  oracle::Rng rng(97);
  const UncertainPlant p = oracle::ex1_plant();
  const DynamicController k = oracle::ex1_controller();
  const Mat g1 = rng.gaussian(3, 3);
  const Mat g2 = rng.gaussian(3, 3);
  const Mat s11 = g1 * g1.transpose() + Mat::Identity(3, 3);
  const Mat s22 = g2 * g2.transpose() + Mat::Identity(3, 3);
  const NecessityExtraction ne = detail::necessity_blocks(p, k, block_diag(s11, s22), 1e-9);
  EXPECT_LE(fro(ne.p - s11), 1e-12 * fro(s11));
  EXPECT_LE(fro(ne.z - s11.inverse()), 1e-10 * fro(ne.z));
  EXPECT_EQ(ne.f, Mat(Mat::Zero(1, 3)));
  EXPECT_EQ(ne.l, Mat(Mat::Zero(3, 1)));
  EXPECT_LE(ne.identity_residual.rel, 1e-12);
}

TEST(Necessity, SingularBlocksAreDegenerate) {
  const Mat s = block_diag(Mat::Identity(3, 3), Mat::Zero(3, 3));
  EXPECT_THROW(detail::necessity_blocks(oracle::ex1_plant(), oracle::ex1_controller(), s, 1e-9),
               DegenerateCertificate);
}

TEST(Necessity, Ex1IsRefusedAtTheGates) {
  const UncertainPlant p = oracle::ex1_plant();
  const DynamicController k = oracle::ex1_controller();
  const ClosedLoop cl = build_closed_loop(p, k);
  EXPECT_FALSE(psd_margin(oracle::ex1_printed_sigma(), 1e-9).is_pd);
  EXPECT_THROW(extract_necessity(p, cl, k, oracle::ex1_printed_sigma()), DomainError);
}

TEST(Necessity, RoundTripOnSniSplits) {
  oracle::Rng rng(101);
  for (int trial = 0; trial < 6; ++trial) {
    const oracle::SniSplit s = oracle::random_sni_split(rng, rng.integer(1, 3));
    const ClosedLoop cl = build_closed_loop(s.plant, s.controller);
    EXPECT_TRUE(is_hurwitz(cl.a_c));
    EXPECT_TRUE(sni_freq_check(cl.original(), default_grid()).verdict);
    const NewtonResult nr = closed_loop_certificate(cl);
    ASSERT_TRUE(nr.converged);
    const NecessityExtraction ne = extract_necessity(s.plant, cl, s.controller, nr.x);
    EXPECT_TRUE(ne.p_psd.is_pd);
    EXPECT_TRUE(ne.z_psd.is_pd);
    EXPECT_TRUE(ne.residual_a.passes(1e-6));
    EXPECT_TRUE(ne.residual_b.passes(1e-6));
    EXPECT_LE(ne.rho_zp, 1.0 + 1e-8);
    EXPECT_LE(ne.identity_residual.rel, 1e-8);
  }
}

TEST(Necessity, SynthesizedLoopsFailTheSniGate) {
  // The construction leaves the zero mode of the feedback matrix in the
  // closed loop, so none of these loops is SNI and extraction must refuse.
  for (const auto& f : fixtures()) {
    const SynthesisReport& rep = f.report;
    EXPECT_FALSE(rep.a_c_hurwitz);
    EXPECT_THROW(extract_necessity(f.plant, rep.closed_loop, rep.controller,
                                   Mat::Identity(2 * f.plant.states(), 2 * f.plant.states())),
                 DomainError);
  }
}
