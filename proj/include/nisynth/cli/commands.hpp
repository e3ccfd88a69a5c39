#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nisynth/cli/documents.hpp"
#include "nisynth/errors.hpp"
#include "nisynth/ni_analysis.hpp"
#include "nisynth/state_space.hpp"
#include "nisynth/synthesis.hpp"

namespace nisynth::cli {

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

// Output file that cannot be created or written.
class OutputError : public Error {
 public:
  using Error::Error;
};

struct GridOptions {
  double omega_min = 1e-3;
  double omega_max = 1e3;
  int points = 200;
};

struct RunOptions {
  Tolerances tol;
  GridOptions grid;
  bool json = false;  // machine-readable report on stdout
};

/// Library defaults, with the residual tolerance taken from NI_SYNTH_TOL
/// when that variable holds a positive number.
inline Tolerances tolerances_from_env() {
  Tolerances t;
  if (const char* v = std::getenv("NI_SYNTH_TOL")) {
    char* end = nullptr;
    const double x = std::strtod(v, &end);
    if (end != v && *end == '\0' && x > 0.0 && std::isfinite(x)) t.residual = x;
  }
  return t;
}

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string fmt6(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

inline std::string fmt_matrix(const Mat& m, const std::string& indent = "    ") {
  if (m.size() == 0) return indent + "(empty)\n";
  std::ostringstream os;
  const Eigen::IOFormat f(6, 0, "  ", "\n", indent + "[", "]");
  os << m.format(f) << "\n";
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw OutputError(path + ": cannot open for writing");
  out << text;
  out.flush();
  if (!out) throw OutputError(path + ": write failed");
}

/// Maps library exceptions onto exit codes and prints the message.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const OutputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const SynthesisFailure& e) {
    err << "synthesis failed at stage \"" << e.stage() << "\": " << e.what() << "\n";
    return e.numerical() ? kExitNumerical : kExitFail;
  } catch (const AssumptionViolation& e) {
    err << "assumption violation: " << e.what() << "\n";
    return kExitInput;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const DomainError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalFailure& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}

enum class DocKind { System, Plant, Controller };

inline DocKind document_kind(const Json& doc) {
  if (!doc.is_object()) throw InputError("document must be a JSON object");
  if (doc.contains("controller")) return DocKind::Controller;
  if (doc.contains("plant")) return DocKind::Plant;
  if (doc.contains("system")) return DocKind::System;
  throw InputError("document has none of \"system\", \"plant\", \"controller\"");
}

/// The transfer function a document stands for: the system itself, the
/// plant's w -> z channel, or the closed loop of the embedded plant.
inline StateSpace document_system(const Json& doc) {
  switch (document_kind(doc)) {
    case DocKind::System:
      return system_from_json(doc);
    case DocKind::Plant: {
      const UncertainPlant p = plant_from_json(doc);
      return make_system(p.a, p.b1, p.c1);
    }
    case DocKind::Controller: {
      const UncertainPlant p = plant_from_json(doc);
      return build_closed_loop(p, controller_from_json(doc)).original();
    }
  }
  throw InputError("unknown document kind");
}

inline FreqGrid make_grid(const RunOptions& o) {
  try {
    return log_grid(o.grid.omega_min, o.grid.omega_max, o.grid.points, o.tol.freq);
  } catch (const DomainError& e) {
    throw InputError(std::string("grid: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct SystemAnalysis {
  NiFreqResult ni;
  SniFreqResult sni;
  std::string are_status;  // "certified", "undecided", "not applicable"
  std::string are_detail;
  std::optional<NiCertificate> cert;
};

inline SystemAnalysis analyze_system(const StateSpace& sys, const FreqGrid& grid, const Tolerances& tol) {
  SystemAnalysis a;
  require_square_io(sys);
  a.ni = ni_freq_check(sys, grid);
  a.sni = sni_freq_check(sys, grid);
  try {
    a.cert = certify_ni_via_are(sys, tol);
    a.are_status = "certified";
    a.are_detail = to_string(a.cert->kind);
  } catch (const CertificationFailure& e) {
    a.are_status = "undecided";
    a.are_detail = e.what();
  } catch (const NumericalFailure& e) {
    a.are_status = "undecided";
    a.are_detail = e.what();
  }
  return a;
}

inline Json analysis_to_json(const SystemAnalysis& a) {
  Json j = Json::object();
  j["ni_verdict"] = a.ni.verdict;
  j["ni_worst_margin"] = a.ni.worst_margin;
  j["unstable"] = a.ni.unstable;
  j["pole_conditions"] = a.ni.poles.passes();
  j["skipped_omegas"] = a.ni.skipped;
  j["sni_verdict"] = a.sni.verdict;
  j["sni_worst_margin"] = a.sni.worst_margin;
  j["are_status"] = a.are_status;
  j["are_detail"] = a.are_detail;
  if (a.cert) {
    j["are_residual"] = a.cert->residual.abs;
    j["are_min_eig"] = a.cert->psd.min_eig;
    j["are_solution"] = matrix_to_json(a.cert->solution);
  }
  return j;
}

inline void print_analysis(std::ostream& out, const SystemAnalysis& a) {
  out << "  NI (frequency):  " << (a.ni.verdict ? "yes" : "no")
      << "  worst margin " << fmt6(a.ni.worst_margin);
  if (a.ni.unstable) out << "  [pole with Re > 0]";
  if (!a.ni.poles.passes()) out << "  [imaginary-axis pole condition fails]";
  out << "\n";
  if (!a.ni.skipped.empty()) out << "  skipped " << a.ni.skipped.size() << " grid point(s) next to poles\n";
  out << "  SNI (frequency): " << (a.sni.verdict ? "yes" : "no") << "  worst margin "
      << fmt6(a.sni.worst_margin) << "\n";
  out << "  ARE certificate: " << a.are_status;
  if (a.cert) {
    out << " (" << a.are_detail << ", residual " << fmt6(a.cert->residual.abs) << ", min eig "
        << fmt6(a.cert->psd.min_eig) << ")\n";
  } else {
    out << "\n    " << a.are_detail << "\n";
  }
}

inline void print_assumptions(std::ostream& out, const AssumptionReport& r) {
  auto flag = [](bool b) { return b ? "pass" : "FAIL"; };
  out << "  A1 (A, B2) stabilizable: " << flag(r.a1_stabilizable) << "\n"
      << "  A1 (C2, A) detectable:   " << flag(r.a1_detectable) << "\n"
      << "  A2 C1 B2 nonsingular:    " << flag(r.a2_c1b2_nonsingular) << "\n"
      << "  A3 D21 nonsingular:      " << flag(r.a3_d21_nonsingular) << "\n"
      << "  A4 R > 0:                " << flag(r.a4_r_pd) << "  (min eig " << fmt6(r.r_min_eig) << ")\n";
}

inline Json tolerances_echo(const Tolerances& t) { return tolerances_to_json(t); }

inline void print_tolerances(std::ostream& out, const Tolerances& t) {
  out << "tolerances: residual " << fmt6(t.residual) << ", psd " << fmt6(t.psd) << ", freq "
      << fmt6(t.freq) << ", order " << fmt6(t.order) << "\n";
}

/// Exit 0 when every requested property holds: A1-A4 for a plant, the NI
/// frequency verdict for a system or closed loop (plus SNI when asked).
inline int cmd_analyze(const std::string& path, const RunOptions& opts, bool require_sni,
                       std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Json doc = read_json_file(path);
    const DocKind kind = document_kind(doc);
    const FreqGrid grid = make_grid(opts);
    Json report = Json::object();
    report["file"] = path;
    int code = kExitPass;
    std::ostringstream human;
    print_tolerances(human, opts.tol);

    std::optional<UncertainPlant> plant;
    if (kind != DocKind::System) plant = plant_from_json(doc);
    if (kind == DocKind::Plant) {
      const AssumptionReport ar = check_assumptions(*plant);
      human << "assumptions:\n";
      print_assumptions(human, ar);
      Json a = Json::object();
      a["a1_stabilizable"] = ar.a1_stabilizable;
      a["a1_detectable"] = ar.a1_detectable;
      a["a2_c1b2_nonsingular"] = ar.a2_c1b2_nonsingular;
      a["a3_d21_nonsingular"] = ar.a3_d21_nonsingular;
      a["a4_r_pd"] = ar.a4_r_pd;
      a["r"] = matrix_to_json(ar.r);
      report["assumptions"] = a;
      if (!ar.all()) code = kExitInput;
    }

    const StateSpace sys = document_system(doc);
    const char* label = kind == DocKind::System   ? "system"
                        : kind == DocKind::Plant  ? "open loop w -> z (A, B1, C1)"
                                                  : "closed loop";
    human << label << ":\n";
    const SystemAnalysis an = analyze_system(sys, grid, opts.tol);
    print_analysis(human, an);
    report["analysis"] = analysis_to_json(an);
    if (kind != DocKind::Plant) {
      const bool ok = an.ni.verdict && (!require_sni || an.sni.verdict);
      if (!ok && code == kExitPass) code = kExitFail;
    }

    if (kind == DocKind::Controller) {
      if (const auto u = uncertainty_from_json(doc)) {
        try {
          const DcGainResult dc = dc_gain_robust_check(sys, *u);
          human << "  DC gain rho(G(0) Delta(0)) = " << fmt6(dc.rho) << (dc.ok ? " < 1" : " >= 1") << "\n";
          report["dc_gain_rho"] = dc.rho;
          report["dc_gain_ok"] = dc.ok;
        } catch (const PoleProximity& e) {
          human << "  DC gain check not applicable: " << e.what() << "\n";
          report["dc_gain_ok"] = nullptr;
        }
      }
    }
    report["tolerances"] = tolerances_echo(opts.tol);
    report["exit_code"] = code;
    if (opts.json) {
      out << dump(report);
    } else {
      out << human.str();
    }
    return code;
  });
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

inline int cmd_synth(const std::string& path, const std::string& mode,
                     const std::optional<std::string>& out_path, const RunOptions& opts,
                     std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Json doc = read_json_file(path);
    const UncertainPlant p = plant_from_json(doc);
    std::ostringstream summary;
    print_tolerances(summary, opts.tol);
    Json result;
    if (mode == "sf") {
      const StateFeedbackSolution sf = synth_state_feedback(p, opts.tol);
      result = state_feedback_document(p, sf, opts.tol);
      summary << "state feedback (condition (a)):\n  K =\n" << fmt_matrix(sf.k) << "  P =\n"
              << fmt_matrix(sf.p) << "  T - S min eig "
              << (sf.t.size() == 0 ? std::string("n/a (no anti-stable block)") : fmt6(sf.ts.gap.min_eig))
              << ", stable block " << sf.partition.stable_dim << " of " << p.states() << "\n"
              << "  residual condition_a " << fmt6(sf.residual_a.abs) << "\n";
    } else if (mode == "of") {
      const SynthesisReport rep = synth_output_feedback(p, opts.tol, make_grid(opts));
      result = controller_document(p, rep);
      summary << "output feedback controller:\n  Ak =\n" << fmt_matrix(rep.controller.a_k)
              << "  Bk =\n" << fmt_matrix(rep.controller.b_k) << "  Ck =\n"
              << fmt_matrix(rep.controller.c_k) << "  rho(ZP) = " << fmt6(rep.rho_zp) << "\n"
              << "  condition (b) route: " << rep.oi.route << "\n  residuals:";
      for (const auto& [k, v] : rep.residuals()) summary << " " << k << "=" << fmt6(v);
      summary << "\n  Sigma min eig " << fmt6(rep.closed_loop_check.psd.min_eig)
              << "\n  closed loop NI (frequency): " << (rep.freq_verdict ? "yes" : "no")
              << " (worst margin " << fmt6(rep.freq.worst_margin) << ")"
              << "\n  A_c Hurwitz: " << (rep.a_c_hurwitz ? "yes" : "no") << "\n";
    } else {
      throw InputError("--mode must be \"of\" or \"sf\"");
    }
    if (out_path) {
      write_text(*out_path, dump(result));
      summary << "wrote " << *out_path << "\n";
      out << (opts.json ? dump(result) : summary.str());
    } else {
      err << summary.str();
      out << dump(result);
    }
    return kExitPass;
  });
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyReport {
  ClosedLoopCheck check;
  NiFreqResult freq;
  std::map<std::string, double> residuals;
  std::optional<double> max_stored_deviation;
  std::string sigma_source;
  bool pass = false;
};

/// Recomputes every residual that the stored certificates allow.
inline VerifyReport verify_documents(const UncertainPlant& p, const Json& cdoc,
                                     const std::optional<Mat>& sigma_override, const FreqGrid& grid,
                                     const Tolerances& tol) {
  const DynamicController k = controller_from_json(cdoc);
  const ClosedLoop cl = build_closed_loop(p, k);
  if (cl.a_cl.size() == 0) throw InputError("controller order must equal plant order");
  VerifyReport v;
  Mat sigma;
  if (sigma_override) {
    sigma = *sigma_override;
    v.sigma_source = "supplied";
  } else if (auto s = optional_certificate(cdoc, "Sigma")) {
    sigma = *s;
    v.sigma_source = "document";
  } else {
    sigma = solve_riccati_newton(closed_loop_form(cl)).x;
    v.sigma_source = "computed";
  }
  if (sigma.rows() != cl.a_cl.rows() || sigma.cols() != cl.a_cl.cols())
    throw InputError("Sigma must be " + std::to_string(cl.a_cl.rows()) + " x " +
                     std::to_string(cl.a_cl.cols()));
  if (!is_symmetric(sigma, 1e-8)) throw InputError("Sigma is not symmetric");
  v.check = verify_closed_loop(cl, sigma, tol.psd);
  v.freq = ni_freq_check(cl.original(), grid);
  v.residuals["closed_loop"] = v.check.residual.abs;
  v.residuals["x11"] = v.check.x11.abs;
  v.residuals["x21"] = v.check.x21.abs;
  v.residuals["x22"] = v.check.x22.abs;
  const auto pm = optional_certificate(cdoc, "P");
  const auto fm = optional_certificate(cdoc, "F");
  const auto zm = optional_certificate(cdoc, "Z");
  const auto lm = optional_certificate(cdoc, "L");
  const auto vm = optional_certificate(cdoc, "V");
  try {
    if (pm && fm) v.residuals["condition_a"] = residual(condition_a_form(p, *fm), *pm).abs;
    if (zm && lm) v.residuals["condition_b"] = residual(condition_b_form(p, *lm), *zm).abs;
    if (vm && fm) v.residuals["v_equation"] = residual(v_form(p, *fm, k), *vm).abs;
  } catch (const DomainError& e) {
    throw InputError(std::string("certificates: ") + e.what());
  }
  if (cdoc.contains("certificates") && cdoc.at("certificates").contains("residuals")) {
    const Json& stored = cdoc.at("certificates").at("residuals");
    double dev = 0.0;
    bool any = false;
    for (const auto& [name, value] : v.residuals) {
      if (stored.contains(name) && stored.at(name).is_number()) {
        dev = std::max(dev, std::abs(stored.at(name).get<double>() - value));
        any = true;
      }
    }
    if (any) v.max_stored_deviation = dev;
  }
  v.pass = v.check.residual.passes(tol.residual) && v.check.psd.is_psd && v.freq.verdict;
  return v;
}

inline int cmd_verify(const std::string& plant_path, const std::string& controller_path,
                      const std::optional<std::string>& sigma_path, const RunOptions& opts,
                      std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const UncertainPlant p = plant_from_json(read_json_file(plant_path));
    const Json cdoc = read_json_file(controller_path);
    std::optional<Mat> sigma;
    if (sigma_path) {
      const Json sdoc = read_json_file(*sigma_path);
      if (sdoc.is_object() && sdoc.contains("Sigma")) {
        sigma = matrix_from_json(sdoc.at("Sigma"), "Sigma");
      } else if (auto s = optional_certificate(sdoc, "Sigma")) {
        sigma = s;
      } else {
        throw InputError(*sigma_path + ": no \"Sigma\" matrix");
      }
    }
    VerifyReport v;
    try {
      v = verify_documents(p, cdoc, sigma, make_grid(opts), opts.tol);
    } catch (const InputError&) {
      throw;
    } catch (const DomainError& e) {
      throw InputError(std::string("plant/controller mismatch: ") + e.what());
    }
    if (opts.json) {
      Json j = Json::object();
      j["pass"] = v.pass;
      j["sigma_source"] = v.sigma_source;
      j["residuals"] = residuals_to_json(v.residuals);
      j["closed_loop_scaled"] = v.check.residual.rel;
      j["sigma_min_eig"] = v.check.psd.min_eig;
      j["ni_verdict"] = v.freq.verdict;
      j["ni_worst_margin"] = v.freq.worst_margin;
      if (v.max_stored_deviation) j["max_stored_deviation"] = *v.max_stored_deviation;
      j["tolerances"] = tolerances_echo(opts.tol);
      out << dump(j);
    } else {
      print_tolerances(out, opts.tol);
      out << "closed-loop certificate (" << v.sigma_source << " Sigma):\n  residuals:";
      for (const auto& [k, x] : v.residuals) out << " " << k << "=" << fmt6(x);
      out << "\n  closed-loop residual scaled " << fmt6(v.check.residual.rel) << " ("
          << (v.check.residual.passes(opts.tol.residual) ? "pass" : "FAIL") << ")\n"
          << "  Sigma min eig " << fmt6(v.check.psd.min_eig) << " ("
          << (v.check.psd.is_psd ? "PSD" : "not PSD") << ")\n"
          << "  closed loop NI (frequency): " << (v.freq.verdict ? "yes" : "no") << " (worst margin "
          << fmt6(v.freq.worst_margin) << ")\n";
      if (v.max_stored_deviation)
        out << "  max deviation from stored residuals " << fmt6(*v.max_stored_deviation) << "\n";
      out << (v.pass ? "PASS" : "FAIL") << "\n";
    }
    return v.pass ? kExitPass : kExitFail;
  });
}

// ---------------------------------------------------------------------------
// freq
// ---------------------------------------------------------------------------

/// CSV of G(j omega) entries and the NI margin. Rows next to a pole are
/// left out and listed on stderr.
inline std::string frequency_csv(const StateSpace& sys, const FreqGrid& grid,
                                 std::vector<double>* skipped = nullptr) {
  require_square_io(sys);
  const Index p = sys.outputs();
  const Index m = sys.inputs();
  std::ostringstream os;
  os << "omega";
  for (const char* part : {"re", "im"})
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < m; ++j) os << "," << part << "_" << i + 1 << j + 1;
  os << ",ni_margin\n";
  const std::vector<EigenCluster> poles = pole_clusters(sys.a);
  for (double w : grid.omegas) {
    if (near_pole(poles, w)) {
      if (skipped) skipped->push_back(w);
      continue;
    }
    const CMat g = transfer_at(sys, Complex(0.0, w));
    os << fmt17(w);
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < m; ++j) os << "," << fmt17(g(i, j).real());
    for (Index i = 0; i < p; ++i)
      for (Index j = 0; j < m; ++j) os << "," << fmt17(g(i, j).imag());
    os << "," << fmt17(ni_margin(g)) << "\n";
  }
  return os.str();
}

inline int cmd_freq(const std::string& path, const std::optional<std::string>& csv_path,
                    const RunOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const StateSpace sys = document_system(read_json_file(path));
    const FreqGrid grid = make_grid(opts);
    std::vector<double> skipped;
    const std::string csv = frequency_csv(sys, grid, &skipped);
    for (double w : skipped) err << "skipped omega = " << fmt17(w) << " (pole)\n";
    if (csv_path) {
      write_text(*csv_path, csv);
    } else {
      out << csv;
    }
    return kExitPass;
  });
}

}  // namespace nisynth::cli
