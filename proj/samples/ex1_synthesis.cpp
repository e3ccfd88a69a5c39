// Synthesizes an NI-rendering controller for the three-state example plant
// and prints the controller, the certificate and the closed-loop checks.

#include <iostream>

#include "nisynth/synthesis.hpp"

int main() {
  using namespace nisynth;

  UncertainPlant p;
  p.a = Mat(3, 3);
  p.a << -1, 0, 0, 0, -1, 1, 1, 1, -1;
  p.b1 = Mat(3, 1);
  p.b1 << 1, 2, 1;
  p.b2 = Mat::Ones(3, 1);
  p.c1 = Mat(1, 3);
  p.c1 << 1, 0, 0;
  p.c2 = Mat(1, 3);
  p.c2 << 1, 2, 0;
  p.d21 = Mat::Identity(1, 1);

  try {
    const SynthesisReport rep = synth_output_feedback(p);
    const Eigen::IOFormat f(6, 0, "  ", "\n", "  [", "]");
    std::cout << "Ak =\n" << rep.controller.a_k.format(f) << "\n"
              << "Bk =\n" << rep.controller.b_k.format(f) << "\n"
              << "Ck =\n" << rep.controller.c_k.format(f) << "\n"
              << "rho(ZP) = " << rep.rho_zp << "\n"
              << "Sigma =\n" << rep.sigma.format(f) << "\n";
    for (const auto& [name, value] : rep.residuals()) std::cout << name << " residual " << value << "\n";
    std::cout << "closed loop NI on the grid: " << (rep.freq_verdict ? "yes" : "no") << "\n";
  } catch (const SynthesisFailure& e) {
    std::cerr << "failed at " << e.stage() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
