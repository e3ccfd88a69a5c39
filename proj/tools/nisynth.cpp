#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "nisynth/cli/commands.hpp"

namespace {

struct TolFlags {
  std::optional<double> residual, psd, freq, order;

  void add_to(CLI::App* app) {
    app->add_option("--tol", residual, "scaled residual tolerance (overrides NI_SYNTH_TOL)")
        ->check(CLI::PositiveNumber);
    app->add_option("--psd-tol", psd, "eigenvalue tolerance for semidefiniteness")->check(CLI::PositiveNumber);
    app->add_option("--freq-tol", freq, "tolerance on frequency-domain margins")->check(CLI::PositiveNumber);
    app->add_option("--order-tol", order, "Schur ordering tolerance")->check(CLI::PositiveNumber);
  }

  nisynth::Tolerances resolve() const {
    nisynth::Tolerances t = nisynth::cli::tolerances_from_env();
    if (residual) t.residual = *residual;
    if (psd) t.psd = *psd;
    if (freq) t.freq = *freq;
    if (order) t.order = *order;
    return t;
  }
};

void add_grid(CLI::App* app, nisynth::cli::GridOptions& g) {
  app->add_option("--omega-min", g.omega_min, "lowest grid frequency")->check(CLI::PositiveNumber);
  app->add_option("--omega-max", g.omega_max, "highest grid frequency")->check(CLI::PositiveNumber);
  app->add_option("--points", g.points, "number of log-spaced grid points")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace nisynth::cli;
  CLI::App app{"Negative-imaginary analysis and controller synthesis"};
  app.require_subcommand(1);
  RunOptions opts;
  TolFlags tol;
  app.add_flag("--json", opts.json, "machine-readable report");

  std::string input, controller_file;
  std::optional<std::string> out_path, sigma_path, csv_path;
  std::string mode = "of";
  bool require_sni = false;

  CLI::App* analyze = app.add_subcommand("analyze", "check assumptions and NI/SNI properties of a document");
  analyze->add_option("file", input, "system, plant or controller document")->required();
  analyze->add_flag("--sni", require_sni, "also require the SNI frequency verdict");
  tol.add_to(analyze);
  add_grid(analyze, opts.grid);

  CLI::App* synth = app.add_subcommand("synth", "synthesize a controller for a plant");
  synth->add_option("plant", input, "plant document")->required();
  synth->add_option("--mode", mode, "of: output feedback, sf: state feedback only")
      ->check(CLI::IsMember({"of", "sf"}));
  synth->add_option("--out", out_path, "write the result document here");
  tol.add_to(synth);
  add_grid(synth, opts.grid);

  CLI::App* verify = app.add_subcommand("verify", "re-check a controller against a plant");
  verify->add_option("plant", input, "plant document")->required();
  verify->add_option("controller", controller_file, "controller document")->required();
  verify->add_option("--sigma", sigma_path, "document holding a closed-loop certificate \"Sigma\"");
  tol.add_to(verify);
  add_grid(verify, opts.grid);

  CLI::App* freq = app.add_subcommand("freq", "tabulate the frequency response");
  freq->add_option("file", input, "system, plant or controller document")->required();
  freq->add_option("--csv", csv_path, "write CSV here instead of stdout");
  tol.add_to(freq);
  add_grid(freq, opts.grid);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitInput;
  }
  opts.tol = tol.resolve();

  if (analyze->parsed()) return cmd_analyze(input, opts, require_sni, std::cout, std::cerr);
  if (synth->parsed()) return cmd_synth(input, mode, out_path, opts, std::cout, std::cerr);
  if (verify->parsed()) return cmd_verify(input, controller_file, sigma_path, opts, std::cout, std::cerr);
  if (freq->parsed()) return cmd_freq(input, csv_path, opts, std::cout, std::cerr);
  return kExitInput;
}
