// matamp: config-driven AMP experiments for the matrix GLM.
//
//   matamp sweep   config.json [--seed S] [--threads T] [--strict] [--out-dir D]
//   matamp heatmap config.json ...
//   matamp em-amp  config.json ...
//   matamp selfcheck
//
// Exit codes: 0 success, 2 config error, 3 numerical failure under --strict.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "matamp/amp.hpp"
#include "matamp/denoisers.hpp"
#include "matamp/experiment.hpp"
#include "matamp/oracles.hpp"

namespace {

using namespace matamp;

constexpr int kConfigExit = 2;
constexpr int kStrictExit = 3;

bool report(const char* name, double err, double tol) {
  const bool ok = err <= tol;
  std::printf("%-44s %-4s err=%.3g tol=%.3g\n", name, ok ? "ok" : "FAIL", err, tol);
  return ok;
}

// Quick oracle diagnostics; each one compares an implementation path with
// an independent computation.
int selfcheck() {
  bool all = true;
  Rng rng(20240611);

  {
    Matrix mu(2, 2), tau(2, 2);
    mu << 0.9, 0.1, -0.2, 1.3;
    tau << 0.7, 0.2, 0.2, 0.5;
    const auto prior = SignalPrior::gaussian_rho(0.3);
    GaussianPosteriorDenoiser f(prior.mean(), prior.cov(), mu, tau, true);
    const Vector x = rng.normal_vector(2);
    const Matrix fd = fd_jacobian([&](const Vector& s) { return f.apply(s); }, x);
    all &= report("gaussian f jacobian vs finite differences", (fd - f.jacobian(x)).cwiseAbs().maxCoeff(), 1e-6);
  }
  {
    Matrix mu = Matrix::Identity(2, 2) * 1.1, tau = Matrix::Identity(2, 2) * 0.4;
    SparsePosteriorDenoiser f(0.2, mu, tau);
    const Vector x = rng.normal_vector(2);
    const Matrix fd = fd_jacobian([&](const Vector& s) { return f.apply(s); }, x);
    all &= report("sparse f jacobian vs finite differences",
                  (fd - f.jacobian(x)).cwiseAbs().maxCoeff() / std::max(1.0, fd.cwiseAbs().maxCoeff()), 1e-4);
  }
  {
    Matrix sigma(4, 4);
    sigma << 1.0, 0.1, 0.6, 0.05, 0.1, 1.0, 0.05, 0.5, 0.6, 0.05, 0.8, 0.1, 0.05, 0.5, 0.1, 0.7;
    const Channel ch = Channel::mlr2(0.7, 0.5);
    MlrPosteriorDenoiser g(sigma, ch.proportions(), ch.sigma(), true);
    Vector u(2);
    u << 0.4, -0.1;
    const Vector mean = g.posterior_mean(u, 0.9);
    const Vector grid = grid_posterior_mean(ch, sigma, u, 0.9).mean;
    all &= report("mlr posterior mean vs grid integration", (mean - grid).cwiseAbs().maxCoeff(), 1e-4);
  }
  {
    Matrix sigma(2, 2);
    sigma << 1.0, 0.3, 0.3, 0.8;
    const auto h = [](const Vector& x) { return Vector(x.array().tanh()); };
    const SteinResult s = stein_check(sigma, h, {}, 200000, 7);
    const double z = (s.residual.cwiseAbs().array() / s.standard_error.array().max(1e-300)).maxCoeff();
    all &= report("stein identity, tanh map (in standard errors)", z, 4.0);
  }
  std::printf("%s\n", all ? "selfcheck passed" : "selfcheck FAILED");
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AMP experiments for the matrix GLM"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool strict = false;
  std::string out_dir = ".";

  auto add_run = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("config", config, "JSON config or a manifest written by a previous run")->required();
    sub->add_option("--seed", seed, "override the master seed");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--strict", strict, "exit with status 3 when any repeat fails numerically");
    sub->add_option("--out-dir", out_dir, "output directory");
    return sub;
  };
  CLI::App* sweep = add_run("sweep", "AMP and state evolution over a parameter grid");
  CLI::App* heatmap = add_run("heatmap", "final-iteration correlation over a (delta, eps) grid");
  CLI::App* em = add_run("em-amp", "EM-AMP and oracle-intercept AMP for max-affine regression");
  CLI::App* check = app.add_subcommand("selfcheck", "oracle diagnostics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigExit;
  }

  if (check->parsed()) return selfcheck();

  try {
    RunConfig cfg = load_config(config);
    if (seed) cfg.seed = *seed;
    const RunOptions opt{threads, out_dir};
    RunSummary sum;
    if (sweep->parsed()) {
      sum = run_sweep(cfg, opt);
    } else if (heatmap->parsed()) {
      sum = emit_heatmap_data(cfg, opt);
    } else if (em->parsed()) {
      sum = run_em_experiment(cfg, opt);
    }
    for (const auto& f : sum.files) std::cout << f.string() << '\n';
    if (sum.failed_repeats > 0)
      std::cerr << sum.failed_repeats << " repeat(s) failed numerically; see the status column\n";
    if (sum.flagged_rows > 0) std::cerr << sum.flagged_rows << " Monte Carlo row failures were flagged\n";
    return strict && sum.failed_repeats > 0 ? kStrictExit : 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kStrictExit;
  }
}
