#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matamp/common.hpp"
#include "matamp/denoisers.hpp"
#include "matamp/model.hpp"

namespace matamp {

inline constexpr const char* kVersion = "0.1.0";

struct ModelSpec {
  std::string type = "mlr2";  // mlr2 | mlr3 | mar | moe
  double alpha = 0.7;
  std::vector<double> proportions{1.0 / 3, 1.0 / 3, 1.0 / 3};
  std::vector<double> intercepts{1.0, 1.0};
  double sigma = 0.0;
};

struct PriorSpec {
  std::string type = "gaussian";  // gaussian | sparse
  double rho = 0.0;
  std::vector<double> mean;  // empty: zero mean, unit variances with correlation rho
  std::vector<std::vector<double>> cov;
  double eps = 0.1;
};

struct DenoiserSpec {
  std::string type = "bayes";  // bayes | soft_threshold | mismatched
  double zeta = kDefaultSoftThresholdZeta;
  std::optional<double> alpha_hat;
  std::optional<std::vector<double>> proportions_hat;
};

struct EmSpec {
  int m_max = 5;
  int k_max = 5;
  int ez_samples = 10000;
  bool warm_start = true;
};

/// Everything needed to regenerate a result file. Grid lists that are empty
/// fall back to the single value in the model or prior block.
struct RunConfig {
  ModelSpec model;
  PriorSpec prior;
  DenoiserSpec denoiser;
  int p = 500;
  std::vector<double> delta{2.0};
  std::vector<double> sigma;
  std::vector<double> rho;
  std::vector<double> eps;
  std::vector<double> alpha;
  int iterations = 10;
  int repeats = 10;
  std::uint64_t seed = 1;
  int mc_samples = 1000;
  int se_samples = 100000;
  bool se = true;
  EmSpec em;
  bool labels = false;
};

/// Parses a config object, or a manifest whose "config" member holds one.
/// Unknown keys and out-of-range values throw ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

/// One point of the sweep grid with the model and prior it induces.
struct GridPoint {
  double delta = 0.0;
  double sigma = 0.0;
  std::optional<double> rho_or_eps;
  std::optional<double> alpha;
  int n = 0;
};

std::vector<GridPoint> expand_grid(const RunConfig& cfg);
Channel build_channel(const RunConfig& cfg, const GridPoint& point);
SignalPrior build_prior(const RunConfig& cfg, const GridPoint& point);
SignalDenoiserSpec build_f_spec(const RunConfig& cfg);
ChannelDenoiserSpec build_g_spec(const RunConfig& cfg, const GridPoint& point, std::uint64_t mc_seed);

std::uint64_t instance_seed(std::uint64_t master, std::size_t grid, int repeat);
std::uint64_t se_seed(std::uint64_t master, std::size_t grid);

struct RunOptions {
  int threads = 1;
  std::filesystem::path out_dir = ".";
};

struct RunSummary {
  std::vector<std::filesystem::path> files;
  int failed_repeats = 0;  // diverged or numerically failed
  int flagged_rows = 0;
};

/// Long-format sweep: one row per (grid point, repeat, iteration, signal).
RunSummary run_sweep(const RunConfig& cfg, const RunOptions& opt);

/// Final-iteration mean correlation per (δ, ε) cell, minimised over signals.
RunSummary emit_heatmap_data(const RunConfig& cfg, const RunOptions& opt);

/// EM-AMP and OR-AMP traces per outer iteration for a two-intercept MAR model.
RunSummary run_em_experiment(const RunConfig& cfg, const RunOptions& opt);

/// ĉᵢ = argminₗ (Yᵢ − ⟨Xᵢ, β̂⁽ˡ⁾⟩)², ties to the smallest index.
std::vector<int> estimate_labels(const Instance& instance, const Matrix& bhat);

/// Label accuracy after the best relabelling of the estimated columns.
double label_accuracy(const std::vector<int>& truth, const std::vector<int>& estimate, int dim);

}  // namespace matamp
