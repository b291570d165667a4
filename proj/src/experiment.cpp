#include "matamp/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "matamp/amp.hpp"
#include "matamp/em_amp.hpp"
#include "matamp/parallel.hpp"
#include "matamp/rng.hpp"
#include "matamp/state_evolution.hpp"

namespace matamp {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

// A grid list may be given as a scalar or as an array.
void read_list(const json& j, const char* key, std::vector<double>& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  try {
    out = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
  } catch (const json::exception& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void validate(const RunConfig& c) {
  const auto& m = c.model;
  check(m.type == "mlr2" || m.type == "mlr3" || m.type == "mar" || m.type == "moe",
        "model.type must be mlr2, mlr3, mar or moe");
  check(c.prior.type == "gaussian" || c.prior.type == "sparse", "prior.type must be gaussian or sparse");
  check(c.denoiser.type == "bayes" || c.denoiser.type == "soft_threshold" || c.denoiser.type == "mismatched",
        "denoiser.type must be bayes, soft_threshold or mismatched");
  check(c.p >= 1, "p must be positive");
  check(!c.delta.empty(), "delta must not be empty");
  for (double d : c.delta) {
    check(d > 0.0, "delta must be positive");
    const double n = d * c.p;
    check(std::abs(n - std::round(n)) <= 1e-6 * std::max(1.0, n), "delta * p must be an integer");
  }
  for (double s : c.sigma) check(s >= 0.0, "sigma must be non-negative");
  check(m.sigma >= 0.0, "model.sigma must be non-negative");
  for (double r : c.rho) check(r >= -1.0 && r <= 1.0, "rho must lie in [-1, 1]");
  for (double e : c.eps) check(e >= 0.0 && e <= 1.0, "eps must lie in [0, 1]");
  for (double a : c.alpha) check(a > 0.0 && a < 1.0, "alpha must lie in (0, 1)");
  check(c.iterations >= 0, "iterations must be non-negative");
  check(c.repeats >= 1, "repeats must be at least 1");
  check(c.mc_samples >= 1 && c.se_samples >= 1, "sample counts must be positive");
  check(c.em.m_max >= 0 && c.em.k_max >= 0 && c.em.ez_samples >= 1, "invalid em block");
  check(c.denoiser.zeta > 0.0, "denoiser.zeta must be positive");
  if (!c.alpha.empty()) check(m.type == "mlr2", "an alpha grid needs model mlr2");
  if (!c.rho.empty()) check(c.prior.type == "gaussian" && c.prior.cov.empty(), "a rho grid needs a gaussian prior without cov");
  if (!c.eps.empty()) check(c.prior.type == "sparse", "an eps grid needs a sparse prior");
  if (c.denoiser.type == "mismatched")
    check(c.denoiser.alpha_hat || c.denoiser.proportions_hat, "mismatched denoiser needs alpha_hat or proportions_hat");
}

int model_dim(const RunConfig& c) {
  if (c.model.type == "mlr2") return 2;
  if (c.model.type == "mlr3") return 3;
  if (c.model.type == "mar") return static_cast<int>(c.model.intercepts.size());
  return 4;
}

}  // namespace

RunConfig parse_config(const json& in) {
  const json& j = (in.is_object() && in.contains("config")) ? in.at("config") : in;
  reject_unknown(j,
                 {"model", "prior", "denoiser", "p", "delta", "sigma", "rho", "eps", "alpha", "iterations", "repeats",
                  "seed", "mc_samples", "se_samples", "se", "em", "labels"},
                 "config");
  RunConfig c;
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"type", "alpha", "proportions", "intercepts", "sigma"}, "model");
    read(m, "type", c.model.type, "model");
    read(m, "alpha", c.model.alpha, "model");
    read(m, "proportions", c.model.proportions, "model");
    read(m, "intercepts", c.model.intercepts, "model");
    read(m, "sigma", c.model.sigma, "model");
  }
  if (j.contains("prior")) {
    const json& p = j.at("prior");
    reject_unknown(p, {"type", "rho", "mean", "cov", "eps"}, "prior");
    read(p, "type", c.prior.type, "prior");
    read(p, "rho", c.prior.rho, "prior");
    read(p, "mean", c.prior.mean, "prior");
    read(p, "cov", c.prior.cov, "prior");
    read(p, "eps", c.prior.eps, "prior");
  }
  if (j.contains("denoiser")) {
    const json& d = j.at("denoiser");
    reject_unknown(d, {"type", "zeta", "alpha_hat", "proportions_hat"}, "denoiser");
    read(d, "type", c.denoiser.type, "denoiser");
    read(d, "zeta", c.denoiser.zeta, "denoiser");
    if (d.contains("alpha_hat")) c.denoiser.alpha_hat = d.at("alpha_hat").get<double>();
    if (d.contains("proportions_hat")) c.denoiser.proportions_hat = d.at("proportions_hat").get<std::vector<double>>();
  }
  if (j.contains("em")) {
    const json& e = j.at("em");
    reject_unknown(e, {"m_max", "k_max", "ez_samples", "warm_start"}, "em");
    read(e, "m_max", c.em.m_max, "em");
    read(e, "k_max", c.em.k_max, "em");
    read(e, "ez_samples", c.em.ez_samples, "em");
    read(e, "warm_start", c.em.warm_start, "em");
  }
  read(j, "p", c.p, "config");
  read_list(j, "delta", c.delta);
  read_list(j, "sigma", c.sigma);
  read_list(j, "rho", c.rho);
  read_list(j, "eps", c.eps);
  read_list(j, "alpha", c.alpha);
  read(j, "iterations", c.iterations, "config");
  read(j, "repeats", c.repeats, "config");
  read(j, "seed", c.seed, "config");
  read(j, "mc_samples", c.mc_samples, "config");
  read(j, "se_samples", c.se_samples, "config");
  read(j, "se", c.se, "config");
  read(j, "labels", c.labels, "config");
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"type", c.model.type},
                {"alpha", c.model.alpha},
                {"proportions", c.model.proportions},
                {"intercepts", c.model.intercepts},
                {"sigma", c.model.sigma}};
  j["prior"] = {{"type", c.prior.type}, {"rho", c.prior.rho}, {"mean", c.prior.mean}, {"cov", c.prior.cov},
                {"eps", c.prior.eps}};
  json d = {{"type", c.denoiser.type}, {"zeta", c.denoiser.zeta}};
  if (c.denoiser.alpha_hat) d["alpha_hat"] = *c.denoiser.alpha_hat;
  if (c.denoiser.proportions_hat) d["proportions_hat"] = *c.denoiser.proportions_hat;
  j["denoiser"] = d;
  j["em"] = {{"m_max", c.em.m_max}, {"k_max", c.em.k_max}, {"ez_samples", c.em.ez_samples},
             {"warm_start", c.em.warm_start}};
  j["p"] = c.p;
  j["delta"] = c.delta;
  j["sigma"] = c.sigma;
  j["rho"] = c.rho;
  j["eps"] = c.eps;
  j["alpha"] = c.alpha;
  j["iterations"] = c.iterations;
  j["repeats"] = c.repeats;
  j["seed"] = c.seed;
  j["mc_samples"] = c.mc_samples;
  j["se_samples"] = c.se_samples;
  j["se"] = c.se;
  j["labels"] = c.labels;
  return j;
}

std::vector<GridPoint> expand_grid(const RunConfig& c) {
  const std::vector<double> sigmas = c.sigma.empty() ? std::vector<double>{c.model.sigma} : c.sigma;
  std::vector<std::optional<double>> shapes;
  if (c.prior.type == "sparse") {
    for (double e : c.eps.empty() ? std::vector<double>{c.prior.eps} : c.eps) shapes.emplace_back(e);
  } else if (c.prior.cov.empty()) {
    for (double r : c.rho.empty() ? std::vector<double>{c.prior.rho} : c.rho) shapes.emplace_back(r);
  } else {
    shapes.emplace_back(std::nullopt);
  }
  std::vector<std::optional<double>> alphas;
  if (c.model.type == "mlr2") {
    for (double a : c.alpha.empty() ? std::vector<double>{c.model.alpha} : c.alpha) alphas.emplace_back(a);
  } else {
    alphas.emplace_back(std::nullopt);
  }
  std::vector<GridPoint> grid;
  for (double d : c.delta)
    for (double s : sigmas)
      for (const auto& r : shapes)
        for (const auto& a : alphas)
          grid.push_back({d, s, r, a, static_cast<int>(std::lround(d * c.p))});
  return grid;
}

Channel build_channel(const RunConfig& c, const GridPoint& g) {
  const auto& m = c.model;
  if (m.type == "mlr2") return Channel::mlr2(g.alpha.value_or(m.alpha), g.sigma);
  if (m.type == "mlr3") return Channel::mlr3(m.proportions, g.sigma);
  if (m.type == "mar") return Channel::mar(Eigen::Map<const Vector>(m.intercepts.data(), m.intercepts.size()), g.sigma);
  return Channel::moe(g.sigma);
}

SignalPrior build_prior(const RunConfig& c, const GridPoint& g) {
  const int dim = model_dim(c);
  if (c.prior.type == "sparse") return SignalPrior::sparse_discrete(g.rho_or_eps.value_or(c.prior.eps), dim);
  Vector mean = Vector::Zero(dim);
  if (!c.prior.mean.empty()) {
    if (static_cast<int>(c.prior.mean.size()) != dim) throw ConfigError("prior.mean has the wrong length");
    mean = Eigen::Map<const Vector>(c.prior.mean.data(), dim);
  }
  Matrix cov(dim, dim);
  if (!c.prior.cov.empty()) {
    if (static_cast<int>(c.prior.cov.size()) != dim) throw ConfigError("prior.cov has the wrong shape");
    for (int r = 0; r < dim; ++r) {
      if (static_cast<int>(c.prior.cov[r].size()) != dim) throw ConfigError("prior.cov has the wrong shape");
      for (int s = 0; s < dim; ++s) cov(r, s) = c.prior.cov[r][s];
    }
  } else {
    const double rho = g.rho_or_eps.value_or(c.prior.rho);
    cov = Matrix::Constant(dim, dim, rho);
    cov.diagonal().setOnes();
  }
  return SignalPrior::gaussian(mean, cov);
}

SignalDenoiserSpec build_f_spec(const RunConfig& c) {
  SignalDenoiserSpec s;
  if (c.denoiser.type == "soft_threshold") s.kind = SignalDenoiserSpec::Kind::soft_threshold;
  s.zeta = c.denoiser.zeta;
  return s;
}

ChannelDenoiserSpec build_g_spec(const RunConfig& c, const GridPoint&, std::uint64_t mc_seed) {
  ChannelDenoiserSpec s;
  s.mc_samples = c.mc_samples;
  s.seed = mc_seed;
  if (c.denoiser.type == "mismatched") {
    if (c.denoiser.proportions_hat) {
      s.proportions = *c.denoiser.proportions_hat;
    } else {
      const double a = *c.denoiser.alpha_hat;
      s.proportions = std::vector<double>{a, 1.0 - a};
    }
  }
  return s;
}

std::uint64_t instance_seed(std::uint64_t master, std::size_t grid, int repeat) {
  return derive_seed(master, {tag(Stream::grid), grid, tag(Stream::repeat), static_cast<std::uint64_t>(repeat)});
}

std::uint64_t se_seed(std::uint64_t master, std::size_t grid) { return derive_seed(master, {tag(Stream::se), grid}); }

std::vector<int> estimate_labels(const Instance& inst, const Matrix& bhat) {
  const Matrix fit = inst.X * bhat;
  std::vector<int> out(static_cast<std::size_t>(inst.n()));
  for (Eigen::Index i = 0; i < inst.n(); ++i) {
    int best = 0;
    double best_r = std::numeric_limits<double>::infinity();
    for (Eigen::Index l = 0; l < fit.cols(); ++l) {
      const double r = (inst.Y(i) - fit(i, l)) * (inst.Y(i) - fit(i, l));
      if (r < best_r) {
        best_r = r;
        best = static_cast<int>(l);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double label_accuracy(const std::vector<int>& truth, const std::vector<int>& estimate, int dim) {
  if (truth.size() != estimate.size()) throw ConfigError("label_accuracy: length mismatch");
  if (truth.empty()) return 1.0;
  std::vector<int> perm(static_cast<std::size_t>(dim));
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (perm[static_cast<std::size_t>(estimate[i])] == truth[i]) ++hits;
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(truth.size());
}

namespace {

struct RepeatResult {
  std::vector<IterationMetrics> trace;  // only completed iterations
  bool failed = false;
  std::string error;
  int ridge_events = 0;
  double seconds = 0.0;
  std::optional<double> label_acc;
};

struct SeResult {
  std::vector<SignalPrediction> pred;  // k = 0 .. iterations
  bool failed = false;
  std::string error;
};

struct GridRun {
  std::vector<GridPoint> grid;
  std::vector<SeResult> se;
  std::vector<RepeatResult> runs;  // grid-major, repeat-minor
};

RepeatResult run_repeat(const RunConfig& c, const GridPoint& g, std::size_t gi, int r) {
  const auto start = std::chrono::steady_clock::now();
  RepeatResult res;
  const std::uint64_t seed = instance_seed(c.seed, gi, r);
  const Channel ch = build_channel(c, g);
  const SignalPrior prior = build_prior(c, g);
  const Instance inst = generate_instance(ch, prior, g.n, c.p, seed);
  const auto make_f = signal_denoiser_factory(build_f_spec(c), prior);
  const auto make_g = channel_denoiser_factory(ch, build_g_spec(c, g, derive_seed(seed, {tag(Stream::channel_mc)})));
  AmpState state = amp_init(inst, prior, InitMode::prior_random, seed);
  res.trace.push_back(signal_metrics(0, state.Bhat, inst.B));
  try {
    for (int k = 0; k < c.iterations; ++k) {
      amp_step(state, inst.X, inst.Y, prior, make_f, make_g);
      IterationMetrics m = signal_metrics(state.k, state.Bhat, inst.B);
      m.flagged_rows = state.flagged_rows;
      res.trace.push_back(std::move(m));
    }
  } catch (const NumericalError& e) {
    res.failed = true;
    res.error = e.what();
  }
  res.ridge_events = state.ridge_events;
  if (c.labels && ch.is_mlr() && !res.failed)
    res.label_acc = label_accuracy(inst.labels, estimate_labels(inst, state.Bhat), ch.signal_dim());
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

SeResult run_grid_se(const RunConfig& c, const GridPoint& g, std::size_t gi) {
  SeResult res;
  if (!c.se) return res;
  const Channel ch = build_channel(c, g);
  SeConfig cfg{.channel = ch,
               .prior = build_prior(c, g),
               .delta = static_cast<double>(g.n) / c.p,
               .f_spec = build_f_spec(c),
               .g_spec = build_g_spec(c, g, derive_seed(se_seed(c.seed, gi), {tag(Stream::channel_mc)})),
               .mc_samples = c.se_samples,
               .seed = se_seed(c.seed, gi),
               .threads = 1};
  try {
    for (const auto& s : run_se(cfg, c.iterations)) res.pred.push_back(predict_metrics(s));
  } catch (const NumericalError& e) {
    res.failed = true;
    res.error = e.what();
  }
  return res;
}

// SE tasks come first, then every (grid, repeat) pair. Each task writes only
// its own slot, so the thread count cannot change the output.
GridRun compute_grid(const RunConfig& c, int threads) {
  GridRun out;
  out.grid = expand_grid(c);
  const std::size_t ng = out.grid.size();
  const std::size_t nr = static_cast<std::size_t>(c.repeats);
  out.se.resize(ng);
  out.runs.resize(ng * nr);
  parallel_for(ng + ng * nr, threads, [&](std::size_t t) {
    if (t < ng) {
      out.se[t] = run_grid_se(c, out.grid[t], t);
    } else {
      const std::size_t i = t - ng;
      out.runs[i] = run_repeat(c, out.grid[i / nr], i / nr, static_cast<int>(i % nr));
    }
  });
  return out;
}

json manifest(const RunConfig& c, const std::string& command, const std::vector<GridPoint>& grid) {
  json j;
  j["version"] = kVersion;
  j["command"] = command;
  j["config"] = to_json(c);
  json points = json::array();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    json seeds = json::array();
    for (int r = 0; r < c.repeats; ++r) seeds.push_back(instance_seed(c.seed, g, r));
    points.push_back({{"index", g},
                      {"delta", grid[g].delta},
                      {"n", grid[g].n},
                      {"sigma", grid[g].sigma},
                      {"rho_or_eps", grid[g].rho_or_eps ? json(*grid[g].rho_or_eps) : json(nullptr)},
                      {"alpha", grid[g].alpha ? json(*grid[g].alpha) : json(nullptr)},
                      {"se_seed", se_seed(c.seed, g)},
                      {"instance_seeds", seeds}});
  }
  j["grid"] = points;
  return j;
}

std::filesystem::path write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  return path;
}

std::string denoiser_name(const RunConfig& c) {
  if (c.denoiser.type == "soft_threshold") return "soft_threshold";
  return c.denoiser.type;
}

void write_diagnostics(const RunConfig& c, const GridRun& run, const std::filesystem::path& path, RunSummary& sum) {
  std::ostringstream os;
  os << "grid,repeat,status,flagged_rows,ridge_events,seconds,error\n";
  const std::size_t nr = static_cast<std::size_t>(c.repeats);
  for (std::size_t i = 0; i < run.runs.size(); ++i) {
    const auto& r = run.runs[i];
    int flagged = 0;
    for (const auto& m : r.trace) flagged += m.flagged_rows;
    sum.flagged_rows += flagged;
    if (r.failed) ++sum.failed_repeats;
    os << i / nr << ',' << i % nr << ',' << (r.failed ? "diverged" : "ok") << ',' << flagged << ',' << r.ridge_events
       << ',' << fmt(r.seconds) << ",\"" << r.error << "\"\n";
  }
  for (std::size_t g = 0; g < run.se.size(); ++g)
    if (run.se[g].failed) {
      ++sum.failed_repeats;
      os << g << ",se,failed,0,0,,\"" << run.se[g].error << "\"\n";
    }
  sum.files.push_back(write_text(path, os.str()));
}

}  // namespace

RunSummary run_sweep(const RunConfig& c, const RunOptions& opt) {
  const GridRun run = compute_grid(c, opt.threads);
  const int dim = model_dim(c);
  const std::size_t nr = static_cast<std::size_t>(c.repeats);
  std::ostringstream os;
  os << "model,prior,denoiser,delta,sigma,rho_or_eps,alpha,repeat,iter,signal,corr_emp,mse_emp,corr_se,mse_se,status\n";
  std::ostringstream labels;
  labels << "model,delta,sigma,rho_or_eps,alpha,repeat,iter,accuracy,status\n";
  for (std::size_t g = 0; g < run.grid.size(); ++g) {
    const GridPoint& pt = run.grid[g];
    const SeResult& se = run.se[g];
    for (std::size_t r = 0; r < nr; ++r) {
      const RepeatResult& rr = run.runs[g * nr + r];
      for (int k = 0; k <= c.iterations; ++k) {
        const bool have = static_cast<std::size_t>(k) < rr.trace.size();
        const bool have_se = static_cast<std::size_t>(k) < se.pred.size();
        for (int l = 0; l < dim; ++l) {
          std::string status = "ok";
          if (!have) {
            status = "diverged";
          } else if (rr.trace[k].flagged_rows > 0) {
            status = "flagged";
          }
          if (have_se && se.pred[k].degenerate[l] && status == "ok") status = "degenerate";
          if (c.se && !have_se && status == "ok") status = "se_failed";
          os << c.model.type << ',' << c.prior.type << ',' << denoiser_name(c) << ',' << fmt(pt.delta) << ','
             << fmt(pt.sigma) << ',' << fmt(pt.rho_or_eps) << ',' << fmt(pt.alpha) << ',' << r << ',' << k << ','
             << l + 1 << ',' << (have ? fmt(rr.trace[k].corr(l)) : "") << ','
             << (have ? fmt(rr.trace[k].mse(l)) : "") << ',' << (have_se ? fmt(se.pred[k].corr(l)) : "") << ','
             << (have_se ? fmt(se.pred[k].mse(l)) : "") << ',' << status << '\n';
        }
      }
      if (c.labels)
        labels << c.model.type << ',' << fmt(pt.delta) << ',' << fmt(pt.sigma) << ',' << fmt(pt.rho_or_eps) << ','
               << fmt(pt.alpha) << ',' << r << ',' << rr.trace.size() - 1 << ',' << fmt(rr.label_acc) << ','
               << (rr.label_acc ? "ok" : (rr.failed ? "diverged" : "not_mlr")) << '\n';
    }
  }
  RunSummary sum;
  sum.files.push_back(write_text(opt.out_dir / "sweep.csv", os.str()));
  sum.files.push_back(write_text(opt.out_dir / "sweep_manifest.json", manifest(c, "sweep", run.grid).dump(2) + "\n"));
  if (c.labels) sum.files.push_back(write_text(opt.out_dir / "labels.csv", labels.str()));
  write_diagnostics(c, run, opt.out_dir / "sweep_diagnostics.csv", sum);
  return sum;
}

RunSummary emit_heatmap_data(const RunConfig& c, const RunOptions& opt) {
  if (c.prior.type != "sparse" || !(c.model.type == "mlr2" || c.model.type == "mlr3"))
    throw ConfigError("heatmap needs an MLR model with a sparse prior");
  const GridRun run = compute_grid(c, opt.threads);
  const int dim = model_dim(c);
  const std::size_t nr = static_cast<std::size_t>(c.repeats);
  std::ostringstream os;
  os << "delta,eps,sigma,alpha,min_corr";
  for (int l = 1; l <= dim; ++l) os << ",corr_" << l;
  os << ",min_corr_se,repeats_used,status\n";
  for (std::size_t g = 0; g < run.grid.size(); ++g) {
    const GridPoint& pt = run.grid[g];
    Vector mean = Vector::Zero(dim);
    int used = 0;
    for (std::size_t r = 0; r < nr; ++r) {
      const auto& rr = run.runs[g * nr + r];
      if (rr.failed) continue;
      mean += rr.trace.back().corr;
      ++used;
    }
    const bool degenerate = pt.rho_or_eps && *pt.rho_or_eps == 0.0;
    std::string status = degenerate ? "degenerate" : (used < c.repeats ? "diverged" : "ok");
    const bool show = used > 0 && !degenerate;
    if (used > 0) mean /= used;
    std::optional<double> se_min;
    if (!run.se[g].pred.empty() && !degenerate) se_min = run.se[g].pred.back().corr.minCoeff();
    os << fmt(pt.delta) << ',' << fmt(pt.rho_or_eps) << ',' << fmt(pt.sigma) << ',' << fmt(pt.alpha) << ','
       << (show ? fmt(mean.minCoeff()) : "");
    for (int l = 0; l < dim; ++l) os << ',' << (show ? fmt(mean(l)) : "");
    os << ',' << fmt(se_min) << ',' << used << ',' << status << '\n';
  }
  RunSummary sum;
  sum.files.push_back(write_text(opt.out_dir / "heatmap.csv", os.str()));
  sum.files.push_back(
      write_text(opt.out_dir / "heatmap_manifest.json", manifest(c, "heatmap", run.grid).dump(2) + "\n"));
  write_diagnostics(c, run, opt.out_dir / "heatmap_diagnostics.csv", sum);
  return sum;
}

RunSummary run_em_experiment(const RunConfig& c, const RunOptions& opt) {
  if (c.model.type != "mar" || c.model.intercepts.size() != 2)
    throw ConfigError("em-amp needs model mar with two intercepts");
  const std::vector<GridPoint> grid = expand_grid(c);
  const std::size_t nr = static_cast<std::size_t>(c.repeats);
  struct Slot {
    EmResult res;
    bool failed = false;
    std::string error;
  };
  std::vector<Slot> slots(grid.size() * nr * 2);
  parallel_for(slots.size(), opt.threads, [&](std::size_t t) {
    const std::size_t run = t / 2;
    const std::size_t g = run / nr;
    const int r = static_cast<int>(run % nr);
    const std::uint64_t seed = instance_seed(c.seed, g, r);
    const Channel ch = build_channel(c, grid[g]);
    const SignalPrior prior = build_prior(c, grid[g]);
    const Instance inst = generate_instance(ch, prior, grid[g].n, c.p, seed);
    EmConfig cfg;
    cfg.m_max = c.em.m_max;
    cfg.k_max = c.em.k_max;
    cfg.mc_samples = c.mc_samples;
    cfg.ez_samples = c.em.ez_samples;
    cfg.warm_start = c.em.warm_start;
    cfg.oracle = t % 2 == 1;
    cfg.seed = seed;
    cfg.f_spec = build_f_spec(c);
    try {
      slots[t].res = em_amp_run(inst, prior, ch, cfg);
    } catch (const NumericalError& e) {
      slots[t].failed = true;
      slots[t].error = e.what();
    }
  });
  std::ostringstream os;
  os << "method,delta,sigma,repeat,m,signal,b_hat,b_true,corr,corr_signal,count1,count2,flagged_rows,status\n";
  RunSummary sum;
  for (std::size_t t = 0; t < slots.size(); ++t) {
    const std::size_t run = t / 2;
    const GridPoint& pt = grid[run / nr];
    const char* method = t % 2 == 0 ? "em-amp" : "or-amp";
    if (slots[t].failed) {
      ++sum.failed_repeats;
      os << method << ',' << fmt(pt.delta) << ',' << fmt(pt.sigma) << ',' << run % nr << ",,,,,,,,,,diverged\n";
      continue;
    }
    for (const auto& it : slots[t].res.trace) {
      sum.flagged_rows += it.flagged_rows;
      for (int l = 0; l < 2; ++l) {
        const char* status = it.empty_branch ? "empty_branch" : (it.flagged_rows > 0 ? "flagged" : "ok");
        os << method << ',' << fmt(pt.delta) << ',' << fmt(pt.sigma) << ',' << run % nr << ',' << it.m << ','
           << l + 1 << ',' << fmt(it.b(l)) << ',' << fmt(c.model.intercepts[static_cast<std::size_t>(l)]) << ','
           << fmt(it.corr(l)) << ',' << fmt(it.corr_signal(l)) << ',' << it.count1 << ',' << it.count2 << ','
           << it.flagged_rows << ',' << status << '\n';
      }
    }
  }
  sum.files.push_back(write_text(opt.out_dir / "em_amp.csv", os.str()));
  sum.files.push_back(write_text(opt.out_dir / "em_amp_manifest.json", manifest(c, "em-amp", grid).dump(2) + "\n"));
  return sum;
}

}  // namespace matamp
