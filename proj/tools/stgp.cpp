// stgp: simulate | estimate | query | benchmark

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "stgp/bench.hpp"
#include "stgp/io.hpp"

namespace fs = std::filesystem;
using namespace stgp;

namespace {

enum Exit { kOk = 0, kFailure = 1, kInvalid = 2, kIo = 3, kNotConverged = 4, kNotPd = 5 };

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::string measurements;
  std::string posterior;
  std::optional<double> s, t;
  std::string grid;
  std::vector<std::string> sweeps;
  int reps = 5;
  int queries = 100;
};

ScenarioConfig load(const Options& o) {
  ScenarioConfig c = load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  return c;
}

int cmd_simulate(const Options& o) {
  const ScenarioConfig c = load(o);
  const auto meas = generate_measurements(c);
  ensure_directory(o.out);
  save_measurements(fs::path(o.out) / "measurements.json", meas);
  write_text(fs::path(o.out) / "ground_truth.csv", grid_csv(ground_truth_grid(c)));
  std::cerr << "stgp: " << meas.size() << " measurements written to " << o.out << "\n";
  return kOk;
}

int cmd_estimate(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const ScenarioConfig c = load(o);
  const fs::path mpath = o.measurements.empty() ? fs::path(o.out) / "measurements.json" : fs::path(o.measurements);
  const auto meas = load_measurements(mpath);
  const Posterior post = estimate(c, meas);
  ensure_directory(o.out);
  write_text(fs::path(o.out) / "estimate.csv", estimate_csv(post));
  save_posterior(fs::path(o.out) / "posterior.bin", post);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(fs::path(o.out) / "report.json", report_json(post, meas.size(), total).dump(2) + "\n");
  std::cerr << "stgp: " << post.report.status << " after " << post.report.iterations << " iterations, cost "
            << post.report.final_cost << "\n";
  return post.report.converged ? kOk : kNotConverged;
}

std::pair<std::size_t, std::size_t> parse_grid(const std::string& g) {
  const auto x = g.find_first_of("xX");
  std::size_t a = 0, b = 0, ua = 0, ub = 0;
  try {
    if (x != std::string::npos) {
      a = std::stoul(g.substr(0, x), &ua);
      b = std::stoul(g.substr(x + 1), &ub);
    }
  } catch (const std::exception&) {
  }
  if (x == std::string::npos || ua != x || ub != g.size() - x - 1 || a < 1 || b < 1) {
    throw InvalidArgument("--grid expects SxT with positive counts, got '" + g + "'");
  }
  return {a, b};
}

double sample(double lo, double hi, std::size_t i, std::size_t n) {
  if (n == 1) return lo;
  return i + 1 == n ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
}

int cmd_query(const Options& o) {
  const std::string dir = o.posterior.empty() ? o.out : o.posterior;
  const Posterior post = load_posterior(fs::path(dir) / "posterior.bin");
  std::string text = csv_header(true) + "\n";
  if (!o.grid.empty()) {
    if (o.s || o.t) throw InvalidArgument("use either --grid or --s/--t");
    const auto [ns, nt] = parse_grid(o.grid);
    const Grid& g = post.grid;
    for (std::size_t k = 0; k < nt; ++k)
      for (std::size_t n = 0; n < ns; ++n) {
        text += query_row(post, sample(g.s_knots.front(), g.s_knots.back(), n, ns),
                          sample(g.t_knots.front(), g.t_knots.back(), k, nt)) + "\n";
      }
  } else {
    if (!o.s || !o.t) throw InvalidArgument("query needs --s and --t, or --grid SxT");
    text += query_row(post, *o.s, *o.t) + "\n";
  }
  std::fwrite(text.data(), 1, text.size(), stdout);
  if (std::fflush(stdout) != 0) throw IoError("cannot write to standard output");
  return kOk;
}

int cmd_benchmark(const Options& o) {
  const ScenarioConfig base = load(o);
  std::vector<Sweep> sweeps;
  for (const auto& s : o.sweeps) sweeps.push_back(parse_sweep(s));
  if (sweeps.empty()) sweeps.push_back({"K", {base.n_time}});
  for (const auto& sw : sweeps)
    for (std::size_t v : sw.values) validate(sized(base, sw.param, v));
  ensure_directory(o.out);
  Json out = {{"schema_version", kSchemaMajor}, {"repetitions", o.reps}, {"queries", o.queries}, {"sweeps", Json::array()}};
  for (const auto& sw : sweeps) {
    Json rows = Json::array();
    double prev = 0.0;
    for (std::size_t v : sw.values) {
      const BenchRow r = bench_size(sized(base, sw.param, v), o.reps, o.queries);
      Json row = {{"n_space", r.n_space},
                  {"n_time", r.n_time},
                  {"nodes", r.n_space * r.n_time},
                  {"measurements", r.measurements},
                  {"solve_median_s", r.solve_median},
                  {"per_iteration_median_s", r.per_iteration_median},
                  {"solve_s", r.solve_seconds},
                  {"iterations", r.iterations},
                  {"query_median_s", r.query_median},
                  {"ratio", prev > 0.0 ? Json(r.solve_median / prev) : Json(nullptr)}};
      prev = r.solve_median;
      std::cerr << "stgp: " << sw.param << "=" << v << " solve " << r.solve_median << " s, query " << r.query_median
                << " s\n";
      rows.push_back(std::move(row));
    }
    out["sweeps"].push_back({{"param", sw.param}, {"rows", rows}});
  }
  write_text(fs::path(o.out) / "bench.json", out.dump(2) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Space-time Gaussian-process shape estimation for continuum robots"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "Generate measurements.json and ground_truth.csv from a config");
  sim->add_option("--config", o.config, "Scenario config (JSON)")->required();
  sim->add_option("--out", o.out, "Output directory");
  sim->add_option("--seed", o.seed, "Override the config seed");

  auto* est = app.add_subcommand("estimate", "Batch estimate; writes estimate.csv, report.json, posterior.bin");
  est->add_option("--config", o.config, "Scenario config (JSON)")->required();
  est->add_option("--out", o.out, "Output directory");
  est->add_option("--measurements", o.measurements, "Measurement file (default <out>/measurements.json)");
  est->add_option("--seed", o.seed, "Override the config seed");

  auto* qry = app.add_subcommand("query", "Posterior mean and std-dev at (s, t) or on a dense grid, as CSV");
  qry->add_option("--posterior", o.posterior, "Directory containing posterior.bin");
  qry->add_option("--out", o.out, "Same as --posterior");
  qry->add_option("--s", o.s, "Arclength (m)");
  qry->add_option("--t", o.t, "Time (s)");
  qry->add_option("--grid", o.grid, "SxT uniform resampling over the hull");

  auto* bench = app.add_subcommand("benchmark", "Median solve and query timings over a size sweep; writes bench.json");
  bench->add_option("--config", o.config, "Template config (JSON)")->required();
  bench->add_option("--out", o.out, "Output directory");
  bench->add_option("--sweep", o.sweeps, "N=..., K=... or NK=... (repeatable)");
  bench->add_option("--seed", o.seed, "Override the config seed");
  bench->add_option("--reps", o.reps, "Solves per size")->check(CLI::PositiveNumber);
  bench->add_option("--queries", o.queries, "Queries per size")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (sim->parsed()) return cmd_simulate(o);
    if (est->parsed()) return cmd_estimate(o);
    if (qry->parsed()) return cmd_query(o);
    if (bench->parsed()) return cmd_benchmark(o);
  } catch (const InvalidArgument& e) {
    std::cerr << "stgp: invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const OutOfHull& e) {
    std::cerr << "stgp: " << e.what() << "\n";
    return kInvalid;
  } catch (const IoError& e) {
    std::cerr << "stgp: I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const NotPositiveDefinite& e) {
    std::cerr << "stgp: system not positive definite: " << e.what() << "\n";
    return kNotPd;
  } catch (const std::exception& e) {
    std::cerr << "stgp: error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
