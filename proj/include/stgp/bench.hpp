#pragma once

// Solve / query timing over a sweep of grid sizes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stgp/errors.hpp"
#include "stgp/query.hpp"
#include "stgp/sim.hpp"

namespace stgp {

struct BenchRow {
  std::size_t n_space = 0;
  std::size_t n_time = 0;
  std::size_t measurements = 0;
  std::vector<double> solve_seconds;
  std::vector<int> iterations;
  double solve_median = 0.0;
  double per_iteration_median = 0.0;
  double query_median = 0.0;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// `reps` full solves (Gauss-Newton plus covariance if configured) and `queries` single-point
/// mean+covariance queries at seeded random points.
inline BenchRow bench_size(const ScenarioConfig& c, int reps, int queries) {
  if (reps < 1 || queries < 0) throw InvalidArgument("benchmark: reps must be >= 1 and queries >= 0");
  using clock = std::chrono::steady_clock;
  BenchRow row;
  row.n_space = c.n_space;
  row.n_time = c.n_time;
  const auto meas = generate_measurements(c);
  row.measurements = meas.size();
  Posterior post;
  std::vector<double> per_it;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clock::now();
    post = estimate(c, meas);
    const double dt = std::chrono::duration<double>(clock::now() - t0).count();
    row.solve_seconds.push_back(dt);
    row.iterations.push_back(post.report.iterations);
    per_it.push_back(dt / std::max(1, post.report.iterations));
  }
  row.solve_median = median(row.solve_seconds);
  row.per_iteration_median = median(per_it);

  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> us(post.grid.s_knots.front(), post.grid.s_knots.back());
  std::uniform_real_distribution<double> ut(post.grid.t_knots.front(), post.grid.t_knots.back());
  std::vector<double> qt;
  double sink = 0.0;
  for (int q = 0; q < queries; ++q) {
    const double s = us(rng), t = ut(rng);
    const auto t0 = clock::now();
    const NodeState x = query_mean(post, s, t);
    if (post.has_covariance()) sink += query_covariance(post, s, t)(0, 0);
    qt.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    sink += x.pose.translation()(0);
  }
  row.query_median = median(qt);
  if (!std::isfinite(sink)) row.query_median = std::numeric_limits<double>::quiet_NaN();
  return row;
}

struct Sweep {
  std::string param;  // "N", "K" or "NK"
  std::vector<std::size_t> values;
};

/// "K=20,40,80", "N=10,20" or "NK=10,40" (both sizes set together).
inline Sweep parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw InvalidArgument("sweep '" + spec + "': expected PARAM=v1,v2,...");
  Sweep sw;
  sw.param = spec.substr(0, eq);
  if (sw.param != "N" && sw.param != "K" && sw.param != "NK") {
    throw InvalidArgument("sweep '" + spec + "': parameter must be N, K or NK");
  }
  std::string rest = spec.substr(eq + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    long v = 0;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty() || v < 1) throw InvalidArgument("sweep '" + spec + "': bad size '" + item + "'");
    sw.values.push_back(static_cast<std::size_t>(v));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return sw;
}

inline ScenarioConfig sized(ScenarioConfig c, const std::string& param, std::size_t v) {
  if (param == "N" || param == "NK") c.n_space = v;
  if (param == "K" || param == "NK") c.n_time = v;
  return c;
}

}  // namespace stgp
