#pragma once

// Arclength x time grid of node states and the prior factor set over it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "stgp/errors.hpp"
#include "stgp/measurement.hpp"
#include "stgp/prior.hpp"

namespace stgp {

/// N arclength knots x K time knots. Flattened index = k * N + n (space-major within each time block).
struct Grid {
  std::vector<double> s_knots;
  std::vector<double> t_knots;
  std::vector<NodeState> states;

  std::size_t n_space() const { return s_knots.size(); }
  std::size_t n_time() const { return t_knots.size(); }
  std::size_t size() const { return states.size(); }
  std::size_t index(std::size_t n, std::size_t k) const { return k * n_space() + n; }
  std::pair<std::size_t, std::size_t> coords(std::size_t i) const { return {i % n_space(), i / n_space()}; }

  NodeState& at(std::size_t n, std::size_t k) { return states[index(n, k)]; }
  const NodeState& at(std::size_t n, std::size_t k) const { return states[index(n, k)]; }
};

inline void validate_knots(const std::vector<double>& knots, const char* what) {
  if (knots.empty()) throw InvalidArgument(std::string(what) + ": at least one knot required");
  for (std::size_t i = 0; i < knots.size(); ++i) {
    if (!std::isfinite(knots[i])) throw InvalidArgument(std::string(what) + ": non-finite knot");
    if (i > 0 && !(knots[i] > knots[i - 1])) {
      throw InvalidArgument(std::string(what) + ": knots must be strictly increasing");
    }
  }
}

/// Grid initialized from an arbitrary state field (e.g. ground truth or a measurement-seeded guess).
inline Grid build_grid(std::vector<double> s_knots, std::vector<double> t_knots,
                       const std::function<NodeState(double s, double t)>& init) {
  validate_knots(s_knots, "s_knots");
  validate_knots(t_knots, "t_knots");
  Grid g{std::move(s_knots), std::move(t_knots), {}};
  g.states.resize(g.n_space() * g.n_time());
  for (std::size_t k = 0; k < g.n_time(); ++k)
    for (std::size_t n = 0; n < g.n_space(); ++n) g.at(n, k) = init(g.s_knots[n], g.t_knots[k]);
  return g;
}

/// Grid initialized with the noise-free prior propagated from the initial condition, so every
/// prior factor error vanishes at the returned states.
inline Grid build_grid(std::vector<double> s_knots, std::vector<double> t_knots, const PriorParams& params) {
  validate_knots(s_knots, "s_knots");
  validate_knots(t_knots, "t_knots");
  Grid g{std::move(s_knots), std::move(t_knots), {}};
  const std::size_t N = g.n_space();
  const std::size_t K = g.n_time();
  g.states.resize(N * K);
  g.at(0, 0) = params.prior_mean_0;
  for (std::size_t n = 1; n < N; ++n) {
    g.at(n, 0) = propagate_binary(g.at(n - 1, 0), phi_s(g.s_knots[n] - g.s_knots[n - 1]));
  }
  for (std::size_t k = 1; k < K; ++k) {
    const double dt = g.t_knots[k] - g.t_knots[k - 1];
    g.at(0, k) = propagate_binary(g.at(0, k - 1), phi_t(dt));
    for (std::size_t n = 1; n < N; ++n) {
      g.at(n, k) = propagate_cell(g.at(n - 1, k - 1), g.at(n, k - 1), g.at(n - 1, k),
                                  g.s_knots[n] - g.s_knots[n - 1], dt);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

enum class PriorKind { unary, binary_spatial, binary_temporal, quaternary };

struct PriorFactor {
  PriorKind kind = PriorKind::unary;
  // Node indices; quaternary order is (n,k), (n+1,k), (n,k+1), (n+1,k+1).
  std::array<std::size_t, 4> nodes{};
  std::size_t arity = 1;
  double ds = 0.0;
  double dt = 0.0;
  Mat24 covariance = Mat24::Identity();
  Mat24 information = Mat24::Identity();
};

struct FactorSet {
  std::vector<PriorFactor> unary;
  std::vector<PriorFactor> binary_spatial;
  std::vector<PriorFactor> binary_temporal;
  std::vector<PriorFactor> quaternary;
  std::vector<MeasurementFactor> measurements;

  std::size_t prior_count() const {
    return unary.size() + binary_spatial.size() + binary_temporal.size() + quaternary.size();
  }

  template <typename F>
  void for_each_prior(F&& f) const {
    for (const auto* list : {&unary, &binary_spatial, &binary_temporal, &quaternary})
      for (const auto& factor : *list) f(factor);
  }
};

namespace graph_detail {

inline Mat24 information_of(const Mat24& cov, const char* what) {
  Eigen::LLT<Mat24> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw InvalidArgument(std::string(what) + ": factor covariance is not positive definite");
  }
  Mat24 info = llt.solve(Mat24::Identity());
  return 0.5 * (info + info.transpose());
}

}  // namespace graph_detail

/// One unary factor on (0,0), binary spatial factors along row k = 0, binary temporal factors
/// along column n = 0 and one quaternary factor per cell: N*K prior factors in total.
inline FactorSet build_prior_factors(const Grid& grid, const PriorParams& params) {
  validate(params);
  const std::size_t N = grid.n_space();
  const std::size_t K = grid.n_time();
  FactorSet fs;

  PriorFactor u;
  u.kind = PriorKind::unary;
  u.nodes = {grid.index(0, 0), 0, 0, 0};
  u.arity = 1;
  u.covariance = params.p0;
  u.information = graph_detail::information_of(params.p0, "unary");
  fs.unary.push_back(u);

  for (std::size_t n = 0; n + 1 < N; ++n) {
    PriorFactor f;
    f.kind = PriorKind::binary_spatial;
    f.nodes = {grid.index(n, 0), grid.index(n + 1, 0), 0, 0};
    f.arity = 2;
    f.ds = grid.s_knots[n + 1] - grid.s_knots[n];
    f.covariance = q_binary_s(f.ds, params);
    f.information = graph_detail::information_of(f.covariance, "binary spatial");
    fs.binary_spatial.push_back(f);
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    PriorFactor f;
    f.kind = PriorKind::binary_temporal;
    f.nodes = {grid.index(0, k), grid.index(0, k + 1), 0, 0};
    f.arity = 2;
    f.dt = grid.t_knots[k + 1] - grid.t_knots[k];
    f.covariance = q_binary_t(f.dt, params);
    f.information = graph_detail::information_of(f.covariance, "binary temporal");
    fs.binary_temporal.push_back(f);
  }
  for (std::size_t k = 0; k + 1 < K; ++k) {
    for (std::size_t n = 0; n + 1 < N; ++n) {
      PriorFactor f;
      f.kind = PriorKind::quaternary;
      f.nodes = {grid.index(n, k), grid.index(n + 1, k), grid.index(n, k + 1), grid.index(n + 1, k + 1)};
      f.arity = 4;
      f.ds = grid.s_knots[n + 1] - grid.s_knots[n];
      f.dt = grid.t_knots[k + 1] - grid.t_knots[k];
      f.covariance = q_quaternary(f.ds, f.dt, params);
      f.information = graph_detail::information_of(f.covariance, "quaternary");
      fs.quaternary.push_back(f);
    }
  }
  return fs;
}

/// Error of a prior factor at the given grid states.
inline Vec24 prior_error(const PriorFactor& f, const Grid& g, const PriorParams& params) {
  const auto& s = g.states;
  switch (f.kind) {
    case PriorKind::unary:
      return error_unary(s[f.nodes[0]], params);
    case PriorKind::binary_spatial:
      return error_binary_spatial(s[f.nodes[0]], s[f.nodes[1]], f.ds);
    case PriorKind::binary_temporal:
      return error_binary_temporal(s[f.nodes[0]], s[f.nodes[1]], f.dt);
    case PriorKind::quaternary:
      return error_quaternary(s[f.nodes[0]], s[f.nodes[1]], s[f.nodes[2]], s[f.nodes[3]], f.ds, f.dt);
  }
  throw InvalidArgument("prior_error: unknown factor kind");
}

/// Error and per-node Jacobians (in factor node order) of a prior factor.
inline std::pair<Vec24, std::vector<Mat24>> linearize_prior(const PriorFactor& f, const Grid& g,
                                                            const PriorParams& params) {
  const auto& s = g.states;
  switch (f.kind) {
    case PriorKind::unary: {
      auto l = linearize_unary(s[f.nodes[0]], params);
      return {l.error, {l.jacobians.begin(), l.jacobians.end()}};
    }
    case PriorKind::binary_spatial:
    case PriorKind::binary_temporal: {
      const Mat24 phi = f.kind == PriorKind::binary_spatial ? phi_s(f.ds) : phi_t(f.dt);
      auto l = linearize_binary(s[f.nodes[0]], s[f.nodes[1]], phi);
      return {l.error, {l.jacobians.begin(), l.jacobians.end()}};
    }
    case PriorKind::quaternary: {
      auto l = linearize_quaternary(s[f.nodes[0]], s[f.nodes[1]], s[f.nodes[2]], s[f.nodes[3]], f.ds, f.dt);
      return {l.error, {l.jacobians.begin(), l.jacobians.end()}};
    }
  }
  throw InvalidArgument("linearize_prior: unknown factor kind");
}

// ---------------------------------------------------------------------------

/// Symmetric block sparsity pattern of the assembled precision (24x24 blocks).
class BlockPattern {
 public:
  explicit BlockPattern(std::size_t n_nodes) : n_nodes_(n_nodes) {}

  void add_clique(const std::vector<std::size_t>& nodes) {
    for (std::size_t a : nodes)
      for (std::size_t b : nodes) entries_.emplace(a, b);
  }

  bool contains(std::size_t i, std::size_t j) const { return entries_.count({i, j}) > 0; }
  std::size_t n_nodes() const { return n_nodes_; }
  std::size_t nonzero_blocks() const { return entries_.size(); }

  /// Largest |i - j| over nonzero blocks.
  std::size_t bandwidth() const {
    std::size_t bw = 0;
    for (const auto& [i, j] : entries_) bw = std::max(bw, i > j ? i - j : j - i);
    return bw;
  }

  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    for (auto it = entries_.lower_bound({i, 0}); it != entries_.end() && it->first == i; ++it) {
      out.push_back(it->second);
    }
    return out;
  }

 private:
  std::size_t n_nodes_;
  std::set<std::pair<std::size_t, std::size_t>> entries_;
};

inline BlockPattern precision_pattern(const FactorSet& fs, const Grid& grid) {
  BlockPattern p(grid.size());
  fs.for_each_prior([&](const PriorFactor& f) {
    p.add_clique(std::vector<std::size_t>(f.nodes.begin(), f.nodes.begin() + f.arity));
  });
  return p;
}

}  // namespace stgp
