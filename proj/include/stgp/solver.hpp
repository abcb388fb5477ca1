#pragma once

// Batch MAP estimation: factor linearization, block-banded normal equations, a block
// Cholesky factorization over the space-major ordering, selected inversion for the
// covariance blocks and the Gauss-Newton driver.

#include <algorithm>
#include <array>
#include <chrono>
#include <optional>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "stgp/errors.hpp"
#include "stgp/graph.hpp"
#include "stgp/sensors.hpp"

namespace stgp {

/// Symmetric matrix of 24x24 blocks with lower block bandwidth `bandwidth()`; only the lower
/// band is stored. Nodes map to storage blocks through `order` (node -> block, empty = identity);
/// add, rhs, dense and multiply work in node order, lower() in block order.
class BlockBandedSystem {
 public:
  BlockBandedSystem() = default;
  BlockBandedSystem(std::size_t n_blocks, std::size_t bandwidth, std::vector<std::size_t> order = {})
      : n_(n_blocks), bw_(std::min(bandwidth, n_blocks == 0 ? 0 : n_blocks - 1)), order_(std::move(order)),
        blocks_(n_ * (bw_ + 1), Mat24::Zero()), rhs_(Eigen::VectorXd::Zero(24 * n_)) {
    if (!order_.empty() && order_.size() != n_) throw InvalidArgument("BlockBandedSystem: order size mismatch");
  }

  std::size_t n_blocks() const { return n_; }
  std::size_t bandwidth() const { return bw_; }
  std::size_t dim() const { return 24 * n_; }
  const std::vector<std::size_t>& order() const { return order_; }
  std::size_t block_of(std::size_t node) const { return order_.empty() ? node : order_[node]; }

  bool in_band(std::size_t i, std::size_t j) const { return (i >= j ? i - j : j - i) <= bw_; }

  /// Lower storage block (i >= j), block order.
  Mat24& lower(std::size_t i, std::size_t j) { return blocks_[i * (bw_ + 1) + (i - j)]; }
  const Mat24& lower(std::size_t i, std::size_t j) const { return blocks_[i * (bw_ + 1) + (i - j)]; }

  /// Block (i, j) between nodes i and j.
  Mat24 block(std::size_t i, std::size_t j) const {
    const std::size_t bi = block_of(i), bj = block_of(j);
    if (!in_band(bi, bj)) return Mat24::Zero();
    return bi >= bj ? lower(bi, bj) : Mat24(lower(bj, bi).transpose());
  }

  /// Adds m to block (i, j) of the symmetric matrix (and implicitly m^T to (j, i)).
  void add(std::size_t i, std::size_t j, const Mat24& m) {
    const std::size_t bi = block_of(i), bj = block_of(j);
    if (!in_band(bi, bj)) throw InvalidArgument("BlockBandedSystem: block outside the band");
    if (bi >= bj) {
      lower(bi, bj) += m;
    } else {
      lower(bj, bi) += m.transpose();
    }
  }

  Eigen::VectorXd& rhs() { return rhs_; }
  const Eigen::VectorXd& rhs() const { return rhs_; }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(dim(), dim());
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) d.block<24, 24>(24 * i, 24 * j) = block(i, j);
    return d;
  }

  /// H * v using the band.
  Eigen::VectorXd multiply(const Eigen::VectorXd& v) const {
    const Eigen::VectorXd pv = to_blocks(v);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = (i > bw_ ? i - bw_ : 0); j <= i; ++j) {
        out.segment<24>(24 * i) += lower(i, j) * pv.segment<24>(24 * j);
        if (i != j) out.segment<24>(24 * j) += lower(i, j).transpose() * pv.segment<24>(24 * i);
      }
    }
    return to_nodes(out);
  }

  Eigen::VectorXd to_blocks(const Eigen::VectorXd& v) const { return permute(order_, v, true); }
  Eigen::VectorXd to_nodes(const Eigen::VectorXd& v) const { return permute(order_, v, false); }

  static Eigen::VectorXd permute(const std::vector<std::size_t>& order, const Eigen::VectorXd& v, bool forward) {
    if (order.empty()) return v;
    Eigen::VectorXd out(v.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (forward) {
        out.segment<24>(24 * order[i]) = v.segment<24>(24 * i);
      } else {
        out.segment<24>(24 * i) = v.segment<24>(24 * order[i]);
      }
    }
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  std::vector<std::size_t> order_;
  std::vector<Mat24> blocks_;
  Eigen::VectorXd rhs_;
};

/// Node -> system block. Space-major node order has bandwidth N + 1; when K < N the nodes are
/// taken time-major instead, so the bandwidth is min(N, K) + 1.
inline std::vector<std::size_t> grid_block_order(const Grid& g) {
  const std::size_t N = g.n_space(), K = g.n_time();
  if (K >= N) return {};
  std::vector<std::size_t> order(g.size());
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t n = 0; n < N; ++n) order[g.index(n, k)] = n * K + k;
  return order;
}

inline std::size_t grid_bandwidth(const Grid& g) { return std::min(g.n_space(), g.n_time()) + 1; }

/// Number of worker threads for linearization: STGP_THREADS if set, else hardware concurrency.
inline unsigned linearization_threads() {
  if (const char* env = std::getenv("STGP_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace solver_detail {

struct Contribution {
  std::vector<std::size_t> nodes;
  Eigen::VectorXd error;
  std::vector<Eigen::MatrixXd> jacobians;
  Vec24 prior_error = Vec24::Zero();
  std::array<Mat24, 4> prior_jacobians;
  const Eigen::MatrixXd* information_dyn = nullptr;
  const Mat24* information = nullptr;
  std::string failure;
};

template <typename F>
void parallel_for(std::size_t count, F&& body) {
  const unsigned threads = std::min<std::size_t>(linearization_threads(), std::max<std::size_t>(count, 1));
  if (threads <= 1 || count < 64) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (count + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline std::vector<const PriorFactor*> prior_list(const FactorSet& fs) {
  std::vector<const PriorFactor*> out;
  out.reserve(fs.prior_count());
  fs.for_each_prior([&](const PriorFactor& f) { out.push_back(&f); });
  return out;
}

inline std::string describe(const PriorFactor& f) {
  static const char* names[] = {"unary", "binary_spatial", "binary_temporal", "quaternary"};
  return std::string(names[static_cast<int>(f.kind)]) + " factor on node " + std::to_string(f.nodes[0]);
}

}  // namespace solver_detail

/// Total cost sum(e^T W e) over every factor.
inline double evaluate_cost(const FactorSet& fs, const Grid& grid, const PriorParams& params) {
  double cost = 0.0;
  fs.for_each_prior([&](const PriorFactor& f) {
    const Vec24 e = prior_error(f, grid, params);
    cost += e.dot(f.information * e);
  });
  for (const auto& m : fs.measurements) {
    const Eigen::VectorXd e = measurement_error(m, grid);
    cost += e.dot(m.information * e);
  }
  return cost;
}

struct LinearizedProblem {
  BlockBandedSystem system;
  double cost = 0.0;
};

/// Gauss-Newton normal equations: H = sum J^T W J, rhs = -sum J^T W e. Factors are linearized
/// concurrently and merged in a fixed order.
inline LinearizedProblem linearize(const FactorSet& fs, const Grid& grid, const PriorParams& params) {
  using solver_detail::Contribution;
  const auto priors = solver_detail::prior_list(fs);
  const std::size_t n_prior = priors.size();
  const std::size_t total = n_prior + fs.measurements.size();
  std::vector<Contribution> contribs(total);

  solver_detail::parallel_for(total, [&](std::size_t idx) {
    Contribution& c = contribs[idx];
    try {
      if (idx < n_prior) {
        const PriorFactor& f = *priors[idx];
        auto [e, jac] = linearize_prior(f, grid, params);
        c.nodes.assign(f.nodes.begin(), f.nodes.begin() + f.arity);
        c.prior_error = e;
        for (std::size_t a = 0; a < jac.size(); ++a) c.prior_jacobians[a] = jac[a];
        c.information = &f.information;
      } else {
        const MeasurementFactor& m = fs.measurements[idx - n_prior];
        auto [e, jac] = linearize_measurement(m, grid);
        c.nodes = m.nodes;
        c.error = std::move(e);
        c.jacobians = std::move(jac);
        c.information_dyn = &m.information;
      }
    } catch (const Error& ex) {
      c.failure = (idx < n_prior ? solver_detail::describe(*priors[idx])
                                 : "measurement " + std::to_string(idx - n_prior)) +
                  ": " + ex.what();
    }
  });

  LinearizedProblem out{BlockBandedSystem(grid.size(), grid_bandwidth(grid), grid_block_order(grid)), 0.0};
  BlockBandedSystem& sys = out.system;
  for (const Contribution& c : contribs) {
    if (!c.failure.empty()) throw ChartRangeError("linearize: " + c.failure);
    if (c.information) {
      const Mat24& w = *c.information;
      const Vec24 we = w * c.prior_error;
      out.cost += c.prior_error.dot(we);
      std::array<Mat24, 4> wj;
      for (std::size_t b = 0; b < c.nodes.size(); ++b) wj[b].noalias() = w * c.prior_jacobians[b];
      for (std::size_t a = 0; a < c.nodes.size(); ++a) {
        sys.rhs().segment<24>(24 * c.nodes[a]).noalias() -= c.prior_jacobians[a].transpose() * we;
        for (std::size_t b = 0; b < c.nodes.size(); ++b) {
          if (sys.block_of(c.nodes[a]) < sys.block_of(c.nodes[b])) continue;
          sys.add(c.nodes[a], c.nodes[b], Mat24(c.prior_jacobians[a].transpose() * wj[b]));
        }
      }
      continue;
    }
    const Eigen::MatrixXd& w = *c.information_dyn;
    out.cost += c.error.dot(w * c.error);
    std::vector<Eigen::MatrixXd> wj;
    wj.reserve(c.jacobians.size());
    for (const auto& j : c.jacobians) wj.emplace_back(w * j);
    for (std::size_t a = 0; a < c.nodes.size(); ++a) {
      sys.rhs().segment<24>(24 * c.nodes[a]) -= c.jacobians[a].transpose() * (w * c.error);
      for (std::size_t b = 0; b < c.nodes.size(); ++b) {
        if (sys.block_of(c.nodes[a]) < sys.block_of(c.nodes[b])) continue;
        sys.add(c.nodes[a], c.nodes[b], Mat24(c.jacobians[a].transpose() * wj[b]));
      }
    }
  }
  return out;
}

/// Block Cholesky H = L L^T over the band, forward/back substitution and selected inversion.
class BandedCholesky {
 public:
  explicit BandedCholesky(const BlockBandedSystem& h) : n_(h.n_blocks()), bw_(h.bandwidth()), order_(h.order()) {
    factor(h);
  }

  std::size_t n_blocks() const { return n_; }
  std::size_t bandwidth() const { return bw_; }
  /// Block multiply-accumulate operations performed by the factorization.
  std::size_t touched_blocks() const { return touched_; }

  const Mat24& l(std::size_t i, std::size_t j) const { return blocks_[i * (bw_ + 1) + (i - j)]; }

  /// Solves H x = b, both in node order.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    Eigen::VectorXd y = BlockBandedSystem::permute(order_, b, true);
    for (std::size_t i = 0; i < n_; ++i) {
      Vec24 acc = y.segment<24>(24 * i);
      for (std::size_t j = lo(i); j < i; ++j) acc.noalias() -= l(i, j) * y.segment<24>(24 * j);
      y.segment<24>(24 * i) = l(i, i).triangularView<Eigen::Lower>().solve(acc);
    }
    for (std::size_t ii = n_; ii-- > 0;) {
      Vec24 acc = y.segment<24>(24 * ii);
      const std::size_t hi = std::min(n_ - 1, ii + bw_);
      for (std::size_t k = ii + 1; k <= hi; ++k) acc.noalias() -= l(k, ii).transpose() * y.segment<24>(24 * k);
      y.segment<24>(24 * ii) = l(ii, ii).transpose().triangularView<Eigen::Upper>().solve(acc);
    }
    return BlockBandedSystem::permute(order_, y, false);
  }

  /// Blocks of H^-1 inside the band, lower storage: sigma(i, j) for i >= j, i - j <= bandwidth.
  class BandInverse {
   public:
    BandInverse(std::size_t n, std::size_t bw, std::vector<std::size_t> order = {})
        : bw_(bw), order_(std::move(order)), blocks_(n * (bw + 1), Mat24::Zero()) {}
    Mat24& lower(std::size_t i, std::size_t j) { return blocks_[i * (bw_ + 1) + (i - j)]; }
    const Mat24& lower(std::size_t i, std::size_t j) const { return blocks_[i * (bw_ + 1) + (i - j)]; }
    /// Block (i, j) between nodes i and j.
    Mat24 operator()(std::size_t i, std::size_t j) const {
      if (!order_.empty()) i = order_[i], j = order_[j];
      if ((i >= j ? i - j : j - i) > bw_) throw InvalidArgument("BandInverse: block outside the band");
      return i >= j ? lower(i, j) : Mat24(lower(j, i).transpose());
    }

   private:
    std::size_t bw_;
    std::vector<std::size_t> order_;
    std::vector<Mat24> blocks_;
  };

  /// Takahashi recursion: for j >= i,
  ///   S_ij = L_ii^-T ( [i == j] L_ii^-1 - sum_{k > i} L_ki^T S_kj ).
  /// The blocks S_jk with i < j, k <= i + bandwidth are kept in a dense sliding window so each
  /// block row is one matrix product.
  BandInverse selected_inverse() const {
    BandInverse sig(n_, bw_, order_);
    if (n_ == 0) return sig;
    const auto cap = static_cast<long>(2 * (bw_ + 1));
    Eigen::MatrixXd win = Eigen::MatrixXd::Zero(24 * cap, 24 * cap);
    long base = static_cast<long>(n_) - cap;
    auto pos = [&](std::size_t b) { return 24 * (static_cast<long>(b) - base); };
    for (std::size_t i = n_; i-- > 0;) {
      const std::size_t hi = std::min(n_ - 1, i + bw_);
      const auto m = static_cast<Eigen::Index>(hi - i);
      if (static_cast<long>(i) < base) {
        const long nb = static_cast<long>(hi) + 1 - cap;
        const Eigen::Index from = pos(i + 1);
        base = nb;
        win.block(pos(i + 1), pos(i + 1), 24 * m, 24 * m) = win.block(from, from, 24 * m, 24 * m);
      }
      const Mat24 lii_inv = l(i, i).triangularView<Eigen::Lower>().solve(Mat24::Identity());
      Mat24 sii = lii_inv.transpose() * lii_inv;
      if (m > 0) {
        Eigen::MatrixXd v(24 * m, 24);
        for (Eigen::Index a = 0; a < m; ++a) v.middleRows<24>(24 * a) = l(i + 1 + a, i);
        const Eigen::MatrixXd g = win.block(pos(i + 1), pos(i + 1), 24 * m, 24 * m).selfadjointView<Eigen::Lower>() * v;
        const Eigen::MatrixXd col = -(g * lii_inv);  // S_ki for k = i+1..hi
        sii.noalias() -= lii_inv.transpose() * (v.transpose() * col);
        for (Eigen::Index a = 0; a < m; ++a) {
          const Mat24 ski = col.middleRows<24>(24 * a);
          sig.lower(i + 1 + a, i) = ski;
          win.block<24, 24>(pos(i + 1 + a), pos(i)) = ski;
          win.block<24, 24>(pos(i), pos(i + 1 + a)) = ski.transpose();
        }
      }
      sii = 0.5 * (sii + sii.transpose()).eval();
      sig.lower(i, i) = sii;
      win.block<24, 24>(pos(i), pos(i)) = sii;
    }
    return sig;
  }

 private:
  std::size_t lo(std::size_t i) const { return i > bw_ ? i - bw_ : 0; }
  Mat24& lmut(std::size_t i, std::size_t j) { return blocks_[i * (bw_ + 1) + (i - j)]; }

  // Right-looking: the Schur complement over block rows j..j+bandwidth lives in a dense sliding
  // window; each block column is one triangular solve plus one symmetric rank-24 update.
  void factor(const BlockBandedSystem& h) {
    blocks_.assign(n_ * (bw_ + 1), Mat24::Zero());
    if (n_ == 0) return;
    const std::size_t cap = 2 * (bw_ + 1);
    Eigen::MatrixXd win = Eigen::MatrixXd::Zero(24 * cap, 24 * cap);
    std::size_t base = 0;
    std::size_t loaded = 0;
    auto pos = [&](std::size_t b) { return static_cast<Eigen::Index>(24 * (b - base)); };
    for (std::size_t j = 0; j < n_; ++j) {
      const std::size_t hi = std::min(n_ - 1, j + bw_);
      for (; loaded <= hi; ++loaded) {
        if (loaded - base >= cap) {
          const auto m = static_cast<Eigen::Index>(loaded - j);
          const Eigen::Index from = pos(j);
          base = j;
          win.block(0, 0, 24 * m, 24 * m) = win.block(from, from, 24 * m, 24 * m);
        }
        for (std::size_t c = std::max(j, lo(loaded)); c <= loaded; ++c) {
          win.block<24, 24>(pos(loaded), pos(c)) = h.lower(loaded, c);
        }
      }
      Eigen::LLT<Mat24> llt(win.block<24, 24>(pos(j), pos(j)));
      if (llt.info() != Eigen::Success) {
        throw NotPositiveDefinite(j, "block Cholesky: non-positive-definite pivot at block row " +
                                         std::to_string(j));
      }
      lmut(j, j) = llt.matrixL();
      const auto m = static_cast<Eigen::Index>(hi - j);
      if (m > 0) {
        auto panel = win.block(pos(j + 1), pos(j), 24 * m, 24);
        l(j, j).transpose().triangularView<Eigen::Upper>().solveInPlace<Eigen::OnTheRight>(panel);
        for (Eigen::Index a = 0; a < m; ++a) lmut(j + 1 + a, j) = panel.middleRows<24>(24 * a);
        win.block(pos(j + 1), pos(j + 1), 24 * m, 24 * m).selfadjointView<Eigen::Lower>().rankUpdate(panel, -1.0);
      }
      // Same count as the blockwise recursion: one update per (i, j, k) plus one per (i, j).
      for (std::size_t i = j; i <= hi; ++i) touched_ += j - std::max(lo(i), lo(j)) + 1;
    }
  }

  std::size_t n_;
  std::size_t bw_;
  std::vector<std::size_t> order_;
  std::size_t touched_ = 0;
  std::vector<Mat24> blocks_;
};

/// Solves H * delta = rhs for the system's own right-hand side.
inline Eigen::VectorXd solve_block_banded(const BlockBandedSystem& system) {
  return BandedCholesky(system).solve(system.rhs());
}

// ---------------------------------------------------------------------------

struct SolverOptions {
  int max_iters = 50;
  double tol = 1e-8;
  int max_halvings = 8;
  bool compute_covariance = true;
};

struct ConvergenceReport {
  int iterations = 0;
  bool converged = false;
  std::string status = "not started";
  std::vector<double> cost_trace;  // cost before the first step, then after each accepted step
  std::vector<double> step_norms;  // ||delta||_inf per iteration
  double final_cost = 0.0;
  double seconds = 0.0;
};

/// Joint covariance of the corner nodes of one cell (increment coordinates, corner order
/// (n,k), (n+1,k), (n,k+1), (n+1,k+1) restricted to existing corners).
struct CellJoint {
  std::vector<std::size_t> nodes;
  Eigen::MatrixXd covariance;
};

struct Posterior {
  Grid grid;
  PriorParams params;
  std::vector<Mat24> marginals;      // per node; empty if covariance was not requested
  std::vector<CellJoint> cell_joints;  // cell (n,k) at n * n_cells_time + ... see cell_index()
  ConvergenceReport report;

  bool has_covariance() const { return !marginals.empty(); }
  std::size_t cells_space() const { return std::max<std::size_t>(grid.n_space(), 2) - 1; }
  std::size_t cells_time() const { return std::max<std::size_t>(grid.n_time(), 2) - 1; }
  std::size_t cell_index(std::size_t n, std::size_t k) const { return k * cells_space() + n; }
};

/// Cell corner sets: one per (n, k) with n < max(N-1, 1), k < max(K-1, 1).
inline std::vector<std::vector<std::size_t>> cell_corner_sets(const Grid& g) {
  const std::size_t N = g.n_space();
  const std::size_t K = g.n_time();
  const std::size_t cs = std::max<std::size_t>(N, 2) - 1;
  const std::size_t ct = std::max<std::size_t>(K, 2) - 1;
  std::vector<std::vector<std::size_t>> out;
  out.reserve(cs * ct);
  for (std::size_t k = 0; k < ct; ++k) {
    for (std::size_t n = 0; n < cs; ++n) {
      std::vector<std::size_t> c{g.index(n, k)};
      if (N > 1) c.push_back(g.index(n + 1, k));
      if (K > 1) c.push_back(g.index(n, k + 1));
      if (N > 1 && K > 1) c.push_back(g.index(n + 1, k + 1));
      out.push_back(std::move(c));
    }
  }
  return out;
}

/// Per-node marginals and per-cell corner joints from the band of H^-1.
inline std::pair<std::vector<Mat24>, std::vector<CellJoint>> corner_covariances(const BandedCholesky& chol,
                                                                                 const Grid& grid) {
  const auto sig = chol.selected_inverse();
  std::vector<Mat24> marginals(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) marginals[i] = sig(i, i);
  std::vector<CellJoint> joints;
  for (auto& nodes : cell_corner_sets(grid)) {
    CellJoint cj;
    const auto m = static_cast<Eigen::Index>(nodes.size());
    cj.covariance.resize(24 * m, 24 * m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) cj.covariance.block<24, 24>(24 * a, 24 * b) = sig(nodes[a], nodes[b]);
    cj.nodes = std::move(nodes);
    joints.push_back(std::move(cj));
  }
  return {std::move(marginals), std::move(joints)};
}

inline std::pair<std::vector<Mat24>, std::vector<CellJoint>> corner_covariances(const BlockBandedSystem& system,
                                                                                 const Grid& grid) {
  return corner_covariances(BandedCholesky(system), grid);
}

inline Grid retract(const Grid& g, const Eigen::VectorXd& delta, double scale = 1.0) {
  Grid out = g;
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.states[i] = retract(g.states[i], scale * delta.segment<24>(24 * i));
  }
  return out;
}

/// Gauss-Newton with step halving. Covariances come from the factorization of the last iteration.
/// Throws NotPositiveDefinite for a singular system; divergence and iteration exhaustion are reported
/// through `report.status` with converged = false.
inline Posterior gauss_newton(Grid grid, const FactorSet& fs, const PriorParams& params,
                              const SolverOptions& opts = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  Posterior post;
  ConvergenceReport& rep = post.report;
  double cost = evaluate_cost(fs, grid, params);
  rep.cost_trace.push_back(cost);
  rep.status = "max_iters reached";
  std::optional<BandedCholesky> last;

  for (int it = 0; it < opts.max_iters; ++it) {
    LinearizedProblem lp = linearize(fs, grid, params);
    last.emplace(lp.system);
    const Eigen::VectorXd delta = last->solve(lp.system.rhs());
    const double step = delta.size() ? delta.cwiseAbs().maxCoeff() : 0.0;
    rep.iterations = it + 1;
    rep.step_norms.push_back(step);

    bool accepted = false;
    double scale = 1.0;
    for (int h = 0; h <= opts.max_halvings; ++h, scale *= 0.5) {
      Grid cand = retract(grid, delta, scale);
      double c;
      try {
        c = evaluate_cost(fs, cand, params);
      } catch (const ChartRangeError&) {
        continue;
      }
      if (step < opts.tol || c <= cost * (1.0 + 1e-12) + 1e-300) {
        grid = std::move(cand);
        cost = c;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.status = "diverged: step halving exhausted at iteration " + std::to_string(it + 1);
      break;
    }
    rep.cost_trace.push_back(cost);
    if (step < opts.tol) {
      rep.converged = true;
      rep.status = "converged";
      break;
    }
  }
  rep.final_cost = cost;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  post.grid = std::move(grid);
  post.params = params;
  if (opts.compute_covariance && last) {
    std::tie(post.marginals, post.cell_joints) = corner_covariances(*last, post.grid);
  }
  return post;
}

}  // namespace stgp
