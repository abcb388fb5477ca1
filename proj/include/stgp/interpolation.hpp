#pragma once

// Two-stage (time, then space) GP interpolation inside one grid cell.
//
// Temporal stage: on each of the two cell columns, the state at t_k + tau is
//   z = near_t * z(n,k) + far_t * z(n,k+1),
//   far_t = Q_t(tau) phi_t(dt - tau)^T Q_t(dt)^-1,  near_t = phi_t(tau) - far_t phi_t(dt),
// with Q_t = q_binary_t. The spatial stage does the same between the two column
// results using q_binary_s / phi_s. Each stage works in the chart of its lower
// endpoint, which keeps results on shared cell edges identical for both cells.

#include <algorithm>
#include <cstddef>
#include <vector>

#include <Eigen/Cholesky>

#include "stgp/errors.hpp"
#include "stgp/graph.hpp"
#include "stgp/measurement.hpp"
#include "stgp/prior.hpp"

namespace stgp {

namespace interp_detail {

inline StageWeights stage(const Mat24& phi_tau, const Mat24& phi_rest, const Mat24& phi_full,
                          const Mat24& q_tau, const Mat24& q_full) {
  Eigen::LDLT<Mat24> ldlt(q_full);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw InvalidArgument("interpolation: segment covariance is not positive definite");
  }
  StageWeights w;
  // far = q_tau * phi_rest^T * q_full^-1  (q_full symmetric)
  w.far = ldlt.solve(phi_rest * q_tau.transpose()).transpose();
  w.near = phi_tau - w.far * phi_full;
  Mat24 r = q_tau - w.far * q_full * w.far.transpose();
  w.residual = 0.5 * (r + r.transpose());
  return w;
}

}  // namespace interp_detail

inline StageWeights temporal_stage(double dt, double tau, const PriorParams& p) {
  if (!(dt > 0.0) || tau < 0.0 || tau > dt) throw InvalidArgument("temporal_stage: offset out of range");
  return interp_detail::stage(phi_t(tau), phi_t(dt - tau), phi_t(dt), q_binary_t(tau, p), q_binary_t(dt, p));
}

inline StageWeights spatial_stage(double ds, double sigma, const PriorParams& p) {
  if (!(ds > 0.0) || sigma < 0.0 || sigma > ds) throw InvalidArgument("spatial_stage: offset out of range");
  return interp_detail::stage(phi_s(sigma), phi_s(ds - sigma), phi_s(ds), q_binary_s(sigma, p), q_binary_s(ds, p));
}

/// Composed linear interpolation map onto the stacked corner charts
/// [z(n,k); z(n+1,k); z(n,k+1); z(n+1,k+1)] and the composed residual covariance.
struct InterpWeights {
  Eigen::Matrix<double, 24, 96> w;
  Mat24 residual;
};

inline InterpWeights interp_weights(double ds_cell, double dt_cell, double sigma, double tau,
                                    const PriorParams& p) {
  if (!(ds_cell > 0.0) || !(dt_cell > 0.0)) throw InvalidArgument("interp_weights: degenerate cell");
  if (sigma < 0.0 || sigma > ds_cell || tau < 0.0 || tau > dt_cell) {
    throw InvalidArgument("interp_weights: offsets outside the cell");
  }
  const StageWeights t = temporal_stage(dt_cell, tau, p);
  const StageWeights s = spatial_stage(ds_cell, sigma, p);
  InterpWeights out;
  out.w.block<24, 24>(0, 0) = s.near * t.near;
  out.w.block<24, 24>(0, 24) = s.far * t.near;
  out.w.block<24, 24>(0, 48) = s.near * t.far;
  out.w.block<24, 24>(0, 72) = s.far * t.far;
  Mat24 r = s.near * t.residual * s.near.transpose() + s.far * t.residual * s.far.transpose() + s.residual;
  out.residual = 0.5 * (r + r.transpose());
  return out;
}

/// Finds the cell containing (s, t). Points on the last knot line, or on any interior knot
/// line, are attached to the cell whose lower corner lies on that line (offset exactly 0).
inline CellLocation locate(const Grid& g, double s, double t) {
  const auto& sk = g.s_knots;
  const auto& tk = g.t_knots;
  if (!std::isfinite(s) || !std::isfinite(t) || s < sk.front() || s > sk.back() || t < tk.front() ||
      t > tk.back()) {
    throw OutOfHull("query point (" + std::to_string(s) + ", " + std::to_string(t) + ") is outside the grid hull");
  }
  CellLocation loc;
  loc.n = static_cast<std::size_t>(std::upper_bound(sk.begin(), sk.end(), s) - sk.begin()) - 1;
  loc.k = static_cast<std::size_t>(std::upper_bound(tk.begin(), tk.end(), t) - tk.begin()) - 1;
  loc.sigma = s - sk[loc.n];
  loc.tau = t - tk[loc.k];
  loc.has_s = loc.sigma > 0.0;
  loc.has_t = loc.tau > 0.0;
  if (loc.has_s) loc.ds = sk[loc.n + 1] - sk[loc.n];
  if (loc.has_t) loc.dt = tk[loc.k + 1] - tk[loc.k];
  return loc;
}

/// Node indices involved in an interpolation at `loc`, in corner order
/// (n,k), (n+1,k), (n,k+1), (n+1,k+1) restricted to the active stages.
inline std::vector<std::size_t> involved_nodes(const Grid& g, const CellLocation& loc) {
  std::vector<std::size_t> out{g.index(loc.n, loc.k)};
  if (loc.has_s) out.push_back(g.index(loc.n + 1, loc.k));
  if (loc.has_t) out.push_back(g.index(loc.n, loc.k + 1));
  if (loc.has_s && loc.has_t) out.push_back(g.index(loc.n + 1, loc.k + 1));
  return out;
}

struct Interpolated {
  NodeState x;
  std::vector<std::size_t> nodes;
  std::vector<Mat24> jacobians;  // d(x increment) / d(node increment), aligned with `nodes`
  Mat24 residual = Mat24::Zero();  // interpolation covariance in the increment coordinates of x
};

namespace interp_detail {

struct PairResult {
  NodeState x;
  Mat24 d_lo;
  Mat24 d_hi;
  Mat24 d_chart;
};

// Interpolates between x_lo and x_hi in the chart of x_lo's pose.
inline PairResult interpolate_pair(const NodeState& lo, const NodeState& hi, const StageWeights& w) {
  const Pose& base = lo.pose;
  const ChartEncoding enc = chart_encode_with_jacobians(hi, base);
  const ChartState z = w.near * self_chart(lo) + w.far * enc.z;
  const ChartDecoding dec = chart_decode_with_jacobians(z, base);
  const Eigen::Matrix<double, 6, 24> sel = pose_selector();
  const Mat24 dz_lo = w.near * self_chart_jacobian() + w.far * enc.d_base * sel;
  const Mat24 dz_hi = w.far * enc.d_state;
  return {dec.x, dec.d_chart * dz_lo + dec.d_base * sel, dec.d_chart * dz_hi, dec.d_chart};
}

}  // namespace interp_detail

/// Interpolated state with Jacobians w.r.t. the involved nodes. `temporal` and `spatial` must
/// hold the stage weights for `loc` (ignored for inactive stages).
inline Interpolated interpolate(const Grid& g, const CellLocation& loc, const StageWeights& temporal,
                                const StageWeights& spatial) {
  using interp_detail::interpolate_pair;
  Interpolated out;
  out.nodes = involved_nodes(g, loc);
  const NodeState& x00 = g.at(loc.n, loc.k);

  if (!loc.has_s && !loc.has_t) {
    out.x = x00;
    out.jacobians = {Mat24::Identity()};
    return out;
  }

  if (!loc.has_s) {
    const auto r = interpolate_pair(x00, g.at(loc.n, loc.k + 1), temporal);
    out.x = r.x;
    out.jacobians = {r.d_lo, r.d_hi};
    out.residual = r.d_chart * temporal.residual * r.d_chart.transpose();
    return out;
  }

  if (!loc.has_t) {
    const auto r = interpolate_pair(x00, g.at(loc.n + 1, loc.k), spatial);
    out.x = r.x;
    out.jacobians = {r.d_lo, r.d_hi};
    out.residual = r.d_chart * spatial.residual * r.d_chart.transpose();
    return out;
  }

  const auto a = interpolate_pair(x00, g.at(loc.n, loc.k + 1), temporal);
  const auto b = interpolate_pair(g.at(loc.n + 1, loc.k), g.at(loc.n + 1, loc.k + 1), temporal);
  const auto q = interpolate_pair(a.x, b.x, spatial);
  out.x = q.x;
  // corner order (n,k), (n+1,k), (n,k+1), (n+1,k+1)
  out.jacobians = {q.d_lo * a.d_lo, q.d_hi * b.d_lo, q.d_lo * a.d_hi, q.d_hi * b.d_hi};
  const Mat24 ra = a.d_chart * temporal.residual * a.d_chart.transpose();
  const Mat24 rb = b.d_chart * temporal.residual * b.d_chart.transpose();
  Mat24 r = q.d_lo * ra * q.d_lo.transpose() + q.d_hi * rb * q.d_hi.transpose() +
            q.d_chart * spatial.residual * q.d_chart.transpose();
  out.residual = 0.5 * (r + r.transpose());
  return out;
}

/// Stage weights for a location (identity/zero for inactive stages).
inline std::pair<StageWeights, StageWeights> stage_weights(const CellLocation& loc, const PriorParams& p) {
  StageWeights t, s;
  if (loc.has_t) t = temporal_stage(loc.dt, loc.tau, p);
  if (loc.has_s) s = spatial_stage(loc.ds, loc.sigma, p);
  return {t, s};
}

inline Interpolated interpolate(const Grid& g, double s, double t, const PriorParams& p) {
  const CellLocation loc = locate(g, s, t);
  const auto [tw, sw] = stage_weights(loc, p);
  return interpolate(g, loc, tw, sw);
}

}  // namespace stgp
