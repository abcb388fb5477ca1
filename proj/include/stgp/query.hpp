#pragma once

// Posterior mean / covariance at arbitrary (s, t). Each query touches a single cell.

#include <algorithm>

#include <Eigen/Core>

#include "stgp/errors.hpp"
#include "stgp/interpolation.hpp"
#include "stgp/solver.hpp"

namespace stgp {

/// Mean for an explicit cell location (e.g. a boundary point seen from either neighbouring cell).
inline NodeState query_mean(const Posterior& post, const CellLocation& loc) {
  const auto [tw, sw] = stage_weights(loc, post.params);
  return interpolate(post.grid, loc, tw, sw).x;
}

inline NodeState query_mean(const Posterior& post, double s, double t) {
  return query_mean(post, locate(post.grid, s, t));
}

/// Sigma_q = J * Sigma_corners * J^T + residual, in the increment coordinates of the queried state.
inline Mat24 query_covariance(const Posterior& post, const CellLocation& loc) {
  if (!post.has_covariance()) throw InvalidArgument("query_covariance: posterior has no covariance blocks");
  const Grid& g = post.grid;
  const auto [tw, sw] = stage_weights(loc, post.params);
  const Interpolated ip = interpolate(g, loc, tw, sw);
  if (ip.nodes.size() == 1) return post.marginals[ip.nodes[0]];

  // The cell whose corner set contains every involved node.
  const std::size_t cn = std::min(loc.n, post.cells_space() - 1);
  const std::size_t ck = std::min(loc.k, post.cells_time() - 1);
  const CellJoint& cj = post.cell_joints.at(post.cell_index(cn, ck));
  Mat24 sigma = ip.residual;
  for (std::size_t a = 0; a < ip.nodes.size(); ++a) {
    const auto ia = std::find(cj.nodes.begin(), cj.nodes.end(), ip.nodes[a]) - cj.nodes.begin();
    for (std::size_t b = 0; b < ip.nodes.size(); ++b) {
      const auto ib = std::find(cj.nodes.begin(), cj.nodes.end(), ip.nodes[b]) - cj.nodes.begin();
      if (ia >= static_cast<long>(cj.nodes.size()) || ib >= static_cast<long>(cj.nodes.size())) {
        throw InvalidArgument("query_covariance: missing corner joint");
      }
      sigma += ip.jacobians[a] * cj.covariance.block<24, 24>(24 * ia, 24 * ib) * ip.jacobians[b].transpose();
    }
  }
  return 0.5 * (sigma + sigma.transpose());
}

inline Mat24 query_covariance(const Posterior& post, double s, double t) {
  return query_covariance(post, locate(post.grid, s, t));
}

}  // namespace stgp
