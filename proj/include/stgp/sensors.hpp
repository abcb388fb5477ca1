#pragma once

// Measurement models for strain, gyroscope, 6-DOF pose and position sensors, and their
// binding to grid nodes. Off-grid readings act on the interpolated state at (s, t).

#include <algorithm>
#include <array>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "stgp/errors.hpp"
#include "stgp/graph.hpp"
#include "stgp/interpolation.hpp"
#include "stgp/liegroup.hpp"
#include "stgp/measurement.hpp"
#include "stgp/prior.hpp"

namespace stgp {

/// e = log(T_meas * T^-1).
inline Vec6 error_pose_meas(const NodeState& x, const Pose& measured) {
  return se3_log(measured * x.pose.inverse());
}

/// e = p_meas - translation.
inline Vec3 error_position_meas(const NodeState& x, const Vec3& measured) {
  return measured - x.pose.translation();
}

/// Body angular rate: e = w_meas - R^T * angular(velocity).
inline Vec3 error_gyro_meas(const NodeState& x, const Vec3& measured) {
  return measured - x.pose.rotation().transpose() * x.velocity.tail<3>();
}

namespace sensor_detail {

inline Eigen::MatrixXd mask_rows(const std::array<bool, 6>& mask) {
  int m = 0;
  for (bool b : mask) m += b ? 1 : 0;
  if (m == 0) throw InvalidArgument("strain measurement: empty component mask");
  Eigen::MatrixXd sel = Eigen::MatrixXd::Zero(m, 6);
  for (int i = 0, r = 0; i < 6; ++i)
    if (mask[i]) sel(r++, i) = 1.0;
  return sel;
}

}  // namespace sensor_detail

/// Body strain: e = mask * (eps_meas - Ad(T)^-1 * eps).
inline Eigen::VectorXd error_strain_meas(const NodeState& x, const Vec6& measured, const std::array<bool, 6>& mask) {
  const Eigen::MatrixXd sel = sensor_detail::mask_rows(mask);
  return sel * (measured - adjoint(x.pose.inverse()) * x.strain);
}

/// Error of a measurement evaluated directly on a state.
inline Eigen::VectorXd measurement_error(const Measurement& m, const NodeState& x) {
  switch (m.kind) {
    case SensorKind::pose6:
      return error_pose_meas(x, m.pose);
    case SensorKind::position3:
      return error_position_meas(x, m.value.head<3>());
    case SensorKind::gyro3:
      return error_gyro_meas(x, m.value.head<3>());
    case SensorKind::strain6:
      return error_strain_meas(x, m.value.head<6>(), m.mask);
  }
  throw InvalidArgument("measurement_error: unknown kind");
}

/// d(error) / d(state increment), m x 24.
inline Eigen::MatrixXd measurement_jacobian(const Measurement& m, const NodeState& x) {
  switch (m.kind) {
    case SensorKind::pose6: {
      const Vec6 e = error_pose_meas(x, m.pose);
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(6, 24);
      j.block<6, 6>(0, kPoseBlock) = -left_jacobian_inv(-e);
      return j;
    }
    case SensorKind::position3: {
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 24);
      j.block<3, 3>(0, 0) = -Mat3::Identity();
      j.block<3, 3>(0, 3) = hat<double>(x.pose.translation());
      return j;
    }
    case SensorKind::gyro3: {
      const Mat3 rt = x.pose.rotation().transpose();
      Eigen::MatrixXd j = Eigen::MatrixXd::Zero(3, 24);
      j.block<3, 3>(0, 3) = -rt * hat<double>(Vec3(x.velocity.tail<3>()));
      j.block<3, 3>(0, kVelocityBlock + 3) = -rt;
      return j;
    }
    case SensorKind::strain6: {
      const Eigen::MatrixXd sel = sensor_detail::mask_rows(m.mask);
      const Mat6 ad_inv = adjoint(x.pose.inverse());
      Eigen::MatrixXd full = Eigen::MatrixXd::Zero(6, 24);
      full.block<6, 6>(0, kPoseBlock) = -ad_inv * curlyhat<double>(x.strain);
      full.block<6, 6>(0, kStrainBlock) = -ad_inv;
      return sel * full;
    }
  }
  throw InvalidArgument("measurement_jacobian: unknown kind");
}

inline void validate(const Measurement& m) {
  const int d = sensor_dim(m.kind);
  if (m.kind != SensorKind::pose6 && (m.value.size() != d || !m.value.allFinite())) {
    throw InvalidArgument(std::string("measurement (") + to_string(m.kind) + "): value has wrong size or is non-finite");
  }
  if (m.kind == SensorKind::pose6 && !m.pose.is_valid()) {
    throw InvalidArgument("measurement (pose6): invalid pose");
  }
  if (m.noise_cov.rows() != d || m.noise_cov.cols() != d || !m.noise_cov.allFinite() ||
      (m.noise_cov - m.noise_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, m.noise_cov.cwiseAbs().maxCoeff())) {
    throw InvalidArgument(std::string("measurement (") + to_string(m.kind) + "): noise covariance has wrong shape or is not symmetric");
  }
  if (Eigen::LLT<Eigen::MatrixXd>(m.noise_cov).info() != Eigen::Success) {
    throw InvalidArgument(std::string("measurement (") + to_string(m.kind) + "): noise covariance is not positive definite");
  }
  if (m.kind == SensorKind::strain6 && m.masked_dim() == 0) {
    throw InvalidArgument("measurement (strain6): empty component mask");
  }
}

/// Noise covariance restricted to the active components.
inline Eigen::MatrixXd masked_covariance(const Measurement& m) {
  if (m.kind != SensorKind::strain6) return m.noise_cov;
  const Eigen::MatrixXd sel = sensor_detail::mask_rows(m.mask);
  return sel * m.noise_cov * sel.transpose();
}

/// Binds a reading at (s, t) to the 1, 2 or 4 nodes of its cell.
inline MeasurementFactor bind_offgrid(const Measurement& meas, const Grid& grid, const PriorParams& params) {
  validate(meas);
  MeasurementFactor f;
  f.meas = meas;
  f.loc = locate(grid, meas.s, meas.t);
  f.nodes = involved_nodes(grid, f.loc);
  std::tie(f.temporal, f.spatial) = stage_weights(f.loc, params);
  const Eigen::MatrixXd cov = masked_covariance(meas);
  Eigen::MatrixXd info = cov.llt().solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
  f.information = 0.5 * (info + info.transpose());
  return f;
}

inline Eigen::VectorXd measurement_error(const MeasurementFactor& f, const Grid& grid) {
  const Interpolated ip = interpolate(grid, f.loc, f.temporal, f.spatial);
  return measurement_error(f.meas, ip.x);
}

/// Error and Jacobians (aligned with f.nodes).
inline std::pair<Eigen::VectorXd, std::vector<Eigen::MatrixXd>> linearize_measurement(const MeasurementFactor& f,
                                                                                      const Grid& grid) {
  const Interpolated ip = interpolate(grid, f.loc, f.temporal, f.spatial);
  const Eigen::MatrixXd jx = measurement_jacobian(f.meas, ip.x);
  std::vector<Eigen::MatrixXd> jac;
  jac.reserve(ip.jacobians.size());
  for (const Mat24& j : ip.jacobians) jac.emplace_back(jx * j);
  return {measurement_error(f.meas, ip.x), std::move(jac)};
}

inline void add_measurements(FactorSet& fs, const std::vector<Measurement>& meas, const Grid& grid,
                             const PriorParams& params) {
  fs.measurements.reserve(fs.measurements.size() + meas.size());
  for (const auto& m : meas) fs.measurements.push_back(bind_offgrid(m, grid, params));
}

/// Initial guess from strain readings: columns whose every node carries a full strain6 reading
/// are integrated along s from the prior-mean base pose; rates are finite differences across
/// time columns. Columns without complete coverage keep the prior-mean states.
inline Grid measurement_seeded_grid(std::vector<double> s_knots, std::vector<double> t_knots,
                                    const std::vector<Measurement>& meas, const PriorParams& params) {
  Grid g = build_grid(std::move(s_knots), std::move(t_knots), params);
  const std::size_t N = g.n_space();
  const std::size_t K = g.n_time();
  std::vector<std::optional<Vec6>> body(N * K);
  auto knot_of = [](const std::vector<double>& knots, double v) -> std::optional<std::size_t> {
    const auto it = std::lower_bound(knots.begin(), knots.end(), v);
    if (it == knots.end() || *it != v) return std::nullopt;
    return static_cast<std::size_t>(it - knots.begin());
  };
  for (const auto& m : meas) {
    if (m.kind != SensorKind::strain6 || m.masked_dim() != 6) continue;
    const auto n = knot_of(g.s_knots, m.s);
    const auto k = knot_of(g.t_knots, m.t);
    if (n && k) body[g.index(*n, *k)] = m.value.head<6>();
  }
  std::vector<bool> seeded(K, false);
  for (std::size_t k = 0; k < K; ++k) {
    bool full = true;
    for (std::size_t n = 0; n < N; ++n) full = full && body[g.index(n, k)].has_value();
    if (!full) continue;
    seeded[k] = true;
    Pose pose = g.at(0, 0).pose;
    for (std::size_t n = 0; n < N; ++n) {
      const Vec6& b = *body[g.index(n, k)];
      if (n > 0) {
        const double h = g.s_knots[n] - g.s_knots[n - 1];
        pose = pose * se3_exp(0.5 * h * (*body[g.index(n - 1, k)] + b));
      }
      g.at(n, k).pose = pose;
      g.at(n, k).strain = adjoint(pose) * b;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    if (!seeded[k]) continue;
    const std::size_t a = (k > 0 && seeded[k - 1]) ? k - 1 : k;
    const std::size_t b = (k + 1 < K && seeded[k + 1]) ? k + 1 : k;
    if (a == b) continue;
    const double dt = g.t_knots[b] - g.t_knots[a];
    for (std::size_t n = 0; n < N; ++n) {
      NodeState& x = g.at(n, k);
      x.velocity = se3_log(g.at(n, b).pose * g.at(n, a).pose.inverse()) / dt;
      x.strain_velocity = (g.at(n, b).strain - g.at(n, a).strain) / dt;
    }
  }
  return g;
}

}  // namespace stgp
