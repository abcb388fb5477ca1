#pragma once

// Space-time GP prior: node states, the local chart in which the prior is linear,
// the separable transition functions and the segment/cell noise covariances, and
// the unary / binary / quaternary prior error terms with their Jacobians.
//
// Chart ordering: a 24-vector of four 6-blocks indexed (a, b) with a the temporal
// derivative level and b the spatial one: (0,0) pose, (0,1) strain, (1,0) velocity,
// (1,1) strain-velocity. Kronecker products below are written temporal (x) spatial (x) 6.

#include <array>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "stgp/errors.hpp"
#include "stgp/liegroup.hpp"

namespace stgp {

using Vec24 = Eigen::Matrix<double, 24, 1>;
using Mat24 = Eigen::Matrix<double, 24, 24>;
using Mat24x6 = Eigen::Matrix<double, 24, 6>;
using ChartState = Vec24;

inline constexpr int kStateDim = 24;
inline constexpr int kPoseBlock = 0;
inline constexpr int kStrainBlock = 6;
inline constexpr int kVelocityBlock = 12;
inline constexpr int kStrainVelocityBlock = 18;

/// Largest rotation angle a relative chart may carry.
inline constexpr double kChartAngleLimit = 0.9 * M_PI;

/// Per-node estimate. Derivative twists use the left (world-frame) convention,
/// e.g. velocity = (dT/dt) T^-1.
struct NodeState {
  Pose pose;
  Twist strain = Twist::Zero();
  Twist velocity = Twist::Zero();
  Twist strain_velocity = Twist::Zero();

  bool is_valid() const {
    return pose.is_valid() && strain.allFinite() && velocity.allFinite() &&
           strain_velocity.allFinite();
  }
};

/// Applies a 24-dimensional increment: exp(d_pose) * T on the pose, additive elsewhere.
inline NodeState retract(const NodeState& x, const Vec24& delta) {
  NodeState out;
  out.pose = se3_exp(delta.segment<6>(kPoseBlock)) * x.pose;
  out.strain = x.strain + delta.segment<6>(kStrainBlock);
  out.velocity = x.velocity + delta.segment<6>(kVelocityBlock);
  out.strain_velocity = x.strain_velocity + delta.segment<6>(kStrainVelocityBlock);
  return out;
}

struct PriorParams {
  Mat6 qs_psd = Mat6::Identity();   // spatial chain, per meter
  Mat6 qt_psd = Mat6::Identity();   // temporal chain, per second
  Mat6 qst_psd = Mat6::Identity();  // cell noise, per meter-second
  Mat24 p0 = Mat24::Identity();     // covariance of the initial condition x(s0, t0)
  NodeState prior_mean_0;
};

namespace prior_detail {

inline bool is_symmetric(const Eigen::Ref<const Eigen::MatrixXd>& m, double tol = 1e-12) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

inline bool is_psd(const Eigen::Ref<const Eigen::MatrixXd>& m, double tol = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() >= -tol;
}

inline void check_interval(double d, const char* what) {
  if (!(d >= 0.0) || !std::isfinite(d)) throw InvalidArgument(std::string(what) + ": interval must be finite and >= 0");
}

inline void check_positive_interval(double d, const char* what) {
  if (!(d > 0.0) || !std::isfinite(d)) throw InvalidArgument(std::string(what) + ": interval must be finite and > 0");
}

// A (x) B (x) C for a 2x2, 2x2, 6x6 triple.
inline Mat24 kron3(const Eigen::Matrix2d& a, const Eigen::Matrix2d& b, const Mat6& c) {
  Mat24 out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l)
          out.block<6, 6>(6 * (2 * i + k), 6 * (2 * j + l)) = a(i, j) * b(k, l) * c;
  return out;
}

inline Eigen::Matrix2d transition_2x2(double d) {
  Eigen::Matrix2d m;
  m << 1.0, d, 0.0, 1.0;
  return m;
}

}  // namespace prior_detail

inline void validate(const PriorParams& p) {
  using prior_detail::is_psd;
  using prior_detail::is_symmetric;
  const std::array<std::pair<const char*, const Mat6*>, 3> psds{
      {{"qs_psd", &p.qs_psd}, {"qt_psd", &p.qt_psd}, {"qst_psd", &p.qst_psd}}};
  for (const auto& [name, m] : psds) {
    if (!m->allFinite() || !is_symmetric(*m) || !is_psd(*m)) {
      throw InvalidArgument(std::string("prior params: ") + name + " must be symmetric PSD");
    }
  }
  if (!p.p0.allFinite() || !is_symmetric(p.p0) || Eigen::LLT<Mat24>(p.p0).info() != Eigen::Success) {
    throw InvalidArgument("prior params: p0 must be symmetric positive definite");
  }
  if (!p.prior_mean_0.is_valid()) throw InvalidArgument("prior params: invalid prior mean state");
}

/// Covariance of the twice-integrated white noise over an interval: [[d^3/3, d^2/2], [d^2/2, d]].
inline Eigen::Matrix2d k_matrix(double d) {
  prior_detail::check_interval(d, "k_matrix");
  Eigen::Matrix2d k;
  k << d * d * d / 3.0, d * d / 2.0, d * d / 2.0, d;
  return k;
}

inline Mat24 phi_s(double ds) {
  prior_detail::check_interval(ds, "phi_s");
  return prior_detail::kron3(Eigen::Matrix2d::Identity(), prior_detail::transition_2x2(ds), Mat6::Identity());
}

inline Mat24 phi_t(double dt) {
  prior_detail::check_interval(dt, "phi_t");
  return prior_detail::kron3(prior_detail::transition_2x2(dt), Eigen::Matrix2d::Identity(), Mat6::Identity());
}

inline Mat24 phi_cell(double ds, double dt) {
  prior_detail::check_interval(ds, "phi_cell");
  prior_detail::check_interval(dt, "phi_cell");
  return prior_detail::kron3(prior_detail::transition_2x2(dt), prior_detail::transition_2x2(ds), Mat6::Identity());
}

// The q_* builders accept zero intervals (interpolation evaluates them at the
// knots, where they vanish); factor construction rejects degenerate intervals.
inline Mat24 q_binary_s(double ds, const PriorParams& p) {
  return prior_detail::kron3(Eigen::Matrix2d::Identity(), k_matrix(ds), p.qs_psd);
}

inline Mat24 q_binary_t(double dt, const PriorParams& p) {
  return prior_detail::kron3(k_matrix(dt), Eigen::Matrix2d::Identity(), p.qt_psd);
}

inline Mat24 q_quaternary(double ds, double dt, const PriorParams& p) {
  return prior_detail::kron3(k_matrix(dt), k_matrix(ds), p.qst_psd);
}

// ---------------------------------------------------------------------------
// Chart.

/// z = (xi, J^-1 eps, J^-1 vel, J^-1 psi) with xi = log(T * base^-1).
struct ChartEncoding {
  ChartState z;
  Mat24 d_state;  // dz / d(state increment)
  Mat24x6 d_base;  // dz / d(left increment of base)
};

struct ChartDecoding {
  NodeState x;
  Mat24 d_chart;   // d(state increment) / dz
  Mat24x6 d_base;  // d(state increment) / d(left increment of base)
};

namespace prior_detail {

inline Twist relative_twist(const Pose& pose, const Pose& base) {
  const Twist xi = se3_log(pose * base.inverse());
  if (xi.tail<3>().norm() >= kChartAngleLimit) {
    throw ChartRangeError("relative chart rotation exceeds 0.9*pi");
  }
  return xi;
}

}  // namespace prior_detail

inline ChartState chart_encode(const NodeState& x, const Pose& base) {
  const Twist xi = prior_detail::relative_twist(x.pose, base);
  const Mat6 ji = left_jacobian_inv(xi);
  ChartState z;
  z << xi, ji * x.strain, ji * x.velocity, ji * x.strain_velocity;
  return z;
}

inline NodeState chart_decode(const ChartState& z, const Pose& base) {
  const Twist xi = z.segment<6>(kPoseBlock);
  const Mat6 j = left_jacobian<double>(xi);
  NodeState x;
  x.pose = se3_exp(xi) * base;
  x.strain = j * z.segment<6>(kStrainBlock);
  x.velocity = j * z.segment<6>(kVelocityBlock);
  x.strain_velocity = j * z.segment<6>(kStrainVelocityBlock);
  return x;
}

inline ChartEncoding chart_encode_with_jacobians(const NodeState& x, const Pose& base) {
  const Twist xi = prior_detail::relative_twist(x.pose, base);
  const Mat6 ji = left_jacobian_inv(xi);
  const Mat6 jri = left_jacobian_inv(-xi);
  ChartEncoding out;
  out.z << xi, ji * x.strain, ji * x.velocity, ji * x.strain_velocity;
  out.d_state.setZero();
  out.d_base.setZero();
  out.d_state.block<6, 6>(0, 0) = ji;
  out.d_base.block<6, 6>(0, 0) = -jri;
  const std::array<const Twist*, 3> derivs{&x.strain, &x.velocity, &x.strain_velocity};
  for (int b = 1; b < 4; ++b) {
    const Mat6 g = left_jacobian_inv_derivative(xi, *derivs[b - 1]);
    out.d_state.block<6, 6>(6 * b, 0) = g * ji;
    out.d_state.block<6, 6>(6 * b, 6 * b) = ji;
    out.d_base.block<6, 6>(6 * b, 0) = -g * jri;
  }
  return out;
}

inline ChartDecoding chart_decode_with_jacobians(const ChartState& z, const Pose& base) {
  const Twist xi = z.segment<6>(kPoseBlock);
  const Mat6 j = left_jacobian<double>(xi);
  const Pose rel = se3_exp(xi);
  ChartDecoding out;
  out.x.pose = rel * base;
  out.x.strain = j * z.segment<6>(kStrainBlock);
  out.x.velocity = j * z.segment<6>(kVelocityBlock);
  out.x.strain_velocity = j * z.segment<6>(kStrainVelocityBlock);
  out.d_chart.setZero();
  out.d_base.setZero();
  out.d_chart.block<6, 6>(0, 0) = j;
  out.d_base.block<6, 6>(0, 0) = adjoint(rel);
  for (int b = 1; b < 4; ++b) {
    out.d_chart.block<6, 6>(6 * b, 0) = left_jacobian_derivative(xi, z.segment<6>(6 * b));
    out.d_chart.block<6, 6>(6 * b, 6 * b) = j;
  }
  return out;
}

/// Chart of a state about its own pose: (0, eps, vel, psi).
inline ChartState self_chart(const NodeState& x) {
  ChartState z;
  z << Twist::Zero(), x.strain, x.velocity, x.strain_velocity;
  return z;
}

/// d(self_chart)/d(state increment): zero on the pose block, identity elsewhere.
inline Mat24 self_chart_jacobian() {
  Mat24 m = Mat24::Identity();
  m.block<6, 6>(0, 0).setZero();
  return m;
}

// Selects the pose block of a 24-dimensional increment.
inline Eigen::Matrix<double, 6, 24> pose_selector() {
  Eigen::Matrix<double, 6, 24> p = Eigen::Matrix<double, 6, 24>::Zero();
  p.block<6, 6>(0, 0).setIdentity();
  return p;
}

// ---------------------------------------------------------------------------
// Prior error terms.

template <std::size_t Arity>
struct FactorLinearization {
  Vec24 error;
  std::array<Mat24, Arity> jacobians;
};

inline Vec24 error_unary(const NodeState& x00, const PriorParams& p) {
  return chart_encode(x00, p.prior_mean_0.pose) - self_chart(p.prior_mean_0);
}

inline FactorLinearization<1> linearize_unary(const NodeState& x00, const PriorParams& p) {
  const ChartEncoding enc = chart_encode_with_jacobians(x00, p.prior_mean_0.pose);
  return {enc.z - self_chart(p.prior_mean_0), {enc.d_state}};
}

/// Binary chain error e = z_b - phi * z_a in the chart of x_a's pose. `phi` is phi_s or phi_t.
inline Vec24 error_binary(const NodeState& xa, const NodeState& xb, const Mat24& phi) {
  return chart_encode(xb, xa.pose) - phi * self_chart(xa);
}

inline FactorLinearization<2> linearize_binary(const NodeState& xa, const NodeState& xb, const Mat24& phi) {
  const ChartEncoding enc = chart_encode_with_jacobians(xb, xa.pose);
  FactorLinearization<2> out;
  out.error = enc.z - phi * self_chart(xa);
  out.jacobians[0] = enc.d_base * pose_selector() - phi * self_chart_jacobian();
  out.jacobians[1] = enc.d_state;
  return out;
}

inline Vec24 error_binary_spatial(const NodeState& xa, const NodeState& xb, double ds) {
  prior_detail::check_positive_interval(ds, "error_binary_spatial");
  return error_binary(xa, xb, phi_s(ds));
}

inline Vec24 error_binary_temporal(const NodeState& xa, const NodeState& xb, double dt) {
  prior_detail::check_positive_interval(dt, "error_binary_temporal");
  return error_binary(xa, xb, phi_t(dt));
}

/// Cell error over corners indexed (spatial, temporal):
/// e = z(s+,t+) - phi_s z(s,t+) - phi_t z(s+,t) + phi_cell z(s,t), all charts about x00's pose.
inline Vec24 error_quaternary(const NodeState& x00, const NodeState& x10, const NodeState& x01,
                              const NodeState& x11, double ds, double dt) {
  prior_detail::check_positive_interval(ds, "error_quaternary");
  prior_detail::check_positive_interval(dt, "error_quaternary");
  const Pose& base = x00.pose;
  return chart_encode(x11, base) - phi_s(ds) * chart_encode(x01, base) -
         phi_t(dt) * chart_encode(x10, base) + phi_cell(ds, dt) * self_chart(x00);
}

/// Jacobians are ordered x00, x10, x01, x11.
inline FactorLinearization<4> linearize_quaternary(const NodeState& x00, const NodeState& x10,
                                                   const NodeState& x01, const NodeState& x11,
                                                   double ds, double dt) {
  prior_detail::check_positive_interval(ds, "linearize_quaternary");
  prior_detail::check_positive_interval(dt, "linearize_quaternary");
  const Pose& base = x00.pose;
  const Mat24 ps = phi_s(ds);
  const Mat24 pt = phi_t(dt);
  const Mat24 pc = phi_cell(ds, dt);
  const ChartEncoding e10 = chart_encode_with_jacobians(x10, base);
  const ChartEncoding e01 = chart_encode_with_jacobians(x01, base);
  const ChartEncoding e11 = chart_encode_with_jacobians(x11, base);
  FactorLinearization<4> out;
  out.error = e11.z - ps * e01.z - pt * e10.z + pc * self_chart(x00);
  const Mat24x6 d_base = e11.d_base - ps * e01.d_base - pt * e10.d_base;
  out.jacobians[0] = pc * self_chart_jacobian() + d_base * pose_selector();
  out.jacobians[1] = -pt * e10.d_state;
  out.jacobians[2] = -ps * e01.d_state;
  out.jacobians[3] = e11.d_state;
  return out;
}

/// Noise-free propagation: the state that zeroes the corresponding prior error.
inline NodeState propagate_binary(const NodeState& xa, const Mat24& phi) {
  return chart_decode(phi * self_chart(xa), xa.pose);
}

inline NodeState propagate_cell(const NodeState& x00, const NodeState& x10, const NodeState& x01,
                                double ds, double dt) {
  const Pose& base = x00.pose;
  const ChartState z = phi_s(ds) * chart_encode(x01, base) + phi_t(dt) * chart_encode(x10, base) -
                       phi_cell(ds, dt) * self_chart(x00);
  return chart_decode(z, base);
}

}  // namespace stgp
